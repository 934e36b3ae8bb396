//! Transient and stationary (mixed, factorial) moments of the queue-length
//! vector and the loss count.
//!
//! The factorial moments `psi_k(r,t)` obey a graded linear recursion: the
//! derivative of a level-`r` moment involves only moments of total order at
//! most `r`. Stacking all levels up to `r_max` therefore gives one
//! constant-coefficient linear ODE system, solved exactly by a single matrix
//! exponential; the stationary table is obtained level by level from linear
//! solves instead.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::background::BackgroundChain;
use crate::linalg;
use crate::model::ValidatedNetwork;
use crate::{Error, Result};

/// Largest stacked system dimension accepted by the moment solvers.
const MAX_SYSTEM_DIM: usize = 100_000;

/// Evaluation time of a moment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSpec {
    Stationary,
    At(f64),
}

/// Initial background state of a transient computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackgroundStart {
    State(usize),
    Stationary,
}

/// Deterministic initial queue contents plus the initial background law.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub counts: Vec<u64>,
    pub background: BackgroundStart,
}

impl InitialCondition {
    pub fn empty_stationary(n: usize) -> Self {
        InitialCondition {
            counts: vec![0; n],
            background: BackgroundStart::Stationary,
        }
    }

    pub fn empty_in_state(n: usize, k: usize) -> Self {
        InitialCondition {
            counts: vec![0; n],
            background: BackgroundStart::State(k),
        }
    }
}

/// Moment multi-index `(r_0, r_1, ..., r_n)`; coordinate 0 is the loss-count
/// order, coordinates `1..=n` the queue orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<u16>);

impl MultiIndex {
    /// The zero index for an `n`-node network.
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n + 1])
    }

    /// First-order index of queue `i` (0-based).
    pub fn queue(n: usize, i: usize) -> Self {
        let mut r = vec![0; n + 1];
        r[i + 1] = 1;
        MultiIndex(r)
    }

    /// Index with the given queue orders and loss order zero.
    pub fn from_queues(orders: &[u16]) -> Self {
        let mut r = vec![0u16];
        r.extend_from_slice(orders);
        MultiIndex(r)
    }

    /// First-order loss index `e_0`.
    pub fn loss(n: usize) -> Self {
        let mut r = vec![0; n + 1];
        r[0] = 1;
        MultiIndex(r)
    }

    pub fn loss_order(&self) -> u16 {
        self.0[0]
    }

    pub fn queue_order(&self, i: usize) -> u16 {
        self.0[i + 1]
    }

    /// Total order `r_0 + r_1 + ... + r_n`.
    pub fn total(&self) -> u16 {
        self.0.iter().sum()
    }

    /// Queue order `xi(r) = r_1 + ... + r_n`.
    pub fn queue_total(&self) -> u16 {
        self.0[1..].iter().sum()
    }

    fn bump(&self, coord: usize, delta: i32) -> MultiIndex {
        let mut r = self.0.clone();
        r[coord] = (r[coord] as i32 + delta) as u16;
        MultiIndex(r)
    }
}

/// Enumerates all multi-indices over `dim` coordinates with the given total,
/// in colexicographic order (the last differing coordinate decides, so the
/// highest coordinate is the most significant). The ordering is frozen; CSV
/// output depends on it.
pub fn enumerate_level(dim: usize, total: u16) -> Vec<Vec<u16>> {
    let mut out = Vec::new();
    let mut cur = vec![0u16; dim];
    fill(&mut out, &mut cur, dim, total);
    // `fill` produces reverse-lex on the raw vector; sort into colex.
    out.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
    out
}

fn fill(out: &mut Vec<Vec<u16>>, cur: &mut Vec<u16>, remaining_coords: usize, remaining: u16) {
    let coord = cur.len() - remaining_coords;
    if remaining_coords == 1 {
        cur[coord] = remaining;
        out.push(cur.clone());
        cur[coord] = 0;
        return;
    }
    for v in 0..=remaining {
        cur[coord] = v;
        fill(out, cur, remaining_coords - 1, remaining - v);
        cur[coord] = 0;
    }
}

/// Falling factorial `(m)_r = m (m-1) ... (m-r+1)`.
pub fn falling_factorial(m: u64, r: u16) -> f64 {
    let r = r as u64;
    if r > m {
        return 0.0;
    }
    let mut acc = 1.0;
    for s in 0..r {
        acc *= (m - s) as f64;
    }
    acc
}

/// A table of factorial moments `psi_k(r, t)` (optionally loss-extended).
#[derive(Debug, Clone)]
pub struct MomentTable {
    n: usize,
    kbar: usize,
    r_max: u16,
    include_loss: bool,
    time: TimeSpec,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
    /// Row per multi-index, column per background state.
    values: DMatrix<f64>,
}

impl MomentTable {
    pub fn time(&self) -> TimeSpec {
        self.time
    }

    pub fn r_max(&self) -> u16 {
        self.r_max
    }

    pub fn includes_loss(&self) -> bool {
        self.include_loss
    }

    /// Indices in enumeration order (graded by total order, colex within a
    /// level).
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// `psi_k(r)` for one background state.
    pub fn value(&self, r: &MultiIndex, k: usize) -> Result<f64> {
        let pos = self
            .lookup
            .get(r)
            .ok_or_else(|| Error::InvalidArgument(format!("index {:?} not in table", r.0)))?;
        if k >= self.kbar {
            return Err(Error::IndexOutOfRange(format!("background state {k}")));
        }
        Ok(self.values[(*pos, k)])
    }

    /// `sum_k psi_k(r)`: the plain factorial moment.
    pub fn total(&self, r: &MultiIndex) -> Result<f64> {
        let pos = self
            .lookup
            .get(r)
            .ok_or_else(|| Error::InvalidArgument(format!("index {:?} not in table", r.0)))?;
        Ok(self.values.row(*pos).sum())
    }

    /// Mean queue length at node `i`.
    pub fn mean(&self, i: usize) -> Result<f64> {
        self.total(&MultiIndex::queue(self.n, i))
    }
}

/// Means, variances and the covariance matrix recovered from a table with
/// levels up to 2.
#[derive(Debug, Clone)]
pub struct CentralMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// Converts factorial moments (levels <= 2) into central moments.
pub fn central_moments(table: &MomentTable) -> Result<CentralMoments> {
    let n = table.n;
    if table.r_max < 2 {
        return Err(Error::InvalidArgument(
            "central moments need levels up to 2".into(),
        ));
    }
    let mean: Vec<f64> = (0..n).map(|i| table.mean(i)).collect::<Result<_>>()?;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut orders = vec![0u16; n];
            orders[i] += 1;
            orders[j] += 1;
            let second = table.total(&MultiIndex::from_queues(&orders))?;
            let c = if i == j {
                second + mean[i] - mean[i] * mean[i]
            } else {
                second - mean[i] * mean[j]
            };
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let var = (0..n).map(|i| cov[(i, i)]).collect();
    Ok(CentralMoments { mean, var, cov })
}

/// Per-background-state first moments `v_(i,k) = E[M_i 1{X=k}]`.
#[derive(Debug, Clone)]
pub struct FirstMomentVector {
    n: usize,
    kbar: usize,
    v: DVector<f64>,
}

impl FirstMomentVector {
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.v[i * self.kbar + k]
    }

    pub fn node_mean(&self, i: usize) -> f64 {
        (0..self.kbar).map(|k| self.value(i, k)).sum()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node_mean(i)).collect()
    }
}

/// The matrix `N = M_+ - M_- + M_0 - Q` of the first-moment linear system,
/// with the general-loss decay rates.
pub fn first_moment_matrix(net: &ValidatedNetwork, chain: &BackgroundChain) -> DMatrix<f64> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let q = chain.generator();
    let mut nm = DMatrix::zeros(n * kbar, n * kbar);
    for i in 0..n {
        for k in 0..kbar {
            let col = i * kbar + k;
            nm[(col, col)] += net.decay_rate(i, k);
            for l in net.links() {
                if l.to == i {
                    nm[(l.from * kbar + k, col)] -= net.mu_plus(l.from, i, k);
                }
            }
            for l in 0..kbar {
                nm[(i * kbar + l, col)] -= q[(l, k)];
            }
        }
    }
    nm
}

/// Stationary first moments: `v = (lambda (x) pi) N^{-1}`.
pub fn stationary_first_moments(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
) -> Result<FirstMomentVector> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let nm = first_moment_matrix(net, chain);
    let mut rhs = DVector::zeros(n * kbar);
    for i in 0..n {
        for k in 0..kbar {
            rhs[i * kbar + k] = net.lambda(i) * chain.stationary()[k];
        }
    }
    let v = linalg::solve_row_system(&nm, &rhs)?;
    Ok(FirstMomentVector { n, kbar, v })
}

fn initial_first_moments(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    initial: &InitialCondition,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    if initial.counts.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial counts have length {}, expected {n}",
            initial.counts.len()
        )));
    }
    let pi0 = match initial.background {
        BackgroundStart::State(k0) => {
            if k0 >= kbar {
                return Err(Error::IndexOutOfRange(format!("background state {k0}")));
            }
            let mut p = DVector::zeros(kbar);
            p[k0] = 1.0;
            p
        }
        BackgroundStart::Stationary => chain.stationary().clone(),
    };
    let mut v0 = DVector::zeros(n * kbar);
    for i in 0..n {
        for k in 0..kbar {
            v0[i * kbar + k] = initial.counts[i] as f64 * pi0[k];
        }
    }
    Ok((v0, pi0))
}

/// Transient first moments by one matrix exponential of the augmented system
/// stacking `(v(t), pi(t))`.
pub fn transient_first_moments(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    initial: &InitialCondition,
    t: f64,
) -> Result<FirstMomentVector> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let dim = (n + 1) * kbar;
    let nm = first_moment_matrix(net, chain);
    let q = chain.generator();
    // Row-vector dynamics d[v, pi]/dt = [v, pi] B.
    let mut b = DMatrix::zeros(dim, dim);
    b.view_mut((0, 0), (n * kbar, n * kbar)).copy_from(&(-&nm));
    for i in 0..n {
        for k in 0..kbar {
            b[(n * kbar + k, i * kbar + k)] = net.lambda(i);
        }
    }
    b.view_mut((n * kbar, n * kbar), (kbar, kbar)).copy_from(q);

    let (v0, pi0) = initial_first_moments(net, chain, initial)?;
    let mut state = DVector::zeros(dim);
    state.rows_mut(0, n * kbar).copy_from(&v0);
    state.rows_mut(n * kbar, kbar).copy_from(&pi0);
    let state_t = (b.transpose() * t).exp() * state;
    Ok(FirstMomentVector {
        n,
        kbar,
        v: state_t.rows(0, n * kbar).into_owned(),
    })
}

/// Position lookup for a stacked enumeration of multi-indices.
struct IndexSet {
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

fn enumerate_upto(n: usize, r_max: u16, include_loss: bool) -> IndexSet {
    let mut indices = Vec::new();
    for level in 0..=r_max {
        for raw in enumerate_level(n + 1, level) {
            if !include_loss && raw[0] > 0 {
                continue;
            }
            indices.push(MultiIndex(raw));
        }
    }
    let lookup = indices.iter().cloned().zip(0..).collect();
    IndexSet { indices, lookup }
}

/// Builds the stacked recursion generator `B` with `d psi / dt = psi B` over
/// the given index set (row vector convention, entry index `pos * kbar + k`).
fn recursion_generator(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    set: &IndexSet,
) -> DMatrix<f64> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let q = chain.generator();
    let dim = set.indices.len() * kbar;
    let mut b = DMatrix::zeros(dim, dim);
    for (pos, r) in set.indices.iter().enumerate() {
        for k in 0..kbar {
            let col = pos * kbar + k;
            // External arrivals: r_i lambda_i psi(r - e_i).
            for i in 0..n {
                let ri = r.queue_order(i);
                if ri > 0 && net.lambda(i) > 0.0 {
                    let src = set.lookup[&r.bump(i + 1, -1)];
                    b[(src * kbar + k, col)] += ri as f64 * net.lambda(i);
                }
            }
            // Successful jumps: r_j mu+_{ijk} psi(r - e_j + e_i).
            for l in net.links() {
                let rj = r.queue_order(l.to);
                if rj > 0 {
                    let rate = net.mu_plus(l.from, l.to, k);
                    if rate > 0.0 {
                        let src = set.lookup[&r.bump(l.to + 1, -1).bump(l.from + 1, 1)];
                        b[(src * kbar + k, col)] += rj as f64 * rate;
                    }
                }
            }
            // Loss count: r_0 (sum_j f_ij mu-_{ijk}) psi(r - e_0 + e_i).
            let r0 = r.loss_order();
            if r0 > 0 {
                for i in 0..n {
                    let rate = net.loss_rate(i, k);
                    if rate > 0.0 {
                        let src = set.lookup[&r.bump(0, -1).bump(i + 1, 1)];
                        b[(src * kbar + k, col)] += r0 as f64 * rate;
                    }
                }
            }
            // Decay: sum_i r_i (mu_i0 + sum_j (mu+ + f mu-)) psi(r).
            let mut decay = 0.0;
            for i in 0..n {
                decay += r.queue_order(i) as f64 * net.decay_rate(i, k);
            }
            b[(col, col)] -= decay;
            // Background switching: sum_l psi_l(r) q_{lk}.
            for l in 0..kbar {
                b[(pos * kbar + l, col)] += q[(l, k)];
            }
        }
    }
    b
}

/// Computes the factorial-moment table for all levels `0..=r_max`.
///
/// Transient tables come from one matrix exponential of the stacked graded
/// system; stationary tables from one linear solve per level. The loss
/// extension has no stationary version (the loss count grows without bound).
pub fn factorial_moments(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    r_max: u16,
    time: TimeSpec,
    include_loss: bool,
    initial: &InitialCondition,
) -> Result<MomentTable> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    match time {
        TimeSpec::At(t) => {
            if t < 0.0 {
                return Err(Error::NegativeTime(t));
            }
            let set = enumerate_upto(n, r_max, include_loss);
            let dim = set.indices.len() * kbar;
            if dim > MAX_SYSTEM_DIM {
                return Err(Error::Capacity(format!("moment system dimension {dim}")));
            }
            let b = recursion_generator(net, chain, &set);
            let (_, pi0) = initial_first_moments(net, chain, initial)?;
            let mut psi0 = DVector::zeros(dim);
            for (pos, r) in set.indices.iter().enumerate() {
                if r.loss_order() > 0 {
                    continue; // (L(0))_{r_0} = 0 for r_0 >= 1
                }
                let mut base = 1.0;
                for i in 0..n {
                    base *= falling_factorial(initial.counts[i], r.queue_order(i));
                }
                if base != 0.0 {
                    for k in 0..kbar {
                        psi0[pos * kbar + k] = base * pi0[k];
                    }
                }
            }
            let psi_t = (b.transpose() * t).exp() * psi0;
            let mut values = DMatrix::zeros(set.indices.len(), kbar);
            for pos in 0..set.indices.len() {
                for k in 0..kbar {
                    values[(pos, k)] = psi_t[pos * kbar + k];
                }
            }
            Ok(MomentTable {
                n,
                kbar,
                r_max,
                include_loss,
                time,
                lookup: set.lookup,
                indices: set.indices,
                values,
            })
        }
        TimeSpec::Stationary => {
            if include_loss {
                return Err(Error::InvalidArgument(
                    "the loss count has no stationary moments".into(),
                ));
            }
            stationary_factorial_moments(net, chain, r_max)
        }
    }
}

fn stationary_factorial_moments(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    r_max: u16,
) -> Result<MomentTable> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let q = chain.generator();
    let mut indices = Vec::new();
    let mut lookup: HashMap<MultiIndex, usize> = HashMap::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();

    // Level 0: P(X = k) = pi_k.
    let zero = MultiIndex::zero(n);
    lookup.insert(zero.clone(), 0);
    indices.push(zero);
    rows.push(chain.stationary().clone());

    for level in 1..=r_max {
        let level_raw = enumerate_level(n + 1, level);
        let level_indices: Vec<MultiIndex> = level_raw
            .into_iter()
            .filter(|r| r[0] == 0)
            .map(MultiIndex)
            .collect();
        let m = level_indices.len();
        let dim = m * kbar;
        if dim > MAX_SYSTEM_DIM {
            return Err(Error::Capacity(format!("moment level dimension {dim}")));
        }
        let level_pos: HashMap<&MultiIndex, usize> = level_indices.iter().zip(0..).collect();
        let mut a = DMatrix::zeros(dim, dim);
        let mut forcing = DVector::zeros(dim);
        for (pos, r) in level_indices.iter().enumerate() {
            for k in 0..kbar {
                let col = pos * kbar + k;
                for i in 0..n {
                    let ri = r.queue_order(i);
                    if ri > 0 && net.lambda(i) > 0.0 {
                        let lower = &r.bump(i + 1, -1);
                        let lpos = lookup[lower];
                        forcing[col] += ri as f64 * net.lambda(i) * rows[lpos][k];
                    }
                }
                for l in net.links() {
                    let rj = r.queue_order(l.to);
                    if rj > 0 {
                        let rate = net.mu_plus(l.from, l.to, k);
                        if rate > 0.0 {
                            let src = level_pos[&r.bump(l.to + 1, -1).bump(l.from + 1, 1)];
                            a[(src * kbar + k, col)] += rj as f64 * rate;
                        }
                    }
                }
                let mut decay = 0.0;
                for i in 0..n {
                    decay += r.queue_order(i) as f64 * net.decay_rate(i, k);
                }
                a[(col, col)] -= decay;
                for l in 0..kbar {
                    a[(pos * kbar + l, col)] += q[(l, k)];
                }
            }
        }
        // 0 = forcing + x A  =>  x A = -forcing.
        let x = linalg::solve_row_system(&a, &(-forcing))?;
        for (pos, r) in level_indices.iter().enumerate() {
            lookup.insert(r.clone(), indices.len());
            indices.push(r.clone());
            rows.push(DVector::from_fn(kbar, |k, _| x[pos * kbar + k]));
        }
    }

    let mut values = DMatrix::zeros(indices.len(), kbar);
    for (pos, row) in rows.iter().enumerate() {
        values.row_mut(pos).copy_from(&row.transpose());
    }
    Ok(MomentTable {
        n,
        kbar,
        r_max,
        include_loss: false,
        time: TimeSpec::Stationary,
        indices,
        lookup,
        values,
    })
}

/// Expected number of customers lost in `[0, t]`.
pub fn loss_mean(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    initial: &InitialCondition,
    t: f64,
) -> Result<f64> {
    let table = factorial_moments(net, chain, 1, TimeSpec::At(t), true, initial)?;
    table.total(&MultiIndex::loss(net.num_nodes()))
}

/// Instantaneous expected loss rate `d E L(t) / dt`; converges to
/// `lambda_total * omega` as `t` grows.
pub fn loss_rate_at(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    initial: &InitialCondition,
    t: f64,
) -> Result<f64> {
    let v = transient_first_moments(net, chain, initial, t)?;
    let mut rate = 0.0;
    for i in 0..net.num_nodes() {
        for k in 0..chain.state_count() {
            rate += v.value(i, k) * net.loss_rate(i, k);
        }
    }
    Ok(rate)
}

/// Slowest relaxation rate of the stacked first-moment system; `50 / gap` is
/// an "effectively stationary" horizon.
pub fn mixing_gap(net: &ValidatedNetwork, chain: &BackgroundChain) -> f64 {
    let nm = first_moment_matrix(net, chain);
    let gap_moments = linalg::spectral_gap(&(-nm));
    let gap_bg = if chain.state_count() > 1 {
        linalg::spectral_gap(chain.generator())
    } else {
        f64::INFINITY
    };
    gap_moments.min(gap_bg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use approx::assert_relative_eq;

    fn chain_for(net: &ValidatedNetwork) -> BackgroundChain {
        BackgroundChain::new(net.blocks()).unwrap()
    }

    #[test]
    fn enumeration_counts_and_order() {
        // #S_r = C(n+r-1, r) over the queue coordinates.
        assert_eq!(enumerate_level(3, 2).len(), 6);
        assert_eq!(enumerate_level(2, 3).len(), 4);
        // Colex order for two coordinates at level 2 is frozen.
        assert_eq!(
            enumerate_level(2, 2),
            vec![vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling_factorial(5, 2), 20.0);
        assert_eq!(falling_factorial(2, 3), 0.0);
        assert_eq!(falling_factorial(7, 0), 1.0);
    }

    #[test]
    fn fix_a_stationary_poisson_moments() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let v = stationary_first_moments(&net, &chain).unwrap();
        assert_relative_eq!(v.node_mean(0), 3.0, epsilon = 1e-12);

        let table = factorial_moments(
            &net,
            &chain,
            2,
            TimeSpec::Stationary,
            false,
            &InitialCondition::empty_stationary(1),
        )
        .unwrap();
        assert_relative_eq!(
            table.total(&MultiIndex::from_queues(&[2])).unwrap(),
            9.0,
            epsilon = 1e-12
        );
        let cm = central_moments(&table).unwrap();
        assert_relative_eq!(cm.var[0], 3.0, epsilon = 1e-11);
    }

    #[test]
    fn fix_b_stationary_means_match_closed_form() {
        // lambda pi (Delta_mu1 - Q)^{-1} etc., worked out by 2x2 inversion.
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let v = stationary_first_moments(&net, &chain).unwrap();
        assert_relative_eq!(v.value(0, 0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(v.value(0, 1), 0.5, epsilon = 1e-12);
        assert_relative_eq!(v.value(1, 0), 1.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(v.value(1, 1), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fix_c_stationary_mean_exceeds_mean_field_value() {
        // With one shared block the exact per-node system solves to
        // u_up = 4/5, u_down = 3/5 (two equations by symmetry). The scalar
        // mean-field formula lambda/kappa = 4/3 undercounts: queue lengths
        // and link states are positively correlated through routing loops.
        let net = fixtures::fix_c();
        let chain = chain_for(&net);
        let v = stationary_first_moments(&net, &chain).unwrap();
        for i in 0..3 {
            assert_relative_eq!(v.value(i, 1), 0.8, epsilon = 1e-12);
            assert_relative_eq!(v.value(i, 0), 0.6, epsilon = 1e-12);
            assert_relative_eq!(v.node_mean(i), 1.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn fix_a_transient_mean() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        for t in [0.0, 0.3, 1.0, 4.0] {
            let v =
                transient_first_moments(&net, &chain, &InitialCondition::empty_stationary(1), t)
                    .unwrap();
            assert_relative_eq!(v.node_mean(0), 3.0 * (1.0 - (-t).exp()), epsilon = 1e-10);
        }
    }

    #[test]
    fn fix_c_transient_mean_converges_and_tracks_mean_field() {
        let net = fixtures::fix_c();
        let chain = chain_for(&net);
        let init = InitialCondition::empty_stationary(3);
        let v0 = transient_first_moments(&net, &chain, &init, 0.0).unwrap();
        assert_relative_eq!(v0.node_mean(0), 0.0, epsilon = 1e-13);
        // The mean-field curve (lambda/kappa)(1 - e^{-kappa t}) is a lower
        // approximation of the exact transient mean, good to a few percent.
        let kappa = 1.5;
        for t in [0.2, 1.0, 3.0] {
            let v = transient_first_moments(&net, &chain, &init, t).unwrap();
            let mf = (2.0 / kappa) * (1.0 - (-kappa * t).exp());
            assert!(v.node_mean(0) >= mf - 1e-10);
            assert!((v.node_mean(0) - mf).abs() < 0.08);
        }
        let far = transient_first_moments(&net, &chain, &init, 40.0).unwrap();
        assert_relative_eq!(far.node_mean(0), 1.4, epsilon = 1e-9);
    }

    #[test]
    fn transient_initial_condition_is_respected() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let init = InitialCondition {
            counts: vec![4, 1],
            background: BackgroundStart::State(1),
        };
        let v = transient_first_moments(&net, &chain, &init, 0.0).unwrap();
        assert_relative_eq!(v.value(0, 1), 4.0, epsilon = 1e-13);
        assert_relative_eq!(v.value(0, 0), 0.0, epsilon = 1e-13);
        assert_relative_eq!(v.value(1, 1), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn level_one_table_matches_first_moment_solver() {
        for net in [fixtures::fix_b(), fixtures::fix_b0(), fixtures::fix_c()] {
            let chain = chain_for(&net);
            let v = stationary_first_moments(&net, &chain).unwrap();
            let table = factorial_moments(
                &net,
                &chain,
                1,
                TimeSpec::Stationary,
                false,
                &InitialCondition::empty_stationary(net.num_nodes()),
            )
            .unwrap();
            for i in 0..net.num_nodes() {
                for k in 0..chain.state_count() {
                    assert_relative_eq!(
                        table
                            .value(&MultiIndex::queue(net.num_nodes(), i), k)
                            .unwrap(),
                        v.value(i, k),
                        epsilon = 1e-11
                    );
                }
            }
        }
    }

    #[test]
    fn level_zero_transient_is_background_law() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let t = 0.7;
        let init = InitialCondition::empty_in_state(2, 0);
        let table = factorial_moments(&net, &chain, 1, TimeSpec::At(t), false, &init).unwrap();
        let p = chain.transition_matrix(t).unwrap();
        for k in 0..2 {
            assert_relative_eq!(
                table.value(&MultiIndex::zero(2), k).unwrap(),
                p[(0, k)],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn stationary_table_is_long_run_transient() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let gap = mixing_gap(&net, &chain);
        let t = 50.0 / gap;
        let init = InitialCondition::empty_stationary(2);
        let transient = factorial_moments(&net, &chain, 2, TimeSpec::At(t), false, &init).unwrap();
        let stationary =
            factorial_moments(&net, &chain, 2, TimeSpec::Stationary, false, &init).unwrap();
        for r in stationary.indices() {
            for k in 0..2 {
                assert_relative_eq!(
                    transient.value(r, k).unwrap(),
                    stationary.value(r, k).unwrap(),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn always_up_network_has_independent_poisson_marginals() {
        use crate::model::{BlockRef, LinkSpec, NetworkSpec, NodeSpec};
        let net = crate::model::validate(&NetworkSpec {
            nodes: vec![
                NodeSpec {
                    lambda: 2.0,
                    mu_exit: 1.0,
                },
                NodeSpec {
                    lambda: 0.5,
                    mu_exit: 2.0,
                },
            ],
            links: vec![LinkSpec::directed(0, 1, 1.5, 1.0, BlockRef::AlwaysUp)],
            blocks: vec![crate::model::BlockSpec {
                q_down_to_up: 1.0,
                q_up_to_down: 1.0,
            }],
        })
        .unwrap();
        let chain = chain_for(&net);
        let table = factorial_moments(
            &net,
            &chain,
            2,
            TimeSpec::Stationary,
            false,
            &InitialCondition::empty_stationary(2),
        )
        .unwrap();
        let cm = central_moments(&table).unwrap();
        assert!(cm.cov[(0, 1)].abs() < 1e-10);
        // Poisson marginals: variance equals mean.
        for i in 0..2 {
            assert_relative_eq!(cm.var[i], cm.mean[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn symmetric_lossless_mean_is_invariant_in_block_rates() {
        for (q0, q1) in [(1.0, 1.0), (1.0, 3.0), (5.0, 0.2)] {
            let net = fixtures::symmetric_complete(3, 2.0, 1.0, 1.0, q0, q1, 0.0);
            let chain = chain_for(&net);
            let v = stationary_first_moments(&net, &chain).unwrap();
            for i in 0..3 {
                assert_relative_eq!(v.node_mean(i), 2.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn loss_mean_basics() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let init = InitialCondition::empty_stationary(2);
        assert_relative_eq!(
            loss_mean(&net, &chain, &init, 0.0).unwrap(),
            0.0,
            epsilon = 1e-13
        );

        // Lossless network: E L(t) identically zero.
        let net0 = fixtures::fix_b0();
        let chain0 = chain_for(&net0);
        assert_relative_eq!(
            loss_mean(&net0, &chain0, &init, 3.0).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        // FIX-B loses mu1 * v_10 = 0.5 per unit time in the long run.
        let t = 60.0;
        let rate = loss_rate_at(&net, &chain, &init, t).unwrap();
        assert_relative_eq!(rate, 0.5, epsilon = 1e-9);
        let el = loss_mean(&net, &chain, &init, t).unwrap();
        let el2 = loss_mean(&net, &chain, &init, t + 5.0).unwrap();
        assert_relative_eq!((el2 - el) / 5.0, 0.5, epsilon = 1e-9);
        assert!(el > 0.0 && el2 > el);
    }

    #[test]
    fn transient_level_one_matches_first_moment_route() {
        let net = fixtures::fix_b0();
        let chain = chain_for(&net);
        let init = InitialCondition {
            counts: vec![2, 0],
            background: BackgroundStart::State(0),
        };
        let t = 1.3;
        let v = transient_first_moments(&net, &chain, &init, t).unwrap();
        let table = factorial_moments(&net, &chain, 1, TimeSpec::At(t), true, &init).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_relative_eq!(
                    table.value(&MultiIndex::queue(2, i), k).unwrap(),
                    v.value(i, k),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn stationary_loss_table_is_rejected() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let err = factorial_moments(
            &net,
            &chain,
            1,
            TimeSpec::Stationary,
            true,
            &InitialCondition::empty_stationary(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}

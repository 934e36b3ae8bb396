//! Brute-force ground truth: the exact chain on a truncated state space.
//!
//! The state is `(m_1, ..., m_n, k)` with `m_i <= cap_i`. Truncation policy:
//! arrivals into a full queue are blocked, and a customer jumping into a
//! full queue is dropped (the jump still empties the origin queue). Dropping
//! rather than blocking keeps every upstream marginal exact whatever the
//! downstream caps; the quality of the truncation is reported through the
//! probability mass sitting on boundary states.

use faer::prelude::*;
use faer::sparse::SparseColMat;
use statrs::function::gamma::ln_gamma;

use crate::background::BackgroundChain;
use crate::model::ValidatedNetwork;
use crate::moments::{falling_factorial, BackgroundStart, InitialCondition, MultiIndex};
use crate::{Error, Result};

/// Largest truncated state count the oracle accepts.
const MAX_STATES: usize = 2_000_000;

/// Boundary mass above which results are rejected outright.
const BOUNDARY_ERROR: f64 = 1e-3;
/// Boundary mass above which a warning is attached.
const BOUNDARY_WARN: f64 = 1e-6;

/// Exact generator of the truncated chain, kept as triplets for matvecs and
/// re-assembled into sparse form for the direct solve.
pub struct TruncatedChain<'a> {
    chain: &'a BackgroundChain,
    caps: Vec<u64>,
    kbar: usize,
    dim: usize,
    /// `(row, col, rate)` entries of the generator, including the diagonal.
    triplets: Vec<(usize, usize, f64)>,
    /// Uniformization constant: max total outflow rate over states.
    max_rate: f64,
}

impl<'a> TruncatedChain<'a> {
    pub fn state_count(&self) -> usize {
        self.dim
    }

    pub fn caps(&self) -> &[u64] {
        &self.caps
    }

    /// Flat index of `(m, k)` in mixed radix, background fastest.
    pub fn index(&self, m: &[u64], k: usize) -> usize {
        let mut acc = 0;
        for (i, &mi) in m.iter().enumerate() {
            acc = acc * (self.caps[i] as usize + 1) + mi as usize;
        }
        acc * self.kbar + k
    }

    /// Inverse of `index`.
    pub fn decode(&self, idx: usize) -> (Vec<u64>, usize) {
        let k = idx % self.kbar;
        let mut rest = idx / self.kbar;
        let n = self.caps.len();
        let mut m = vec![0u64; n];
        for i in (0..n).rev() {
            let base = self.caps[i] as usize + 1;
            m[i] = (rest % base) as u64;
            rest /= base;
        }
        (m, k)
    }

    /// Row sums of the generator; all zero up to rounding.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut sums = vec![0.0; self.dim];
        for &(r, _, v) in &self.triplets {
            sums[r] += v;
        }
        sums.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// Builds the truncated generator.
pub fn build_truncated<'a>(
    net: &'a ValidatedNetwork,
    chain: &'a BackgroundChain,
    caps: &[u64],
) -> Result<TruncatedChain<'a>> {
    let n = net.num_nodes();
    if caps.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} caps for {n} nodes",
            caps.len()
        )));
    }
    let kbar = chain.state_count();
    let mut dim: usize = kbar;
    for &c in caps {
        dim = dim
            .checked_mul(c as usize + 1)
            .filter(|&d| d <= MAX_STATES)
            .ok_or_else(|| Error::Capacity("truncated state space too large".into()))?;
    }
    let q = chain.generator();
    let mut tc = TruncatedChain {
        chain,
        caps: caps.to_vec(),
        kbar,
        dim,
        triplets: Vec::new(),
        max_rate: 0.0,
    };
    let mut triplets = Vec::new();
    for idx in 0..dim {
        let (m, k) = tc.decode(idx);
        let mut out = 0.0;
        let mut push = |to: usize, rate: f64, out: &mut f64| {
            if rate > 0.0 {
                triplets.push((idx, to, rate));
                *out += rate;
            }
        };
        for i in 0..n {
            // Arrivals, blocked at the cap.
            if m[i] < tc.caps[i] {
                let mut m2 = m.clone();
                m2[i] += 1;
                push(tc.index(&m2, k), net.lambda(i), &mut out);
            }
            if m[i] > 0 {
                let mi = m[i] as f64;
                // Successful jumps; a full target drops the customer.
                for l in net.out_links(i) {
                    let rate = mi * net.mu_plus(i, l.to, k);
                    if rate > 0.0 {
                        let mut m2 = m.clone();
                        m2[i] -= 1;
                        if m2[l.to] < tc.caps[l.to] {
                            m2[l.to] += 1;
                        }
                        push(tc.index(&m2, k), rate, &mut out);
                    }
                }
                // Losses and exits both just remove the customer.
                let rate = mi * (net.loss_rate(i, k) + net.mu_exit(i));
                if rate > 0.0 {
                    let mut m2 = m.clone();
                    m2[i] -= 1;
                    push(tc.index(&m2, k), rate, &mut out);
                }
            }
        }
        for l in 0..kbar {
            if l != k {
                push(tc.index(&m, l), q[(k, l)], &mut out);
            }
        }
        if out > 0.0 {
            triplets.push((idx, idx, -out));
        }
        tc.max_rate = tc.max_rate.max(out);
    }
    tc.triplets = triplets;
    Ok(tc)
}

/// A probability distribution over the truncated state space.
pub struct OracleDistribution {
    caps: Vec<u64>,
    kbar: usize,
    probs: Vec<f64>,
    /// Mass on states with some `m_i` at its cap.
    pub boundary_mass: f64,
    pub warnings: Vec<String>,
}

impl OracleDistribution {
    fn index(&self, m: &[u64], k: usize) -> usize {
        let mut acc = 0;
        for (i, &mi) in m.iter().enumerate() {
            acc = acc * (self.caps[i] as usize + 1) + mi as usize;
        }
        acc * self.kbar + k
    }

    fn decode(&self, idx: usize) -> (Vec<u64>, usize) {
        let k = idx % self.kbar;
        let mut rest = idx / self.kbar;
        let n = self.caps.len();
        let mut m = vec![0u64; n];
        for i in (0..n).rev() {
            let base = self.caps[i] as usize + 1;
            m[i] = (rest % base) as u64;
            rest /= base;
        }
        (m, k)
    }

    pub fn prob(&self, m: &[u64], k: usize) -> f64 {
        self.probs[self.index(m, k)]
    }

    /// Marginal pmf of node `i`'s occupancy.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.caps[i] as usize + 1];
        for (idx, &p) in self.probs.iter().enumerate() {
            let (m, _) = self.decode(idx);
            out[m[i] as usize] += p;
        }
        out
    }

    /// Background marginal.
    pub fn background_law(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.kbar];
        for (idx, &p) in self.probs.iter().enumerate() {
            out[idx % self.kbar] += p;
        }
        out
    }

    /// Per-state factorial moment `psi_k(r)` for a queue-only multi-index.
    pub fn factorial_moment(&self, r: &MultiIndex, k: usize) -> Result<f64> {
        if r.loss_order() > 0 {
            return Err(Error::InvalidArgument(
                "oracle distributions carry no loss count".into(),
            ));
        }
        let n = self.caps.len();
        let mut acc = 0.0;
        for (idx, &p) in self.probs.iter().enumerate() {
            if p == 0.0 || idx % self.kbar != k {
                continue;
            }
            let (m, _) = self.decode(idx);
            let mut w = p;
            for i in 0..n {
                w *= falling_factorial(m[i], r.queue_order(i));
            }
            acc += w;
        }
        Ok(acc)
    }

    pub fn factorial_moment_total(&self, r: &MultiIndex) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..self.kbar {
            acc += self.factorial_moment(r, k)?;
        }
        Ok(acc)
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.marginal(i)
            .iter()
            .enumerate()
            .map(|(m, p)| m as f64 * p)
            .sum()
    }

    /// Expected instantaneous loss throughput under this distribution.
    pub fn loss_rate(&self, net: &ValidatedNetwork) -> f64 {
        let mut acc = 0.0;
        for (idx, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (m, k) = self.decode(idx);
            for i in 0..net.num_nodes() {
                acc += p * m[i] as f64 * net.loss_rate(i, k);
            }
        }
        acc
    }
}

fn package(tc: &TruncatedChain, probs: Vec<f64>) -> Result<OracleDistribution> {
    let mut boundary = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        let (m, _) = tc.decode(idx);
        if m.iter().zip(&tc.caps).any(|(&mi, &c)| mi == c && c > 0) {
            boundary += p;
        }
    }
    if boundary > BOUNDARY_ERROR {
        return Err(Error::Capacity(format!(
            "truncation boundary carries mass {boundary:.3e}"
        )));
    }
    let mut warnings = Vec::new();
    if boundary > BOUNDARY_WARN {
        warnings.push(format!(
            "truncation boundary carries mass {boundary:.3e}; consider larger caps"
        ));
    }
    Ok(OracleDistribution {
        caps: tc.caps.clone(),
        kbar: tc.kbar,
        probs,
        boundary_mass: boundary,
        warnings,
    })
}

/// Stationary distribution by a direct sparse LU solve of `G^T p = 0` with
/// one equation replaced by normalization.
pub fn oracle_stationary(tc: &TruncatedChain) -> Result<OracleDistribution> {
    let dim = tc.dim;
    // Ground state 0 at 1 and solve the remaining equations of G^T p = 0;
    // grounding (rather than appending a dense normalization row) keeps the
    // matrix sparse through the factorization.
    let mut trip = Vec::with_capacity(tc.triplets.len());
    let mut b = Mat::<f64>::zeros(dim - 1, 1);
    for &(r, c, v) in &tc.triplets {
        if c == 0 {
            continue;
        }
        if r == 0 {
            b.write(c - 1, 0, b.read(c - 1, 0) - v);
        } else {
            trip.push((c - 1, r - 1, v));
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(dim - 1, dim - 1, &trip)
        .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::Numerical(format!("sparse LU failed: {e:?}")))?;
    let x = lu.solve(&b);
    let mut probs = vec![0.0; dim];
    probs[0] = 1.0;
    let mut total = 1.0;
    for i in 1..dim {
        let p = x.read(i - 1, 0);
        if p < -1e-9 {
            return Err(Error::Numerical(format!(
                "negative stationary probability {p:.3e}"
            )));
        }
        probs[i] = p.max(0.0);
        total += probs[i];
    }
    for p in &mut probs {
        *p /= total;
    }
    package(tc, probs)
}

/// Transient distribution at time `t` by uniformization, Poisson tail below
/// `1e-10` in total variation.
pub fn oracle_transient(
    tc: &TruncatedChain,
    initial: &InitialCondition,
    t: f64,
) -> Result<OracleDistribution> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let dim = tc.dim;
    let n = tc.caps.len();
    if initial.counts.len() != n {
        return Err(Error::InvalidArgument(
            "initial counts length mismatch".into(),
        ));
    }
    for i in 0..n {
        if initial.counts[i] > tc.caps[i] {
            return Err(Error::InvalidArgument(format!(
                "initial count {} above cap {}",
                initial.counts[i], tc.caps[i]
            )));
        }
    }
    let mut p0 = vec![0.0; dim];
    match initial.background {
        BackgroundStart::State(k0) => {
            if k0 >= tc.kbar {
                return Err(Error::IndexOutOfRange(format!("background state {k0}")));
            }
            p0[tc.index(&initial.counts, k0)] = 1.0;
        }
        BackgroundStart::Stationary => {
            for k in 0..tc.kbar {
                p0[tc.index(&initial.counts, k)] = tc.chain.stationary()[k];
            }
        }
    }
    let rate = tc.max_rate * 1.000001 + 1e-12;
    let mean = rate * t;
    if mean == 0.0 {
        return package(tc, p0);
    }

    // Poisson weights until the tail drops below 1e-10.
    let pois = |j: usize| (j as f64 * mean.ln() - mean - ln_gamma(j as f64 + 1.0)).exp();
    let mut weights = Vec::new();
    let mut cum = 0.0;
    let mut j = 0usize;
    while cum < 1.0 - 1e-10 {
        let w = pois(j);
        weights.push(w);
        cum += w;
        j += 1;
        if j > 10_000_000 {
            return Err(Error::Capacity("uniformization horizon too long".into()));
        }
    }

    // v_{j+1} = v_j P with P = I + G / rate, accumulated with the weights.
    let mut v = p0;
    let mut acc = vec![0.0; dim];
    for (step, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            for i in 0..dim {
                acc[i] += w * v[i];
            }
        }
        if step + 1 == weights.len() {
            break;
        }
        let mut next = v.clone();
        for &(r, c, val) in &tc.triplets {
            next[c] += val * v[r] / rate;
        }
        v = next;
    }
    let total: f64 = acc.iter().sum();
    for p in &mut acc {
        *p /= total;
    }
    package(tc, acc)
}

/// Max absolute residual of the stationary PGF equation over the grid
/// `{grid values}^n` of `z` arguments, per background state.
///
/// The PGF and its partial derivatives are evaluated exactly from the pmf;
/// the residual of the general-loss stationary equation is
/// `sum_i phi_k lambda_i (z_i - 1) + sum_(i,j) dphi_k/dz_i mu+ (z_j - z_i)
///  + sum_(i,j) dphi_k/dz_i f mu- (1 - z_i) + sum_i dphi_k/dz_i mu_i0 (1 - z_i)
///  + (phi Q)_k`.
pub fn pgf_residual(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    dist: &OracleDistribution,
    grid: &[f64],
) -> Result<f64> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    if grid.is_empty() || grid.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
        return Err(Error::InvalidArgument("z grid must lie in [0, 1]".into()));
    }
    let q = chain.generator();
    let mut worst = 0.0f64;
    let mut z = vec![0.0; n];
    let mut point = vec![0usize; n];
    loop {
        for i in 0..n {
            z[i] = grid[point[i]];
        }
        // phi_k and dphi_k/dz_i at this z, directly from the pmf.
        let mut phi = vec![0.0; kbar];
        let mut dphi = vec![vec![0.0; kbar]; n];
        for (idx, &p) in dist.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (m, k) = dist.decode(idx);
            let mut base = p;
            for i in 0..n {
                base *= z[i].powi(m[i] as i32);
            }
            phi[k] += base;
            for i in 0..n {
                if m[i] > 0 {
                    let term = if z[i] != 0.0 {
                        base / z[i] * m[i] as f64
                    } else {
                        let mut t = p * m[i] as f64;
                        for l in 0..n {
                            if l != i {
                                t *= z[l].powi(m[l] as i32);
                            }
                            if l == i && m[i] > 1 {
                                t = 0.0;
                            }
                        }
                        t
                    };
                    dphi[i][k] += term;
                }
            }
        }
        for k in 0..kbar {
            let mut res = 0.0;
            for i in 0..n {
                res += phi[k] * net.lambda(i) * (z[i] - 1.0);
                res += dphi[i][k] * net.mu_exit(i) * (1.0 - z[i]);
                for l in net.out_links(i) {
                    res += dphi[i][k] * net.mu_plus(i, l.to, k) * (z[l.to] - z[i]);
                }
                res += dphi[i][k] * net.loss_rate(i, k) * (1.0 - z[i]);
            }
            for l in 0..kbar {
                res += phi[l] * q[(l, k)];
            }
            worst = worst.max(res.abs());
        }
        // Advance the grid point odometer.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(worst);
            }
            point[pos] += 1;
            if point[pos] < grid.len() {
                break;
            }
            point[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use crate::moments::{self, TimeSpec};
    use approx::assert_relative_eq;

    fn chain_for(net: &ValidatedNetwork) -> BackgroundChain {
        BackgroundChain::new(net.blocks()).unwrap()
    }

    #[test]
    fn fix_a_truncation_is_birth_death() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[20]).unwrap();
        assert_eq!(tc.state_count(), 21);
        assert!(tc.max_row_sum_error() < 1e-14);
    }

    #[test]
    fn fix_b_state_count() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[10, 10]).unwrap();
        assert_eq!(tc.state_count(), 242);
        assert!(tc.max_row_sum_error() < 1e-13);
    }

    #[test]
    fn fix_a_stationary_is_poisson() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[30]).unwrap();
        let dist = oracle_stationary(&tc).unwrap();
        assert_relative_eq!(dist.mean(0), 3.0, epsilon = 1e-10);
        let marg = dist.marginal(0);
        let pois0 = (-3.0f64).exp();
        assert_relative_eq!(marg[0], pois0, epsilon = 1e-12);
        assert_relative_eq!(marg[3], pois0 * 27.0 / 6.0, epsilon = 1e-12);
        assert!(dist.warnings.is_empty());
    }

    #[test]
    fn fix_b_stationary_matches_closed_forms() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[30, 30]).unwrap();
        let dist = oracle_stationary(&tc).unwrap();
        assert_relative_eq!(dist.loss_rate(&net), 0.5, epsilon = 1e-8);
        assert_relative_eq!(dist.mean(0), 1.0, epsilon = 1e-8);
        assert_relative_eq!(dist.mean(1), 0.5, epsilon = 1e-8);
        // Per-state first moments against the general solver.
        let v = moments::stationary_first_moments(&net, &chain).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let r = MultiIndex::queue(2, i);
                assert_relative_eq!(
                    dist.factorial_moment(&r, k).unwrap(),
                    v.value(i, k),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn fix_c_stationary_matches_moment_recursion() {
        let net = fixtures::fix_c();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[18, 18, 18]).unwrap();
        let dist = oracle_stationary(&tc).unwrap();
        let table = moments::factorial_moments(
            &net,
            &chain,
            2,
            TimeSpec::Stationary,
            false,
            &InitialCondition::empty_stationary(3),
        )
        .unwrap();
        for r in table.indices() {
            for k in 0..2 {
                assert_relative_eq!(
                    dist.factorial_moment(r, k).unwrap(),
                    table.value(r, k).unwrap(),
                    epsilon = 1e-8
                );
            }
        }
        // The exact mean is 1.4, not the mean-field 4/3.
        assert_relative_eq!(dist.mean(0), 1.4, epsilon = 1e-8);
    }

    #[test]
    fn transient_point_mass_at_time_zero() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[10, 10]).unwrap();
        let init = InitialCondition {
            counts: vec![2, 1],
            background: BackgroundStart::State(1),
        };
        let dist = oracle_transient(&tc, &init, 0.0).unwrap();
        assert_eq!(dist.prob(&[2, 1], 1), 1.0);
    }

    #[test]
    fn fix_a_transient_mean() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[30]).unwrap();
        let init = InitialCondition::empty_in_state(1, 0);
        let dist = oracle_transient(&tc, &init, 1.0).unwrap();
        assert_relative_eq!(dist.mean(0), 3.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-8);
    }

    #[test]
    fn fix_b_transient_matches_moment_solver() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[30, 30]).unwrap();
        let init = InitialCondition {
            counts: vec![1, 0],
            background: BackgroundStart::State(0),
        };
        let dist = oracle_transient(&tc, &init, 2.0).unwrap();
        let v = moments::transient_first_moments(&net, &chain, &init, 2.0).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let r = MultiIndex::queue(2, i);
                assert_relative_eq!(
                    dist.factorial_moment(&r, k).unwrap(),
                    v.value(i, k),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn pgf_residual_small_and_shrinking() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[40]).unwrap();
        let dist = oracle_stationary(&tc).unwrap();
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert!(pgf_residual(&net, &chain, &dist, &grid).unwrap() < 1e-10);

        let net_b = fixtures::fix_b();
        let chain_b = chain_for(&net_b);
        let mut prev = f64::INFINITY;
        for cap in [10u64, 20, 40] {
            let tc = build_truncated(&net_b, &chain_b, &[cap, cap]).unwrap();
            let dist = oracle_stationary(&tc).unwrap();
            let res = pgf_residual(&net_b, &chain_b, &dist, &grid).unwrap();
            assert!(res < prev + 1e-12);
            prev = res;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn retry_network_residual() {
        // f = 0 exercises the loss-free branch of the stationary equation.
        let net = fixtures::fix_b0();
        let chain = chain_for(&net);
        let tc = build_truncated(&net, &chain, &[25, 25]).unwrap();
        let dist = oracle_stationary(&tc).unwrap();
        let grid = [0.0, 0.25, 0.5, 0.75];
        assert!(pgf_residual(&net, &chain, &dist, &grid).unwrap() < 1e-6);
    }

    #[test]
    fn capacity_guard() {
        let net = fixtures::fix_c();
        let chain = chain_for(&net);
        assert!(matches!(
            build_truncated(&net, &chain, &[200, 200, 200]),
            Err(Error::Capacity(_))
        ));
    }
}

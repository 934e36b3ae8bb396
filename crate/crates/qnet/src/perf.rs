//! User-perceived loss metrics: the probability that an entering client is
//! eventually lost, and the mean time it spends in the network jointly with
//! being lost.
//!
//! Both come from first-step analysis of a tagged client: at node `i` in
//! background state `k` the next event is an exit, a successful jump, a loss,
//! or a background switch. Retries are self-loops of the tagged chain and are
//! removed, which replaces the raw event rate by the effective rate
//! `sigma_eff_ik = mu_i0 + sum_j mu+_ijk + sum_j f_ij mu-_ijk + q_k`.

use nalgebra::{DMatrix, DVector};

use crate::background::BackgroundChain;
use crate::model::ValidatedNetwork;
use crate::{Error, Result};

/// Per-entry-state loss probabilities and defective mean times to loss,
/// with their traffic-weighted aggregates.
#[derive(Debug, Clone)]
pub struct LossMetrics {
    n: usize,
    kbar: usize,
    /// `omega_ik`: probability a client now at node `i`, background `k`, is
    /// eventually lost.
    omega: DMatrix<f64>,
    /// `tau_ik = E[time in network ; lost]`, a defective expectation.
    tau: DMatrix<f64>,
    /// Effective tagged-client event rate per `(i, k)`.
    sigma_eff: DMatrix<f64>,
    /// Aggregate loss probability of an arriving client (PASTA entry).
    pub omega_agg: f64,
    /// Aggregate defective mean time to loss of an arriving client.
    pub tau_agg: f64,
}

impl LossMetrics {
    pub fn omega(&self, i: usize, k: usize) -> f64 {
        self.omega[(i, k)]
    }

    pub fn tau(&self, i: usize, k: usize) -> f64 {
        self.tau[(i, k)]
    }

    pub fn sigma_eff(&self, i: usize, k: usize) -> f64 {
        self.sigma_eff[(i, k)]
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn state_count(&self) -> usize {
        self.kbar
    }

    /// Conditional mean time to loss given loss, `tau / omega`; `None` when
    /// no client is ever lost.
    pub fn conditional_time_to_loss(&self) -> Option<f64> {
        if self.omega_agg > 0.0 {
            Some(self.tau_agg / self.omega_agg)
        } else {
            None
        }
    }
}

/// Builds the tagged-client system matrix `A` (row `(i,k)` index
/// `i*kbar + k`): `A x = b` with `A` carrying `sigma_eff` on the diagonal
/// and the jump and switch rates off it.
fn tagged_system(net: &ValidatedNetwork, chain: &BackgroundChain) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let q = chain.generator();
    let mut a = DMatrix::zeros(n * kbar, n * kbar);
    let mut sigma_eff = DMatrix::zeros(n, kbar);
    for i in 0..n {
        for k in 0..kbar {
            let row = i * kbar + k;
            let s = net.decay_rate(i, k) - q[(k, k)];
            sigma_eff[(i, k)] = s;
            a[(row, row)] = s;
            for l in net.out_links(i) {
                let rate = net.mu_plus(i, l.to, k);
                if rate > 0.0 {
                    a[(row, l.to * kbar + k)] -= rate;
                }
            }
            for l in 0..kbar {
                if l != k {
                    a[(row, i * kbar + l)] -= q[(k, l)];
                }
            }
        }
    }
    (a, sigma_eff)
}

/// Weak diagonal dominance in every row, strict in at least one. The excess
/// in row `(i,k)` is `mu_i0 + sum_j f_ij mu-_ijk`, which vanishes on rows
/// for non-exit nodes whose losses are impossible in state `k`; a network
/// with an exit node always has a strictly dominant row.
fn check_dominance(a: &DMatrix<f64>) -> Result<()> {
    let mut strict = false;
    for r in 0..a.nrows() {
        let diag = a[(r, r)];
        let off: f64 = (0..a.ncols())
            .filter(|&c| c != r)
            .map(|c| a[(r, c)].abs())
            .sum();
        if diag < off - 1e-12 * diag.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "tagged-client system row {r} not diagonally dominant"
            )));
        }
        if diag > off + 1e-12 * diag.abs().max(1.0) {
            strict = true;
        }
    }
    if !strict {
        return Err(Error::Numerical(
            "tagged-client system has no strictly dominant row".into(),
        ));
    }
    Ok(())
}

fn aggregate(net: &ValidatedNetwork, chain: &BackgroundChain, m: &DMatrix<f64>) -> f64 {
    let pi = chain.stationary();
    let lam_total = net.lambda_total();
    let mut acc = 0.0;
    for i in 0..net.num_nodes() {
        for k in 0..chain.state_count() {
            acc += pi[k] * net.lambda(i) * m[(i, k)];
        }
    }
    acc / lam_total
}

/// Computes `omega` and `tau` for every entry state, plus aggregates.
///
/// `omega` solves `sigma_eff omega_ik = lossrate_ik + sum_j mu+ omega_jk +
/// sum_l q_kl omega_il`; `tau` solves the same system with `omega` as the
/// right-hand side (each visited state contributes its expected holding time
/// weighted by the probability of eventual loss from it).
pub fn loss_metrics(net: &ValidatedNetwork, chain: &BackgroundChain) -> Result<LossMetrics> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let (a, sigma_eff) = tagged_system(net, chain);
    check_dominance(&a)?;
    let lu = a.lu();

    let mut b = DVector::zeros(n * kbar);
    for i in 0..n {
        for k in 0..kbar {
            b[i * kbar + k] = net.loss_rate(i, k);
        }
    }
    let omega_flat = lu
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular tagged-client system".into()))?;
    let tau_flat = lu
        .solve(&omega_flat)
        .ok_or_else(|| Error::Numerical("singular tagged-client system".into()))?;

    let omega = DMatrix::from_fn(n, kbar, |i, k| omega_flat[i * kbar + k]);
    let tau = DMatrix::from_fn(n, kbar, |i, k| tau_flat[i * kbar + k]);
    let omega_agg = aggregate(net, chain, &omega);
    let tau_agg = aggregate(net, chain, &tau);
    Ok(LossMetrics {
        n,
        kbar,
        omega,
        tau,
        sigma_eff,
        omega_agg,
        tau_agg,
    })
}

/// Loss probabilities `omega_ik` and their aggregate.
pub fn loss_probability(net: &ValidatedNetwork, chain: &BackgroundChain) -> Result<LossMetrics> {
    loss_metrics(net, chain)
}

/// Defective mean times to loss `tau_ik` and their aggregate.
pub fn mean_time_to_loss(net: &ValidatedNetwork, chain: &BackgroundChain) -> Result<LossMetrics> {
    loss_metrics(net, chain)
}

//! Closed forms for the special-case networks: symmetric mean curves, the
//! two-node tandem's stationary means and loss rate, the retry tandem's
//! node-1 law (a Poisson convolved with a negative-binomial mixture), and
//! the symmetric network's FCLT covariance function `xi_n(t)`.
//!
//! Everything here is redundant by design: each formula doubles a
//! general-purpose solver on its own domain and is cross-checked against it
//! in tests.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::moments::TimeSpec;
use crate::{Error, Result};

/// Parameters of the fully symmetric `n`-node network with one shared block:
/// per-node arrival rate `lambda`, total jump rate `nu` (split uniformly
/// over the `n - 1` targets), exit rate `mu0`, and loss fraction `f`
/// (0 or 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricSpec {
    pub n: usize,
    pub lambda: f64,
    pub nu: f64,
    pub mu0: f64,
    pub q0: f64,
    pub q1: f64,
    pub f: f64,
}

impl SymmetricSpec {
    /// Stationary probability of a link being up.
    pub fn pi(&self) -> f64 {
        self.q0 / (self.q0 + self.q1)
    }

    pub fn sigma(&self) -> f64 {
        self.nu + self.mu0
    }

    /// Mean relaxation rate `nu (1 - pi) + mu0` of the loss variant.
    pub fn kappa(&self) -> f64 {
        self.nu * (1.0 - self.pi()) + self.mu0
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(
                "symmetric network needs n >= 2".into(),
            ));
        }
        if self.lambda < 0.0 || self.nu < 0.0 || self.mu0 <= 0.0 || self.q0 <= 0.0 || self.q1 < 0.0
        {
            return Err(Error::InvalidArgument(
                "nonpositive rate in symmetric spec".into(),
            ));
        }
        if self.f != 0.0 && self.f != 1.0 {
            return Err(Error::InvalidArgument(
                "symmetric closed forms cover f = 0 and f = 1 only".into(),
            ));
        }
        Ok(())
    }
}

/// Mean-field per-node mean of the symmetric network: the loss variant
/// relaxes at rate `kappa`, the retry variant at `mu0` (retries keep the
/// customer in the system, so the block rates drop out entirely).
pub fn symmetric_mean(spec: &SymmetricSpec, time: TimeSpec) -> Result<f64> {
    spec.validate()?;
    let rate = if spec.f == 1.0 {
        spec.kappa()
    } else {
        spec.mu0
    };
    match time {
        TimeSpec::Stationary => Ok(spec.lambda / rate),
        TimeSpec::At(t) => {
            if t < 0.0 {
                return Err(Error::NegativeTime(t));
            }
            Ok(spec.lambda / rate * (1.0 - (-rate * t).exp()))
        }
    }
}

/// Parameters of the two-node tandem: arrivals at node 1, service `mu1`
/// over the failing link to node 2, exit at `mu2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TandemParams {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub q0: f64,
    pub q1: f64,
}

impl TandemParams {
    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0
            || self.mu1 <= 0.0
            || self.mu2 <= 0.0
            || self.q0 <= 0.0
            || self.q1 < 0.0
        {
            return Err(Error::InvalidArgument(
                "nonpositive rate in tandem params".into(),
            ));
        }
        Ok(())
    }

    fn generator(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-self.q0, self.q0, self.q1, -self.q1])
    }

    /// `(pi_down, pi_up)`.
    fn pi(&self) -> (f64, f64) {
        let q = self.q0 + self.q1;
        (self.q1 / q, self.q0 / q)
    }
}

/// Stationary per-state means of the loss tandem (`f = 1`) and the loss
/// throughput `mu1 v_10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TandemMeans {
    pub v10: f64,
    pub v11: f64,
    pub v20: f64,
    pub v21: f64,
    pub loss_rate: f64,
}

/// Evaluates `(v10, v11) = lambda pi (Delta_mu1 - Q)^{-1}` and
/// `(v20, v21) = (0, mu1 v11)(Delta_mu2 - Q)^{-1}`.
pub fn tandem_stationary_means(p: &TandemParams) -> Result<TandemMeans> {
    p.validate()?;
    let q = p.generator();
    let (pi0, pi1) = p.pi();
    let a1 = DMatrix::from_diagonal_element(2, 2, p.mu1) - &q;
    let v1 = crate::linalg::solve_row_system(
        &a1,
        &DVector::from_row_slice(&[p.lambda * pi0, p.lambda * pi1]),
    )?;
    let a2 = DMatrix::from_diagonal_element(2, 2, p.mu2) - &q;
    let v2 = crate::linalg::solve_row_system(&a2, &DVector::from_row_slice(&[0.0, p.mu1 * v1[1]]))?;
    Ok(TandemMeans {
        v10: v1[0],
        v11: v1[1],
        v20: v2[0],
        v21: v2[1],
        loss_rate: p.mu1 * v1[0],
    })
}

/// PGF of the stationary node-1 occupancy of the retry tandem (`f = 0`):
/// `e^{(lambda/mu1)(z-1)} (pi0 g^r + pi1 g^{r-1})` with
/// `g = q0 / (q0 + lambda (1 - z))` and `r = q1/mu1 + 1`.
pub fn tandem_node1_pgf(p: &TandemParams, z: f64) -> Result<f64> {
    p.validate()?;
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "pgf argument z = {z} outside [-1, 1]"
        )));
    }
    let (pi0, pi1) = p.pi();
    let r = p.q1 / p.mu1 + 1.0;
    let g = p.q0 / (p.q0 + p.lambda * (1.0 - z));
    Ok((p.lambda / p.mu1 * (z - 1.0)).exp() * (pi0 * g.powf(r) + pi1 * g.powf(r - 1.0)))
}

/// Negative-binomial pmf with real shape `r >= 0` and success probability
/// `p`; `r = 0` degenerates to a point mass at 0.
fn nb_pmf(r: f64, p: f64, m: usize) -> f64 {
    if r == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let m_f = m as f64;
    (ln_gamma(m_f + r) - ln_gamma(r) - ln_gamma(m_f + 1.0) + r * p.ln() + m_f * (1.0 - p).ln())
        .exp()
}

fn poisson_pmf(mean: f64, m: usize) -> f64 {
    let m_f = m as f64;
    (m_f * mean.ln() - mean - ln_gamma(m_f + 1.0)).exp()
}

/// pmf of the mixture component `B`: with probability `pi0` negative
/// binomial of shape `q1/mu1 + 1`, with probability `pi1` of shape `q1/mu1`.
fn mixture_pmf(p: &TandemParams, m: usize) -> f64 {
    let (pi0, pi1) = p.pi();
    let r = p.q1 / p.mu1 + 1.0;
    let succ = p.q0 / (p.q0 + p.lambda);
    pi0 * nb_pmf(r, succ, m) + pi1 * nb_pmf(r - 1.0, succ, m)
}

/// Stationary probability of `m` customers at node 1 of the retry tandem:
/// the convolution `P(A + B = m)` with `A ~ Poisson(lambda/mu1)`.
pub fn tandem_node1_pmf(p: &TandemParams, m: usize) -> Result<f64> {
    p.validate()?;
    let mean = p.lambda / p.mu1;
    let mut acc = 0.0;
    for a in 0..=m {
        acc += poisson_pmf(mean, a) * mixture_pmf(p, m - a);
    }
    Ok(acc)
}

/// The node-1 law as a vector `pmf[0..=cap]`, extended adaptively until the
/// tail mass drops below `1e-12`.
pub fn tandem_node1_distribution(p: &TandemParams) -> Result<Vec<f64>> {
    p.validate()?;
    let mut pmf = Vec::new();
    let mut cum = 0.0;
    let mut m = 0;
    loop {
        let v = tandem_node1_pmf(p, m)?;
        pmf.push(v);
        cum += v;
        // Only stop once past the mode: the pmf is unimodal.
        if 1.0 - cum < 1e-12 && (m as f64) > p.lambda / p.mu1 {
            break;
        }
        if m > 1_000_000 {
            return Err(Error::Numerical(
                "node-1 pmf failed to accumulate mass 1".into(),
            ));
        }
        m += 1;
    }
    Ok(pmf)
}

/// The scalar factor of the symmetric network's FCLT modulation covariance
/// `xi_n(t) E_n`.
pub fn symmetric_fclt_xi(spec: &SymmetricSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if spec.f != 1.0 {
        return Err(Error::InvalidArgument(
            "xi_n covers the loss variant (f = 1) only".into(),
        ));
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let kappa = spec.kappa();
    let q = spec.q0 + spec.q1;
    let pref = 2.0 * spec.q0 * spec.q1 * spec.lambda.powi(2) * spec.nu.powi(2)
        / (kappa.powi(2) * q.powi(3));
    let e = (-kappa * t).exp();
    Ok(pref * ((1.0 - e * e) / (2.0 * kappa) - 2.0 * e * (1.0 - e) / kappa + t * e * e))
}

/// `lim_{t->inf} xi_n(t) = q0 q1 lambda^2 nu^2 / (kappa^3 q^3)`.
pub fn symmetric_fclt_xi_limit(spec: &SymmetricSpec) -> Result<f64> {
    spec.validate()?;
    if spec.f != 1.0 {
        return Err(Error::InvalidArgument(
            "xi_n covers the loss variant (f = 1) only".into(),
        ));
    }
    let kappa = spec.kappa();
    let q = spec.q0 + spec.q1;
    Ok(spec.q0 * spec.q1 * spec.lambda.powi(2) * spec.nu.powi(2) / (kappa.powi(3) * q.powi(3)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundChain;
    use crate::model::fixtures;
    use approx::assert_relative_eq;

    fn fix_c_spec() -> SymmetricSpec {
        SymmetricSpec {
            n: 3,
            lambda: 2.0,
            nu: 1.0,
            mu0: 1.0,
            q0: 1.0,
            q1: 1.0,
            f: 1.0,
        }
    }

    fn fix_d_params(q1: f64) -> TandemParams {
        TandemParams {
            lambda: 20.0,
            mu1: 3.0,
            mu2: 2.0,
            q0: 1.0,
            q1,
        }
    }

    #[test]
    fn symmetric_means() {
        let spec = fix_c_spec();
        assert_relative_eq!(
            symmetric_mean(&spec, TimeSpec::Stationary).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-14
        );
        assert_eq!(symmetric_mean(&spec, TimeSpec::At(0.0)).unwrap(), 0.0);
        let retry = SymmetricSpec { f: 0.0, ..spec };
        for q in [(1.0, 1.0), (1.0, 3.0), (5.0, 0.2)] {
            let s = SymmetricSpec {
                q0: q.0,
                q1: q.1,
                ..retry
            };
            assert_relative_eq!(
                symmetric_mean(&s, TimeSpec::Stationary).unwrap(),
                2.0,
                epsilon = 1e-14
            );
        }
        assert!(symmetric_mean(&SymmetricSpec { f: 0.5, ..spec }, TimeSpec::Stationary).is_err());
    }

    #[test]
    fn tandem_means_unit_parameters() {
        let p = TandemParams {
            lambda: 1.0,
            mu1: 1.0,
            mu2: 1.0,
            q0: 1.0,
            q1: 1.0,
        };
        let m = tandem_stationary_means(&p).unwrap();
        assert_relative_eq!(m.v10, 0.5, epsilon = 1e-14);
        assert_relative_eq!(m.v11, 0.5, epsilon = 1e-14);
        assert_relative_eq!(m.v20, 1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(m.v21, 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.loss_rate, 0.5, epsilon = 1e-14);
        // Node 1 of the loss tandem is an unmodulated M/M/inf queue.
        assert_relative_eq!(m.v10 + m.v11, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn tandem_means_agree_with_general_solver() {
        let p = TandemParams {
            lambda: 2.3,
            mu1: 1.7,
            mu2: 0.9,
            q0: 0.6,
            q1: 1.4,
        };
        let m = tandem_stationary_means(&p).unwrap();
        let net = fixtures::tandem(p.lambda, p.mu1, p.mu2, p.q0, p.q1, 1.0);
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let v = crate::moments::stationary_first_moments(&net, &chain).unwrap();
        assert_relative_eq!(m.v10, v.value(0, 0), epsilon = 1e-12);
        assert_relative_eq!(m.v11, v.value(0, 1), epsilon = 1e-12);
        assert_relative_eq!(m.v20, v.value(1, 0), epsilon = 1e-12);
        assert_relative_eq!(m.v21, v.value(1, 1), epsilon = 1e-12);
    }

    #[test]
    fn pgf_normalizes_and_degenerates() {
        for q1 in [0.01, 0.5, 1.0, 3.0] {
            let p = fix_d_params(q1);
            assert_relative_eq!(tandem_node1_pgf(&p, 1.0).unwrap(), 1.0, epsilon = 1e-14);
        }
        // Never-failing link: plain Poisson PGF.
        let p = fix_d_params(0.0);
        for z in [0.0, 0.3, 0.9] {
            assert_relative_eq!(
                tandem_node1_pgf(&p, z).unwrap(),
                (20.0 / 3.0 * (z - 1.0)).exp(),
                epsilon = 1e-14
            );
        }
        assert!(tandem_node1_pgf(&p, 1.5).is_err());
    }

    #[test]
    fn pmf_matches_pgf_at_z_zero_and_sums_to_one() {
        for q1 in [0.01, 0.5, 1.0, 3.0] {
            let p = fix_d_params(q1);
            assert_relative_eq!(
                tandem_node1_pmf(&p, 0).unwrap(),
                tandem_node1_pgf(&p, 0.0).unwrap(),
                epsilon = 1e-14
            );
            let pmf = tandem_node1_distribution(&p).unwrap();
            let total: f64 = pmf.iter().sum();
            assert!((1.0 - total).abs() < 1e-12);
        }
    }

    #[test]
    fn pmf_matches_pgf_derivatives() {
        // P(M = m) = phi^(m)(0) / m!; check m = 1 by central differencing
        // the PGF near z = 0 (4th-order stencil).
        let p = fix_d_params(0.5);
        let h = 1e-3;
        let d = (-tandem_node1_pgf(&p, 2.0 * h).unwrap() + 8.0 * tandem_node1_pgf(&p, h).unwrap()
            - 8.0 * tandem_node1_pgf(&p, -h).unwrap()
            + tandem_node1_pgf(&p, -2.0 * h).unwrap())
            / (12.0 * h);
        assert_relative_eq!(tandem_node1_pmf(&p, 1).unwrap(), d, epsilon = 1e-9);
    }

    #[test]
    fn pmf_never_down_is_poisson() {
        let p = fix_d_params(0.0);
        for m in [0, 3, 10] {
            assert_relative_eq!(
                tandem_node1_pmf(&p, m).unwrap(),
                poisson_pmf(20.0 / 3.0, m),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn pmf_mean_matches_general_solver() {
        let p = fix_d_params(0.5);
        let pmf = tandem_node1_distribution(&p).unwrap();
        let mean: f64 = pmf.iter().enumerate().map(|(m, v)| m as f64 * v).sum();
        let net = fixtures::tandem(p.lambda, p.mu1, p.mu2, p.q0, p.q1, 0.0);
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let v = crate::moments::stationary_first_moments(&net, &chain).unwrap();
        // The 1e-12 tail-mass truncation costs a few 1e-10 in the mean.
        assert_relative_eq!(mean, v.node_mean(0), epsilon = 1e-8);
    }

    #[test]
    fn xi_values() {
        let spec = fix_c_spec();
        assert_eq!(symmetric_fclt_xi(&spec, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            symmetric_fclt_xi_limit(&spec).unwrap(),
            4.0 / 27.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            symmetric_fclt_xi(&spec, 20.0).unwrap(),
            4.0 / 27.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn xi_matches_lyapunov_integral() {
        let spec = fix_c_spec();
        let net = fixtures::fix_c();
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        for t in [0.3, 1.0, 2.5, 5.0] {
            let xi = symmetric_fclt_xi(&spec, t).unwrap();
            let lt =
                crate::fclt::fclt_covariance(&net, &chain, t, crate::fclt::Regime::Lt1).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(lt.cov[(i, j)], xi, epsilon = 1e-8);
                }
            }
        }
    }
}

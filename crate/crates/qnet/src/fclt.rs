//! Fluid limit and functional central limit theorem: the centering function
//! `rho(t)`, the averaged drift matrix `M`, the modulation matrix `M°(t)`,
//! and the limiting Gaussian covariance in the three time-scale regimes.
//!
//! The scaling speeds arrivals up by `N` and the background chain by
//! `N^alpha`. For `alpha = 1` (EQ1) the modulation noise and the queueing
//! noise both survive; for `alpha > 1` (GT1) the background averages out and
//! only the Poisson-type noise `diag(rho)` remains; for `alpha < 1` (LT1)
//! the modulation noise dominates.

use nalgebra::{DMatrix, DVector};

use crate::background::BackgroundChain;
use crate::linalg;
use crate::model::ValidatedNetwork;
use crate::{Error, Result};

/// Time-scale regime of the background chain relative to the arrival stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Background slower than the arrivals (`alpha < 1`).
    Lt1,
    /// Background on the same scale (`alpha = 1`).
    Eq1,
    /// Background faster (`alpha > 1`).
    Gt1,
}

/// Averaged rates under the stationary background law: `mu_bar[(i, j)]` is
/// the mean successful jump rate `i -> j`, `exit[i]` the mean rate of
/// leaving the network from `i` (true exits plus losses).
pub struct AveragedRates {
    pub mu_bar: DMatrix<f64>,
    pub exit: DVector<f64>,
}

pub fn averaged_rates(net: &ValidatedNetwork, chain: &BackgroundChain) -> AveragedRates {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let pi = chain.stationary();
    let mut mu_bar = DMatrix::zeros(n, n);
    let mut exit = DVector::zeros(n);
    for i in 0..n {
        for k in 0..kbar {
            exit[i] += pi[k] * net.mu_exit_effective(i, k);
            for l in net.out_links(i) {
                mu_bar[(i, l.to)] += pi[k] * net.mu_plus(i, l.to, k);
            }
        }
    }
    AveragedRates { mu_bar, exit }
}

/// Drift matrix of the fluid ODE `rho' = M rho + lambda`: inflows
/// `M_(i,j) = mu_bar_(j,i)` off the diagonal, minus the averaged total
/// outflow on it.
pub fn drift_matrix(net: &ValidatedNetwork, chain: &BackgroundChain) -> DMatrix<f64> {
    let n = net.num_nodes();
    let avg = averaged_rates(net, chain);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut out = avg.exit[i];
        for j in 0..n {
            if j != i {
                m[(i, j)] = avg.mu_bar[(j, i)];
                out += avg.mu_bar[(i, j)];
            }
        }
        m[(i, i)] = -out;
    }
    m
}

fn lambda_vector(net: &ValidatedNetwork) -> DVector<f64> {
    DVector::from_fn(net.num_nodes(), |i, _| net.lambda(i))
}

/// Fluid queue level at time `t`, starting from `rho0` (zero if `None`),
/// via the augmented exponential of `[[M, lambda], [0, 0]]`.
pub fn fluid_limit(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
    rho0: Option<&[f64]>,
) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let n = net.num_nodes();
    let m = drift_matrix(net, chain);
    let lam = lambda_vector(net);
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&m);
    for i in 0..n {
        aug[(i, n)] = lam[i];
    }
    let mut state = DVector::zeros(n + 1);
    if let Some(r0) = rho0 {
        if r0.len() != n {
            return Err(Error::InvalidArgument(format!(
                "rho0 has length {}, expected {n}",
                r0.len()
            )));
        }
        for i in 0..n {
            if r0[i] < 0.0 {
                return Err(Error::InvalidArgument("negative fluid level".into()));
            }
            state[i] = r0[i];
        }
    }
    state[n] = 1.0;
    let out = (aug * t).exp() * state;
    Ok(out.rows(0, n).into_owned())
}

/// Stationary fluid point `rho* = -M^{-1} lambda`.
pub fn fluid_stationary(net: &ValidatedNetwork, chain: &BackgroundChain) -> Result<DVector<f64>> {
    let m = drift_matrix(net, chain);
    let rho = linalg::solve_col_system(&(-m), &lambda_vector(net))?;
    if rho.iter().any(|&r| r < 0.0) {
        return Err(Error::Numerical("negative stationary fluid point".into()));
    }
    Ok(rho)
}

/// Modulation matrix at fluid level `rho`:
/// `(M°)_(i,k) = sum_(j != i) rho_j mu+_(jik) - rho_i decay_(i,k)`.
pub fn modulation_matrix_at(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    rho: &DVector<f64>,
) -> DMatrix<f64> {
    let n = net.num_nodes();
    let kbar = chain.state_count();
    let mut mo = DMatrix::zeros(n, kbar);
    for i in 0..n {
        for k in 0..kbar {
            let mut acc = -rho[i] * net.decay_rate(i, k);
            for l in net.links() {
                if l.to == i {
                    acc += rho[l.from] * net.mu_plus(l.from, i, k);
                }
            }
            mo[(i, k)] = acc;
        }
    }
    mo
}

/// Modulation matrix at time `t` for an empty start.
pub fn modulation_matrix(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
) -> Result<DMatrix<f64>> {
    let rho = fluid_limit(net, chain, t, None)?;
    Ok(modulation_matrix_at(net, chain, &rho))
}

/// FCLT covariance of the centered-scaled queue vector at time `t`.
#[derive(Debug, Clone)]
pub struct FcltCovariance {
    pub regime: Regime,
    pub cov: DMatrix<f64>,
    pub modulation: DMatrix<f64>,
    pub rho: DVector<f64>,
}

/// Fastest event rate of the limit dynamics; sets the RK4 step.
fn rate_scale(net: &ValidatedNetwork, chain: &BackgroundChain) -> f64 {
    let mut rate: f64 = 1.0;
    for i in 0..net.num_nodes() {
        for k in 0..chain.state_count() {
            rate = rate.max(net.decay_rate(i, k));
        }
    }
    for k in 0..chain.state_count() {
        rate = rate.max(-chain.generator()[(k, k)]);
    }
    rate
}

/// Integrates `rho' = M rho + lambda`, `C' = M C + C M^T + source(rho)`
/// jointly by classical RK4 with `steps` fixed steps.
fn integrate_lyapunov<F>(
    m: &DMatrix<f64>,
    lam: &DVector<f64>,
    source: F,
    t: f64,
    steps: usize,
) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = lam.len();
    let h = t / steps as f64;
    let mut rho = DVector::zeros(n);
    let mut c = DMatrix::zeros(n, n);
    let f_rho = |r: &DVector<f64>| m * r + lam;
    let f_c = |cc: &DMatrix<f64>, r: &DVector<f64>| m * cc + cc * m.transpose() + source(r);
    for _ in 0..steps {
        let k1r = f_rho(&rho);
        let k1c = f_c(&c, &rho);
        let r2 = &rho + &k1r * (h / 2.0);
        let k2r = f_rho(&r2);
        let k2c = f_c(&(&c + &k1c * (h / 2.0)), &r2);
        let r3 = &rho + &k2r * (h / 2.0);
        let k3r = f_rho(&r3);
        let k3c = f_c(&(&c + &k2c * (h / 2.0)), &r3);
        let r4 = &rho + &k3r * h;
        let k4r = f_rho(&r4);
        let k4c = f_c(&(&c + &k3c * h), &r4);
        rho += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
        c += (k1c + k2c * 2.0 + k3c * 2.0 + k4c) * (h / 6.0);
    }
    c
}

fn modulation_integral(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
) -> Result<DMatrix<f64>> {
    let m = drift_matrix(net, chain);
    let lam = lambda_vector(net);
    let sigma = chain.fclt_sigma();
    let source = |rho: &DVector<f64>| {
        let mo = modulation_matrix_at(net, chain, rho);
        &mo * &sigma * mo.transpose()
    };
    let steps = ((t * rate_scale(net, chain) * 200.0).ceil() as usize).max(1);
    let coarse = integrate_lyapunov(&m, &lam, source, t, steps);
    let fine = integrate_lyapunov(&m, &lam, source, t, steps * 2);
    if linalg::rel_diff(&coarse, &fine) > 1e-6 {
        return Err(Error::Numerical(
            "covariance integral failed the step-halving check".into(),
        ));
    }
    Ok(fine)
}

/// Covariance of the FCLT limit at `t` for an empty start, per regime:
/// EQ1 adds `diag(rho(t))` to the modulation integral, GT1 keeps only
/// `diag(rho(t))`, LT1 only the modulation integral.
pub fn fclt_covariance(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
    regime: Regime,
) -> Result<FcltCovariance> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let n = net.num_nodes();
    let rho = fluid_limit(net, chain, t, None)?;
    let modulation = modulation_matrix_at(net, chain, &rho);
    let poisson = DMatrix::from_fn(n, n, |i, j| if i == j { rho[i] } else { 0.0 });
    let cov = match regime {
        Regime::Gt1 => poisson,
        Regime::Lt1 => modulation_integral(net, chain, t)?,
        Regime::Eq1 => modulation_integral(net, chain, t)? + poisson,
    };
    linalg::assert_psd(&cov, 1e-10)?;
    Ok(FcltCovariance {
        regime,
        cov,
        modulation,
        rho,
    })
}

/// EQ1 covariance from the raw martingale diffusion matrix `G` instead of
/// the compact `diag(rho)` shortcut; used to validate the simplification.
pub fn covariance_full_g(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let n = net.num_nodes();
    let m = drift_matrix(net, chain);
    let lam = lambda_vector(net);
    let sigma = chain.fclt_sigma();
    let avg = averaged_rates(net, chain);
    let source = |rho: &DVector<f64>| {
        let mo = modulation_matrix_at(net, chain, rho);
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut acc = lam[i] + rho[i] * avg.exit[i];
            for j in 0..n {
                if j != i {
                    acc += rho[j] * avg.mu_bar[(j, i)] + rho[i] * avg.mu_bar[(i, j)];
                    g[(i, j)] = -rho[i] * avg.mu_bar[(i, j)] - rho[j] * avg.mu_bar[(j, i)];
                }
            }
            g[(i, i)] = acc;
        }
        &mo * &sigma * mo.transpose() + g
    };
    let steps = ((t * rate_scale(net, chain) * 200.0).ceil() as usize).max(1);
    let coarse = integrate_lyapunov(&m, &lam, source, t, steps);
    let fine = integrate_lyapunov(&m, &lam, source, t, steps * 2);
    if linalg::rel_diff(&coarse, &fine) > 1e-6 {
        return Err(Error::Numerical(
            "covariance integral failed the step-halving check".into(),
        ));
    }
    Ok(fine)
}

/// Gaussian surrogate for the prelimit system with `N` scaling: mean
/// `N rho(t)`, covariance `N Cov(t)`.
pub fn gaussian_approx(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    t: f64,
    n_scale: f64,
    regime: Regime,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if n_scale < 1.0 {
        return Err(Error::InvalidArgument(format!("scale N = {n_scale} < 1")));
    }
    let fc = fclt_covariance(net, chain, t, regime)?;
    Ok((&fc.rho * n_scale, &fc.cov * n_scale))
}

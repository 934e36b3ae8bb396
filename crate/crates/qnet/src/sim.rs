//! Event-driven Monte-Carlo simulation of the exact model, unscaled or with
//! the FCLT scaling (arrivals times `N`, block rates times `N^alpha`).
//!
//! Replications use ChaCha8 streams split by `(seed, rep_index)`: the seed
//! selects the key, the replication index the stream counter, so streams are
//! independent and any subset of replications can be reproduced in
//! isolation. Retries are realized as null events (the chain's self-loop),
//! and grid sampling holds the last value (the paths are right-continuous).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::background::BackgroundChain;
use crate::model::ValidatedNetwork;
use crate::moments::{BackgroundStart, InitialCondition};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Scaling factor `N` for arrivals.
    pub n_scale: u64,
    /// Background time-scale exponent: block rates are `N^alpha q`.
    pub alpha: f64,
    pub horizon: f64,
    /// Sampling step of the output grid.
    pub grid: f64,
    pub reps: usize,
    pub seed: u64,
    pub initial: InitialCondition,
}

impl SimConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.n_scale < 1 {
            return Err(Error::InvalidArgument("scaling N must be >= 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        if !(self.horizon > 0.0) || !(self.grid > 0.0) {
            return Err(Error::InvalidArgument(
                "horizon and grid must be positive".into(),
            ));
        }
        if self.reps < 1 {
            return Err(Error::InvalidArgument(
                "need at least one replication".into(),
            ));
        }
        if self.initial.counts.len() != n {
            return Err(Error::InvalidArgument(
                "initial counts length mismatch".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_times(&self) -> Vec<f64> {
        let steps = (self.horizon / self.grid).floor() as usize;
        (0..=steps).map(|g| g as f64 * self.grid).collect()
    }
}

/// One replication sampled on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Per grid time, per node.
    pub counts: Vec<Vec<u64>>,
    pub losses: Vec<u64>,
    pub background: Vec<usize>,
    /// Background states seen by arriving customers (PASTA diagnostics).
    pub arrival_states: Vec<usize>,
}

fn rng_for(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn draw_background(
    chain: &BackgroundChain,
    start: BackgroundStart,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let kb = chain.num_blocks();
    match start {
        BackgroundStart::State(k) => (0..kb).map(|b| (k >> (kb - 1 - b)) & 1 == 1).collect(),
        BackgroundStart::Stationary => (0..kb)
            .map(|b| rng.gen::<f64>() < chain.block_up_probability(b))
            .collect(),
    }
}

fn encode_state(ups: &[bool]) -> usize {
    ups.iter().fold(0, |acc, &u| (acc << 1) | usize::from(u))
}

/// Runs a single replication with the stream derived from
/// `(config.seed, rep)`.
pub fn run_one(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    config: &SimConfig,
    rep: u64,
) -> Result<Trajectory> {
    let n = net.num_nodes();
    config.validate(n)?;
    let mut rng = rng_for(config.seed, rep);
    let nf = config.n_scale as f64;
    let q_scale = nf.powf(config.alpha);

    let mut m: Vec<u64> = config.initial.counts.clone();
    let mut ups = draw_background(chain, config.initial.background, &mut rng);
    let mut losses: u64 = 0;
    let times = config.grid_times();
    let mut counts_out = Vec::with_capacity(times.len());
    let mut losses_out = Vec::with_capacity(times.len());
    let mut bg_out = Vec::with_capacity(times.len());
    let mut arrival_states = Vec::new();

    let mut t = 0.0;
    let mut next_grid = 0usize;
    loop {
        // Per-node event rates: arrivals and total service load.
        let mut total = 0.0;
        for i in 0..n {
            total += nf * net.lambda(i) + m[i] as f64 * net.mu_total(i);
        }
        for (b, block) in net.blocks().iter().enumerate() {
            total += q_scale
                * if ups[b] {
                    block.q_up_to_down
                } else {
                    block.q_down_to_up
                };
        }
        let dt = if total > 0.0 {
            -rng.gen::<f64>().ln() / total
        } else {
            f64::INFINITY
        };
        // Emit passed grid points with the pre-event state.
        while next_grid < times.len() && times[next_grid] <= t + dt {
            counts_out.push(m.clone());
            losses_out.push(losses);
            bg_out.push(encode_state(&ups));
            next_grid += 1;
        }
        if next_grid == times.len() {
            break;
        }
        t += dt;

        let mut u = rng.gen::<f64>() * total;
        let mut handled = false;
        for i in 0..n {
            let arr = nf * net.lambda(i);
            if u < arr {
                arrival_states.push(encode_state(&ups));
                m[i] += 1;
                handled = true;
                break;
            }
            u -= arr;
            let serv = m[i] as f64 * net.mu_total(i);
            if u < serv {
                // Branch over exit and the outgoing links.
                let mut b = rng.gen::<f64>() * net.mu_total(i);
                if b < net.mu_exit(i) {
                    m[i] -= 1;
                } else {
                    b -= net.mu_exit(i);
                    for l in net.out_links(i) {
                        if b < l.mu {
                            let up = match l.block {
                                crate::model::BlockRef::AlwaysUp => true,
                                crate::model::BlockRef::Block(bl) => ups[bl],
                            };
                            if up {
                                m[i] -= 1;
                                m[l.to] += 1;
                            } else if rng.gen::<f64>() < l.f {
                                m[i] -= 1;
                                losses += 1;
                            }
                            // Otherwise: retry, a null event.
                            break;
                        }
                        b -= l.mu;
                    }
                }
                handled = true;
                break;
            }
            u -= serv;
        }
        if !handled {
            for (b, block) in net.blocks().iter().enumerate() {
                let rate = q_scale
                    * if ups[b] {
                        block.q_up_to_down
                    } else {
                        block.q_down_to_up
                    };
                if u < rate {
                    ups[b] = !ups[b];
                    break;
                }
                u -= rate;
            }
        }
    }
    Ok(Trajectory {
        times,
        counts: counts_out,
        losses: losses_out,
        background: bg_out,
        arrival_states,
    })
}

/// Ensemble statistics on the sampling grid.
#[derive(Debug, Clone)]
pub struct SimEnsemble {
    pub times: Vec<f64>,
    /// Per grid time: sample mean of the counts.
    pub mean: Vec<DVector<f64>>,
    pub se_mean: Vec<DVector<f64>>,
    /// Per grid time: sample covariance of the counts.
    pub cov: Vec<DMatrix<f64>>,
    pub loss_mean: Vec<f64>,
    pub loss_se: Vec<f64>,
    pub reps: usize,
}

/// Installs a rayon pool capped by `QNET_THREADS` (when set and valid) and
/// runs `f` inside it.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    if let Ok(v) = std::env::var("QNET_THREADS") {
        if let Ok(threads) = v.parse::<usize>() {
            if threads >= 1 {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                    return pool.install(f);
                }
            }
        }
    }
    f()
}

/// Runs `config.reps` replications in parallel and reduces them in
/// replication order, so the result is independent of scheduling.
pub fn run_ensemble(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    config: &SimConfig,
) -> Result<SimEnsemble> {
    config.validate(net.num_nodes())?;
    let trajectories: Vec<Trajectory> = with_thread_cap(|| {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|rep| run_one(net, chain, config, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    let n = net.num_nodes();
    let times = config.grid_times();
    let reps = config.reps;
    let rf = reps as f64;
    let mut mean = Vec::with_capacity(times.len());
    let mut se_mean = Vec::with_capacity(times.len());
    let mut cov = Vec::with_capacity(times.len());
    let mut loss_mean = Vec::with_capacity(times.len());
    let mut loss_se = Vec::with_capacity(times.len());
    for g in 0..times.len() {
        let mut mu = DVector::zeros(n);
        let mut lmu = 0.0;
        for tr in &trajectories {
            for i in 0..n {
                mu[i] += tr.counts[g][i] as f64;
            }
            lmu += tr.losses[g] as f64;
        }
        mu /= rf;
        lmu /= rf;
        let mut c = DMatrix::zeros(n, n);
        let mut lvar = 0.0;
        for tr in &trajectories {
            let d = DVector::from_fn(n, |i, _| tr.counts[g][i] as f64 - mu[i]);
            c += &d * d.transpose();
            lvar += (tr.losses[g] as f64 - lmu).powi(2);
        }
        let denom = (rf - 1.0).max(1.0);
        c /= denom;
        lvar /= denom;
        se_mean.push(DVector::from_fn(n, |i, _| (c[(i, i)] / rf).sqrt()));
        mean.push(mu);
        cov.push(c);
        loss_mean.push(lmu);
        loss_se.push((lvar / rf).sqrt());
    }
    Ok(SimEnsemble {
        times,
        mean,
        se_mean,
        cov,
        loss_mean,
        loss_se,
        reps,
    })
}

/// Centered-scaled samples `(M(t) - N rho(t)) / sqrt(N)` at one time point.
#[derive(Debug, Clone)]
pub struct FcltSample {
    pub samples: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    pub se_mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn fclt_empirical(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    config: &SimConfig,
    t: f64,
) -> Result<FcltSample> {
    if config.initial.counts.iter().any(|&c| c != 0) {
        return Err(Error::InvalidArgument(
            "the FCLT comparison needs an empty start".into(),
        ));
    }
    if !(t > 0.0) || t > config.horizon {
        return Err(Error::InvalidArgument(
            "sample time outside (0, horizon]".into(),
        ));
    }
    let n = net.num_nodes();
    let rho = crate::fclt::fluid_limit(net, chain, t, None)?;
    let point = SimConfig {
        horizon: t,
        grid: t,
        ..config.clone()
    };
    let sqrt_n = (config.n_scale as f64).sqrt();
    let samples: Vec<DVector<f64>> = with_thread_cap(|| {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let tr = run_one(net, chain, &point, rep)?;
                let last = tr.counts.last().unwrap();
                Ok(DVector::from_fn(n, |i, _| {
                    (last[i] as f64 - config.n_scale as f64 * rho[i]) / sqrt_n
                }))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rf = samples.len() as f64;
    let mut mean = DVector::zeros(n);
    for s in &samples {
        mean += s;
    }
    mean /= rf;
    let mut cov = DMatrix::zeros(n, n);
    for s in &samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= (rf - 1.0).max(1.0);
    let se_mean = DVector::from_fn(n, |i, _| (cov[(i, i)] / rf).sqrt());
    Ok(FcltSample {
        samples,
        mean,
        se_mean,
        cov,
    })
}

/// Tagged-client estimates of the loss probability and the defective mean
/// time to loss, for validating the linear-system route.
#[derive(Debug, Clone)]
pub struct TaggedStats {
    pub omega: f64,
    pub omega_se: f64,
    pub tau: f64,
    pub tau_se: f64,
    pub clients: usize,
}

/// Simulates `clients` independent tagged clients: entry node sampled with
/// the arrival weights, background drawn from its stationary law (PASTA),
/// then the client and the background evolve jointly until exit or loss.
pub fn tagged_client(
    net: &ValidatedNetwork,
    chain: &BackgroundChain,
    clients: usize,
    seed: u64,
) -> Result<TaggedStats> {
    if clients < 1 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let results: Vec<(f64, f64)> = with_thread_cap(|| {
        (0..clients as u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng_for(seed, c);
                let mut ups = draw_background(chain, BackgroundStart::Stationary, &mut rng);
                // Entry node proportional to lambda.
                let mut pick = rng.gen::<f64>() * net.lambda_total();
                let mut node = 0;
                for i in 0..net.num_nodes() {
                    if pick < net.lambda(i) {
                        node = i;
                        break;
                    }
                    pick -= net.lambda(i);
                }
                let mut t = 0.0;
                loop {
                    let mut total = net.mu_total(node);
                    for (b, block) in net.blocks().iter().enumerate() {
                        total += if ups[b] {
                            block.q_up_to_down
                        } else {
                            block.q_down_to_up
                        };
                    }
                    t += -rng.gen::<f64>().ln() / total;
                    let mut u = rng.gen::<f64>() * total;
                    if u < net.mu_total(node) {
                        if u < net.mu_exit(node) {
                            return (0.0, 0.0);
                        }
                        u -= net.mu_exit(node);
                        for l in net.out_links(node) {
                            if u < l.mu {
                                let up = match l.block {
                                    crate::model::BlockRef::AlwaysUp => true,
                                    crate::model::BlockRef::Block(bl) => ups[bl],
                                };
                                if up {
                                    node = l.to;
                                } else if rng.gen::<f64>() < l.f {
                                    return (1.0, t);
                                }
                                break;
                            }
                            u -= l.mu;
                        }
                    } else {
                        u -= net.mu_total(node);
                        for (b, block) in net.blocks().iter().enumerate() {
                            let rate = if ups[b] {
                                block.q_up_to_down
                            } else {
                                block.q_down_to_up
                            };
                            if u < rate {
                                ups[b] = !ups[b];
                                break;
                            }
                            u -= rate;
                        }
                    }
                }
            })
            .collect()
    });
    let cf = clients as f64;
    let omega = results.iter().map(|r| r.0).sum::<f64>() / cf;
    let tau = results.iter().map(|r| r.1).sum::<f64>() / cf;
    let omega_var =
        results.iter().map(|r| (r.0 - omega).powi(2)).sum::<f64>() / (cf - 1.0).max(1.0);
    let tau_var = results.iter().map(|r| (r.1 - tau).powi(2)).sum::<f64>() / (cf - 1.0).max(1.0);
    Ok(TaggedStats {
        omega,
        omega_se: (omega_var / cf).sqrt(),
        tau,
        tau_se: (tau_var / cf).sqrt(),
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    fn chain_for(net: &ValidatedNetwork) -> BackgroundChain {
        BackgroundChain::new(net.blocks()).unwrap()
    }

    fn base_config(n: usize) -> SimConfig {
        SimConfig {
            n_scale: 1,
            alpha: 1.0,
            horizon: 2.0,
            grid: 0.5,
            reps: 200,
            seed: 11,
            initial: InitialCondition::empty_stationary(n),
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let cfg = base_config(2);
        let a = run_one(&net, &chain, &cfg, 3).unwrap();
        let b = run_one(&net, &chain, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = run_one(&net, &chain, &cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lossless_network_never_loses() {
        let net = fixtures::fix_b0();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            horizon: 20.0,
            grid: 5.0,
            reps: 20,
            ..base_config(2)
        };
        let ens = run_ensemble(&net, &chain, &cfg).unwrap();
        assert!(ens.loss_mean.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn losses_are_nondecreasing() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            horizon: 10.0,
            grid: 1.0,
            ..base_config(2)
        };
        let tr = run_one(&net, &chain, &cfg, 0).unwrap();
        for w in tr.losses.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn fix_a_ergodic_mean() {
        let net = fixtures::fix_a();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            horizon: 200.0,
            grid: 1.0,
            reps: 1,
            seed: 5,
            ..base_config(1)
        };
        let tr = run_one(&net, &chain, &cfg, 0).unwrap();
        let tail: Vec<f64> = tr
            .times
            .iter()
            .zip(&tr.counts)
            .filter(|(t, _)| **t >= 100.0)
            .map(|(_, c)| c[0] as f64)
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        // Generous band: grid samples of an ergodic path are correlated.
        assert!((mean - 3.0).abs() < 0.6, "ergodic mean {mean}");
    }

    #[test]
    fn ensemble_mean_matches_transient_moments() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            reps: 4000,
            seed: 17,
            ..base_config(2)
        };
        let ens = run_ensemble(&net, &chain, &cfg).unwrap();
        let g = ens.times.len() - 1;
        let v = crate::moments::transient_first_moments(&net, &chain, &cfg.initial, ens.times[g])
            .unwrap();
        for i in 0..2 {
            let dev = (ens.mean[g][i] - v.node_mean(i)).abs();
            assert!(dev < 3.0 * ens.se_mean[g][i], "node {i}: dev {dev}");
        }
    }

    #[test]
    fn long_run_loss_fraction() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            horizon: 400.0,
            grid: 400.0,
            reps: 60,
            seed: 23,
            ..base_config(2)
        };
        let ens = run_ensemble(&net, &chain, &cfg).unwrap();
        let g = ens.times.len() - 1;
        let frac = ens.loss_mean[g] / 400.0;
        let se = ens.loss_se[g] / 400.0;
        assert!(
            (frac - 0.5).abs() < 3.0 * se,
            "loss fraction {frac} (se {se})"
        );
    }

    #[test]
    fn pasta_arrival_states() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let cfg = SimConfig {
            horizon: 300.0,
            grid: 300.0,
            reps: 1,
            seed: 29,
            ..base_config(2)
        };
        let tr = run_one(&net, &chain, &cfg, 0).unwrap();
        let ups = tr.arrival_states.iter().filter(|&&k| k == 1).count() as f64;
        let total = tr.arrival_states.len() as f64;
        let p = ups / total;
        let se = (0.5 * 0.5 / total).sqrt();
        assert!((p - 0.5).abs() < 3.5 * se, "PASTA up-fraction {p}");
    }

    #[test]
    fn tagged_client_matches_linear_system() {
        let net = fixtures::fix_b();
        let chain = chain_for(&net);
        let stats = tagged_client(&net, &chain, 40_000, 31).unwrap();
        let m = crate::perf::loss_metrics(&net, &chain).unwrap();
        assert!((stats.omega - m.omega_agg).abs() < 3.0 * stats.omega_se);
        assert!((stats.tau - m.tau_agg).abs() < 3.0 * stats.tau_se);
    }

    #[test]
    fn fclt_empirical_centering() {
        let net = fixtures::tandem(25.0, 10.0, 20.0, 30.0, 20.0, 0.0);
        let chain = chain_for(&net);
        let cfg = SimConfig {
            n_scale: 100,
            alpha: 1.0,
            horizon: 0.5,
            grid: 0.5,
            reps: 400,
            seed: 37,
            initial: InitialCondition::empty_stationary(2),
        };
        let s = fclt_empirical(&net, &chain, &cfg, 0.5).unwrap();
        for i in 0..2 {
            assert!(
                s.mean[i].abs() < 3.5 * s.se_mean[i],
                "component {i}: {}",
                s.mean[i]
            );
        }
    }
}

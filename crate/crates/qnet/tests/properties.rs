//! Property-based invariants on randomized networks and background chains.

use proptest::prelude::*;

use qnet::background::{self, BackgroundChain};
use qnet::model::{self, BlockRef, BlockSpec, LinkSpec, NetworkSpec, NodeSpec, ValidatedNetwork};
use qnet::moments::{self, InitialCondition, TimeSpec};
use qnet::{fclt, perf, sim};

fn arb_network() -> impl Strategy<Value = ValidatedNetwork> {
    let rate = 0.1f64..3.0;
    let node =
        (rate.clone(), 0.5f64..3.0).prop_map(|(lambda, mu_exit)| NodeSpec { lambda, mu_exit });
    let block = (rate.clone(), rate.clone()).prop_map(|(q_down_to_up, q_up_to_down)| BlockSpec {
        q_down_to_up,
        q_up_to_down,
    });
    (
        prop::collection::vec(node, 1..=3),
        prop::collection::vec(block, 1..=2),
        prop::collection::vec((0.1f64..3.0, 0f64..=1.0, any::<u32>()), 0..=6),
    )
        .prop_filter_map("valid network", |(nodes, blocks, raw_links)| {
            let n = nodes.len();
            let kb = blocks.len();
            let mut links = Vec::new();
            let mut pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect();
            for (mu, f, pick) in raw_links {
                if pairs.is_empty() {
                    break;
                }
                let (from, to) = pairs.remove(pick as usize % pairs.len());
                let block = BlockRef::Block(pick as usize % kb);
                links.push(LinkSpec::directed(from, to, mu, f, block));
            }
            model::validate(&NetworkSpec {
                nodes,
                links,
                blocks,
            })
            .ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn background_rows_sum_to_zero_and_pi_is_stationary(net in arb_network()) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let q = chain.generator();
        let pi = chain.stationary();
        let kbar = chain.state_count();
        for k in 0..kbar {
            prop_assert!(q.row(k).sum().abs() < 1e-12);
        }
        for l in 0..kbar {
            let flow: f64 = (0..kbar).map(|k| pi[k] * q[(k, l)]).sum();
            prop_assert!(flow.abs() < 1e-12);
        }
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_form_matches_null_space_solve(net in arb_network()) {
        let q = background::build_generator(net.blocks());
        let direct = background::stationary_null_solve(&q).unwrap();
        let product = background::stationary_product_form(net.blocks());
        for k in 0..direct.len() {
            prop_assert!((direct[k] - product[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_first_moments_are_positive_and_consistent(net in arb_network()) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let v = moments::stationary_first_moments(&net, &chain).unwrap();
        let init = InitialCondition::empty_stationary(net.num_nodes());
        let table = moments::factorial_moments(
            &net, &chain, 1, TimeSpec::Stationary, false, &init).unwrap();
        for i in 0..net.num_nodes() {
            prop_assert!(v.node_mean(i) > 0.0);
            prop_assert!((v.node_mean(i) - table.mean(i).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn transient_means_approach_stationary(net in arb_network()) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let init = InitialCondition::empty_stationary(net.num_nodes());
        let horizon = 60.0 / moments::mixing_gap(&net, &chain);
        let vt = moments::transient_first_moments(&net, &chain, &init, horizon).unwrap();
        let vs = moments::stationary_first_moments(&net, &chain).unwrap();
        for i in 0..net.num_nodes() {
            prop_assert!((vt.node_mean(i) - vs.node_mean(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn omega_lies_in_unit_interval_and_vanishes_without_losses(net in arb_network()) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let m = perf::loss_metrics(&net, &chain).unwrap();
        for i in 0..net.num_nodes() {
            for k in 0..chain.state_count() {
                prop_assert!((0.0..=1.0).contains(&m.omega(i, k)));
                prop_assert!(m.tau(i, k) >= 0.0);
            }
        }
        prop_assert!((0.0..=1.0).contains(&m.omega_agg));
        if net.lossless() {
            prop_assert!(m.omega_agg == 0.0);
            prop_assert!(m.tau_agg == 0.0);
        }
    }

    #[test]
    fn fluid_limit_is_nonnegative_and_flows_to_the_fixed_point(net in arb_network()) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let rho1 = fclt::fluid_limit(&net, &chain, 1.0, None).unwrap();
        for i in 0..net.num_nodes() {
            prop_assert!(rho1[i] >= 0.0);
        }
        let stat = fclt::fluid_stationary(&net, &chain).unwrap();
        let late = fclt::fluid_limit(&net, &chain, 200.0, None).unwrap();
        for i in 0..net.num_nodes() {
            prop_assert!((late[i] - stat[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn trajectories_are_reproducible_and_conserve_losses(
        net in arb_network(), seed in 0u64..1000) {
        let chain = BackgroundChain::new(net.blocks()).unwrap();
        let cfg = sim::SimConfig {
            n_scale: 1,
            alpha: 1.0,
            horizon: 3.0,
            grid: 0.5,
            reps: 1,
            seed,
            initial: InitialCondition::empty_stationary(net.num_nodes()),
        };
        let a = sim::run_one(&net, &chain, &cfg, 0).unwrap();
        let b = sim::run_one(&net, &chain, &cfg, 0).unwrap();
        prop_assert_eq!(&a, &b);
        for w in a.losses.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        if net.lossless() {
            prop_assert!(a.losses.iter().all(|&l| l == 0));
        }
    }
}

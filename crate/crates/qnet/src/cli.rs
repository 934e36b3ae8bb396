//! Configuration parsing, command dispatch, and CSV emission.
//!
//! The config file is strict JSON: unknown keys are rejected, nodes and
//! blocks are referenced by name, and the `bidirectional` link flag expands
//! into two directed links sharing one block. All subcommands emit CSV
//! (header row, `.` decimal, no locale) to stdout or `--out`.
//!
//! Exit codes: 0 success, 1 config or validation error, 2 numerical
//! failure, 3 comparison failure (`compare` only).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::background::BackgroundChain;
use crate::fclt::{self, Regime};
use crate::model::{self, BlockRef, BlockSpec, LinkSpec, NetworkSpec, NodeSpec, ValidatedNetwork};
use crate::moments::{self, BackgroundStart, InitialCondition, MultiIndex, TimeSpec};
use crate::{analytic, oracle, perf, sim, Error};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub links: Vec<LinkConfig>,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    pub lambda: f64,
    pub mu_exit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub from: String,
    pub to: String,
    pub mu: f64,
    #[serde(default)]
    pub f: f64,
    /// Name of the failure block; omitted means the link never fails.
    #[serde(default)]
    pub block: Option<String>,
    #[serde(default)]
    pub bidirectional: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub name: String,
    pub q_down_to_up: f64,
    pub q_up_to_down: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub counts: Vec<u64>,
    pub background: BackgroundConfig,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BackgroundConfig {
    /// The literal string `"stationary"`.
    Keyword(String),
    /// Explicit state: the named blocks are up, all others down.
    Explicit { up: Vec<String> },
}

/// A parsed and validated run setup.
#[derive(Debug)]
pub struct Loaded {
    pub net: ValidatedNetwork,
    pub node_names: Vec<String>,
    pub block_names: Vec<String>,
    pub initial: InitialCondition,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad config, bad flags, failed validation.
    Config(String),
    /// Exit 2: numerical failure inside a solver.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(m) => CliError::Numerical(m),
            Error::Capacity(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn name_index(names: &[String], name: &str, kind: &str) -> Result<usize, CliError> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| CliError::Config(format!("unknown {kind} name {name:?}")))
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    load_config(cfg)
}

/// Resolves names and validates the parsed config.
pub fn load_config(cfg: ConfigFile) -> Result<Loaded, CliError> {
    let node_names: Vec<String> = cfg.nodes.iter().map(|n| n.name.clone()).collect();
    let block_names: Vec<String> = cfg.blocks.iter().map(|b| b.name.clone()).collect();
    for names in [&node_names, &block_names] {
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(CliError::Config(format!("duplicate name {a:?}")));
            }
        }
    }
    let nodes: Vec<NodeSpec> = cfg
        .nodes
        .iter()
        .map(|n| NodeSpec {
            lambda: n.lambda,
            mu_exit: n.mu_exit,
        })
        .collect();
    let blocks: Vec<BlockSpec> = cfg
        .blocks
        .iter()
        .map(|b| BlockSpec {
            q_down_to_up: b.q_down_to_up,
            q_up_to_down: b.q_up_to_down,
        })
        .collect();
    let mut links = Vec::new();
    for l in &cfg.links {
        let from = name_index(&node_names, &l.from, "node")?;
        let to = name_index(&node_names, &l.to, "node")?;
        let block = match &l.block {
            None => BlockRef::AlwaysUp,
            Some(b) => BlockRef::Block(name_index(&block_names, b, "block")?),
        };
        links.push(LinkSpec {
            from,
            to,
            mu: l.mu,
            f: l.f,
            block,
            bidirectional: l.bidirectional,
        });
    }
    let spec = NetworkSpec {
        nodes,
        links,
        blocks,
    };
    let net = model::validate(&spec).map_err(|e| {
        CliError::Config(format!(
            "validation failed ({}): {e}",
            describe(&e, &node_names)
        ))
    })?;
    let initial = match &cfg.initial {
        None => InitialCondition::empty_stationary(net.num_nodes()),
        Some(init) => {
            if init.counts.len() != net.num_nodes() {
                return Err(CliError::Config(format!(
                    "initial.counts has {} entries for {} nodes",
                    init.counts.len(),
                    net.num_nodes()
                )));
            }
            let background = match &init.background {
                BackgroundConfig::Keyword(s) if s == "stationary" => BackgroundStart::Stationary,
                BackgroundConfig::Keyword(s) => {
                    return Err(CliError::Config(format!(
                        "initial.background must be \"stationary\" or {{\"up\": [...]}}, got {s:?}"
                    )));
                }
                BackgroundConfig::Explicit { up } => {
                    let kb = block_names.len();
                    let mut k = 0usize;
                    for b in up {
                        k |= 1 << (kb - 1 - name_index(&block_names, b, "block")?);
                    }
                    BackgroundStart::State(k)
                }
            };
            InitialCondition {
                counts: init.counts.clone(),
                background,
            }
        }
    };
    Ok(Loaded {
        net,
        node_names,
        block_names,
        initial,
    })
}

/// Renames the offending link of a validation error for the diagnostic.
fn describe(e: &model::ValidationError, names: &[String]) -> String {
    use model::ValidationError::*;
    let link = |from: &usize, to: &usize| {
        format!(
            "link {} -> {}",
            names
                .get(*from)
                .cloned()
                .unwrap_or_else(|| from.to_string()),
            names.get(*to).cloned().unwrap_or_else(|| to.to_string())
        )
    };
    match e {
        LossProbabilityOutOfRange { from, to, .. }
        | SelfLoop { from, to }
        | NodeOutOfRange { from, to, .. }
        | MissingBlock { from, to, .. }
        | DuplicateLink { from, to } => link(from, to),
        UnreachableExit(i) => {
            format!(
                "node {}",
                names.get(*i).cloned().unwrap_or_else(|| i.to_string())
            )
        }
        _ => "network".to_string(),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Lt1,
    Eq1,
    Gt1,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Regime {
        match r {
            RegimeArg::Lt1 => Regime::Lt1,
            RegimeArg::Eq1 => Regime::Eq1,
            RegimeArg::Gt1 => Regime::Gt1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "qnet",
    version,
    about = "Networks of infinite-server queues on a dynamically evolving graph",
    after_help = "Exit codes: 0 success, 1 config error, 2 numerical failure, 3 comparison failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    /// Write the CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config; emit a summary.
    ///
    /// CSV: quantity,value.
    Validate { config: PathBuf },
    /// Exact (factorial) moments of the queue vector and loss count.
    ///
    /// CSV: loss_order, one order column per node, value. The value is the
    /// joint factorial moment E[(L)_r0 (M_1)_r1 ...].
    Moments {
        config: PathBuf,
        /// Stationary moments (mutually exclusive with --t).
        #[arg(long, conflicts_with = "t")]
        stationary: bool,
        /// Transient moments at this time, from the configured initial state.
        #[arg(long)]
        t: Option<f64>,
        /// Highest total order.
        #[arg(long, default_value_t = 1)]
        order: u16,
        /// Track the loss count as an extra coordinate (transient only).
        #[arg(long)]
        loss: bool,
    },
    /// Tagged-client loss probabilities and defective times to loss.
    ///
    /// CSV: quantity,node,state,value with per-(node, background state)
    /// omega/tau/sigma_eff rows and aggregate rows.
    Loss { config: PathBuf },
    /// Fluid (law-of-large-numbers) limit of the scaled queue vector.
    ///
    /// CSV: t, one column per node.
    Fluid {
        config: PathBuf,
        /// Evaluation times, comma separated.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
        /// Append the stationary point as a final row (t = inf).
        #[arg(long)]
        stationary: bool,
    },
    /// FCLT fluid centering and Gaussian covariance at one time.
    ///
    /// CSV: quantity,row,col,value with rho and cov rows.
    Fclt {
        config: PathBuf,
        /// Background speed regime relative to the arrival scaling.
        #[arg(long, value_enum)]
        alpha: RegimeArg,
        #[arg(long)]
        t: f64,
    },
    /// Truncated-chain numerical solution (stationary or transient).
    ///
    /// CSV: quantity,a,b,value with mean/moment/loss_rate/boundary_mass,
    /// background_prob per state, and per-node marginal rows.
    Oracle {
        config: PathBuf,
        /// Per-node truncation caps, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        caps: Vec<u64>,
        /// Transient solve at this time (default: stationary).
        #[arg(long)]
        t: Option<f64>,
        /// Highest factorial-moment order to report.
        #[arg(long, default_value_t = 2)]
        order: u16,
    },
    /// Monte-Carlo ensemble on a uniform grid.
    ///
    /// CSV: t, mean_<node>..., se_<node>..., loss_mean, loss_se.
    Simulate {
        config: PathBuf,
        /// Scaling factor N for arrival rates.
        #[arg(long, default_value_t = 1)]
        n: u64,
        /// Block rates are scaled by N^alpha.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        horizon: f64,
        /// Sampling step.
        #[arg(long)]
        grid: f64,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Closed-form node-1 law of the lossless tandem with retries.
    ///
    /// Requires a two-node f=0 tandem config. CSV: m,probability.
    TandemPmf { config: PathBuf },
    /// Confront the exact solvers, the truncated chain, and the simulator.
    ///
    /// CSV: name,analytic,oracle,sim,stderr,tol,pass. Exit 3 when any row
    /// fails.
    Compare {
        config: PathBuf,
        /// Per-node truncation caps, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        caps: Vec<u64>,
        #[arg(long, default_value_t = 5000)]
        reps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Time of the transient simulation check.
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        /// Absolute tolerance of the analytic-vs-oracle rows.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

struct Output {
    csv: String,
    comparison_failed: bool,
}

fn ok(csv: String) -> Result<Output, CliError> {
    Ok(Output {
        csv,
        comparison_failed: false,
    })
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.cmd) {
        Ok(output) => {
            let write_result = match &cli.out {
                Some(path) => std::fs::write(path, &output.csv)
                    .map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => std::io::stdout()
                    .write_all(output.csv.as_bytes())
                    .map_err(|e| e.to_string()),
            };
            if let Err(m) = write_result {
                eprintln!("error: {m}");
                return 1;
            }
            if output.comparison_failed {
                eprintln!("comparison failed; see the pass column");
                3
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => 1,
                CliError::Numerical(_) => 2,
            }
        }
    }
}

fn chain_of(loaded: &Loaded) -> Result<BackgroundChain, CliError> {
    Ok(BackgroundChain::new(loaded.net.blocks())?)
}

fn execute(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Validate { config } => {
            let loaded = parse_config(config)?;
            let net = &loaded.net;
            let mut csv = String::from("quantity,value\n");
            let _ = writeln!(csv, "nodes,{}", net.num_nodes());
            let _ = writeln!(csv, "links,{}", net.links().len());
            let _ = writeln!(csv, "blocks,{}", net.num_blocks());
            let _ = writeln!(csv, "background_states,{}", net.state_count());
            let _ = writeln!(csv, "lambda_total,{}", net.lambda_total());
            let _ = writeln!(csv, "lossless,{}", net.lossless());
            for w in net.warnings() {
                let _ = writeln!(csv, "warning,{}", w.replace(',', ";"));
            }
            ok(csv)
        }
        Command::Moments {
            config,
            stationary,
            t,
            order,
            loss,
        } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            let time = match (stationary, t) {
                (true, None) => TimeSpec::Stationary,
                (false, Some(t)) => TimeSpec::At(*t),
                _ => {
                    return Err(CliError::Config(
                        "pass exactly one of --stationary or --t".into(),
                    ))
                }
            };
            let table = moments::factorial_moments(
                &loaded.net,
                &chain,
                *order,
                time,
                *loss,
                &loaded.initial,
            )?;
            let mut csv = String::from("loss_order");
            for name in &loaded.node_names {
                let _ = write!(csv, ",{name}");
            }
            csv.push_str(",value\n");
            for r in table.indices() {
                let _ = write!(csv, "{}", r.loss_order());
                for i in 0..loaded.net.num_nodes() {
                    let _ = write!(csv, ",{}", r.queue_order(i));
                }
                let _ = writeln!(csv, ",{}", table.total(r)?);
            }
            ok(csv)
        }
        Command::Loss { config } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            let m = perf::loss_metrics(&loaded.net, &chain)?;
            let mut csv = String::from("quantity,node,state,value\n");
            for (quantity, get) in [
                (
                    "omega",
                    &(|i, k| m.omega(i, k)) as &dyn Fn(usize, usize) -> f64,
                ),
                ("tau", &|i, k| m.tau(i, k)),
                ("sigma_eff", &|i, k| m.sigma_eff(i, k)),
            ] {
                for i in 0..m.num_nodes() {
                    for k in 0..m.state_count() {
                        let _ =
                            writeln!(csv, "{quantity},{},{k},{}", loaded.node_names[i], get(i, k));
                    }
                }
            }
            let _ = writeln!(csv, "omega_agg,,,{}", m.omega_agg);
            let _ = writeln!(csv, "tau_agg,,,{}", m.tau_agg);
            if let Some(c) = m.conditional_time_to_loss() {
                let _ = writeln!(csv, "conditional_time_to_loss,,,{c}");
            }
            ok(csv)
        }
        Command::Fluid {
            config,
            t,
            stationary,
        } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            if t.is_empty() && !stationary {
                return Err(CliError::Config(
                    "pass --t times and/or --stationary".into(),
                ));
            }
            let mut csv = String::from("t");
            for name in &loaded.node_names {
                let _ = write!(csv, ",{name}");
            }
            csv.push('\n');
            for &ti in t {
                let rho = fclt::fluid_limit(&loaded.net, &chain, ti, None)?;
                let _ = write!(csv, "{ti}");
                for i in 0..loaded.net.num_nodes() {
                    let _ = write!(csv, ",{}", rho[i]);
                }
                csv.push('\n');
            }
            if *stationary {
                let rho = fclt::fluid_stationary(&loaded.net, &chain)?;
                csv.push_str("inf");
                for i in 0..loaded.net.num_nodes() {
                    let _ = write!(csv, ",{}", rho[i]);
                }
                csv.push('\n');
            }
            ok(csv)
        }
        Command::Fclt { config, alpha, t } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            let fc = fclt::fclt_covariance(&loaded.net, &chain, *t, (*alpha).into())?;
            let n = loaded.net.num_nodes();
            let mut csv = String::from("quantity,row,col,value\n");
            for i in 0..n {
                let _ = writeln!(csv, "rho,{},,{}", loaded.node_names[i], fc.rho[i]);
            }
            for i in 0..n {
                for j in 0..n {
                    let _ = writeln!(
                        csv,
                        "cov,{},{},{}",
                        loaded.node_names[i],
                        loaded.node_names[j],
                        fc.cov[(i, j)]
                    );
                }
            }
            ok(csv)
        }
        Command::Oracle {
            config,
            caps,
            t,
            order,
        } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            let tc = oracle::build_truncated(&loaded.net, &chain, caps)?;
            let dist = match t {
                None => oracle::oracle_stationary(&tc)?,
                Some(t) => oracle::oracle_transient(&tc, &loaded.initial, *t)?,
            };
            let n = loaded.net.num_nodes();
            let mut csv = String::from("quantity,a,b,value\n");
            for i in 0..n {
                let _ = writeln!(csv, "mean,{},,{}", loaded.node_names[i], dist.mean(i));
            }
            for level in 2..=*order {
                for orders in moments::enumerate_level(n, level) {
                    let r = MultiIndex::from_queues(&orders);
                    let label: Vec<String> = orders.iter().map(|o| o.to_string()).collect();
                    let _ = writeln!(
                        csv,
                        "factorial_moment,{},,{}",
                        label.join(";"),
                        dist.factorial_moment_total(&r)?
                    );
                }
            }
            let _ = writeln!(csv, "loss_rate,,,{}", dist.loss_rate(&loaded.net));
            let _ = writeln!(csv, "boundary_mass,,,{}", dist.boundary_mass);
            for (k, p) in dist.background_law().iter().enumerate() {
                let _ = writeln!(csv, "background_prob,{k},,{p}");
            }
            for i in 0..n {
                for (m, p) in dist.marginal(i).iter().enumerate() {
                    let _ = writeln!(csv, "marginal,{},{m},{p}", loaded.node_names[i]);
                }
            }
            for w in &dist.warnings {
                let _ = writeln!(csv, "warning,,,{}", w.replace(',', ";"));
            }
            ok(csv)
        }
        Command::Simulate {
            config,
            n,
            alpha,
            horizon,
            grid,
            reps,
            seed,
        } => {
            let loaded = parse_config(config)?;
            let chain = chain_of(&loaded)?;
            let cfg = sim::SimConfig {
                n_scale: *n,
                alpha: *alpha,
                horizon: *horizon,
                grid: *grid,
                reps: *reps,
                seed: *seed,
                initial: loaded.initial.clone(),
            };
            let ens = sim::run_ensemble(&loaded.net, &chain, &cfg)?;
            let mut csv = String::from("t");
            for name in &loaded.node_names {
                let _ = write!(csv, ",mean_{name}");
            }
            for name in &loaded.node_names {
                let _ = write!(csv, ",se_{name}");
            }
            csv.push_str(",loss_mean,loss_se\n");
            for g in 0..ens.times.len() {
                let _ = write!(csv, "{}", ens.times[g]);
                for i in 0..loaded.net.num_nodes() {
                    let _ = write!(csv, ",{}", ens.mean[g][i]);
                }
                for i in 0..loaded.net.num_nodes() {
                    let _ = write!(csv, ",{}", ens.se_mean[g][i]);
                }
                let _ = writeln!(csv, ",{},{}", ens.loss_mean[g], ens.loss_se[g]);
            }
            ok(csv)
        }
        Command::TandemPmf { config } => {
            let loaded = parse_config(config)?;
            let p = tandem_params(&loaded)?;
            let pmf = analytic::tandem_node1_distribution(&p)?;
            let mut csv = String::from("m,probability\n");
            for (m, pr) in pmf.iter().enumerate() {
                let _ = writeln!(csv, "{m},{pr}");
            }
            ok(csv)
        }
        Command::Compare {
            config,
            caps,
            reps,
            seed,
            t,
            tol,
        } => compare(config, caps, *reps, *seed, *t, *tol),
    }
}

/// Extracts the retry-tandem parameters; the config must be a two-node
/// tandem with a single lossless failing link and an exit only at node 2.
fn tandem_params(loaded: &Loaded) -> Result<analytic::TandemParams, CliError> {
    let net = &loaded.net;
    let shape_err = |m: &str| CliError::Config(format!("not a retry tandem: {m}"));
    if net.num_nodes() != 2 || net.links().len() != 1 || net.num_blocks() != 1 {
        return Err(shape_err("need 2 nodes, 1 link, 1 block"));
    }
    let link = &net.links()[0];
    if link.from != 0 || link.to != 1 {
        return Err(shape_err(
            "the link must run from the first node to the second",
        ));
    }
    if link.f != 0.0 {
        return Err(shape_err("the link must be lossless (f = 0)"));
    }
    if link.block == BlockRef::AlwaysUp {
        return Err(shape_err("the link must belong to the failing block"));
    }
    if net.mu_exit(0) != 0.0 || net.lambda(1) != 0.0 {
        return Err(shape_err(
            "node 1 must not exit, node 2 must not receive arrivals",
        ));
    }
    let block = &net.blocks()[0];
    Ok(analytic::TandemParams {
        lambda: net.lambda(0),
        mu1: link.mu,
        mu2: net.mu_exit(1),
        q0: block.q_down_to_up,
        q1: block.q_up_to_down,
    })
}

fn compare(
    config: &Path,
    caps: &[u64],
    reps: usize,
    seed: u64,
    t: f64,
    tol: f64,
) -> Result<Output, CliError> {
    let loaded = parse_config(config)?;
    let chain = chain_of(&loaded)?;
    let net = &loaded.net;
    let n = net.num_nodes();

    let v = moments::stationary_first_moments(net, &chain)?;
    let tc = oracle::build_truncated(net, &chain, caps)?;
    let dist = oracle::oracle_stationary(&tc)?;
    let metrics = perf::loss_metrics(net, &chain)?;
    let vt = moments::transient_first_moments(net, &chain, &loaded.initial, t)?;
    let cfg = sim::SimConfig {
        n_scale: 1,
        alpha: 1.0,
        horizon: t,
        grid: t,
        reps,
        seed,
        initial: loaded.initial.clone(),
    };
    let ens = sim::run_ensemble(net, &chain, &cfg)?;
    let g = ens.times.len() - 1;

    let mut csv = String::from("name,analytic,oracle,sim,stderr,tol,pass\n");
    let mut failed = false;
    let mut row =
        |name: String, analytic: f64, oracle: Option<f64>, sim: Option<(f64, f64)>, tol: f64| {
            let mut pass = true;
            if let Some(o) = oracle {
                pass &= (analytic - o).abs() <= tol;
            }
            if let Some((s, se)) = sim {
                pass &= (analytic - s).abs() <= 3.0 * se;
            }
            failed |= !pass;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{name},{analytic},{},{},{},{tol},{pass}",
                opt(oracle),
                opt(sim.map(|s| s.0)),
                opt(sim.map(|s| s.1))
            );
        };
    for i in 0..n {
        row(
            format!("stationary_mean_{}", loaded.node_names[i]),
            v.node_mean(i),
            Some(dist.mean(i)),
            None,
            tol,
        );
    }
    let lam = net.lambda_total();
    row(
        "loss_probability".to_string(),
        metrics.omega_agg,
        Some(dist.loss_rate(net) / lam),
        None,
        tol,
    );
    for i in 0..n {
        row(
            format!("transient_mean_{}_t{t}", loaded.node_names[i]),
            vt.node_mean(i),
            None,
            Some((ens.mean[g][i], ens.se_mean[g][i])),
            tol,
        );
    }
    Ok(Output {
        csv,
        comparison_failed: failed,
    })
}

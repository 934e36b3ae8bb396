//! Network definition and validation.
//!
//! A network consists of nodes (Poisson arrivals, exponential exit service),
//! directed links (routing rate, loss probability, owning block) and blocks
//! (sets of links that fail and recover together). [`validate`] checks every
//! structural invariant once; the resulting [`ValidatedNetwork`] is immutable
//! and is the input to every other module.

use std::collections::HashMap;

/// Hard cap on the number of blocks; the background state space is `2^K`.
pub const MAX_BLOCKS: usize = 16;

/// Soft limit on `n * 2^K` before a warning is attached.
const SOFT_STATE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    /// External Poisson arrival rate.
    pub lambda: f64,
    /// Exit service rate (routing to "outside").
    pub mu_exit: f64,
}

/// Block a link belongs to. Links without failure dynamics use `AlwaysUp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockRef {
    AlwaysUp,
    Block(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub from: usize,
    pub to: usize,
    /// Routing rate over this link.
    pub mu: f64,
    /// Probability a customer is lost on a blocked attempt.
    pub f: f64,
    pub block: BlockRef,
    /// Shorthand: expand into two directed links sharing the same block.
    pub bidirectional: bool,
}

impl LinkSpec {
    pub fn directed(from: usize, to: usize, mu: f64, f: f64, block: BlockRef) -> Self {
        LinkSpec {
            from,
            to,
            mu,
            f,
            block,
            bidirectional: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    /// Down-to-up (repair) rate.
    pub q_down_to_up: f64,
    /// Up-to-down (failure) rate.
    pub q_up_to_down: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub blocks: Vec<BlockSpec>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ValidationError {
    #[error("network has no nodes")]
    NoNodes,
    #[error("negative rate: {0}")]
    NegativeRate(String),
    #[error("loss probability {value} of link {from}->{to} outside [0,1]")]
    LossProbabilityOutOfRange { from: usize, to: usize, value: f64 },
    #[error("link {from}->{to} is a self loop")]
    SelfLoop { from: usize, to: usize },
    #[error("link {from}->{to} references node outside 0..{n}")]
    NodeOutOfRange { from: usize, to: usize, n: usize },
    #[error("link {from}->{to} references missing block {block}")]
    MissingBlock {
        from: usize,
        to: usize,
        block: usize,
    },
    #[error("non-positive block rate: block {block} has q0={q0}, q1={q1}")]
    NonPositiveBlockRate { block: usize, q0: f64, q1: f64 },
    #[error("duplicate link {from}->{to}")]
    DuplicateLink { from: usize, to: usize },
    #[error("no node has a positive exit rate; the network is unstable")]
    NoExitNode,
    #[error("node {0} cannot reach any node with a positive exit rate")]
    UnreachableExit(usize),
    #[error("{0} blocks exceed the hard cap of {MAX_BLOCKS}")]
    TooManyBlocks(usize),
}

/// A directed link of a validated network.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub mu: f64,
    pub f: f64,
    pub block: BlockRef,
}

/// Per-customer event rates at a node in a fixed background state.
///
/// `jump + loss + exit + retry` always equals the node's total service
/// rate `mu_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBundle {
    /// Successful jump rates `(destination, rate)`, one entry per declared link.
    pub jump: Vec<(usize, f64)>,
    /// Total loss rate over down links.
    pub loss: f64,
    /// Exit rate.
    pub exit: f64,
    /// Null-event (retry) rate over down links.
    pub retry: f64,
}

impl RateBundle {
    pub fn jump_total(&self) -> f64 {
        self.jump.iter().map(|&(_, r)| r).sum()
    }
}

/// An immutable, validated network. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct ValidatedNetwork {
    nodes: Vec<NodeSpec>,
    links: Vec<Link>,
    blocks: Vec<BlockSpec>,
    /// Total service rate per node: `mu_exit + sum of outgoing link rates`.
    mu_total: Vec<f64>,
    /// Total outgoing link rate per node.
    nu: Vec<f64>,
    /// Outgoing link indices per node.
    out_links: Vec<Vec<usize>>,
    link_index: HashMap<(usize, usize), usize>,
    warnings: Vec<String>,
}

/// Validates a [`NetworkSpec`], expanding bidirectional shorthand links into
/// two directed links that share one block.
pub fn validate(spec: &NetworkSpec) -> Result<ValidatedNetwork, ValidationError> {
    let n = spec.nodes.len();
    if n == 0 {
        return Err(ValidationError::NoNodes);
    }
    if spec.blocks.len() > MAX_BLOCKS {
        return Err(ValidationError::TooManyBlocks(spec.blocks.len()));
    }
    for (i, node) in spec.nodes.iter().enumerate() {
        if node.lambda < 0.0 || !node.lambda.is_finite() {
            return Err(ValidationError::NegativeRate(format!(
                "lambda={} at node {i}",
                node.lambda
            )));
        }
        if node.mu_exit < 0.0 || !node.mu_exit.is_finite() {
            return Err(ValidationError::NegativeRate(format!(
                "mu_exit={} at node {i}",
                node.mu_exit
            )));
        }
    }
    for (b, block) in spec.blocks.iter().enumerate() {
        if !(block.q_down_to_up > 0.0) || !(block.q_up_to_down > 0.0) {
            return Err(ValidationError::NonPositiveBlockRate {
                block: b,
                q0: block.q_down_to_up,
                q1: block.q_up_to_down,
            });
        }
    }

    // Expand bidirectional shorthand, then check each directed link.
    let mut links = Vec::new();
    for l in &spec.links {
        links.push(Link {
            from: l.from,
            to: l.to,
            mu: l.mu,
            f: l.f,
            block: l.block,
        });
        if l.bidirectional {
            links.push(Link {
                from: l.to,
                to: l.from,
                mu: l.mu,
                f: l.f,
                block: l.block,
            });
        }
    }
    let mut link_index = HashMap::new();
    for (idx, l) in links.iter().enumerate() {
        if l.from >= n || l.to >= n {
            return Err(ValidationError::NodeOutOfRange {
                from: l.from,
                to: l.to,
                n,
            });
        }
        if l.from == l.to {
            return Err(ValidationError::SelfLoop {
                from: l.from,
                to: l.to,
            });
        }
        if l.mu < 0.0 || !l.mu.is_finite() {
            return Err(ValidationError::NegativeRate(format!(
                "mu={} on link {}->{}",
                l.mu, l.from, l.to
            )));
        }
        if !(0.0..=1.0).contains(&l.f) {
            return Err(ValidationError::LossProbabilityOutOfRange {
                from: l.from,
                to: l.to,
                value: l.f,
            });
        }
        if let BlockRef::Block(b) = l.block {
            if b >= spec.blocks.len() {
                return Err(ValidationError::MissingBlock {
                    from: l.from,
                    to: l.to,
                    block: b,
                });
            }
        }
        if link_index.insert((l.from, l.to), idx).is_some() {
            return Err(ValidationError::DuplicateLink {
                from: l.from,
                to: l.to,
            });
        }
    }

    if !spec.nodes.iter().any(|node| node.mu_exit > 0.0) {
        return Err(ValidationError::NoExitNode);
    }

    let mut out_links = vec![Vec::new(); n];
    for (idx, l) in links.iter().enumerate() {
        out_links[l.from].push(idx);
    }
    let nu: Vec<f64> = out_links
        .iter()
        .map(|ls| ls.iter().map(|&idx| links[idx].mu).sum())
        .collect();
    let mu_total: Vec<f64> = (0..n).map(|i| spec.nodes[i].mu_exit + nu[i]).collect();

    // From every node with service, some positive-exit node must be reachable
    // through positive-rate links.
    for start in 0..n {
        if mu_total[start] == 0.0 {
            continue;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut ok = false;
        while let Some(i) = stack.pop() {
            if spec.nodes[i].mu_exit > 0.0 {
                ok = true;
                break;
            }
            for &idx in &out_links[i] {
                let l = &links[idx];
                if l.mu > 0.0 && !seen[l.to] {
                    seen[l.to] = true;
                    stack.push(l.to);
                }
            }
        }
        if !ok {
            return Err(ValidationError::UnreachableExit(start));
        }
    }

    let mut warnings = Vec::new();
    let state_count = n * (1usize << spec.blocks.len());
    if state_count > SOFT_STATE_LIMIT {
        warnings.push(format!(
            "n * 2^K = {state_count} exceeds {SOFT_STATE_LIMIT}; downstream solves are dense"
        ));
    }
    for (i, &mu) in mu_total.iter().enumerate() {
        if mu == 0.0 {
            warnings.push(format!(
                "node {i} has no service at all; customers accumulate"
            ));
        }
    }

    Ok(ValidatedNetwork {
        nodes: spec.nodes.clone(),
        links,
        blocks: spec.blocks.clone(),
        mu_total,
        nu,
        out_links,
        link_index,
        warnings,
    })
}

impl ValidatedNetwork {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of background states, `2^K`.
    pub fn state_count(&self) -> usize {
        1usize << self.blocks.len()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.nodes[i].lambda
    }

    /// Total external arrival rate.
    pub fn lambda_total(&self) -> f64 {
        self.nodes.iter().map(|nd| nd.lambda).sum()
    }

    pub fn mu_exit(&self, i: usize) -> f64 {
        self.nodes[i].mu_exit
    }

    /// Total service rate at node `i`.
    pub fn mu_total(&self, i: usize) -> f64 {
        self.mu_total[i]
    }

    /// Total outgoing link rate at node `i`.
    pub fn nu(&self, i: usize) -> f64 {
        self.nu[i]
    }

    /// Routing probability `p_ij = mu_ij / mu_i`, zero when the node has no
    /// service.
    pub fn routing_probability(&self, from: usize, to: usize) -> f64 {
        if self.mu_total[from] == 0.0 {
            return 0.0;
        }
        self.link_index
            .get(&(from, to))
            .map(|&idx| self.links[idx].mu / self.mu_total[from])
            .unwrap_or(0.0)
    }

    pub fn out_links(&self, i: usize) -> impl Iterator<Item = &Link> {
        self.out_links[i].iter().map(|&idx| &self.links[idx])
    }

    /// Whether a block is up in background state `k`. Block `b` (0-based) is
    /// read from bit `K-1-b` of `k`, so block 0 is the most significant bit;
    /// this matches the Kronecker-sum ordering of the generator.
    pub fn block_up(&self, b: usize, k: usize) -> bool {
        let kk = self.blocks.len();
        (k >> (kk - 1 - b)) & 1 == 1
    }

    fn link_up(&self, link: &Link, k: usize) -> bool {
        match link.block {
            BlockRef::AlwaysUp => true,
            BlockRef::Block(b) => self.block_up(b, k),
        }
    }

    /// 1 iff the declared link `(i,j)` is up in background state `k`.
    pub fn link_indicator(&self, i: usize, j: usize, k: usize) -> crate::Result<u8> {
        if k >= self.state_count() {
            return Err(crate::Error::IndexOutOfRange(format!(
                "background state {k}"
            )));
        }
        let idx = self
            .link_index
            .get(&(i, j))
            .ok_or_else(|| crate::Error::IndexOutOfRange(format!("link {i}->{j} not declared")))?;
        Ok(self.link_up(&self.links[*idx], k) as u8)
    }

    /// Per-customer event rates at node `i` in background state `k`.
    pub fn effective_rates(&self, i: usize, k: usize) -> crate::Result<RateBundle> {
        if i >= self.num_nodes() {
            return Err(crate::Error::IndexOutOfRange(format!("node {i}")));
        }
        if k >= self.state_count() {
            return Err(crate::Error::IndexOutOfRange(format!(
                "background state {k}"
            )));
        }
        let mut jump = Vec::new();
        let mut loss = 0.0;
        let mut retry = 0.0;
        for &idx in &self.out_links[i] {
            let l = &self.links[idx];
            if self.link_up(l, k) {
                jump.push((l.to, l.mu));
            } else {
                jump.push((l.to, 0.0));
                loss += l.f * l.mu;
                retry += (1.0 - l.f) * l.mu;
            }
        }
        Ok(RateBundle {
            jump,
            loss,
            exit: self.nodes[i].mu_exit,
            retry,
        })
    }

    /// Successful jump rate of link `(i,j)` in state `k` (`mu^+_{ijk}`);
    /// zero for undeclared links.
    pub fn mu_plus(&self, i: usize, j: usize, k: usize) -> f64 {
        self.link_index
            .get(&(i, j))
            .map(|&idx| {
                let l = &self.links[idx];
                if self.link_up(l, k) {
                    l.mu
                } else {
                    0.0
                }
            })
            .unwrap_or(0.0)
    }

    /// Blocked-attempt rate of link `(i,j)` in state `k` (`mu^-_{ijk}`).
    pub fn mu_minus(&self, i: usize, j: usize, k: usize) -> f64 {
        self.link_index
            .get(&(i, j))
            .map(|&idx| {
                let l = &self.links[idx];
                if self.link_up(l, k) {
                    0.0
                } else {
                    l.mu
                }
            })
            .unwrap_or(0.0)
    }

    /// Per-customer loss rate at node `i` in state `k`:
    /// `sum_j f_ij mu^-_{ijk}`.
    pub fn loss_rate(&self, i: usize, k: usize) -> f64 {
        self.out_links[i]
            .iter()
            .map(|&idx| {
                let l = &self.links[idx];
                if self.link_up(l, k) {
                    0.0
                } else {
                    l.f * l.mu
                }
            })
            .sum()
    }

    /// Per-customer decay rate at node `i` in state `k`:
    /// `mu_exit + sum_j (mu^+_{ijk} + f_ij mu^-_{ijk})`.
    /// Equals `mu_total` when all loss probabilities are 1.
    pub fn decay_rate(&self, i: usize, k: usize) -> f64 {
        let mut d = self.nodes[i].mu_exit;
        for &idx in &self.out_links[i] {
            let l = &self.links[idx];
            if self.link_up(l, k) {
                d += l.mu;
            } else {
                d += l.f * l.mu;
            }
        }
        d
    }

    /// The rate `mu_{i0k}` of the FCLT rate convention: exit plus losses.
    pub fn mu_exit_effective(&self, i: usize, k: usize) -> f64 {
        self.nodes[i].mu_exit + self.loss_rate(i, k)
    }

    /// Re-serializes the validated network as a plain spec; re-validating it
    /// yields an identical network.
    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    from: l.from,
                    to: l.to,
                    mu: l.mu,
                    f: l.f,
                    block: l.block,
                    bidirectional: false,
                })
                .collect(),
            blocks: self.blocks.clone(),
        }
    }

    /// True when every link has loss probability 0.
    pub fn lossless(&self) -> bool {
        self.links.iter().all(|l| l.f == 0.0)
    }
}

/// Fixture builders shared by tests across modules.
pub mod fixtures {
    use super::*;

    /// Single M/M/inf node: lambda=3, mu_exit=1, no links, K=0.
    pub fn fix_a() -> ValidatedNetwork {
        validate(&NetworkSpec {
            nodes: vec![NodeSpec {
                lambda: 3.0,
                mu_exit: 1.0,
            }],
            links: vec![],
            blocks: vec![],
        })
        .unwrap()
    }

    /// Two-node tandem with one modulated link, lost-when-blocked.
    pub fn tandem(lambda: f64, mu1: f64, mu2: f64, q0: f64, q1: f64, f: f64) -> ValidatedNetwork {
        validate(&NetworkSpec {
            nodes: vec![
                NodeSpec {
                    lambda,
                    mu_exit: 0.0,
                },
                NodeSpec {
                    lambda: 0.0,
                    mu_exit: mu2,
                },
            ],
            links: vec![LinkSpec::directed(0, 1, mu1, f, BlockRef::Block(0))],
            blocks: vec![BlockSpec {
                q_down_to_up: q0,
                q_up_to_down: q1,
            }],
        })
        .unwrap()
    }

    /// FIX-B: tandem with unit rates and f=1.
    pub fn fix_b() -> ValidatedNetwork {
        tandem(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    }

    /// FIX-B0: FIX-B with retrying customers (f=0).
    pub fn fix_b0() -> ValidatedNetwork {
        tandem(1.0, 1.0, 1.0, 1.0, 1.0, 0.0)
    }

    /// Symmetric fully connected one-block network.
    pub fn symmetric_complete(
        n: usize,
        lambda: f64,
        nu: f64,
        mu0: f64,
        q0: f64,
        q1: f64,
        f: f64,
    ) -> ValidatedNetwork {
        let per_link = nu / (n - 1) as f64;
        let mut links = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    links.push(LinkSpec::directed(i, j, per_link, f, BlockRef::Block(0)));
                }
            }
        }
        validate(&NetworkSpec {
            nodes: (0..n)
                .map(|_| NodeSpec {
                    lambda,
                    mu_exit: mu0,
                })
                .collect(),
            links,
            blocks: vec![BlockSpec {
                q_down_to_up: q0,
                q_up_to_down: q1,
            }],
        })
        .unwrap()
    }

    /// FIX-C: symmetric complete network, n=3, lambda=2, nu=1, mu0=1,
    /// q0=q1=1, f=1.
    pub fn fix_c() -> ValidatedNetwork {
        symmetric_complete(3, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    }

    /// FIX-D: tandem with lambda=20, mu1=3, mu2=2, q0=1, f=0 and the given
    /// up-to-down rate.
    pub fn fix_d(q1: f64) -> ValidatedNetwork {
        tandem(20.0, 3.0, 2.0, 1.0, q1, 0.0)
    }
}

//! Networks of infinite-server queues on a dynamically evolving graph.
//!
//! Nodes hold infinite-server queues; directed links between nodes fail and
//! recover according to a modulating Markov chain built from independent
//! two-state blocks. A customer routed over a down link is lost with a
//! per-link probability, and otherwise stays put and retries.
//!
//! The crate computes, for such networks:
//!
//! - exact transient and stationary (factorial) moments of the joint queue
//!   length vector and the loss count ([`moments`]),
//! - per-entry-state loss probabilities and mean time-in-network jointly
//!   with loss ([`perf`]),
//! - the fluid limit and the Gaussian (FCLT) covariance of the diffusion
//!   approximation in the slow/critical/fast modulation regimes ([`fclt`]),
//! - closed forms for tandem, symmetric and ring special cases ([`analytic`]),
//! - a truncated-CTMC oracle ([`oracle`]) and a Monte-Carlo simulator
//!   ([`sim`]) against which every analytic answer can be checked.

pub mod analytic;
pub mod background;
pub mod cli;
pub mod error;
pub mod fclt;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod perf;
pub mod sim;

pub use error::{Error, Result};

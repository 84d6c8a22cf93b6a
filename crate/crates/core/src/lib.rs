//! Protocol engine and simulator for the (m,n)-hybrid model of differential
//! privacy.
//!
//! The hybrid model combines a trusted curator holding m records with n
//! local agents holding one record each. A protocol is a message exchange,
//! mediated by a referee, in which every party-visible release is
//! differentially private with respect to that party's own records. This
//! crate provides:
//!
//! - a deterministic bulk-synchronous engine with per-party privacy-budget
//!   accounting and interaction-pattern enforcement ([`engine`]),
//! - local-model primitives: randomized response, a shared-randomness
//!   frequency oracle, heavy hitters, CDF release, and quantile search
//!   ([`local`]),
//! - curator-model primitives: the exponential mechanism, private parity
//!   learning, coordinate selection, and Laplace means ([`curator`]),
//! - hybrid protocols for five estimation and learning tasks plus two
//!   constructive reductions ([`tasks`]),
//! - instance generators with ground-truth sidecars ([`datagen`]),
//! - exact and Monte-Carlo privacy audits ([`audit`]).
//!
//! Every run is a pure function of (inputs, seed); transcripts and outputs
//! reproduce byte for byte under the same seed.

pub mod audit;
pub mod curator;
pub mod datagen;
pub mod engine;
pub mod local;
pub mod params;
pub mod tasks;

pub use engine::{
    run_protocol, run_protocol_simulated, run_protocol_split_seed, validate_pattern, ChargeEvent,
    Inbox,
    InteractionPattern, Message, MessageTally, PartyId, PatternKind, Payload, PrivacyLedger,
    ProtocolSpec, RngStream, RoundIo, RunOutcome, SimOverride, Transcript,
};

use std::fmt;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A message broke the interaction pattern or the star topology.
    #[error("pattern violation at round {round}: {detail}")]
    PatternViolation { round: u32, detail: String },

    /// A charge pushed a party's accumulated epsilon over the budget.
    #[error("privacy budget exceeded for {party}: total {total} > budget {budget}")]
    BudgetExceeded { party: PartyId, total: f64, budget: f64 },

    /// An agent index at or beyond the declared population size.
    #[error("agent index {index} out of range (n = {n})")]
    AgentIndexOutOfRange { index: u32, n: u32 },

    /// A parameter outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Enumerable-domain primitive asked to handle a domain beyond desk scale.
    #[error("domain size {domain} exceeds the supported maximum {max}")]
    DomainTooLarge { domain: u64, max: u64 },

    /// An operation that needs at least one element got none.
    #[error("empty input")]
    EmptyInput,

    /// Malformed transcript dump.
    #[error("transcript parse error at line {line}: {detail}")]
    TranscriptParse { line: usize, detail: String },

    /// Malformed instance or truth file.
    #[error("instance parse error at line {line}: {detail}")]
    InstanceParse { line: usize, detail: String },

    /// Underlying IO failure when reading or writing instance files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats an f64 the way the CLI and file formats expect: shortest digits
/// that round-trip, never scientific notation for the magnitudes in use.
pub fn fmt_f64(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{:.1}", x)
    } else {
        let s = format!("{}", x);
        if s.contains('e') {
            format!("{:.17}", x)
        } else {
            s
        }
    }
}

impl fmt::Display for MessageTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rounds, {} messages ({} to referee, {} from referee)",
            self.rounds, self.total, self.to_referee, self.from_referee
        )
    }
}

//! External LLM-judge client implementing structured count annotation and
//! Yes/No match-accuracy protocols, plus a deterministic wordlist-driven
//! mock judge served over loopback HTTP for offline runs.

pub mod cache;
pub mod client;
pub mod error;
pub mod mock;
pub mod protocol;

pub use client::{CorpusAnnotations, JudgeClient, JudgeConfig};
pub use error::{JudgeError, Result};
pub use mock::{MockBehavior, MockJudgeServer, MockRules};
pub use protocol::{Attribute, JudgeAnnotation, MatchVerdict};

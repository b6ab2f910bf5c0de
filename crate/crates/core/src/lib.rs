//! Continual adaptation runtime for tool-using agents.
//!
//! The agent is described by a pair: a policy (`trainer::PolicyState`) and a
//! natural-language skill library (`skill_store::SkillLibrary`). Failures are
//! distilled into new skills right away, while successful trajectories
//! collected under the newest library feed a policy trainer that only runs
//! when the user is away. A deterministic workday simulator (`simbench`)
//! drives the whole loop so every invariant can be checked offline.

pub mod buffer;
pub mod evolution;
pub mod rules;
pub mod runtime;
pub mod scheduler;
pub mod simbench;
pub mod skill_store;
pub mod trainer;

pub use buffer::{BufferState, RlBuffer, Role, SupportSet, Trajectory};
pub use evolution::{EvolutionOutcome, FailureRecord};
pub use rules::RuleId;
pub use runtime::{Condition, RuntimeConfig, SessionReport};
pub use skill_store::{Skill, SkillCategory, SkillLibrary};
pub use trainer::PolicyState;

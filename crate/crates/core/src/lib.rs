//! Multi-robot kitchen planning with pre/post-condition checks, reflection
//! and iterative plan refinement.

pub mod bench;
pub mod executor;
pub mod ids;
pub mod perception;
pub mod plan;
pub mod predicate;
pub mod reasoning;
pub mod verdict;
pub mod world;

pub use ids::{FixtureId, ObjectId, RobotId, SubtaskId};
pub use verdict::Verdict;

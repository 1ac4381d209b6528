pub mod autodiff;
pub mod geometry;
pub mod noise;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod optimize;
pub mod trace;
pub mod explain;
pub mod evalharness;

pub use explain::lm::{LmClient, LmEndpoint};
pub use explain::DescriptionType;
pub use optimize::{run_optimization, OptRun, OptimizerConfig, OptimizerKind, Schedule};
pub use scenario::{generate_scenario, Obstacle, PhysicsParams, Scenario, StateCommand, Vec2};
pub use simulator::{simulate, LossWeights, SimResult, StepRecord};
pub use trace::{Reward, TraceDocument};

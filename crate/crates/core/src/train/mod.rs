//! Loss, optimizer, schedules, checkpoints and the training loop.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::*;
pub use config::*;
pub use metrics::*;
pub use optim::*;
pub use schedule::*;
pub use trainer::*;

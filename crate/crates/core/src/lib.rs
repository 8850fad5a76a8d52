//! Multi-agent exploration through influence-shaped rewards (EITI and EDTI),
//! with count-based transition models, a tabular clipped policy-gradient
//! learner, exact oracles for small MDPs, and run/checkpoint plumbing.

pub mod binio;
pub mod checkpoint;
pub mod config;
pub mod counts;
pub mod env;
pub mod error;
pub mod heatmap;
pub mod key;
pub mod oracle;
pub mod policy;
pub mod rollout;
pub mod run;
pub mod shaping;
pub mod stats;
pub mod train;

pub use config::RunConfig;
pub use env::{make_task, Environment, TaskConfig, TaskId};
pub use error::{Error, Result};
pub use heatmap::Heatmaps;
pub use policy::UpdateConfig;
pub use rollout::{BatchReport, Behaviour};
pub use shaping::{Method, ShapingConfig};
pub use train::{TrainSpec, Trainer};

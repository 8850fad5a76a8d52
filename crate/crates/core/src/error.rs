use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task config: {0}")]
    InvalidTask(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step called on a finished episode (t = {t}, horizon = {horizon})")]
    EpisodeDone { t: u32, horizon: u32 },

    #[error("joint action has {got} entries, expected {expected}")]
    ActionArity { got: usize, expected: usize },

    #[error("action {action} is not available in task {task}")]
    InvalidAction { action: u8, task: &'static str },

    #[error("empty batch passed to the learner")]
    EmptyBatch,

    #[error("non-finite advantage {value} for agent {agent} (return {ret}, baseline {baseline})")]
    NonFiniteAdvantage {
        agent: usize,
        value: f64,
        ret: f64,
        baseline: f64,
    },

    #[error("oracle capacity exceeded: {0}")]
    Capacity(String),

    #[error("rollout worker {worker} failed: {message}")]
    Worker { worker: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

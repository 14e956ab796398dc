use thiserror::Error;

use crate::domain::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", parse_message(*.line, .message))]
    Parse { line: usize, message: String },

    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<Violation>),

    #[error("no active shares")]
    NoActiveShares,

    #[error("unknown user or group {0}")]
    UnknownEntity(String),

    #[error("no hypotheses")]
    NoHypotheses,

    #[error("empty process-count range")]
    EmptyRange,

    #[error("all measured utilizations are zero")]
    ZeroMeasurements,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("planner did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: u32, residual: f64 },
}

fn parse_message(line: usize, message: &str) -> String {
    if line == 0 {
        format!("scenario: {message}")
    } else {
        format!("scenario line {line}: {message}")
    }
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

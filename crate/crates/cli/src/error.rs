use std::fmt;

use serde::Serialize;

/// Failure of a CLI command, rendered as one JSON object on stderr.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] alqr_core::Error),

    #[error("{failed} check(s) failed")]
    ChecksFailed { failed: usize, failures: Vec<Failure> },
}

/// One failed check with the location it refers to.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Serialize)]
struct Report<'a> {
    error: Body<'a>,
}

#[derive(Serialize)]
struct Body<'a> {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a str>,
    #[serde(skip_serializing_if = "<[Failure]>::is_empty")]
    failures: &'a [Failure],
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use alqr_core::Error as E;
        match self {
            CliError::ChecksFailed { .. } => "checks_failed",
            CliError::Core(e) => match e {
                E::DimensionMismatch(_) => "dimension_mismatch",
                E::NonFinite(_) => "non_finite",
                E::NotSymmetric(_) => "not_symmetric",
                E::NotPositiveDefinite(_) => "not_positive_definite",
                E::UnstableMatrix { .. } => "unstable_matrix",
                E::NonConvergence { .. } => "non_convergence",
                E::IllConditioned { .. } => "ill_conditioned",
                E::DivergedState { .. } => "diverged_state",
                E::IncompleteLog(_) => "incomplete_log",
                E::EmptyWindow => "empty_window",
                E::GenerationFailed { .. } => "generation_failed",
                E::ConfigInvalid { .. } => "config_invalid",
                E::Io(_) => "io",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed { .. } => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let (path, message, failures): (Option<&str>, String, &[Failure]) = match self {
            CliError::Core(alqr_core::Error::ConfigInvalid { path, message }) => {
                (Some(path.as_str()), message.clone(), &[])
            }
            CliError::ChecksFailed { failures, .. } => (None, self.to_string(), failures.as_slice()),
            CliError::Core(e) => (None, e.to_string(), &[]),
        };
        let report = Report {
            error: Body {
                kind: self.kind(),
                message,
                path,
                failures,
            },
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;

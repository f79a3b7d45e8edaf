use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single violated parameter constraint, addressed by field name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIssue {
    pub field: String,
    pub constraint: String,
}

impl ParamIssue {
    pub fn new(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    /// Prepends a section path, `finesse` becoming `cavity.finesse`.
    pub fn under(mut self, prefix: &str) -> Self {
        self.field = format!("{prefix}.{}", self.field);
        self
    }
}

impl fmt::Display for ParamIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.constraint)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its domain ({constraint})")]
    Domain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("invalid parameter {0}")]
    InvalidParameter(ParamIssue),
    #[error("measurement settings are rank-deficient: operator rank {rank} of {required} required")]
    RankDeficient { rank: usize, required: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, constraint: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            constraint,
        }
    }
}

/// Turns a list of issues into `Ok(())` or the first issue as an error.
pub(crate) fn first_issue(issues: Vec<ParamIssue>) -> Result<()> {
    match issues.into_iter().next() {
        Some(issue) => Err(Error::InvalidParameter(issue)),
        None => Ok(()),
    }
}

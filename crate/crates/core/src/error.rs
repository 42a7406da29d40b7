use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("precondition violated ({context}): {message}")]
    Precondition { context: String, message: String },
    #[error("budget overflow: {0}")]
    BudgetOverflow(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn precondition(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Precondition {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) => 2,
            Error::BudgetOverflow(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

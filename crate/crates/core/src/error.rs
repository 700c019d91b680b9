//! Error types shared across the simulator.
//!
//! Each pipeline stage has its own error enum so that callers can match on
//! the failures they care about; [`Error`] is the top-level union used at
//! the public API boundary.  Every error maps onto one of four coarse
//! [`ErrorCategory`] values, which the command-line front end turns into
//! process exit codes.

use thiserror::Error;

/// Coarse classification of a failure, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input text: netlist syntax, unknown names, config validation.
    Parse,
    /// The model is structurally unsound (wiring, drivers, loops, ...).
    Assemble,
    /// The numerical solve failed (Newton divergence, step-size collapse).
    Converge,
    /// File system / encoding problems while reading or writing.
    Io,
}

/// Errors raised by block templates while evaluating or validating.
#[derive(Debug, Error)]
pub enum BlockError {
    #[error("template `{template}`: parameter `{param}` is invalid: {reason}")]
    BadParameter {
        template: String,
        param: String,
        reason: String,
    },
    #[error("template `{template}`: {reason}")]
    BadDefinition { template: String, reason: String },
    #[error("template `{template}` does not support `{operation}`")]
    Unsupported {
        template: String,
        operation: &'static str,
    },
}

/// Errors raised while parsing or flattening a netlist.
#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("{file}:{line}:{column}: {message}")]
    Syntax {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context}: {message}")]
    Semantic { context: String, message: String },
    #[error("{file}:{line}: in expression `{expr}`: {message}")]
    Expr {
        file: String,
        line: usize,
        expr: String,
        message: String,
    },
    #[error("failed to read `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

/// Errors raised while building or evaluating the assembled system.
#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("net `{net}` is driven by {count} outputs ({drivers}); nets must have exactly one driver")]
    MultipleDrivers {
        net: String,
        count: usize,
        drivers: String,
    },
    #[error("net `{net}` is read by `{reader}` but no block output drives it")]
    UndrivenNet { net: String, reader: String },
    #[error("algebraic loop through blocks: {cycle}")]
    AlgebraicLoop { cycle: String },
    #[error("system is not square: {variables} variables vs {equations} equations")]
    NotSquare {
        variables: usize,
        equations: usize,
    },
    #[error("block `{block}` produced a non-finite value in `{operation}` at t = {t}")]
    NonFinite {
        block: String,
        operation: String,
        t: f64,
    },
    #[error("block `{block}`: {source}")]
    Block {
        block: String,
        #[source]
        source: BlockError,
    },
    #[error("{0}")]
    Structure(String),
}

/// Errors raised by the time-stepping machinery.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("Newton iteration did not converge after {iterations} iterations at t = {t} (residual {residual:.3e})")]
    NewtonDiverged {
        t: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("Jacobian is singular at t = {t}; suspect equation(s): {suspects}")]
    SingularJacobian { t: f64, suspects: String },
    #[error("step size control failed at t = {t}: {reason}")]
    StepControl { t: f64, reason: String },
    #[error("{count} consecutive step rejections at t = {t}; giving up")]
    TooManyRejections { t: f64, count: usize },
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Errors raised while recording or writing waveform output.
#[derive(Debug, Error)]
pub enum OutputError {
    #[error("output table is empty; nothing to write")]
    Empty,
    #[error("unknown column `{name}`; available columns: {available}")]
    UnknownColumn { name: String, available: String },
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("failed to write `{path}`: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to read `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

/// Top-level error for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Block(#[from] BlockError),
}

impl Error {
    /// The coarse category this error belongs to (drives CLI exit codes).
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Netlist(_) => ErrorCategory::Parse,
            Error::Block(_) => ErrorCategory::Parse,
            Error::Assembly(_) => ErrorCategory::Assemble,
            Error::Solve(SolveError::BadConfig(_)) => ErrorCategory::Parse,
            Error::Solve(SolveError::Assembly(_)) => ErrorCategory::Assemble,
            Error::Solve(_) => ErrorCategory::Converge,
            Error::Output(_) => ErrorCategory::Io,
        }
    }
}

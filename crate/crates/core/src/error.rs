use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("degenerate detuning: anti-Stokes rate {a_minus:.6e} /s does not exceed Stokes rate {a_plus:.6e} /s, no net cooling")]
    DegenerateDetuning { a_plus: f64, a_minus: f64 },

    #[error("spectrum grid [{grid_min:.6e}, {grid_max:.6e}] rad/s does not cover filter passband [{needed_min:.6e}, {needed_max:.6e}] rad/s")]
    GridCoverage {
        grid_min: f64,
        grid_max: f64,
        needed_min: f64,
        needed_max: f64,
    },

    #[error("simulation needs {needed} steps, budget is {budget}")]
    StepBudget { needed: u64, budget: u64 },

    #[error("stream has {0} clicks, at least 2 are needed")]
    EmptyStream(usize),

    #[error("estimated click rate is zero")]
    ZeroRate,

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("dark-subtracted {channel} rate is not positive ({rate:.6e} /s)")]
    NonPositiveRate { channel: &'static str, rate: f64 },

    #[error("ratio {ratio} is outside the physical range [0, {limit})")]
    UnphysicalRatio { ratio: f64, limit: f64 },

    #[error("cavity {cavity} failed to acquire lock within {timeout} s")]
    AcquisitionTimeout { cavity: usize, timeout: f64 },

    #[error("controller gains do not stabilize the loop (largest pole magnitude {0:.4})")]
    UnstableLoop(f64),

    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Errors caused by bad inputs (config, parameters, parse failures).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::DegenerateDetuning { .. }
                | Error::Config { .. }
                | Error::Parse { .. }
                | Error::UnphysicalRatio { .. }
                | Error::NonPositiveRate { .. }
                | Error::EmptyStream(_)
                | Error::GridCoverage { .. }
        )
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn ensure_fraction(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in [0, 1], got {value}")))
    }
}

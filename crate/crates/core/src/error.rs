use thiserror::Error;

/// Errors produced anywhere in the spectroscopy pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QnsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver did not converge: {0}")]
    EigenSolver(String),

    #[error("flux bias {flux} is at a singular point of the SQUID (effective E_J vanishes)")]
    FluxSingularity { flux: f64 },

    #[error("dressed labeling is ambiguous: target pair splitting {gap_mhz:.3e} MHz")]
    LabelingAmbiguity { gap_mhz: f64 },

    #[error("Rabi curve is not monotone near A = {amplitude_mhz} MHz; inversion undefined")]
    NonMonotone { amplitude_mhz: f64 },

    #[error("frequency {0} MHz lies outside the tabulated Rabi curve")]
    OutOfRange(f64),

    #[error("synthesis cutoff window [{lo}, {hi}] MHz contains no harmonics")]
    EmptyCutoffWindow { lo: f64, hi: f64 },

    #[error("coupling list has {got} entries, sensor needs {need}")]
    CouplingLength { got: usize, need: usize },

    #[error("integrator accuracy: trace deviation {deviation:.3e} at t = {time_us} us")]
    TraceDeviation { deviation: f64, time_us: f64 },

    #[error("density matrix lost positivity: eigenvalue {eigenvalue:.3e} at t = {time_us} us")]
    Positivity { eigenvalue: f64, time_us: f64 },

    #[error("noise series too short: need {need} us, have {have} us")]
    NoiseTooShort { need: f64, have: f64 },

    #[error("fit did not converge after {iterations} iterations")]
    FitNonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("sources are indistinguishable: chi ratio squared {ratio} is too close to 1")]
    IllConditioned { ratio: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for QnsError {
    fn from(e: std::io::Error) -> Self {
        QnsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QnsError>;

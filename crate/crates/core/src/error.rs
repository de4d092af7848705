use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("type index {index} out of range for a {types}-type model")]
    TypeOutOfRange { index: usize, types: usize },

    #[error("mean matrix is identically zero")]
    ZeroMatrix,

    #[error("spectral decomposition is ill-conditioned: {check} residual {residual:.3e} exceeds {limit:.3e}")]
    IllConditioned {
        check: &'static str,
        residual: f64,
        limit: f64,
    },

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("invalid characteristic: {0}")]
    InvalidCharacteristic(String),

    #[error("series does not converge: {0}")]
    Divergent(String),

    #[error("row is not orthogonal to the Perron vector: |a.u| = {0:.3e}")]
    NotOrthogonal(f64),

    #[error("sample too small: {got} < {min}")]
    SampleTooSmall { got: usize, min: usize },

    #[error("verification refused: {0}")]
    Refused(String),

    #[error("scenario error at `{location}`: {message}")]
    Scenario { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn scenario(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            location: location.into(),
            message: message.into(),
        }
    }
}

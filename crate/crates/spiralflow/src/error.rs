use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpiralError {
    #[error("config: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("regime_exit: {0}")]
    RegimeExit(String),
    #[error("io: {0}")]
    Io(String),
    #[error("degenerate discretization: {0}")]
    Degenerate(String),
    #[error("verification: {0}")]
    Verification(String),
}

impl SpiralError {
    pub fn class(&self) -> &'static str {
        match self {
            SpiralError::Config(_) => "config",
            SpiralError::Divergence(_) => "divergence",
            SpiralError::RegimeExit(_) => "regime_exit",
            SpiralError::Io(_) => "io",
            SpiralError::Degenerate(_) => "degenerate",
            SpiralError::Verification(_) => "verification",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            SpiralError::Config(_) => 2,
            SpiralError::Divergence(_) => 3,
            SpiralError::RegimeExit(_) => 4,
            SpiralError::Io(_) => 5,
            SpiralError::Degenerate(_) => 6,
            SpiralError::Verification(_) => 7,
        }
    }
}

impl From<std::io::Error> for SpiralError {
    fn from(e: std::io::Error) -> Self {
        SpiralError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SpiralError>;

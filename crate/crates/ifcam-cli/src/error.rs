//! Structured CLI errors with stable exit codes and machine-readable
//! payloads: 0 success, 2 I/O, 3 validation, 4 internal invariant violation.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorCode {
    #[serde(rename = "E_IO")]
    Io,
    #[serde(rename = "E_VALIDATION")]
    Validation,
    #[serde(rename = "E_INTERNAL")]
    Internal,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub code: ErrorCode,
    pub message: String,
}

impl CliError {
    pub fn io(message: String) -> Self {
        Self {
            code: ErrorCode::Io,
            message,
        }
    }

    pub fn validation(message: String) -> Self {
        Self {
            code: ErrorCode::Validation,
            message,
        }
    }

    pub fn internal(message: String) -> Self {
        Self {
            code: ErrorCode::Internal,
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code {
            ErrorCode::Io => 2,
            ErrorCode::Validation => 3,
            ErrorCode::Internal => 4,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<ifcam::netspec::SpecError> for CliError {
    fn from(e: ifcam::netspec::SpecError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ifcam::compress::CompressError> for CliError {
    fn from(e: ifcam::compress::CompressError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ifcam::accelsim::SimError> for CliError {
    fn from(e: ifcam::accelsim::SimError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ifcam::lensless::LensError> for CliError {
    fn from(e: ifcam::lensless::LensError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ifcam::pipeline::PipelineError> for CliError {
    fn from(e: ifcam::pipeline::PipelineError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ifcam::io::IoError> for CliError {
    fn from(e: ifcam::io::IoError) -> Self {
        CliError::io(e.to_string())
    }
}

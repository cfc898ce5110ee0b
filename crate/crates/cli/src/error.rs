use std::fmt;

use sldepth_core::denoise::FilterError;
use sldepth_core::depth_image::GeometryError;
use sldepth_core::io::IoError;
use sldepth_core::noise_model::ModelError;
use sldepth_core::planes::PlaneError;
use sldepth_core::tsdf::TsdfError;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// Valid input that does not carry enough information: exit 3.
    Insufficient(String),
    /// A file could not be read or written: exit 4.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Insufficient(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Insufficient(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InsufficientData { .. } => CliError::Insufficient(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Model(m) => m.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TsdfError> for CliError {
    fn from(e: TsdfError) -> Self {
        match e {
            TsdfError::Io(_) | TsdfError::Format(_) => CliError::Io(e.to_string()),
            TsdfError::Model(m) => m.into(),
            TsdfError::Geometry(g) => g.into(),
            TsdfError::InvalidVolume(_) | TsdfError::NoScans => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PlaneError> for CliError {
    fn from(e: PlaneError) -> Self {
        match e {
            PlaneError::Degenerate(_) | PlaneError::Underdetermined(_) => {
                CliError::Insufficient(e.to_string())
            }
            PlaneError::Model(m) => m.into(),
            PlaneError::Geometry(g) => g.into(),
            PlaneError::InvalidParameter(_) => CliError::Usage(e.to_string()),
        }
    }
}

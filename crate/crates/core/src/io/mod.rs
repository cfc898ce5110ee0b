//! On-disk formats: depth and label rasters, experiment configuration, the fuse
//! manifest with its pose sidecars, and CSV/JSON reports.
//!
//! All binary formats are little-endian. Layouts are documented byte-exactly in the
//! repository README.

mod config;
mod raster;
mod tables;

use thiserror::Error;

pub use config::{
    CameraConfig, ExperimentConfig, FilterMode, FilterSection, NoiseSection, SceneConfig,
    VolumeSection, SCHEMA_VERSION,
};
pub use raster::{read_label_raster, write_label_raster, DepthEncoding, DepthRasterFile};
pub use tables::{
    read_manifest, read_pose_sidecar, read_resolution_csv, write_pose_sidecar,
    write_resolution_csv, ManifestEntry, PlaneList,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// The bytes or text do not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),
    /// Well-formed input whose content is not acceptable.
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl IoError {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) fn open(path: &std::path::Path) -> Result<std::io::BufReader<std::fs::File>, IoError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| IoError::file(path, e))
}

pub(crate) fn create(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>, IoError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| IoError::file(path, e))
}

//! `sldepth`: file-in/file-out experiments on structured-light depth maps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 insufficient data,
//! 4 file I/O error.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sldepth",
    version,
    about = "Noise-aware structured-light depth processing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ray-cast the scene of a config file into a depth raster and a label raster.
    Simulate {
        /// Experiment config with a [scene] section.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label raster path [default: <out> with extension `labels`].
        #[arg(long)]
        labels_out: Option<PathBuf>,
        /// Also write the scene pose as a sidecar for `fuse`.
        #[arg(long)]
        pose_out: Option<PathBuf>,
        /// Apply the disparity/depth quantizer; without it depths are continuous.
        #[arg(long)]
        quantize: bool,
    },
    /// Unique-depth resolution analysis: log-log slope of depth step against depth.
    AnalyzeNoise {
        #[arg(long = "in")]
        input: PathBuf,
        /// Experiment config whose [camera] section describes the sensor.
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Write `z_mm,delta_z_mm` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Edge-preserving smoothing of a depth raster.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: FilterModeArg,
        /// Spatial deviation in pixels.
        #[arg(long, default_value_t = 3.0)]
        sigma_s: f64,
        /// Fixed range deviation in mm (bilateral only).
        #[arg(long)]
        sigma_d: Option<f64>,
        /// Adaptive range coefficient in 1/mm, sigma_d = k Z^2 (adaptive only).
        #[arg(long)]
        k: Option<f64>,
        /// Window half-width [default: ceil(3 sigma_s)].
        #[arg(long)]
        radius: Option<usize>,
        /// Config with a [scene] section describing the true surface; enables the
        /// near/far residual report.
        #[arg(long)]
        truth_scene: Option<PathBuf>,
    },
    /// Fuse registered scans into a TSDF volume and write its surface mesh as PLY.
    Fuse {
        /// Manifest: one `<raster> <pose sidecar>` pair per line.
        #[arg(long)]
        scans: PathBuf,
        #[arg(long, value_enum, default_value_t = WeightArg::Quartic)]
        mode: WeightArg,
        /// Voxel edge length in mm.
        #[arg(long, default_value_t = 4.0)]
        voxel: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Symmetric truncation distance in mm [default: 4 voxels].
        #[arg(long)]
        truncation: Option<f64>,
        /// Padding around the scanned points in mm.
        #[arg(long, default_value_t = 20.0)]
        margin: f64,
        /// Write ASCII instead of binary little-endian PLY.
        #[arg(long)]
        ascii: bool,
        /// Config whose [scene] surfaces are the ground truth; reports RMS error of
        /// the mesh for both weighting modes.
        #[arg(long)]
        truth_scene: Option<PathBuf>,
    },
    /// Segment a depth raster into planes in disparity space.
    Planes {
        #[arg(long = "in")]
        input: PathBuf,
        /// Experiment config providing [camera] and [planes] defaults.
        #[arg(long)]
        camera: Option<PathBuf>,
        /// LoG response threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// LoG scale in pixels.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        min_area: Option<usize>,
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterModeArg {
    Gaussian,
    Bilateral,
    Adaptive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightArg {
    Uniform,
    Quartic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sldepth: {e}");
            ExitCode::from(e.code())
        }
    }
}

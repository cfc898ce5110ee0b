//! Truncated signed distance fusion of registered depth maps.
//!
//! Each scan contributes, per voxel, the radial signed distance
//! `clamp(|R P + T| - |P_i|, f_min, f_max)` where `P_i` is the back-projected point at
//! the nearest pixel. Contributions are summed as a weighted numerator `F` and a weight
//! sum `W`; the field `F / W` is normalized only when read, which keeps integration
//! order-independent up to floating-point reassociation.
//!
//! With [`WeightingMode::InverseQuartic`] each sample is weighted by `1 / Z^4`, the inverse
//! of the structured-light depth variance, so the fused surface is the maximum-likelihood
//! estimate under that noise model.

mod marching;
mod mesh;

use std::io::{Read, Write};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_image::{backproject_pixel, DepthMap, GeometryError, Pose};
use crate::noise_model::{fusion_weight, CameraModel, ModelError};

pub use mesh::{PlyFormat, TriangleMesh};

/// Truncation half-width in voxels when none is given.
pub const DEFAULT_TRUNCATION_VOXELS: f64 = 4.0;

const DUMP_MAGIC: &[u8; 8] = b"SLDTSDF\0";
const DUMP_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("scan list is empty")]
    NoScans,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Every sample has weight 1.
    Uniform,
    /// Weight `1 / Z^4`.
    #[default]
    InverseQuartic,
}

impl WeightingMode {
    pub fn weight(&self, z: f64) -> Result<f64, ModelError> {
        match self {
            WeightingMode::Uniform => Ok(1.0),
            WeightingMode::InverseQuartic => fusion_weight(z),
        }
    }
}

/// Volume geometry, as read from a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeParams {
    /// Center of voxel (0, 0, 0), world mm.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    /// Symmetric truncation in mm; defaults to four voxels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

impl VolumeParams {
    /// Grid enclosing every back-projected valid pixel of `scans` (world frame), grown
    /// by `margin` on each side. `None` when no scan has a valid pixel.
    pub fn enclosing_scans(
        scans: &[(DepthMap, Pose)],
        cam: &CameraModel,
        voxel_size: f64,
        margin: f64,
    ) -> Option<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (map, pose) in scans {
            let to_world = pose.inverse();
            for (x, y, z) in map.iter_valid() {
                let p = to_world.transform(&backproject_pixel(x as f64, y as f64, z, cam));
                for i in 0..3 {
                    lo[i] = lo[i].min(p[i]);
                    hi[i] = hi[i].max(p[i]);
                }
            }
        }
        lo[0]
            .is_finite()
            .then(|| Self::enclosing(lo.map(|v| v - margin), hi.map(|v| v + margin), voxel_size))
    }

    /// Smallest grid of `voxel_size` voxels whose centers cover `[min, max]`.
    pub fn enclosing(min: [f64; 3], max: [f64; 3], voxel_size: f64) -> Self {
        let dims = std::array::from_fn(|i| {
            (((max[i] - min[i]) / voxel_size).ceil().max(0.0) as usize) + 1
        });
        Self {
            origin: min,
            voxel_size,
            dims,
            truncation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    f_min: f64,
    f_max: f64,
    numerator: Vec<f64>,
    weight: Vec<f64>,
}

impl TsdfVolume {
    /// Empty volume with truncation `+-4 voxel_size`.
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Result<Self, TsdfError> {
        let t = DEFAULT_TRUNCATION_VOXELS * voxel_size;
        Self::with_truncation(origin, voxel_size, dims, -t, t)
    }

    pub fn with_truncation(
        origin: [f64; 3],
        voxel_size: f64,
        dims: [usize; 3],
        f_min: f64,
        f_max: f64,
    ) -> Result<Self, TsdfError> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(TsdfError::InvalidVolume(format!(
                "voxel size must be > 0, got {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(TsdfError::InvalidVolume(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        if !(f_min.is_finite() && f_max.is_finite() && f_min < 0.0 && f_max > 0.0) {
            return Err(TsdfError::InvalidVolume(format!(
                "truncation must satisfy f_min < 0 < f_max, got [{f_min}, {f_max}]"
            )));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(TsdfError::InvalidVolume("origin must be finite".into()));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| TsdfError::InvalidVolume("volume too large".into()))?;
        Ok(Self {
            origin: Vector3::from(origin),
            voxel_size,
            dims,
            f_min,
            f_max,
            numerator: vec![0.0; n],
            weight: vec![0.0; n],
        })
    }

    pub fn from_params(p: &VolumeParams) -> Result<Self, TsdfError> {
        match p.truncation {
            None => Self::new(p.origin, p.voxel_size, p.dims),
            Some(t) => Self::with_truncation(p.origin, p.voxel_size, p.dims, -t, t),
        }
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin.into()
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }

    /// Weighted numerator `F`, x fastest then y then z.
    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        Point3::from(self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size)
    }

    /// Normalized field `F / W`, or `None` for an unobserved voxel.
    pub fn value(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let n = self.index(i, j, k);
        (self.weight[n] > 0.0).then(|| self.numerator[n] / self.weight[n])
    }

    pub fn weight(&self, i: usize, j: usize, k: usize) -> f64 {
        self.weight[self.index(i, j, k)]
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|w| **w > 0.0).count()
    }

    /// Adds one registered scan. `pose` maps world to camera coordinates.
    pub fn integrate(
        &mut self,
        map: &DepthMap,
        pose: &Pose,
        cam: &CameraModel,
        mode: WeightingMode,
    ) -> Result<(), TsdfError> {
        cam.validate()?;
        let [nx, ny, _] = self.dims;
        let (w, h) = (map.width() as f64, map.height() as f64);
        let (f_min, f_max) = (self.f_min, self.f_max);
        let origin = self.origin;
        let vs = self.voxel_size;
        let r = *pose.rotation();
        let t = *pose.translation();
        let slice = nx * ny;

        // Per-z-slice parallelism: each voxel is written by exactly one task.
        let outcome: Result<(), ModelError> = self
            .numerator
            .par_chunks_mut(slice)
            .zip(self.weight.par_chunks_mut(slice))
            .enumerate()
            .try_for_each(|(k, (num, wsum))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * vs;
                        let pc = r * p + t;
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let x = (cam.focal * pc.x / pc.z + cam.cx).round();
                        let y = (cam.focal * pc.y / pc.z + cam.cy).round();
                        if !(x >= 0.0 && y >= 0.0 && x < w && y < h) {
                            continue;
                        }
                        let Some(z) = map.get(x as usize, y as usize) else {
                            continue;
                        };
                        let surface = backproject_pixel(x, y, z, cam);
                        let f = (pc.norm() - surface.coords.norm()).clamp(f_min, f_max);
                        let wt = mode.weight(z)?;
                        let n = i + nx * j;
                        num[n] += wt * f;
                        wsum[n] += wt;
                    }
                }
                Ok(())
            });
        outcome?;
        Ok(())
    }

    /// Zero-crossing surface of the normalized field.
    pub fn extract_mesh(&self) -> TriangleMesh {
        marching::extract(self)
    }

    /// Writes the versioned binary dump:
    ///
    /// ```text
    /// magic      8 bytes  "SLDTSDF\0"
    /// version    u16      1
    /// origin     3 x f64
    /// voxel_size f64
    /// dims       3 x u32
    /// f_min      f64
    /// f_max      f64
    /// voxels     nx*ny*nz x (F: f64, W: f64), x fastest
    /// ```
    ///
    /// All values little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<(), TsdfError> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        for v in self.origin.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.voxel_size.to_le_bytes())?;
        for d in self.dims {
            let d =
                u32::try_from(d).map_err(|_| TsdfError::Format("dimension exceeds u32".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        out.write_all(&self.f_min.to_le_bytes())?;
        out.write_all(&self.f_max.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.weight.len() * 16);
        for (f, w) in self.numerator.iter().zip(&self.weight) {
            buf.extend_from_slice(&f.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self, TsdfError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(TsdfError::Format("not a volume dump".into()));
        }
        let mut b2 = [0u8; 2];
        input.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != DUMP_VERSION {
            return Err(TsdfError::Format(format!(
                "unsupported dump version {version}"
            )));
        }
        let mut f64s = |n: usize| -> Result<Vec<f64>, TsdfError> {
            let mut b = [0u8; 8];
            (0..n)
                .map(|_| {
                    input.read_exact(&mut b)?;
                    Ok(f64::from_le_bytes(b))
                })
                .collect()
        };
        let origin = f64s(3)?;
        let voxel_size = f64s(1)?[0];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let mut b = [0u8; 16];
        input.read_exact(&mut b)?;
        let f_min = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
        let f_max = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
        let mut vol = Self::with_truncation(
            [origin[0], origin[1], origin[2]],
            voxel_size,
            dims,
            f_min,
            f_max,
        )?;
        let mut buf = vec![0u8; vol.weight.len() * 16];
        input.read_exact(&mut buf)?;
        for (n, chunk) in buf.chunks_exact(16).enumerate() {
            vol.numerator[n] = f64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
            vol.weight[n] = f64::from_le_bytes(chunk[8..].try_into().expect("8 bytes"));
            if !(vol.weight[n] >= 0.0) {
                return Err(TsdfError::Format(format!("negative weight at voxel {n}")));
            }
        }
        Ok(vol)
    }
}

/// Free-function form of [`TsdfVolume::integrate`].
pub fn integrate_scan(
    volume: &mut TsdfVolume,
    map: &DepthMap,
    pose: &Pose,
    cam: &CameraModel,
    mode: WeightingMode,
) -> Result<(), TsdfError> {
    volume.integrate(map, pose, cam, mode)
}

/// Integrates every scan into a fresh volume and extracts the surface.
pub fn fuse(
    scans: &[(DepthMap, Pose)],
    cam: &CameraModel,
    params: &VolumeParams,
    mode: WeightingMode,
) -> Result<TriangleMesh, TsdfError> {
    Ok(fuse_volume(scans, cam, params, mode)?.extract_mesh())
}

/// As [`fuse`], returning the volume instead of the mesh.
pub fn fuse_volume(
    scans: &[(DepthMap, Pose)],
    cam: &CameraModel,
    params: &VolumeParams,
    mode: WeightingMode,
) -> Result<TsdfVolume, TsdfError> {
    if scans.is_empty() {
        return Err(TsdfError::NoScans);
    }
    let mut vol = TsdfVolume::from_params(params)?;
    for (map, pose) in scans {
        vol.integrate(map, pose, cam, mode)?;
    }
    Ok(vol)
}

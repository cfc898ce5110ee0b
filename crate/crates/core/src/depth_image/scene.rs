//! Ray-cast synthetic depth scenes.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DepthMap, GeometryError, Pose};
use crate::noise_model::CameraModel;

/// Bisection stops once the bracket along the ray is shorter than this (mm).
const BISECTION_TOLERANCE_MM: f64 = 1e-4;
/// Sub-intervals scanned for the first sign change before bisecting.
const MARCH_STEPS: usize = 256;

/// Axis-aligned box in world coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

/// A world-frame surface the synthetic sensor can see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    /// `aX + bY + cZ + 1 = 0`, optionally clipped to a box.
    Plane {
        coeffs: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<Aabb>,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Height field `Z = base_z + amplitude * sin(2πX/λ) * sin(2πY/λ)`.
    Relief {
        base_z: f64,
        amplitude: f64,
        wavelength: f64,
    },
}

impl Surface {
    pub fn plane(a: f64, b: f64, c: f64) -> Self {
        Surface::Plane {
            coeffs: [a, b, c],
            bounds: None,
        }
    }

    /// Plane `Z = z`, i.e. `(0, 0, -1/z)`.
    pub fn fronto_parallel(z: f64) -> Self {
        Surface::plane(0.0, 0.0, -1.0 / z)
    }

    fn validate(&self, index: usize, camera_center: &Point3<f64>) -> Result<(), GeometryError> {
        let degenerate = |reason: &str| GeometryError::DegenerateSurface {
            index,
            reason: reason.to_owned(),
        };
        match self {
            Surface::Plane { coeffs, bounds } => {
                let n = Vector3::from(*coeffs);
                if !n.iter().all(|v| v.is_finite()) || n.norm() == 0.0 {
                    return Err(degenerate("plane coefficients must be finite and non-zero"));
                }
                // Signed distance of the camera center to the plane.
                if (n.dot(&camera_center.coords) + 1.0).abs() / n.norm() < 1e-9 {
                    return Err(degenerate("plane passes through the camera center"));
                }
                if let Some(b) = bounds {
                    if (0..3).any(|i| !(b.min[i] <= b.max[i])) {
                        return Err(degenerate("bounds min exceeds max"));
                    }
                }
            }
            Surface::Sphere { radius, center } => {
                if !(radius.is_finite() && *radius > 0.0) || !center.iter().all(|v| v.is_finite()) {
                    return Err(degenerate(
                        "sphere needs a finite center and positive radius",
                    ));
                }
            }
            Surface::Relief {
                base_z,
                amplitude,
                wavelength,
            } => {
                if !(wavelength.is_finite() && *wavelength > 0.0)
                    || !amplitude.is_finite()
                    || !base_z.is_finite()
                {
                    return Err(degenerate("relief needs a positive wavelength"));
                }
                if camera_center.z >= base_z - amplitude.abs() {
                    return Err(degenerate("camera must lie in front of the relief slab"));
                }
            }
        }
        Ok(())
    }

    /// Smallest positive ray parameter where `origin + t * dir` meets the surface.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane { coeffs, bounds } => {
                let n = Vector3::from(*coeffs);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = -(n.dot(&origin.coords) + 1.0) / denom;
                if t <= 0.0 {
                    return None;
                }
                match bounds {
                    Some(b) if !b.contains(&(origin + dir * t)) => None,
                    _ => Some(t),
                }
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - Point3::from(*center);
                let a = dir.norm_squared();
                let b = 2.0 * oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let (t0, t1) = ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a));
                [t0, t1].into_iter().find(|t| *t > 0.0)
            }
            Surface::Relief {
                base_z, amplitude, ..
            } => {
                if dir.z <= 0.0 {
                    return None;
                }
                let a = amplitude.abs();
                let t_lo = ((base_z - a - origin.z) / dir.z).max(0.0);
                let t_hi = (base_z + a - origin.z) / dir.z;
                if t_hi <= 0.0 {
                    return None;
                }
                let g = |t: f64| {
                    let p = origin + dir * t;
                    p.z - self.height(p.x, p.y)
                };
                let dt = (t_hi - t_lo) / MARCH_STEPS as f64;
                let mut lo = t_lo;
                if g(lo) > 0.0 {
                    return None;
                }
                for i in 1..=MARCH_STEPS {
                    let hi = if i == MARCH_STEPS {
                        t_hi
                    } else {
                        t_lo + dt * i as f64
                    };
                    let g_hi = g(hi);
                    if g_hi >= 0.0 {
                        return Some(bisect(g, lo, hi, dir.norm()));
                    }
                    lo = hi;
                }
                None
            }
        }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Surface::Relief {
                base_z,
                amplitude,
                wavelength,
            } => {
                let w = std::f64::consts::TAU / wavelength;
                base_z + amplitude * (w * x).sin() * (w * y).sin()
            }
            _ => f64::NAN,
        }
    }

    /// Distance from a world point to the surface. Planes ignore their bounds; the
    /// relief uses the vertical offset to the height field.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Surface::Plane { coeffs, .. } => {
                let n = Vector3::from(*coeffs);
                (n.dot(&p.coords) + 1.0).abs() / n.norm()
            }
            Surface::Sphere { center, radius } => {
                ((p - Point3::from(*center)).norm() - radius).abs()
            }
            Surface::Relief { .. } => (p.z - self.height(p.x, p.y)).abs(),
        }
    }
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, dir_norm: f64) -> f64 {
    while (hi - lo) * dir_norm > BISECTION_TOLERANCE_MM {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-pixel label raster: `Some(i)` is the index of a surface or plane, `None` is unlabelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Option<u16>>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![None; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|l| **l == Some(label)).count()
    }
}

/// Sensor simulation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    /// Apply the disparity/depth quantizer.
    pub quantize: bool,
    /// Standard deviation (px) of Gaussian disparity noise added before quantization.
    pub disparity_noise: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            quantize: true,
            disparity_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthOptions {
    pub fn exact() -> Self {
        Self {
            quantize: false,
            ..Self::default()
        }
    }

    pub fn quantized() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub depth: DepthMap,
    /// Index of the surface hit by each pixel ray.
    pub labels: LabelMap,
    /// Noise-free camera-frame depth of each hit (0 where nothing was hit).
    pub true_depth: Vec<f64>,
}

/// Ray-casts `surfaces` (world frame) through a camera at `pose`.
///
/// Each pixel takes the nearest intersection in front of the camera; the true depth is
/// then optionally perturbed by disparity noise and passed through the sensor quantizer.
pub fn synth_scene(
    surfaces: &[Surface],
    cam: &CameraModel,
    pose: &Pose,
    width: usize,
    height: usize,
    opts: &SynthOptions,
) -> Result<SynthScene, GeometryError> {
    cam.validate()?;
    if surfaces.is_empty() {
        return Err(GeometryError::EmptyScene);
    }
    let center = pose.camera_center();
    for (i, s) in surfaces.iter().enumerate() {
        s.validate(i, &center)?;
    }
    if !(opts.disparity_noise.is_finite() && opts.disparity_noise >= 0.0) {
        return Err(GeometryError::Model(
            crate::noise_model::ModelError::InvalidNoise("disparity noise must be >= 0".into()),
        ));
    }

    let rt = pose.rotation().transpose();
    let hits: Vec<Option<(u16, f64)>> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let dir = rt * Vector3::new((x - cam.cx) / cam.focal, (y - cam.cy) / cam.focal, 1.0);
            surfaces
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.intersect(&center, &dir).map(|t| (k as u16, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
        })
        .collect();

    let noise: Option<Vec<f64>> = (opts.disparity_noise > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let normal = Normal::new(0.0, opts.disparity_noise).expect("finite sigma");
        (0..hits.len()).map(|_| normal.sample(&mut rng)).collect()
    });

    let fb = cam.fb();
    let mut labels = LabelMap::new(width, height);
    let mut true_depth = vec![0.0; width * height];
    let mut observed = vec![0.0; width * height];
    for (i, hit) in hits.iter().enumerate() {
        let Some((label, z)) = *hit else { continue };
        labels.labels[i] = Some(label);
        true_depth[i] = z;
        let d = fb / z + noise.as_ref().map_or(0.0, |n| n[i]);
        observed[i] = if opts.quantize {
            cam.quantize_from_disparity(d)?.unwrap_or(0.0)
        } else if d > 0.0 {
            fb / d
        } else {
            0.0
        };
    }
    Ok(SynthScene {
        depth: DepthMap::from_values(width, height, observed)?,
        labels,
        true_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_model::simulate_quantized_depths;

    #[test]
    fn fronto_parallel_plane() {
        let cam = CameraModel::kinect(40, 30);
        let s = synth_scene(
            &[Surface::fronto_parallel(1000.0)],
            &cam,
            &Pose::identity(),
            40,
            30,
            &SynthOptions::exact(),
        )
        .unwrap();
        assert!(s
            .depth
            .iter_valid()
            .all(|(_, _, z)| (z - 1000.0).abs() < 1e-9));
        assert_eq!(s.depth.valid_count(), 1200);
        assert_eq!(s.labels.count(0), 1200);
    }

    #[test]
    fn quantized_depths_come_from_the_simulated_set() {
        let cam = CameraModel::kinect(80, 60);
        // Tilted plane so the map spans a range of depths.
        let plane = Surface::plane(0.0, -0.0002, -0.001);
        let s = synth_scene(
            &[plane],
            &cam,
            &Pose::identity(),
            80,
            60,
            &SynthOptions::quantized(),
        )
        .unwrap();
        let zs: Vec<f64> = s.depth.iter_valid().map(|(_, _, z)| z).collect();
        let lo = s.true_depth.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.true_depth.iter().cloned().fold(0.0, f64::max);
        let set = simulate_quantized_depths(lo.floor() - 50.0, hi.ceil() + 50.0, &cam).unwrap();
        for z in zs {
            assert!(
                set.unique_depths.contains(&z),
                "{z} not produced by the quantizer"
            );
        }
    }

    #[test]
    fn nearest_surface_wins_and_bounds_clip() {
        let cam = CameraModel::kinect(40, 30);
        let near = Surface::Plane {
            coeffs: [0.0, 0.0, -1.0 / 600.0],
            bounds: Some(Aabb {
                min: [-5.0, -5.0, 0.0],
                max: [5.0, 5.0, 1e4],
            }),
        };
        let s = synth_scene(
            &[Surface::fronto_parallel(3000.0), near],
            &cam,
            &Pose::identity(),
            40,
            30,
            &SynthOptions::exact(),
        )
        .unwrap();
        let center = s.labels.get(20, 15);
        assert_eq!(center, Some(1));
        assert_eq!(s.labels.get(0, 0), Some(0));
    }

    #[test]
    fn plane_through_camera_center_is_rejected() {
        let cam = CameraModel::kinect(8, 8);
        let t = Vector3::new(0.0, 0.0, -1000.0); // camera center at Z = 1000
        let pose = Pose::new(nalgebra::Matrix3::identity(), t).unwrap();
        let err = synth_scene(
            &[Surface::fronto_parallel(1000.0)],
            &cam,
            &pose,
            8,
            8,
            &SynthOptions::exact(),
        );
        assert!(matches!(
            err,
            Err(GeometryError::DegenerateSurface { index: 0, .. })
        ));
        assert!(matches!(
            synth_scene(&[], &cam, &Pose::identity(), 8, 8, &SynthOptions::exact()),
            Err(GeometryError::EmptyScene)
        ));
    }

    #[test]
    fn sphere_and_relief_hits() {
        let cam = CameraModel::kinect(41, 41);
        let sphere = Surface::Sphere {
            center: [0.0, 0.0, 1000.0],
            radius: 200.0,
        };
        let s = synth_scene(
            std::slice::from_ref(&sphere),
            &cam,
            &Pose::identity(),
            41,
            41,
            &SynthOptions::exact(),
        )
        .unwrap();
        assert!((s.depth.get(20, 20).unwrap() - 800.0).abs() < 1e-9);

        let relief = Surface::Relief {
            base_z: 800.0,
            amplitude: 5.0,
            wavelength: 60.0,
        };
        let s = synth_scene(
            std::slice::from_ref(&relief),
            &cam,
            &Pose::identity(),
            41,
            41,
            &SynthOptions::exact(),
        )
        .unwrap();
        for (x, y, z) in s.depth.iter_valid() {
            let p = super::super::backproject_pixel(x as f64, y as f64, z, &cam);
            assert!(relief.distance(&p) < 1e-3, "pixel ({x},{y}) off surface");
        }
    }

    #[test]
    fn noise_is_seeded() {
        let cam = CameraModel::kinect(30, 20);
        let opts = SynthOptions {
            quantize: true,
            disparity_noise: 0.3,
            seed: 7,
        };
        let scene = [Surface::fronto_parallel(1500.0)];
        let a = synth_scene(&scene, &cam, &Pose::identity(), 30, 20, &opts).unwrap();
        let b = synth_scene(&scene, &cam, &Pose::identity(), 30, 20, &opts).unwrap();
        assert_eq!(a.depth, b.depth);
        let c = synth_scene(
            &scene,
            &cam,
            &Pose::identity(),
            30,
            20,
            &SynthOptions { seed: 8, ..opts },
        )
        .unwrap();
        assert_ne!(a.depth, c.depth);
    }
}

use rayon::prelude::*;

use super::{
    disparity_plane_to_world, fit_plane_disparity, segment_planar, PlaneError, PlaneModel,
    PlaneParams,
};
use crate::depth_image::{DisparityMap, LabelMap};
use crate::noise_model::CameraModel;

/// Residuals closer than this to the best one count as ties.
const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSegmentation {
    /// Plane index per pixel, `None` for pixels no plane explains.
    pub labels: LabelMap,
    pub planes: Vec<PlaneModel>,
    /// Fit/merge/reassign passes run.
    pub iterations: usize,
}

impl PlaneSegmentation {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            labels: LabelMap::new(width, height),
            planes: Vec::new(),
            iterations: 0,
        }
    }
}

/// LoG segmentation followed by [`refine_segmentation`].
pub fn extract_planes(
    dmap: &DisparityMap,
    cam: &CameraModel,
    params: &PlaneParams,
) -> Result<PlaneSegmentation, PlaneError> {
    params.validate()?;
    let regions = segment_planar(dmap, params.sigma, params.tau, params.min_area)?;
    refine_segmentation(dmap, &regions, cam, params)
}

struct Group {
    pixels: Vec<usize>,
    affine: [f64; 3],
}

/// k-means-like refinement of candidate regions: fit every plane, merge near-identical
/// planes, then reassign each valid pixel to the plane with the smallest disparity
/// residual (if within the fixed threshold), until the labels stop changing.
pub fn refine_segmentation(
    dmap: &DisparityMap,
    initial: &[Vec<usize>],
    cam: &CameraModel,
    params: &PlaneParams,
) -> Result<PlaneSegmentation, PlaneError> {
    params.validate()?;
    cam.validate()?;
    let (w, h) = (dmap.width(), dmap.height());
    if initial.len() > u16::MAX as usize {
        return Err(PlaneError::InvalidParameter(format!(
            "too many regions: {}",
            initial.len()
        )));
    }
    let thr = params.residual_threshold(cam);
    let cos_merge = params.merge_angle_deg.to_radians().cos();
    let disparity = dmap.values();

    let mut labels: Vec<Option<u16>> = vec![None; w * h];
    for (i, region) in initial.iter().enumerate() {
        for &p in region {
            if p < w * h && dmap.valid_mask()[p] {
                labels[p] = Some(i as u16);
            }
        }
    }
    let n_initial = initial.len();
    let mut planes: Vec<[f64; 3]> = Vec::new();
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        // (1) Fit. `slot[old label]` is the group the label's pixels now belong to.
        let n_labels = labels
            .iter()
            .flatten()
            .map(|l| *l as usize + 1)
            .max()
            .unwrap_or(0)
            .max(n_initial);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
        for (p, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                members[*l as usize].push(p);
            }
        }
        let mut slot: Vec<Option<usize>> = vec![None; n_labels];
        let mut groups: Vec<Group> = Vec::new();
        for (l, pixels) in members.into_iter().enumerate() {
            if let Ok(affine) = fit_pixels(&pixels, w, disparity) {
                slot[l] = Some(groups.len());
                groups.push(Group { pixels, affine });
            }
        }
        if groups.is_empty() {
            return Ok(PlaneSegmentation::empty(w, h));
        }

        // (2) Merge until no pair is close.
        while let Some((i, j)) = find_mergeable(&groups, w, thr, cos_merge, cam) {
            let absorbed = groups.remove(j);
            let mut pixels = std::mem::take(&mut groups[i].pixels);
            pixels.extend(absorbed.pixels);
            pixels.sort_unstable();
            groups[i].affine = fit_pixels(&pixels, w, disparity)?;
            groups[i].pixels = pixels;
            for s in slot.iter_mut().flatten() {
                if *s == j {
                    *s = i;
                } else if *s > j {
                    *s -= 1;
                }
            }
        }
        let previous: Vec<Option<u16>> = labels
            .iter()
            .map(|l| l.and_then(|l| slot[l as usize]).map(|s| s as u16))
            .collect();
        planes = groups.iter().map(|g| g.affine).collect();

        // (3) Reassign.
        let next: Vec<Option<u16>> = (0..w * h)
            .into_par_iter()
            .map(|p| {
                if !dmap.valid_mask()[p] {
                    return None;
                }
                let (x, y) = ((p % w) as f64, (p / w) as f64);
                let res: Vec<f64> = planes
                    .iter()
                    .map(|c| (disparity[p] - (c[0] * x + c[1] * y + c[2])).abs())
                    .collect();
                let best = res.iter().copied().fold(f64::INFINITY, f64::min);
                if !(best <= thr) {
                    return None;
                }
                let tied: Vec<usize> = (0..res.len())
                    .filter(|k| res[*k] - best <= TIE_TOLERANCE)
                    .collect();
                if tied.len() == 1 {
                    return Some(tied[0] as u16);
                }
                let neighbours =
                    neighbours8(p % w, p / w, w, h).map(|(nx, ny)| previous[ny * w + nx]);
                let pick = break_tie(&tied, neighbours);
                Some(pick as u16)
            })
            .collect();
        let stable = next == previous;
        labels = next;
        if stable {
            break;
        }
    }

    // Drop planes that ended with no pixels and renumber.
    let mut support = vec![0usize; planes.len()];
    for l in labels.iter().flatten() {
        support[*l as usize] += 1;
    }
    let mut renumber = vec![None; planes.len()];
    let mut models = Vec::new();
    for (k, affine) in planes.iter().enumerate() {
        if support[k] > 0 {
            renumber[k] = Some(models.len() as u16);
            models.push(PlaneModel::from_affine(*affine, support[k], cam)?);
        }
    }
    let labels = labels
        .into_iter()
        .map(|l| l.and_then(|l| renumber[l as usize]))
        .collect();
    Ok(PlaneSegmentation {
        labels: LabelMap {
            width: w,
            height: h,
            labels,
        },
        planes: models,
        iterations,
    })
}

fn fit_pixels(pixels: &[usize], w: usize, disparity: &[f64]) -> Result<[f64; 3], PlaneError> {
    let pts: Vec<(f64, f64, f64)> = pixels
        .iter()
        .map(|&p| ((p % w) as f64, (p / w) as f64, disparity[p]))
        .collect();
    fit_plane_disparity(&pts)
}

fn centroid(pixels: &[usize], w: usize) -> (f64, f64) {
    let n = pixels.len() as f64;
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(sx, sy), p| {
        (sx + (p % w) as f64, sy + (p / w) as f64)
    });
    (sx / n, sy / n)
}

fn eval(c: &[f64; 3], (x, y): (f64, f64)) -> f64 {
    c[0] * x + c[1] * y + c[2]
}

/// First pair (in index order) whose world normals are within the merge angle and whose
/// centroids each fit the other plane within the residual threshold.
fn find_mergeable(
    groups: &[Group],
    w: usize,
    thr: f64,
    cos_merge: f64,
    cam: &CameraModel,
) -> Option<(usize, usize)> {
    let normals: Vec<Option<nalgebra::Vector3<f64>>> = groups
        .iter()
        .map(|g| {
            disparity_plane_to_world(g.affine, cam)
                .ok()
                .map(|n| nalgebra::Vector3::from(n).normalize())
        })
        .collect();
    let centroids: Vec<(f64, f64)> = groups.iter().map(|g| centroid(&g.pixels, w)).collect();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (Some(ni), Some(nj)) = (normals[i], normals[j]) else {
                continue;
            };
            if ni.dot(&nj) < cos_merge {
                continue;
            }
            let (ci, cj) = (centroids[i], centroids[j]);
            let (ai, aj) = (&groups[i].affine, &groups[j].affine);
            if (eval(aj, ci) - eval(ai, ci)).abs() < thr
                && (eval(ai, cj) - eval(aj, cj)).abs() < thr
            {
                return Some((i, j));
            }
        }
    }
    None
}

/// Among tied planes (ascending indices), the one most frequent in the neighbourhood,
/// then the lowest index.
fn break_tie(tied: &[usize], neighbours: impl Iterator<Item = Option<u16>>) -> usize {
    let mut votes = vec![0usize; tied.len()];
    for l in neighbours.flatten() {
        if let Some(t) = tied.iter().position(|k| *k == l as usize) {
            votes[t] += 1;
        }
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    tied[votes.iter().position(|v| *v == top).unwrap_or(0)]
}

fn neighbours8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|d| *d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
                .then_some((nx as usize, ny as usize))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_image::{
        depth_map_to_disparity_map, synth_scene, Aabb, Surface, SynthOptions,
    };
    use crate::Pose;

    fn plane_raster(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> DisparityMap {
        let v = (0..w * h)
            .map(|i| f((i % w) as f64, (i / w) as f64))
            .collect();
        DisparityMap::from_values(w, h, v).unwrap()
    }

    #[test]
    fn single_plane_is_a_fixed_point() {
        let cam = CameraModel::kinect(60, 40);
        let d = plane_raster(60, 40, |x, y| 0.02 * x - 0.01 * y + 30.0);
        let seg = extract_planes(&d, &cam, &PlaneParams::default()).unwrap();
        assert_eq!(seg.planes.len(), 1);
        // One pass grows the region to the border, the next confirms it.
        assert!(seg.iterations <= 2, "{}", seg.iterations);
        assert_eq!(seg.labels.count(0), 60 * 40);
        let a = seg.planes[0].affine;
        assert!(
            (a[0] - 0.02).abs() < 1e-9 && (a[1] + 0.01).abs() < 1e-9 && (a[2] - 30.0).abs() < 1e-9
        );
    }

    #[test]
    fn coplanar_regions_split_by_an_occluder_merge() {
        let cam = CameraModel::kinect(120, 60);
        let wall = Surface::fronto_parallel(1500.0);
        let pole = Surface::Plane {
            coeffs: [0.0, 0.0, -1.0 / 800.0],
            bounds: Some(Aabb {
                min: [-40.0, -1e4, 0.0],
                max: [40.0, 1e4, 1e4],
            }),
        };
        let scan = synth_scene(
            &[wall, pole],
            &cam,
            &Pose::identity(),
            120,
            60,
            &SynthOptions::quantized(),
        )
        .unwrap();
        let d = depth_map_to_disparity_map(&scan.depth, &cam);
        let params = PlaneParams::default();
        let regions = segment_planar(&d, params.sigma, params.tau, 50).unwrap();
        assert_eq!(regions.len(), 3, "left wall, pole, right wall");
        let seg = refine_segmentation(&d, &regions, &cam, &params).unwrap();
        assert_eq!(seg.planes.len(), 2);
        let wall_label = seg.labels.get(2, 30).unwrap();
        assert_eq!(seg.labels.get(117, 30), Some(wall_label));
        assert_ne!(seg.labels.get(60, 30), Some(wall_label));
    }

    #[test]
    fn labelled_pixels_respect_the_residual_bound() {
        let cam = CameraModel::kinect(100, 80);
        let surfaces = [
            Surface::plane(0.0002, 0.0, -1.0 / 900.0),
            Surface::Sphere {
                center: [0.0, 0.0, 700.0],
                radius: 60.0,
            },
        ];
        let scan = synth_scene(
            &surfaces,
            &cam,
            &Pose::identity(),
            100,
            80,
            &SynthOptions::quantized(),
        )
        .unwrap();
        let d = depth_map_to_disparity_map(&scan.depth, &cam);
        let params = PlaneParams::default();
        let seg = extract_planes(&d, &cam, &params).unwrap();
        assert!(!seg.planes.is_empty());
        let thr = params.residual_threshold(&cam);
        for (p, l) in seg.labels.labels.iter().enumerate() {
            if let Some(l) = l {
                let (x, y) = ((p % 100) as f64, (p / 100) as f64);
                let r = d.values()[p] - seg.planes[*l as usize].disparity_at(x, y);
                assert!(r.abs() <= thr);
            }
        }
        let total: usize = seg.planes.iter().map(|p| p.support).sum();
        assert_eq!(total, seg.labels.labels.iter().flatten().count());
    }

    #[test]
    fn ties_go_to_the_neighbourhood_majority_then_lowest_index() {
        assert_eq!(neighbours8(0, 0, 5, 5).count(), 3);
        assert_eq!(neighbours8(2, 2, 5, 5).count(), 8);
        fn n(v: &[Option<u16>]) -> impl Iterator<Item = Option<u16>> + '_ {
            v.iter().copied()
        }
        assert_eq!(break_tie(&[1, 3], n(&[Some(3), Some(3), Some(1), None])), 3);
        assert_eq!(
            break_tie(&[1, 3], n(&[Some(3), Some(1), Some(0), Some(0)])),
            1
        );
        assert_eq!(break_tie(&[2, 4], n(&[None, Some(0)])), 2);
    }

    #[test]
    fn crease_pixels_tie_and_follow_their_neighbours() {
        // Two planes meeting on the column x = 15; pixels there fit both exactly.
        let cam = CameraModel::kinect(31, 20);
        let d = plane_raster(31, 20, |x, _| 40.0 - 0.5 * (x - 15.0).abs());
        let left: Vec<usize> = (0..620).filter(|p| p % 31 < 12).collect();
        let right: Vec<usize> = (0..620).filter(|p| p % 31 > 18).collect();
        let seg = refine_segmentation(&d, &[left, right], &cam, &PlaneParams::default()).unwrap();
        assert_eq!(seg.planes.len(), 2);
        let (l, r) = (
            seg.labels.get(0, 5).unwrap(),
            seg.labels.get(30, 5).unwrap(),
        );
        assert_ne!(l, r);
        for y in 0..20 {
            assert_eq!(seg.labels.get(15, y), Some(l.min(r)));
            assert_eq!(seg.labels.get(14, y), Some(l));
            assert_eq!(seg.labels.get(16, y), Some(r));
        }
    }

    #[test]
    fn empty_input_gives_empty_segmentation() {
        let cam = CameraModel::kinect(20, 20);
        let d = plane_raster(20, 20, |_, _| 40.0);
        let seg = refine_segmentation(&d, &[], &cam, &PlaneParams::default()).unwrap();
        assert!(seg.planes.is_empty());
        assert_eq!(seg.labels.labels.iter().flatten().count(), 0);
    }
}

//! Text formats: resolution CSV, JSON plane lists, pose sidecars and the fuse manifest.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::noise_model::ResolutionAnalysis;
use crate::planes::PlaneModel;
use crate::Pose;

const CSV_HEADER: &str = "z_mm,delta_z_mm";

/// Writes `z_mm,delta_z_mm` rows, one per consecutive unique-depth gap.
pub fn write_resolution_csv<W: Write>(
    analysis: &ResolutionAnalysis,
    mut out: W,
) -> Result<(), IoError> {
    writeln!(out, "{CSV_HEADER}")?;
    for (z, dz) in analysis.pairs() {
        // `{}` on f64 prints the shortest string that parses back to the same value.
        writeln!(out, "{z},{dz}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_resolution_csv<R: BufRead>(input: R) -> Result<Vec<(f64, f64)>, IoError> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(IoError::Format(format!(
                "expected CSV header {CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<f64>().ok());
        let mut fields = line.split(',');
        match (parse(fields.next()), parse(fields.next()), fields.next()) {
            (Some(z), Some(dz), None) => rows.push((z, dz)),
            _ => return Err(IoError::Format(format!("CSV line {}: {line:?}", n + 2))),
        }
    }
    Ok(rows)
}

/// JSON plane list written by the `planes` subcommand. Plane `i` carries label `i + 1`
/// in the label raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneList {
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub planes: Vec<PlaneModel>,
}

impl PlaneList {
    pub fn to_json(&self) -> Result<String, IoError> {
        serde_json::to_string_pretty(self).map_err(|e| IoError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Format(e.to_string()))
    }
}

/// Three lines of four numbers: the row-major world-to-camera `[R | T]`.
pub fn write_pose_sidecar<W: Write>(pose: &Pose, mut out: W) -> Result<(), IoError> {
    for row in pose.to_row_major().chunks(4) {
        writeln!(out, "{} {} {} {}", row[0], row[1], row[2], row[3])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads 12 whitespace-separated numbers; `#` starts a comment.
pub fn read_pose_sidecar<R: BufRead>(input: R) -> Result<Pose, IoError> {
    let mut values = Vec::with_capacity(12);
    for line in input.lines() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| IoError::Format(format!("pose entry {tok:?} is not a number")))?,
            );
        }
    }
    let m: [f64; 12] = values.try_into().map_err(|v: Vec<f64>| {
        IoError::Format(format!("pose needs 12 numbers, got {}", v.len()))
    })?;
    Pose::from_row_major(&m).map_err(|e| IoError::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub raster: PathBuf,
    pub pose: PathBuf,
}

/// Fuse manifest: one `<raster> <pose sidecar>` pair per line, `#` comments, blank
/// lines ignored. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let [raster, pose] = fields[..] else {
            return Err(IoError::Format(format!(
                "{}:{}: expected `<raster> <pose>`, got {body:?}",
                path.display(),
                n + 1
            )));
        };
        entries.push(ManifestEntry {
            raster: base.join(raster),
            pose: base.join(pose),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_model::analyze_depth_resolution;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip_of_linear_resolution() {
        let analysis = analyze_depth_resolution([100.0, 200.0, 400.0, 800.0]).unwrap();
        let mut buf = Vec::new();
        write_resolution_csv(&analysis, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "z_mm,delta_z_mm\n100,100\n200,200\n400,400\n"
        );
        let rows = read_resolution_csv(buf.as_slice()).unwrap();
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().map(|(z, dz)| (z.ln(), dz.ln())).unzip();
        let (slope, _) = crate::noise_model::fit_line(&xs, &ys).unwrap();
        assert!((slope - 1.0).abs() < 1e-12);
        assert!(read_resolution_csv("z,dz\n1,2\n".as_bytes()).is_err());
        assert!(read_resolution_csv("z_mm,delta_z_mm\n1;2\n".as_bytes()).is_err());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scans.txt");
        std::fs::write(
            &path,
            "# near and far\nnear.sld near.pose\n\n/abs/far.sld far.pose  # second\n",
        )
        .unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].raster, dir.path().join("near.sld"));
        assert_eq!(entries[1].raster, PathBuf::from("/abs/far.sld"));
        std::fs::write(&path, "only_one_field\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(IoError::Format(_))));
    }

    #[test]
    fn pose_sidecar_rejects_bad_input() {
        assert!(read_pose_sidecar("1 0 0 0\n0 1 0 0\n".as_bytes()).is_err());
        assert!(read_pose_sidecar("2 0 0 0 0 1 0 0 0 0 1 0".as_bytes()).is_err());
        assert!(read_pose_sidecar("1 0 0 x 0 1 0 0 0 0 1 0".as_bytes()).is_err());
        let p = read_pose_sidecar("# identity\n1 0 0 0\n0 1 0 0\n0 0 1 5\n".as_bytes()).unwrap();
        assert_eq!(p.translation().z, 5.0);
    }

    proptest! {
        #[test]
        fn pose_sidecar_round_trips(
            angles in (-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0),
            t in (-1e4f64..1e4, -1e4f64..1e4, -1e4f64..1e4),
        ) {
            let r = Rotation3::from_euler_angles(angles.0, angles.1, angles.2);
            let pose = Pose::new(*r.matrix(), Vector3::new(t.0, t.1, t.2)).unwrap();
            let mut buf = Vec::new();
            write_pose_sidecar(&pose, &mut buf).unwrap();
            prop_assert_eq!(read_pose_sidecar(buf.as_slice()).unwrap(), pose);
        }

        #[test]
        fn plane_lists_round_trip(
            planes in prop::collection::vec((prop::array::uniform3(-1e3f64..1e3), prop::array::uniform3(-1e-2f64..1e-2), 0usize..100_000), 0..5),
            iterations in 0usize..50,
        ) {
            let list = PlaneList {
                width: 640,
                height: 480,
                iterations,
                planes: planes.into_iter().map(|(affine, world, support)| PlaneModel { affine, world, support }).collect(),
            };
            prop_assert_eq!(PlaneList::from_json(&list.to_json().unwrap()).unwrap(), list);
        }
    }
}

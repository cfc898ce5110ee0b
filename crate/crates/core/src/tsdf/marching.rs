//! Marching cubes by per-face contour tracing.
//!
//! Instead of a 256-entry lookup table, each cube's six faces are walked in
//! counter-clockwise order (seen from outside). On every face the iso-contour is a set
//! of directed segments running from a negative-to-positive edge crossing to a
//! positive-to-negative one; ambiguous faces (alternating signs) are split with the
//! asymptotic decider. Every crossing edge of the cube then appears exactly once as a
//! segment start and once as an end, so chaining segments yields closed polygons,
//! which are fan-triangulated (through a centroid vertex when no fan apex avoids
//! in-face diagonals). This reproduces the classic 15 configurations with
//! face ambiguities resolved, and neighbouring cubes agree on shared faces, so the
//! surface has no cracks.
//!
//! Corners are numbered `dx + 2 dy + 4 dz`. Field values `>= 0` count as positive.
//! Triangles wind so that their normals point toward the negative (camera) side.

use std::collections::HashMap;

use nalgebra::Point3;
use rayon::prelude::*;

use super::{TriangleMesh, TsdfVolume};

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 6, 7, 3], // y = 1
    [0, 2, 3, 1], // z = 0
    [4, 5, 7, 6], // z = 1
];

const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Index of the cube edge joining two corners that differ in one bit.
fn local_edge(a: usize, b: usize) -> usize {
    let lo = a.min(b);
    let axis = (a ^ b).trailing_zeros() as usize;
    lo * 3 + axis
}

pub(super) fn extract(vol: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims();
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::default();
    }
    let field: Vec<Option<f64>> = (0..nx * ny * nz)
        .map(|n| {
            let w = vol.weights()[n];
            (w > 0.0).then(|| vol.numerator()[n] / w)
        })
        .collect();
    let lin = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    // Triangle corners are global edge ids (3 * linear index of lower corner + axis)
    // or, for polygons that cannot be fanned safely, a fresh centroid vertex.
    let triangles: Vec<[Key; 3]> = (0..nz - 1)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut out = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut v = [0.0; 8];
                    let mut observed = true;
                    for (c, slot) in v.iter_mut().enumerate() {
                        match field[lin(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] {
                            Some(f) => *slot = f,
                            None => observed = false,
                        }
                    }
                    if !observed {
                        continue;
                    }
                    let base = lin(i, j, k);
                    let global = |e: usize| {
                        let (corner, axis) = (e / 3, e % 3);
                        let n = base
                            + (corner & 1)
                            + nx * (((corner >> 1) & 1) + ny * ((corner >> 2) & 1));
                        Key::Edge(3 * n + axis)
                    };
                    let origin = vol.voxel_center(i, j, k);
                    let position = |e: usize| {
                        let (corner, axis) = (e / 3, e % 3);
                        let (a, b) = (v[corner], v[corner | (1 << axis)]);
                        let mut offset = [
                            (corner & 1) as f64,
                            ((corner >> 1) & 1) as f64,
                            ((corner >> 2) & 1) as f64,
                        ];
                        offset[axis] += a / (a - b);
                        origin + nalgebra::Vector3::from(offset) * vol.voxel_size()
                    };
                    for (pi, poly) in cube_polygons(&v).into_iter().enumerate() {
                        let n = poly.len();
                        match safe_fan_start(&poly) {
                            Some(s) => {
                                for w in 1..n - 1 {
                                    out.push([
                                        global(poly[s]),
                                        global(poly[(s + w) % n]),
                                        global(poly[(s + w + 1) % n]),
                                    ]);
                                }
                            }
                            None => {
                                let c = poly.iter().fold(nalgebra::Vector3::zeros(), |acc, e| {
                                    acc + position(*e).coords
                                }) / n as f64;
                                for w in 0..n {
                                    out.push([
                                        Key::Centroid(4 * base + pi, Point3::from(c)),
                                        global(poly[w]),
                                        global(poly[(w + 1) % n]),
                                    ]);
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut centroids: HashMap<usize, u32> = HashMap::new();
    let mut vertex = |key: Key, mesh: &mut TriangleMesh| -> u32 {
        let e = match key {
            Key::Centroid(id, p) => {
                return *centroids.entry(id).or_insert_with(|| {
                    mesh.vertices.push(p);
                    (mesh.vertices.len() - 1) as u32
                });
            }
            Key::Edge(e) => e,
        };
        *ids.entry(e).or_insert_with(|| {
            let (n, axis) = (e / 3, e % 3);
            let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
            let mut m = [i, j, k];
            m[axis] += 1;
            let (a, b) = (
                field[n].expect("observed"),
                field[lin(m[0], m[1], m[2])].expect("observed"),
            );
            let t = a / (a - b);
            let p0 = vol.voxel_center(i, j, k);
            let p1 = vol.voxel_center(m[0], m[1], m[2]);
            mesh.vertices.push(Point3::from(p0.coords + (p1 - p0) * t));
            (mesh.vertices.len() - 1) as u32
        })
    };
    for tri in triangles {
        let idx = tri.map(|key| vertex(key, &mut mesh));
        let [a, b, c] = idx.map(|i| mesh.vertices[i as usize]);
        if 0.5 * (b - a).cross(&(c - a)).norm() >= MIN_TRIANGLE_AREA {
            mesh.triangles.push(idx);
        }
    }
    mesh.drop_unreferenced();
    mesh
}

#[derive(Clone, Copy)]
enum Key {
    Edge(usize),
    /// Unique per polygon: `4 * cube index + polygon index`.
    Centroid(usize, Point3<f64>),
}

/// Whether two cube edges (local indices) lie on a common face.
fn share_face(e1: usize, e2: usize) -> bool {
    let (c1, a1, c2, a2) = (e1 / 3, e1 % 3, e2 / 3, e2 % 3);
    (0..3).any(|b| b != a1 && b != a2 && (c1 >> b) & 1 == (c2 >> b) & 1)
}

/// A fan apex whose diagonals all cross the cube interior. A diagonal lying in a face
/// could be emitted again by the neighbouring cube and break the manifold.
fn safe_fan_start(poly: &[usize]) -> Option<usize> {
    let n = poly.len();
    (0..n).find(|&s| (2..n - 1).all(|w| !share_face(poly[s], poly[(s + w) % n])))
}

/// Closed iso-contour polygons of one cube, as local edge indices.
fn cube_polygons(v: &[f64; 8]) -> Vec<Vec<usize>> {
    let pos = v.map(|f| f >= 0.0);
    if pos.iter().all(|p| *p) || pos.iter().all(|p| !*p) {
        return Vec::new();
    }
    // next[e] = end edge of the segment starting at e.
    let mut next = [usize::MAX; 24];
    for face in FACES {
        let edge = |q: usize| local_edge(face[q % 4], face[(q + 1) % 4]);
        let crossings = (0..4)
            .filter(|q| pos[face[*q]] != pos[face[(q + 1) % 4]])
            .count();
        match crossings {
            0 => {}
            2 => {
                let start = (0..4)
                    .find(|q| !pos[face[*q]] && pos[face[(q + 1) % 4]])
                    .expect("one n->p edge");
                let end = (0..4)
                    .find(|q| pos[face[*q]] && !pos[face[(q + 1) % 4]])
                    .expect("one p->n edge");
                next[edge(start)] = edge(end);
            }
            4 => {
                let [a, b, c, d] = face.map(|i| v[i]);
                let saddle = (a * c - b * d) / (a + c - b - d);
                // Positive saddle: positive corners connect, so cut off each negative corner.
                let cut_positive = !(saddle >= 0.0);
                for q in 0..4 {
                    if pos[face[q]] == cut_positive {
                        let (before, after) = (edge(q + 3), edge(q));
                        if cut_positive {
                            next[before] = after;
                        } else {
                            next[after] = before;
                        }
                    }
                }
            }
            _ => unreachable!("a face has an even number of sign changes"),
        }
    }

    let mut seen = [false; 24];
    let mut polys = Vec::new();
    for s in 0..24 {
        if next[s] == usize::MAX || seen[s] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = s;
        while !seen[e] {
            seen[e] = true;
            poly.push(e);
            e = next[e];
        }
        debug_assert_eq!(e, s);
        if poly.len() >= 3 {
            polys.push(poly);
        }
    }
    polys
}

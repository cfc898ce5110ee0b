use std::io::{BufRead, Write};

use nalgebra::Point3;

use super::TsdfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Indexed triangle mesh, vertex positions in mm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Root-mean-square distance from each vertex to the nearest of `surfaces`;
    /// `None` for an empty mesh or surface list.
    pub fn rms_distance_to(&self, surfaces: &[crate::depth_image::Surface]) -> Option<f64> {
        if self.vertices.is_empty() || surfaces.is_empty() {
            return None;
        }
        let sum: f64 = self
            .vertices
            .iter()
            .map(|v| {
                surfaces
                    .iter()
                    .map(|s| s.distance(v))
                    .fold(f64::INFINITY, f64::min)
                    .powi(2)
            })
            .sum();
        Some((sum / self.vertices.len() as f64).sqrt())
    }

    /// Checks index ranges and rejects triangles with area at or below `1e-12` mm^2.
    pub fn validate(&self) -> Result<(), TsdfError> {
        for (n, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|i| *i as usize >= self.vertices.len()) {
                return Err(TsdfError::Format(format!(
                    "triangle {n} indexes past the vertex list"
                )));
            }
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() < 1e-12 {
                return Err(TsdfError::Format(format!("triangle {n} is degenerate")));
            }
        }
        Ok(())
    }

    /// Removes vertices no triangle refers to, preserving order.
    pub(super) fn drop_unreferenced(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for i in t {
                used[*i as usize] = true;
            }
        }
        if used.iter().all(|u| *u) {
            return;
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if used[i] {
                remap[i] = kept.len() as u32;
                kept.push(*v);
            }
        }
        self.vertices = kept;
        for t in &mut self.triangles {
            *t = t.map(|i| remap[i as usize]);
        }
    }

    pub fn write_ply<W: Write>(&self, mut out: W, format: PlyFormat) -> Result<(), TsdfError> {
        let name = match format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        };
        write!(
            out,
            "ply\nformat {name} 1.0\ncomment units mm\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        match format {
            PlyFormat::Ascii => {
                for v in &self.vertices {
                    writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
                }
                for t in &self.triangles {
                    writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
                }
            }
            PlyFormat::BinaryLittleEndian => {
                let mut buf =
                    Vec::with_capacity(self.vertices.len() * 24 + self.triangles.len() * 13);
                for v in &self.vertices {
                    for c in [v.x, v.y, v.z] {
                        buf.extend_from_slice(&c.to_le_bytes());
                    }
                }
                for t in &self.triangles {
                    buf.push(3);
                    for i in t {
                        let i = i32::try_from(*i)
                            .map_err(|_| TsdfError::Format("vertex index exceeds i32".into()))?;
                        buf.extend_from_slice(&i.to_le_bytes());
                    }
                }
                out.write_all(&buf)?;
            }
        }
        Ok(())
    }

    /// Reads the PLY layout written by [`write_ply`](Self::write_ply): `x y z` as float
    /// or double, faces as `list uchar int|uint`, triangles only.
    pub fn read_ply<R: BufRead>(mut input: R) -> Result<Self, TsdfError> {
        let bad = |m: &str| TsdfError::Format(m.to_string());
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String, TsdfError> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(bad("unexpected end of header"));
            }
            Ok(line.trim().to_string())
        };
        if next_line(&mut input)? != "ply" {
            return Err(bad("missing ply magic"));
        }
        let mut format = None;
        let (mut nv, mut nf) = (0usize, 0usize);
        let mut current = "";
        let mut vertex_props: Vec<bool> = Vec::new(); // true = double
        loop {
            let l = next_line(&mut input)?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            match parts.as_slice() {
                ["end_header"] => break,
                ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
                ["format", "binary_little_endian", _] => {
                    format = Some(PlyFormat::BinaryLittleEndian)
                }
                ["format", ..] => return Err(bad("unsupported ply format")),
                ["comment", ..] | ["obj_info", ..] => {}
                ["element", "vertex", n] => {
                    nv = n.parse().map_err(|_| bad("bad vertex count"))?;
                    current = "vertex";
                }
                ["element", "face", n] => {
                    nf = n.parse().map_err(|_| bad("bad face count"))?;
                    current = "face";
                }
                ["property", ty, _] if current == "vertex" => match *ty {
                    "double" | "float64" => vertex_props.push(true),
                    "float" | "float32" => vertex_props.push(false),
                    _ => return Err(bad("unsupported vertex property type")),
                },
                ["property", "list", "uchar" | "uint8", "int" | "uint" | "int32" | "uint32", _]
                    if current == "face" => {}
                _ => return Err(bad(&format!("unsupported header line: {l}"))),
            }
        }
        if vertex_props.len() != 3 {
            return Err(bad("expected exactly x, y, z vertex properties"));
        }
        let format = format.ok_or_else(|| bad("missing format line"))?;
        let mut mesh = TriangleMesh::default();
        match format {
            PlyFormat::Ascii => {
                let mut body = String::new();
                input.read_to_string(&mut body)?;
                let mut tok = body.split_whitespace();
                let mut num = |what: &str| -> Result<f64, TsdfError> {
                    tok.next()
                        .ok_or_else(|| bad(&format!("truncated {what}")))?
                        .parse::<f64>()
                        .map_err(|_| bad(&format!("bad {what}")))
                };
                for _ in 0..nv {
                    mesh.vertices
                        .push(Point3::new(num("vertex")?, num("vertex")?, num("vertex")?));
                }
                for _ in 0..nf {
                    if num("face")? != 3.0 {
                        return Err(bad("only triangles are supported"));
                    }
                    mesh.triangles.push([
                        num("face")? as u32,
                        num("face")? as u32,
                        num("face")? as u32,
                    ]);
                }
            }
            PlyFormat::BinaryLittleEndian => {
                for _ in 0..nv {
                    let mut c = [0.0; 3];
                    for (slot, double) in c.iter_mut().zip(&vertex_props) {
                        *slot = if *double {
                            let mut b = [0u8; 8];
                            input.read_exact(&mut b)?;
                            f64::from_le_bytes(b)
                        } else {
                            let mut b = [0u8; 4];
                            input.read_exact(&mut b)?;
                            f32::from_le_bytes(b) as f64
                        };
                    }
                    mesh.vertices.push(Point3::from(c));
                }
                for _ in 0..nf {
                    let mut n = [0u8; 1];
                    input.read_exact(&mut n)?;
                    if n[0] != 3 {
                        return Err(bad("only triangles are supported"));
                    }
                    let mut t = [0u32; 3];
                    for slot in &mut t {
                        let mut b = [0u8; 4];
                        input.read_exact(&mut b)?;
                        *slot = u32::from_le_bytes(b);
                    }
                    mesh.triangles.push(t);
                }
            }
        }
        if mesh.triangles.iter().flatten().any(|i| *i as usize >= nv) {
            return Err(bad("face index out of range"));
        }
        Ok(mesh)
    }
}

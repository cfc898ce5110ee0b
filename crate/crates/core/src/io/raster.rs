//! Depth raster (`SLDDEPTH`) and label raster (`SLDLABEL`) files.
//!
//! Depth header, 32 bytes:
//!
//! ```text
//! 0  [u8; 8]  b"SLDDEPTH"
//! 8  u16      version = 1
//! 10 u16      units: 0 = millimetres
//! 12 u16      encoding: 0 = u16 per pixel, 1 = f64 per pixel
//! 14 u16      reserved = 0
//! 16 u32      width
//! 20 u32      height
//! 24 f64      depth step (mm)
//! ```
//!
//! followed by `width * height` row-major samples, 0 marking an invalid pixel.
//! Label rasters use the same 8-byte magic slot (`SLDLABEL`), version u16, width u32,
//! height u32, then one u16 per pixel: 0 = unlabelled, `i + 1` = label `i`.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::IoError;
use crate::depth_image::{DepthMap, LabelMap};

const DEPTH_MAGIC: &[u8; 8] = b"SLDDEPTH";
const LABEL_MAGIC: &[u8; 8] = b"SLDLABEL";
const VERSION: u16 = 1;
const UNITS_MM: u16 = 0;
/// Refuse headers describing more pixels than this (corrupt or hostile input).
const MAX_PIXELS: usize = 1 << 28;

/// Per-pixel payload type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthEncoding {
    /// Whole millimetres in `1..=65535`, the native sensor format.
    U16,
    /// Arbitrary positive depths, for continuous (unquantized) maps.
    F64,
}

impl DepthEncoding {
    fn code(self) -> u16 {
        match self {
            DepthEncoding::U16 => 0,
            DepthEncoding::F64 => 1,
        }
    }

    /// `U16` when every valid depth is a whole number of millimetres that fits.
    pub fn smallest_lossless(map: &DepthMap) -> Self {
        if map
            .iter_valid()
            .all(|(_, _, z)| z.fract() == 0.0 && z >= 1.0 && z <= u16::MAX as f64)
        {
            DepthEncoding::U16
        } else {
            DepthEncoding::F64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRasterFile {
    pub map: DepthMap,
    /// Output depth quantization of the sensor (mm), carried as metadata.
    pub depth_step: f64,
}

impl DepthRasterFile {
    pub fn new(map: DepthMap, depth_step: f64) -> Self {
        Self { map, depth_step }
    }

    pub fn write<W: Write>(&self, out: W, encoding: DepthEncoding) -> Result<(), IoError> {
        let map = &self.map;
        if encoding == DepthEncoding::U16
            && DepthEncoding::smallest_lossless(map) != DepthEncoding::U16
        {
            return Err(IoError::Format(
                "depths are not whole millimetres in 1..=65535".into(),
            ));
        }
        let mut out = BufWriter::new(out);
        out.write_all(DEPTH_MAGIC)?;
        for v in [VERSION, UNITS_MM, encoding.code(), 0] {
            out.write_all(&v.to_le_bytes())?;
        }
        write_dims(&mut out, map.width(), map.height())?;
        out.write_all(&self.depth_step.to_le_bytes())?;
        match encoding {
            DepthEncoding::U16 => {
                let buf: Vec<u8> = map
                    .values()
                    .iter()
                    .flat_map(|z| (*z as u16).to_le_bytes())
                    .collect();
                out.write_all(&buf)?;
            }
            DepthEncoding::F64 => {
                let buf: Vec<u8> = map.values().iter().flat_map(|z| z.to_le_bytes()).collect();
                out.write_all(&buf)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, IoError> {
        expect_magic(&mut input, DEPTH_MAGIC, "depth raster")?;
        let version = read_u16(&mut input)?;
        if version != VERSION {
            return Err(IoError::Format(format!(
                "unsupported depth raster version {version}"
            )));
        }
        let units = read_u16(&mut input)?;
        if units != UNITS_MM {
            return Err(IoError::Format(format!(
                "unsupported depth units code {units}"
            )));
        }
        let encoding = match read_u16(&mut input)? {
            0 => DepthEncoding::U16,
            1 => DepthEncoding::F64,
            other => return Err(IoError::Format(format!("unknown depth encoding {other}"))),
        };
        let _reserved = read_u16(&mut input)?;
        let (w, h) = read_dims(&mut input)?;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let depth_step = f64::from_le_bytes(b8);
        let values: Vec<f64> = match encoding {
            DepthEncoding::U16 => read_payload(&mut input, w * h * 2)?
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            DepthEncoding::F64 => read_payload(&mut input, w * h * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        };
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(IoError::Format(format!(
                "depth sample {bad} is neither 0 nor a positive depth"
            )));
        }
        let map =
            DepthMap::from_values(w, h, values).map_err(|e| IoError::Format(e.to_string()))?;
        Ok(Self { map, depth_step })
    }

    pub fn save(&self, path: &Path, encoding: DepthEncoding) -> Result<(), IoError> {
        self.write(super::create(path)?, encoding)
            .map_err(|e| with_path(e, path))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::read(super::open(path)?).map_err(|e| with_path(e, path))
    }
}

pub fn write_label_raster<W: Write>(labels: &LabelMap, out: W) -> Result<(), IoError> {
    if labels.labels.len() != labels.width * labels.height {
        return Err(IoError::Format(
            "label count does not match dimensions".into(),
        ));
    }
    let mut out = BufWriter::new(out);
    out.write_all(LABEL_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_dims(&mut out, labels.width, labels.height)?;
    let mut buf = Vec::with_capacity(labels.labels.len() * 2);
    for l in &labels.labels {
        let code = match l {
            None => 0,
            Some(i) => i
                .checked_add(1)
                .ok_or_else(|| IoError::Format(format!("label {i} cannot be encoded")))?,
        };
        buf.extend_from_slice(&code.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_label_raster<R: Read>(mut input: R) -> Result<LabelMap, IoError> {
    expect_magic(&mut input, LABEL_MAGIC, "label raster")?;
    let version = read_u16(&mut input)?;
    if version != VERSION {
        return Err(IoError::Format(format!(
            "unsupported label raster version {version}"
        )));
    }
    let (width, height) = read_dims(&mut input)?;
    let labels = read_payload(&mut input, width * height * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]).checked_sub(1))
        .collect();
    Ok(LabelMap {
        width,
        height,
        labels,
    })
}

fn with_path(e: IoError, path: &Path) -> IoError {
    match e {
        IoError::Io(source) => IoError::file(path, source),
        IoError::Format(m) => IoError::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn expect_magic<R: Read>(input: &mut R, magic: &[u8; 8], what: &str) -> Result<(), IoError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(IoError::Format(format!("not a {what} (bad magic)")));
    }
    Ok(())
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16, IoError> {
    let mut b = [0u8; 2];
    input.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn write_dims<W: Write>(out: &mut W, w: usize, h: usize) -> Result<(), IoError> {
    for d in [w, h] {
        let d =
            u32::try_from(d).map_err(|_| IoError::Format("raster dimension exceeds u32".into()))?;
        out.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_dims<R: Read>(input: &mut R) -> Result<(usize, usize), IoError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    let w = u32::from_le_bytes(b) as usize;
    input.read_exact(&mut b)?;
    let h = u32::from_le_bytes(b) as usize;
    if w.checked_mul(h).is_none_or(|n| n > MAX_PIXELS) {
        return Err(IoError::Format(format!("implausible raster size {w}x{h}")));
    }
    Ok((w, h))
}

fn read_payload<R: Read>(input: &mut R, len: usize) -> Result<Vec<u8>, IoError> {
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IoError::Format("truncated payload".into()),
        _ => IoError::Io(e),
    })?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(IoError::Format("trailing bytes after payload".into()));
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(file: &DepthRasterFile, enc: DepthEncoding) -> DepthRasterFile {
        let mut buf = Vec::new();
        file.write(&mut buf, enc).unwrap();
        DepthRasterFile::read(buf.as_slice()).unwrap()
    }

    #[test]
    fn header_layout() {
        let map = DepthMap::from_values(2, 1, vec![600.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        DepthRasterFile::new(map, 1.0)
            .write(&mut buf, DepthEncoding::U16)
            .unwrap();
        assert_eq!(buf.len(), 32 + 4);
        assert_eq!(&buf[..8], b"SLDDEPTH");
        assert_eq!(&buf[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[16..24], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..], &[0x58, 0x02, 0, 0]);
    }

    #[test]
    fn u16_rejects_fractional_depths() {
        let map = DepthMap::from_values(1, 1, vec![600.5]).unwrap();
        let file = DepthRasterFile::new(map, 1.0);
        assert!(file.write(Vec::new(), DepthEncoding::U16).is_err());
        assert_eq!(
            DepthEncoding::smallest_lossless(&file.map),
            DepthEncoding::F64
        );
        assert_eq!(roundtrip(&file, DepthEncoding::F64), file);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let map = DepthMap::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        DepthRasterFile::new(map, 1.0)
            .write(&mut buf, DepthEncoding::U16)
            .unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            DepthRasterFile::read(bad.as_slice()),
            Err(IoError::Format(_))
        ));
        assert!(matches!(
            DepthRasterFile::read(&buf[..buf.len() - 1]),
            Err(IoError::Format(_))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            DepthRasterFile::read(long.as_slice()),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn label_encoding() {
        let labels = LabelMap {
            width: 3,
            height: 1,
            labels: vec![None, Some(0), Some(4)],
        };
        let mut buf = Vec::new();
        write_label_raster(&labels, &mut buf).unwrap();
        assert_eq!(&buf[18..], &[0, 0, 1, 0, 5, 0]);
        assert_eq!(read_label_raster(buf.as_slice()).unwrap(), labels);
        let overflow = LabelMap {
            width: 1,
            height: 1,
            labels: vec![Some(u16::MAX)],
        };
        assert!(write_label_raster(&overflow, Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn depth_rasters_round_trip(
            w in 1usize..12, h in 1usize..12,
            raw in prop::collection::vec(prop::option::weighted(0.8, 1u16..=u16::MAX), 144),
            cont in prop::collection::vec(1e-3f64..1e5, 144),
            step in 0.1f64..5.0,
        ) {
            let ints: Vec<f64> = raw[..w * h].iter().map(|v| v.map_or(0.0, f64::from)).collect();
            let file = DepthRasterFile::new(DepthMap::from_values(w, h, ints).unwrap(), step);
            prop_assert_eq!(&roundtrip(&file, DepthEncoding::U16), &file);
            prop_assert_eq!(&roundtrip(&file, DepthEncoding::F64), &file);
            let reals: Vec<f64> = cont[..w * h].iter().zip(&raw).map(|(z, m)| if m.is_some() { *z } else { 0.0 }).collect();
            let file = DepthRasterFile::new(DepthMap::from_values(w, h, reals).unwrap(), step);
            prop_assert_eq!(&roundtrip(&file, DepthEncoding::F64), &file);
        }

        #[test]
        fn label_rasters_round_trip(
            w in 1usize..10, h in 1usize..10,
            raw in prop::collection::vec(prop::option::of(0u16..u16::MAX), 100),
        ) {
            let labels = LabelMap { width: w, height: h, labels: raw[..w * h].to_vec() };
            let mut buf = Vec::new();
            write_label_raster(&labels, &mut buf).unwrap();
            prop_assert_eq!(read_label_raster(buf.as_slice()).unwrap(), labels);
        }
    }
}

//! NVV1 volume files.
//!
//! ```text
//! NVV1
//! dtype <f32|u16|vec3f32>
//! dims <nx> <ny> <nz>
//! voxel_mm <s>
//! end
//! <little-endian payload, x fastest>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Dims, Grid, LabelGrid, ScalarGrid, VectorGrid, Voxel};

pub const MAGIC: &str = "NVV1";

/// Element types with an NVV1 dtype code.
pub trait NvvElement: Voxel {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn put(&self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl NvvElement for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl NvvElement for u16 {
    const DTYPE: &'static str = "u16";
    const BYTES: usize = 2;
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        u16::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl NvvElement for [f32; 3] {
    const DTYPE: &'static str = "vec3f32";
    const BYTES: usize = 12;
    fn put(&self, out: &mut Vec<u8>) {
        for c in self {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    fn take(bytes: &[u8]) -> Self {
        [
            f32::take(&bytes[0..4]),
            f32::take(&bytes[4..8]),
            f32::take(&bytes[8..12]),
        ]
    }
}

/// A volume of any NVV1 dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarGrid),
    Labels(LabelGrid),
    Vector(VectorGrid),
}

impl Volume {
    pub fn dims(&self) -> Dims {
        match self {
            Volume::Scalar(g) => g.dims(),
            Volume::Labels(g) => g.dims(),
            Volume::Vector(g) => g.dims(),
        }
    }
}

pub fn encode<T: NvvElement>(grid: &Grid<T>) -> Vec<u8> {
    let d = grid.dims();
    let header = format!(
        "{MAGIC}\ndtype {}\ndims {} {} {}\nvoxel_mm {}\nend\n",
        T::DTYPE,
        d.nx,
        d.ny,
        d.nz,
        grid.voxel_mm()
    );
    let mut out = Vec::with_capacity(header.len() + d.len() * T::BYTES);
    out.extend_from_slice(header.as_bytes());
    for v in grid.data() {
        v.put(&mut out);
    }
    out
}

struct Header {
    dtype: String,
    dims: Dims,
    voxel_mm: f64,
    payload_start: usize,
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("unterminated header line".into()))?;
    let line = std::str::from_utf8(&rest[..end])
        .ok()
        .filter(|s| s.is_ascii())
        .ok_or_else(|| Error::MalformedHeader("non-ASCII header".into()))?;
    *pos += end + 1;
    Ok(line)
}

fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::MalformedHeader(format!("expected `{key} ...`, found `{line}`")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    if next_line(bytes, &mut pos)? != MAGIC {
        return Err(Error::MalformedHeader("missing NVV1 magic".into()));
    }
    let dtype = keyed(next_line(bytes, &mut pos)?, "dtype")?.to_string();
    let dims_line = keyed(next_line(bytes, &mut pos)?, "dims")?;
    let n: Vec<usize> = dims_line
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader(format!("bad dims `{dims_line}`")))?;
    if n.len() != 3 || n.iter().any(|&v| v == 0) {
        return Err(Error::MalformedHeader(format!("bad dims `{dims_line}`")));
    }
    let voxel_line = keyed(next_line(bytes, &mut pos)?, "voxel_mm")?;
    let voxel_mm: f64 = voxel_line
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad voxel size `{voxel_line}`")))?;
    if next_line(bytes, &mut pos)? != "end" {
        return Err(Error::MalformedHeader("missing `end` line".into()));
    }
    Ok(Header {
        dtype,
        dims: Dims::new(n[0], n[1], n[2]),
        voxel_mm,
        payload_start: pos,
    })
}

fn decode_payload<T: NvvElement>(bytes: &[u8], h: &Header) -> Result<Grid<T>> {
    let payload = &bytes[h.payload_start..];
    let expected = h
        .dims
        .len()
        .checked_mul(T::BYTES)
        .ok_or_else(|| Error::MalformedHeader("dims overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data = payload.chunks_exact(T::BYTES).map(T::take).collect();
    Grid::from_vec(h.dims, h.voxel_mm, data)
}

/// Decodes a volume whose dtype must match `T`.
pub fn decode<T: NvvElement>(bytes: &[u8]) -> Result<Grid<T>> {
    let h = parse_header(bytes)?;
    if h.dtype != T::DTYPE {
        if !matches!(h.dtype.as_str(), "f32" | "u16" | "vec3f32") {
            return Err(Error::UnknownDtype(h.dtype));
        }
        return Err(Error::MalformedHeader(format!(
            "expected dtype {}, file holds {}",
            T::DTYPE,
            h.dtype
        )));
    }
    decode_payload(bytes, &h)
}

pub fn decode_any(bytes: &[u8]) -> Result<Volume> {
    let h = parse_header(bytes)?;
    match h.dtype.as_str() {
        "f32" => decode_payload(bytes, &h).map(Volume::Scalar),
        "u16" => decode_payload(bytes, &h).map(Volume::Labels),
        "vec3f32" => decode_payload(bytes, &h).map(Volume::Vector),
        _ => Err(Error::UnknownDtype(h.dtype)),
    }
}

pub fn write_volume<T: NvvElement>(grid: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(grid))?;
    Ok(())
}

pub fn read_volume<T: NvvElement>(path: impl AsRef<Path>) -> Result<Grid<T>> {
    decode(&fs::read(path)?)
}

pub fn read_any(path: impl AsRef<Path>) -> Result<Volume> {
    decode_any(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    #[test]
    fn zeros_round_trip() {
        let g = ScalarGrid::zeros(Dims::cube(2));
        let back: ScalarGrid = decode(&encode(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn header_layout_is_exact() {
        let g = LabelGrid::from_vec(Dims::new(2, 1, 1), 1.0, vec![3, 258]).unwrap();
        let bytes = encode(&g);
        let text = b"NVV1\ndtype u16\ndims 2 1 1\nvoxel_mm 1\nend\n";
        assert_eq!(&bytes[..text.len()], text);
        assert_eq!(&bytes[text.len()..], &[3, 0, 2, 1]);
    }

    #[test]
    fn short_payload_is_rejected() {
        let g = ScalarGrid::zeros(Dims::cube(2));
        let mut bytes = encode(&g);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode::<f32>(&bytes),
            Err(Error::PayloadMismatch { expected: 32, found: 28 })
        ));
    }

    #[test]
    fn label_histogram_survives_round_trip() {
        let g = LabelGrid::from_fn(Dims::new(5, 4, 3), 1.0, |x, y, z| if (x + y + z) % 3 == 0 { 9 } else { 0 }).unwrap();
        let hist = |g: &LabelGrid| {
            let mut h = BTreeMap::new();
            for &v in g.data() {
                *h.entry(v).or_insert(0usize) += 1;
            }
            h
        };
        let back: LabelGrid = decode(&encode(&g)).unwrap();
        assert_eq!(hist(&back), hist(&g));
        assert_eq!(hist(&g).keys().copied().collect::<Vec<_>>(), vec![0, 9]);
    }

    #[test]
    fn unknown_dtype_and_bad_header() {
        let bytes = b"NVV1\ndtype f64\ndims 1 1 1\nvoxel_mm 1\nend\n\0\0\0\0\0\0\0\0";
        assert!(matches!(decode_any(bytes), Err(Error::UnknownDtype(_))));
        let bytes = b"NVV2\ndtype f32\ndims 1 1 1\nvoxel_mm 1\nend\n\0\0\0\0";
        assert!(matches!(decode_any(bytes), Err(Error::MalformedHeader(_))));
        let bytes = b"NVV1\ndtype f32\ndims 1 1\nvoxel_mm 1\nend\n\0\0\0\0";
        assert!(matches!(decode_any(bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn vector_and_dtype_mismatch() {
        let g = VectorGrid::from_fn(Dims::new(2, 2, 1), 0.5, |x, y, _| [x as f32, y as f32, -1.5]).unwrap();
        let bytes = encode(&g);
        assert_eq!(decode_any(&bytes).unwrap(), Volume::Vector(g));
        assert!(decode::<f32>(&bytes).is_err());
    }
}

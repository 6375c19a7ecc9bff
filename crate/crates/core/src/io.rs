//! The MVOL container: a short text header followed by a raw little-endian
//! payload.
//!
//! ```text
//! MVOL1
//! dims 64 64 64
//! spacing 1 1 1
//! dtype scalar32
//! encoding raw-le
//!
//! <payload>
//! ```
//!
//! `scalar32` payloads are IEEE-754 binary32 little-endian values,
//! `mask8` payloads are one byte (0 or 1) per voxel. Both are x-fastest.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::write_atomic;
use crate::volume::{BinaryMask, Grid, ScalarVolume};

pub const MAGIC: &str = "MVOL1";
pub const ENCODING: &str = "raw-le";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Scalar32,
    Mask8,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::Scalar32 => "scalar32",
            Dtype::Mask8 => "mask8",
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Dtype::Scalar32 => 4,
            Dtype::Mask8 => 1,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvolHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
}

impl MvolHeader {
    pub fn payload_len(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(self.dtype.bytes_per_voxel(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow payload size".into()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing).map_err(|e| Error::Format(e.to_string()))
    }

    /// Header text including the terminating blank line.
    pub fn encode(&self) -> Result<String> {
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("cannot write zero-voxel dims {:?}", self.dims)));
        }
        self.grid()?;
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        Ok(format!(
            "{MAGIC}\ndims {nx} {ny} {nz}\nspacing {sx} {sy} {sz}\ndtype {}\nencoding {ENCODING}\n\n",
            self.dtype
        ))
    }

    /// Parses the header and returns it together with the payload offset.
    pub fn decode(bytes: &[u8]) -> Result<(MvolHeader, usize)> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("header ended before blank line".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::Format("header is not UTF-8".into()))?;
            pos += end + 1;
            Ok(line)
        };

        if next_line()? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let dims_line = next_line()?;
        let dims = parse_triple::<usize>(dims_line, "dims")?;
        let spacing_line = next_line()?;
        let spacing = parse_triple::<f64>(spacing_line, "spacing")?;
        let dtype = match next_line()?.strip_prefix("dtype ") {
            Some("scalar32") => Dtype::Scalar32,
            Some("mask8") => Dtype::Mask8,
            Some(other) => return Err(Error::UnsupportedDtype(other.to_string())),
            None => return Err(Error::Format("expected dtype line".into())),
        };
        match next_line()?.strip_prefix("encoding ") {
            Some(ENCODING) => {}
            Some(other) => return Err(Error::Format(format!("unsupported encoding `{other}`"))),
            None => return Err(Error::Format("expected encoding line".into())),
        }
        if !next_line()?.is_empty() {
            return Err(Error::Format("expected blank line after header".into()));
        }
        let header = MvolHeader {
            dims,
            spacing,
            dtype,
        };
        header.grid()?;
        Ok((header, pos))
    }
}

fn parse_triple<T: std::str::FromStr>(line: &str, key: &str) -> Result<[T; 3]> {
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected `{key}` line, got `{line}`")))?;
    let parts: Vec<T> = rest
        .split(' ')
        .map(|s| s.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("cannot parse `{line}`")))?;
    <[T; 3]>::try_from(parts).map_err(|_| Error::Format(format!("`{key}` needs 3 values")))
}

/// A decoded MVOL payload of either dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Mask(BinaryMask),
}

impl Volume {
    pub fn grid(&self) -> &Grid {
        match self {
            Volume::Scalar(v) => v.grid(),
            Volume::Mask(m) => m.grid(),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Volume::Scalar(_) => Dtype::Scalar32,
            Volume::Mask(_) => Dtype::Mask8,
        }
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<BinaryMask> for Volume {
    fn from(m: BinaryMask) -> Self {
        Volume::Mask(m)
    }
}

pub fn encode_volume(vol: &Volume) -> Result<Vec<u8>> {
    let grid = vol.grid();
    let header = MvolHeader {
        dims: grid.dims,
        spacing: grid.spacing,
        dtype: vol.dtype(),
    };
    let text = header.encode()?;
    let mut out = Vec::with_capacity(text.len() + header.payload_len()?);
    out.extend_from_slice(text.as_bytes());
    match vol {
        Volume::Scalar(v) => {
            if let Some(i) = v.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("refusing to write non-finite value at voxel {i}")));
            }
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Volume::Mask(m) => out.extend(m.data().iter().map(|&b| b as u8)),
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let (header, offset) = MvolHeader::decode(bytes)?;
    let payload = &bytes[offset..];
    let expected = header.payload_len()?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let grid = header.grid()?;
    match header.dtype {
        Dtype::Scalar32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let v = ScalarVolume::new(grid, data).map_err(|e| Error::Format(e.to_string()))?;
            Ok(Volume::Scalar(v))
        }
        Dtype::Mask8 => {
            let data = payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(Volume::Mask(BinaryMask::new(grid, data)?))
        }
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn read_scalar(path: &Path) -> Result<ScalarVolume> {
    match read_volume(path)? {
        Volume::Scalar(v) => Ok(v),
        Volume::Mask(_) => Err(Error::Format(format!(
            "{}: expected scalar32, found mask8",
            path.display()
        ))),
    }
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    match read_volume(path)? {
        Volume::Mask(m) => Ok(m),
        Volume::Scalar(_) => Err(Error::Format(format!(
            "{}: expected mask8, found scalar32",
            path.display()
        ))),
    }
}

/// Encodes and writes atomically (temp file + rename).
pub fn write_volume(vol: &Volume, path: &Path) -> Result<()> {
    let bytes = encode_volume(vol)?;
    write_atomic(path, &bytes)
}

pub fn write_scalar(vol: &ScalarVolume, path: &Path) -> Result<()> {
    write_volume(&Volume::Scalar(vol.clone()), path)
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_volume(&Volume::Mask(mask.clone()), path)
}

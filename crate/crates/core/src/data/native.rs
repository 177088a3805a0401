//! `.rvol` container: `RVOL1\n`, ASCII header lines, a blank line, then the
//! payload (little-endian f32 for volumes, one byte per voxel for masks).

use std::fmt::Write as _;
use std::path::Path;

use super::volume::{MaskVolume, Volume};
use crate::{Error, Result};

pub const NATIVE_MAGIC: &[u8] = b"RVOL1\n";

#[derive(Clone, Debug, PartialEq)]
pub enum NativeData {
    Volume(Volume),
    Mask(MaskVolume),
}

fn header(dims: [usize; 3], kind: &str, spacing: Option<[f32; 3]>) -> Vec<u8> {
    let mut s = String::from_utf8(NATIVE_MAGIC.to_vec()).expect("ascii");
    let _ = writeln!(s, "dims {} {} {}", dims[0], dims[1], dims[2]);
    let _ = writeln!(s, "kind {kind}");
    if let Some([x, y, z]) = spacing {
        // `{:?}` prints the shortest text that parses back to the same f32.
        let _ = writeln!(s, "spacing {x:?} {y:?} {z:?}");
    }
    s.push('\n');
    s.into_bytes()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_native_volume(volume: &Volume, path: &Path) -> Result<()> {
    let mut bytes = header(volume.dims(), "volume", volume.spacing);
    bytes.reserve(volume.data().len() * 4);
    for v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write(path, &bytes)
}

pub fn write_native_mask(mask: &MaskVolume, path: &Path) -> Result<()> {
    let mut bytes = header(mask.dims(), "mask", None);
    bytes.extend_from_slice(mask.data());
    write(path, &bytes)
}

/// Read either kind; the id is the file stem.
pub fn read_native(path: &Path) -> Result<NativeData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |d: String| Error::format(path, d);
    if !bytes.starts_with(NATIVE_MAGIC) {
        return Err(fail("bad magic, not an RVOL1 file".into()));
    }
    let mut pos = NATIVE_MAGIC.len();
    let (mut dims, mut kind, mut spacing) = (None, None, None);
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| fail("truncated header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| fail("header is not valid text".into()))?;
        pos = end + 1;
        if line.is_empty() {
            break;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or_default();
        let vals: Vec<&str> = it.collect();
        match key {
            "dims" => {
                let d = vals
                    .iter()
                    .map(|v| v.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| fail(format!("bad dims line {line:?}")))?;
                if d.len() != 3 {
                    return Err(fail(format!("bad dims line {line:?}")));
                }
                dims = Some([d[0], d[1], d[2]]);
            }
            "kind" => kind = vals.first().map(|s| s.to_string()),
            "spacing" => {
                let s = vals
                    .iter()
                    .map(|v| v.parse::<f32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| fail(format!("bad spacing line {line:?}")))?;
                if s.len() != 3 {
                    return Err(fail(format!("bad spacing line {line:?}")));
                }
                spacing = Some([s[0], s[1], s[2]]);
            }
            other => return Err(fail(format!("unknown header key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| fail("missing dims".into()))?;
    let n: usize = dims.iter().product();
    let payload = &bytes[pos..];
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match kind.as_deref() {
        Some("volume") => {
            if payload.len() != n * 4 {
                return Err(fail(format!("payload has {} bytes, dims need {}", payload.len(), n * 4)));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(NativeData::Volume(Volume::new(id, dims, data)?.with_spacing(spacing)))
        }
        Some("mask") => {
            if payload.len() != n {
                return Err(fail(format!("payload has {} bytes, dims need {n}", payload.len())));
            }
            if let Some(i) = payload.iter().position(|&b| b > 1) {
                return Err(fail(format!("mask voxel {i} has non-binary value {}", payload[i])));
            }
            Ok(NativeData::Mask(MaskVolume::new(id, dims, payload.to_vec())?))
        }
        Some(k) => Err(fail(format!("unknown kind {k:?}"))),
        None => Err(fail("missing kind".into())),
    }
}

pub fn read_native_volume(path: &Path) -> Result<Volume> {
    match read_native(path)? {
        NativeData::Volume(v) => Ok(v),
        NativeData::Mask(_) => Err(Error::format(path, "expected a volume, found a mask")),
    }
}

pub fn read_native_mask(path: &Path) -> Result<MaskVolume> {
    match read_native(path)? {
        NativeData::Mask(m) => Ok(m),
        NativeData::Volume(_) => Err(Error::format(path, "expected a mask, found a volume")),
    }
}

fn is_metaimage(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("mhd" | "mha")
    )
}

/// Load a volume from `.mhd`/`.mha` or native format, chosen by extension.
pub fn load_volume(path: &Path) -> Result<Volume> {
    if is_metaimage(path) {
        super::metaimage::read_metaimage_volume(path)
    } else {
        read_native_volume(path)
    }
}

pub fn load_mask(path: &Path) -> Result<MaskVolume> {
    if is_metaimage(path) {
        super::metaimage::read_metaimage_mask(path)
    } else {
        read_native_mask(path)
    }
}

//! MetaImage (`.mhd` + raw payload, or single-file `.mha`) reader.

use std::path::{Path, PathBuf};

use super::volume::{MaskVolume, Volume};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Char,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ElementType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => ElementType::UChar,
            "MET_CHAR" => ElementType::Char,
            "MET_SHORT" => ElementType::Short,
            "MET_USHORT" => ElementType::UShort,
            "MET_INT" => ElementType::Int,
            "MET_UINT" => ElementType::UInt,
            "MET_FLOAT" => ElementType::Float,
            "MET_DOUBLE" => ElementType::Double,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::UChar | ElementType::Char => 1,
            ElementType::Short | ElementType::UShort => 2,
            ElementType::Int | ElementType::UInt | ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let a = b.try_into().expect("element width");
                f64::from(if big_endian { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) })
            }};
        }
        match self {
            ElementType::UChar => f64::from(b[0]),
            ElementType::Char => f64::from(b[0] as i8),
            ElementType::Short => num!(i16),
            ElementType::UShort => num!(u16),
            ElementType::Int => num!(i32),
            ElementType::UInt => num!(u32),
            ElementType::Float => num!(f32),
            ElementType::Double => num!(f64),
        }
    }
}

/// Parsed header plus decoded voxel values in stored (z, y, x) order.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaImage {
    /// `[S, H, W]`.
    pub dims: [usize; 3],
    pub spacing: Option<[f32; 3]>,
    pub element_type: ElementType,
    pub big_endian: bool,
    pub values: Vec<f64>,
}

#[derive(Default)]
struct Header {
    ndims: Option<usize>,
    dim_size: Option<Vec<usize>>,
    spacing: Option<Vec<f32>>,
    element_type: Option<String>,
    big_endian: bool,
    data_file: Option<String>,
    compressed: bool,
    channels: usize,
}

fn parse_list<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<Vec<T>> {
    v.split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::format(path, format!("{key}: cannot parse {s:?}"))))
        .collect()
}

fn parse_bool(v: &str) -> bool {
    matches!(v.to_ascii_lowercase().as_str(), "true" | "1" | "yes")
}

/// Read a MetaImage header and its payload.
pub fn read_metaimage(path: &Path) -> Result<MetaImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Header {
        channels: 1,
        ..Default::default()
    };
    let mut pos = 0;
    // Header lines up to and including ElementDataFile.
    while pos < bytes.len() && h.data_file.is_none() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| Error::format(path, "header is not valid text"))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("malformed header line {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => h.ndims = Some(parse_list(path, key, value)?.first().copied().unwrap_or(0)),
            "DimSize" => h.dim_size = Some(parse_list(path, key, value)?),
            "ElementSpacing" | "ElementSize" => h.spacing = Some(parse_list(path, key, value)?),
            "ElementType" => h.element_type = Some(value.to_string()),
            "ElementByteOrderMSB" | "BinaryDataByteOrderMSB" => h.big_endian = parse_bool(value),
            "CompressedData" => h.compressed = parse_bool(value),
            "ElementNumberOfChannels" => h.channels = parse_list(path, key, value)?.first().copied().unwrap_or(1),
            "ElementDataFile" => h.data_file = Some(value.to_string()),
            _ => {}
        }
    }

    match h.ndims {
        Some(3) => {}
        Some(n) => return Err(Error::format(path, format!("NDims = {n}, only 3-D images are supported"))),
        None => return Err(Error::format(path, "missing NDims")),
    }
    let ds = h.dim_size.ok_or_else(|| Error::format(path, "missing DimSize"))?;
    if ds.len() != 3 || ds.contains(&0) {
        return Err(Error::format(path, format!("DimSize must list 3 positive extents, got {ds:?}")));
    }
    if h.compressed {
        return Err(Error::format(path, "compressed payloads are not supported"));
    }
    if h.channels != 1 {
        return Err(Error::format(path, format!("{} channels per element, expected 1", h.channels)));
    }
    let type_name = h.element_type.ok_or_else(|| Error::format(path, "missing ElementType"))?;
    let element_type = ElementType::parse(&type_name)
        .ok_or_else(|| Error::format(path, format!("unknown ElementType {type_name}")))?;
    let spacing = match h.spacing {
        None => None,
        Some(s) if s.len() == 3 => Some([s[0], s[1], s[2]]),
        Some(s) => return Err(Error::format(path, format!("ElementSpacing must have 3 values, got {}", s.len()))),
    };
    let data_file = h.data_file.ok_or_else(|| Error::format(path, "missing ElementDataFile"))?;

    let external;
    let (payload, payload_path): (&[u8], PathBuf) = if data_file == "LOCAL" {
        (&bytes[pos..], path.to_path_buf())
    } else {
        let p = path.parent().unwrap_or(Path::new("")).join(&data_file);
        external = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        (&external, p)
    };

    // DimSize is x y z; storage is x fastest.
    let dims = [ds[2], ds[1], ds[0]];
    let width = element_type.size();
    let expected = dims.iter().product::<usize>() * width;
    if payload.len() != expected {
        return Err(Error::format(
            &payload_path,
            format!(
                "payload has {} bytes but DimSize {:?} of {type_name} needs {expected} bytes",
                payload.len(),
                ds
            ),
        ));
    }
    let values = payload
        .chunks_exact(width)
        .map(|c| element_type.decode(c, h.big_endian))
        .collect();
    Ok(MetaImage {
        dims,
        spacing,
        element_type,
        big_endian: h.big_endian,
        values,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read_metaimage_volume(path: &Path) -> Result<Volume> {
    let m = read_metaimage(path)?;
    let data = m.values.iter().map(|&v| v as f32).collect();
    Ok(Volume::new(stem(path), m.dims, data)?.with_spacing(m.spacing))
}

/// Masks must hold only 0 and 1.
pub fn read_metaimage_mask(path: &Path) -> Result<MaskVolume> {
    let m = read_metaimage(path)?;
    let mut data = Vec::with_capacity(m.values.len());
    for (i, &v) in m.values.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::format(path, format!("mask voxel {i} has non-binary value {v}")));
        }
        data.push(v as u8);
    }
    MaskVolume::new(stem(path), m.dims, data)
}

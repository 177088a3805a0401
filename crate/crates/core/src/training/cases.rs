use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{
    check_pair, load_mask, load_volume, preprocess, preprocess_mask, read_native_mask, read_native_volume,
    write_native_mask, write_native_volume, ManifestEntry, MaskVolume, PreprocessConfig, Volume,
};
use crate::Result;

/// A preprocessed volume and, when available, its mask at the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub volume: Volume,
    pub mask: Option<MaskVolume>,
}

impl Case {
    /// Preprocess raw data in memory.
    pub fn prepare(id: &str, volume: &Volume, mask: Option<&MaskVolume>, cfg: &PreprocessConfig) -> Result<Self> {
        if let Some(m) = mask {
            check_pair(volume, m)?;
        }
        let mut v = preprocess(volume, cfg)?;
        v.id = id.to_string();
        let mask = match mask {
            Some(m) => {
                let mut m = preprocess_mask(m, cfg)?;
                m.id = id.to_string();
                Some(m)
            }
            None => None,
        };
        Ok(Case {
            id: id.to_string(),
            volume: v,
            mask,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn volume_key(v: &Volume, cfg: &PreprocessConfig) -> String {
    let mut h = Sha256::new();
    h.update(b"volume/v1");
    for d in v.dims() {
        h.update((d as u64).to_le_bytes());
    }
    for x in v.data() {
        h.update(x.to_le_bytes());
    }
    h.update((cfg.target_size as u64).to_le_bytes());
    h.update((cfg.bins as u64).to_le_bytes());
    hex(&h.finalize())
}

fn mask_key(m: &MaskVolume, cfg: &PreprocessConfig) -> String {
    let mut h = Sha256::new();
    h.update(b"mask/v1");
    for d in m.dims() {
        h.update((d as u64).to_le_bytes());
    }
    h.update(m.data());
    h.update((cfg.target_size as u64).to_le_bytes());
    hex(&h.finalize())
}

fn cached<T>(
    dir: Option<&Path>,
    key: String,
    read: impl Fn(&Path) -> Result<T>,
    compute: impl FnOnce() -> Result<T>,
    write: impl Fn(&T, &Path) -> Result<()>,
) -> Result<T> {
    let Some(dir) = dir else { return compute() };
    let path: PathBuf = dir.join(format!("{key}.rvol"));
    if path.exists() {
        match read(&path) {
            Ok(v) => return Ok(v),
            Err(e) => log::warn!("ignoring unreadable cache entry: {e}"),
        }
    }
    let v = compute()?;
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    write(&v, &path)?;
    Ok(v)
}

/// Load and preprocess one manifest entry. A mask that is not listed or whose
/// file does not exist leaves `mask` empty.
pub fn load_case(entry: &ManifestEntry, cfg: &PreprocessConfig, cache_dir: Option<&Path>) -> Result<Case> {
    let raw = load_volume(&entry.image)?;
    let raw_mask = match &entry.mask {
        Some(p) if p.exists() => Some(load_mask(p)?),
        Some(p) => {
            log::warn!("case {}: mask {} not found", entry.case_id, p.display());
            None
        }
        None => None,
    };
    if let Some(m) = &raw_mask {
        check_pair(&raw, m)?;
    }
    let mut volume = cached(
        cache_dir,
        volume_key(&raw, cfg),
        read_native_volume,
        || preprocess(&raw, cfg),
        write_native_volume,
    )?;
    volume.id = entry.case_id.clone();
    let mask = match raw_mask {
        Some(m) => {
            let mut pm = cached(
                cache_dir,
                mask_key(&m, cfg),
                read_native_mask,
                || preprocess_mask(&m, cfg),
                write_native_mask,
            )?;
            pm.id = entry.case_id.clone();
            Some(pm)
        }
        None => None,
    };
    Ok(Case {
        id: entry.case_id.clone(),
        volume,
        mask,
    })
}

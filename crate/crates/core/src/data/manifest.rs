use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// One `caseID imagePath [maskPath]` line. Relative paths are resolved
/// against the manifest's directory by [`read_manifest`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub case_id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

pub fn parse_manifest(text: &str, base: &Path, source: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&f.len()) {
            return Err(Error::format(
                source,
                format!("line {}: expected `caseID imagePath maskPath`, got {line:?}", n + 1),
            ));
        }
        if out.iter().any(|e| e.case_id == f[0]) {
            return Err(Error::format(source, format!("line {}: duplicate case {}", n + 1, f[0])));
        }
        out.push(ManifestEntry {
            case_id: f[0].to_string(),
            image: base.join(f[1]),
            mask: f.get(2).map(|m| base.join(m)),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")), path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::from("# caseID imagePath maskPath\n");
    for e in entries {
        let _ = write!(s, "{} {}", e.case_id, e.image.display());
        if let Some(m) = &e.mask {
            let _ = write!(s, " {}", m.display());
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_relative_paths() {
        let text = "# header\ncase1 a.rvol a_mask.rvol\n\ncase2 /abs/b.mhd # no mask\n";
        let m = parse_manifest(text, Path::new("/data"), Path::new("m.txt")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].mask.as_deref(), Some(Path::new("/data/a_mask.rvol")));
        assert_eq!(m[1].image, PathBuf::from("/abs/b.mhd"));
        assert_eq!(m[1].mask, None);
        assert!(parse_manifest("x\n", Path::new(""), Path::new("m.txt")).is_err());
        assert!(parse_manifest("a p q\na p q\n", Path::new(""), Path::new("m.txt")).is_err());
    }
}

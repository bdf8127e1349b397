//! Dataset manifests: a `#size H W` header then `id<TAB>image<TAB>mask` lines.
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::{check_target, load_image, load_mask, prepare, DataError, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Per-channel `(x − mean) / std` applied after loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub size: (usize, usize),
    pub normalization: Option<Normalization>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self, DataError> {
        let bad = |line: usize, msg: &str| DataError::Format { path: base.to_path_buf(), msg: format!("line {line}: {msg}") };
        let mut size = None;
        let mut normalization = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let words: Vec<&str> = rest.split_whitespace().collect();
                match words.first() {
                    Some(&"size") => {
                        let dims: Vec<usize> = words[1..].iter().map(|w| w.parse()).collect::<Result<_, _>>().map_err(|_| bad(n, "bad #size"))?;
                        let [h, w] = dims[..] else { return Err(bad(n, "#size needs H W")) };
                        size = Some((h, w));
                    }
                    Some(&"norm") => {
                        let v: Vec<f32> = words[1..].iter().map(|w| w.parse()).collect::<Result<_, _>>().map_err(|_| bad(n, "bad #norm"))?;
                        let [m0, m1, m2, s0, s1, s2] = v[..] else { return Err(bad(n, "#norm needs 3 means and 3 stds")) };
                        if [s0, s1, s2].iter().any(|s| *s <= 0.0) {
                            return Err(bad(n, "#norm std must be positive"));
                        }
                        normalization = Some(Normalization { mean: [m0, m1, m2], std: [s0, s1, s2] });
                    }
                    _ => {}
                }
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [id, image, mask] = parts[..] else { return Err(bad(n, "expected id<TAB>image<TAB>mask")) };
            entries.push(ManifestEntry { id: id.to_string(), image: base.join(image), mask: base.join(mask) });
        }
        let size = size.ok_or_else(|| bad(1, "missing `#size H W` header"))?;
        check_target(size)?;
        Ok(DatasetManifest { size, normalization, entries })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Serialises with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = format!("#size {} {}\n", self.size.0, self.size.1);
        if let Some(n) = &self.normalization {
            out += &format!("#norm {} {} {} {} {} {}\n", n.mean[0], n.mean[1], n.mean[2], n.std[0], n.std[1], n.std[2]);
        }
        for e in &self.entries {
            let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
            out += &format!("{}\t{}\t{}\n", e.id, rel(&e.image), rel(&e.mask));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let base = path.parent().unwrap_or(Path::new("."));
        fs::write(path, self.to_text(base)).map_err(|e| DataError::io(path, e))
    }
}

/// Loads, checks and prepares every sample of the manifest.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>, DataError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_image(&e.image)?;
            let mask = load_mask(&e.mask)?;
            let (ih, iw) = (image.shape()[1], image.shape()[2]);
            if (iw, ih) != mask.dims() {
                return Err(DataError::DimMismatch { id: e.id.clone(), image: (ih, iw), mask: (mask.height(), mask.width()) });
            }
            let mut s = prepare(&Sample { id: e.id.clone(), image, mask }, manifest.size)?;
            if let Some(n) = &manifest.normalization {
                let plane = manifest.size.0 * manifest.size.1;
                for (c, chunk) in s.image.data_mut().chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = (*v - n.mean[c]) / n.std[c]);
                }
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "#size 32 48\n#norm 0.5 0.5 0.5 0.25 0.25 0.25\na\timg/a.pgm\tmask/a.pgm\n\nb\t/abs/b.pgm\tm/b.png\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.size, (32, 48));
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].image, Path::new("/data/img/a.pgm"));
        assert_eq!(m.entries[1].image, Path::new("/abs/b.pgm"));
        assert_eq!(DatasetManifest::parse(&m.to_text(Path::new("/data")), Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn parse_errors() {
        assert!(DatasetManifest::parse("a\tb\tc\n", Path::new(".")).is_err());
        assert!(DatasetManifest::parse("#size 30 32\n", Path::new(".")).is_err());
        assert!(DatasetManifest::parse("#size 32 32\na b c\n", Path::new(".")).is_err());
    }
}

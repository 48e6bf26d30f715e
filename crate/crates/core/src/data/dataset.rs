use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::bicubic::bicubic_rescale;
use super::image::ImageRgb;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "index.txt";

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "bmp"];

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub hr: PathBuf,
    /// Dims of the centre crop taken from `hr`.
    pub height: usize,
    pub width: usize,
    pub lr: BTreeMap<usize, PathBuf>,
}

impl DatasetEntry {
    pub fn name(&self) -> String {
        self.hr.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    /// The HR image cropped exactly as during preparation.
    pub fn load_hr(&self) -> Result<ImageRgb> {
        let img = ImageRgb::load(&self.hr)?;
        if img.height() < self.height || img.width() < self.width {
            return Err(Error::Data(format!(
                "{} is smaller than its indexed crop {}x{}",
                self.hr.display(),
                self.height,
                self.width
            )));
        }
        center_crop(&img, self.height, self.width)
    }

    pub fn load_lr(&self, scale: usize) -> Result<ImageRgb> {
        let path = self
            .lr
            .get(&scale)
            .ok_or_else(|| Error::Data(format!("{} has no x{scale} cache", self.hr.display())))?;
        ImageRgb::load(path)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetIndex {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Manifest text; cache paths under `root` are written relative to it.
    pub fn to_manifest(&self, root: &Path) -> String {
        let mut out = String::new();
        for e in &self.entries {
            write!(out, "{}", e.hr.display()).unwrap();
            for (s, p) in &e.lr {
                write!(out, "\tx{s}={}", p.strip_prefix(root).unwrap_or(p).display()).unwrap();
            }
            writeln!(out, "\t{}x{}", e.height, e.width).unwrap();
        }
        for (p, why) in &self.skipped {
            writeln!(out, "# skipped\t{}\t{}", p.display(), why.replace(['\n', '\t'], " ")).unwrap();
        }
        out
    }

    /// Parses manifest text; relative cache paths are resolved against `root`.
    pub fn parse_manifest(text: &str, root: &Path) -> Result<Self> {
        let mut index = DatasetIndex::default();
        for (n, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", n + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# skipped\t") {
                let (p, why) = rest.split_once('\t').unwrap_or((rest, ""));
                index.skipped.push((PathBuf::from(p), why.to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 {
                return Err(bad("expected hr path, caches and dims"));
            }
            let dims = fields[fields.len() - 1];
            let (h, w) = dims.split_once('x').ok_or_else(|| bad("malformed dims"))?;
            let height = h.parse().map_err(|_| bad("malformed height"))?;
            let width = w.parse().map_err(|_| bad("malformed width"))?;
            let mut lr = BTreeMap::new();
            for f in &fields[1..fields.len() - 1] {
                let (s, p) = f.split_once('=').ok_or_else(|| bad("malformed cache field"))?;
                let s = s.strip_prefix('x').and_then(|s| s.parse().ok()).ok_or_else(|| bad("malformed scale"))?;
                lr.insert(s, root.join(p));
            }
            index.entries.push(DatasetEntry { hr: PathBuf::from(fields[0]), height, width, lr });
        }
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().unwrap_or(Path::new("."));
        Self::parse_manifest(&fs::read_to_string(path)?, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let root = path.parent().unwrap_or(Path::new("."));
        fs::write(path, self.to_manifest(root))?;
        Ok(())
    }

    /// Entries that carry an LR cache for `scale`.
    pub fn for_scale(&self, scale: usize) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.lr.contains_key(&scale))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn center_crop(img: &ImageRgb, h: usize, w: usize) -> Result<ImageRgb> {
    img.crop((img.height() - h) / 2, (img.width() - w) / 2, h, w)
}

/// Centre crop to the largest dims divisible by `multiple`; `None` if the
/// image is smaller than one multiple.
pub fn center_crop_to_multiple(img: &ImageRgb, multiple: usize) -> Option<ImageRgb> {
    let h = img.height() / multiple * multiple;
    let w = img.width() / multiple * multiple;
    if h == 0 || w == 0 {
        return None;
    }
    center_crop(img, h, w).ok()
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Crops every HR image under `hr_dir` to a multiple of all `scales`, writes
/// bicubic LR caches to `out_dir/x{s}/` and the manifest to
/// `out_dir/index.txt`.
pub fn prepare_dataset(hr_dir: &Path, scales: &[usize], out_dir: &Path) -> Result<DatasetIndex> {
    if scales.is_empty() || scales.iter().any(|&s| s == 0) {
        return Err(Error::Data("scales must be a non-empty set of positive integers".into()));
    }
    let mut scales = scales.to_vec();
    scales.sort_unstable();
    scales.dedup();
    let multiple = scales.iter().fold(1, |m, &s| m / gcd(m, s) * s);

    let hr_dir = &fs::canonicalize(hr_dir)?;
    let mut files = Vec::new();
    collect_images(hr_dir, &mut files)?;
    files.sort();

    let mut index = DatasetIndex::default();
    for path in files {
        let img = match ImageRgb::load(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                index.skipped.push((path, e.to_string()));
                continue;
            }
        };
        let Some(hr) = center_crop_to_multiple(&img, multiple) else {
            let why = format!("{}x{} is smaller than {multiple}", img.height(), img.width());
            warn!("skipping {}: {why}", path.display());
            index.skipped.push((path, why));
            continue;
        };
        let rel = path.strip_prefix(hr_dir).unwrap_or(&path).with_extension("png");
        let mut lr = BTreeMap::new();
        for &s in &scales {
            let small = bicubic_rescale(&hr, 1.0 / s as f64);
            debug_assert_eq!(small.height() * s, hr.height());
            let cache = out_dir.join(format!("x{s}")).join(&rel);
            small.save_png(&cache)?;
            lr.insert(s, cache);
        }
        index.entries.push(DatasetEntry { hr: path, height: hr.height(), width: hr.width(), lr });
    }
    fs::create_dir_all(out_dir)?;
    index.save(out_dir.join(MANIFEST_NAME))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcm_crop_of_101() {
        let img = ImageRgb::from_fn(101, 101, |_, _, _| 0.5);
        let c = center_crop_to_multiple(&img, 12).unwrap();
        assert_eq!((c.height(), c.width()), (96, 96));
    }

    #[test]
    fn manifest_round_trip() {
        let mut lr = BTreeMap::new();
        lr.insert(2, PathBuf::from("/c/x2/a.png"));
        lr.insert(4, PathBuf::from("/c/x4/a.png"));
        let index = DatasetIndex {
            entries: vec![DatasetEntry { hr: "/hr/a.png".into(), height: 96, width: 48, lr }],
            skipped: vec![("/hr/b.png".into(), "bad header".into())],
        };
        let text = index.to_manifest(Path::new("/c"));
        assert!(text.contains("\tx2=x2/a.png\t"));
        assert_eq!(DatasetIndex::parse_manifest(&text, Path::new("/c")).unwrap(), index);
    }
}

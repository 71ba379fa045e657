//! Dataset discovery, augmentation expansion and the manifest text format.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{Augment, Flip};
use crate::error::{Error, Result};

/// Which augmentation expansion training images receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Identity, both flips and every rotation 1..=360: 363 per image.
    #[default]
    Drive,
    /// As `Drive` plus both flips of every rotation: 1 083 per image.
    Stare,
    /// Identity only.
    Plain,
}

impl Layout {
    pub fn as_str(&self) -> &'static str {
        match self {
            Layout::Drive => "drive",
            Layout::Stare => "stare",
            Layout::Plain => "plain",
        }
    }

    /// Transforms applied to each training image, in manifest order.
    pub fn expansion(&self) -> Vec<Augment> {
        let mut out = vec![Augment::Identity];
        if *self == Layout::Plain {
            return out;
        }
        out.push(Augment::Flip(Flip::Horizontal));
        out.push(Augment::Flip(Flip::Vertical));
        out.extend((1..=360).map(Augment::Rotate));
        if *self == Layout::Stare {
            for d in 1..=360 {
                out.push(Augment::RotateFlip(d, Flip::Horizontal));
                out.push(Augment::RotateFlip(d, Flip::Vertical));
            }
        }
        out
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drive" => Ok(Layout::Drive),
            "stare" => Ok(Layout::Stare),
            "plain" | "none" => Ok(Layout::Plain),
            other => Err(Error::invalid(format!(
                "unknown dataset layout `{other}` (expected drive, stare or plain)"
            ))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub augment: Augment,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset: String,
    pub root: PathBuf,
    pub size: (usize, usize),
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

pub const DEFAULT_SIZE: (usize, usize) = (512, 512);

/// Image/mask pairs of one split directory, matched by file stem.
pub fn find_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let pngs = |sub: &str| -> Result<BTreeMap<String, PathBuf>> {
        let d = dir.join(sub);
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            let is_png = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
                out.insert(stem.to_string(), path.clone());
            }
        }
        Ok(out)
    };
    let images = pngs("images")?;
    let mut masks = pngs("masks")?;
    let orphans: Vec<&str> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Data(format!(
            "{}: images without a matching mask: {}",
            dir.display(),
            orphans.join(", ")
        )));
    }
    Ok(images
        .into_iter()
        .map(|(stem, img)| (img, masks.remove(&stem).expect("checked")))
        .collect())
}

/// Scans `<root>/train` (required) and `<root>/test` (optional), expanding
/// each training pair by the layout's augmentations.
pub fn build_manifest(root: impl AsRef<Path>, layout: Layout, seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    let train = find_pairs(&root.join("train"))?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training pairs under {}",
            root.join("train").display()
        )));
    }
    let expansion = layout.expansion();
    let mut records = Vec::with_capacity(train.len() * expansion.len());
    for (image, mask) in &train {
        for &augment in &expansion {
            records.push(SampleRecord {
                image: image.clone(),
                mask: mask.clone(),
                augment,
                split: Split::Train,
            });
        }
    }
    let test_dir = root.join("test");
    if test_dir.is_dir() {
        for (image, mask) in find_pairs(&test_dir)? {
            records.push(SampleRecord {
                image,
                mask,
                augment: Augment::Identity,
                split: Split::Test,
            });
        }
    }
    Ok(Manifest {
        dataset: layout.as_str().to_string(),
        root: root.to_path_buf(),
        size: DEFAULT_SIZE,
        seed,
        records,
    })
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn split(&self, split: Split) -> Vec<SampleRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Moves a seeded `fraction` of the training records to the validation
    /// split. At least one record stays on each side when there are two or
    /// more training records.
    pub fn hold_out(&mut self, fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must be in [0, 1), got {fraction}"
            )));
        }
        let mut train: Vec<usize> = (0..self.records.len())
            .filter(|&i| self.records[i].split == Split::Train)
            .collect();
        let n = train.len();
        let mut k = (fraction * n as f64).round() as usize;
        if fraction > 0.0 && n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for &i in &train[..k.min(n)] {
            self.records[i].split = Split::Val;
        }
        Ok(())
    }

    /// Line-oriented text form: `#`-prefixed header lines, then one
    /// tab-separated `image mask descriptor split` line per record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dataset={}", self.dataset);
        let _ = writeln!(out, "# root={}", self.root.display());
        let _ = writeln!(out, "# size={}x{}", self.size.0, self.size.1);
        let _ = writeln!(out, "# seed={}", self.seed);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.image.display(),
                r.mask.display(),
                r.augment,
                r.split.as_str()
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Manifest {
            dataset: String::new(),
            root: PathBuf::new(),
            size: DEFAULT_SIZE,
            seed: 0,
            records: Vec::new(),
        };
        for (no, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Config { line: no + 1, msg };
            if let Some(header) = line.strip_prefix('#') {
                let Some((k, v)) = header.trim().split_once('=') else {
                    continue;
                };
                match k {
                    "dataset" => m.dataset = v.to_string(),
                    "root" => m.root = PathBuf::from(v),
                    "size" => {
                        let (h, w) = v
                            .split_once('x')
                            .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
                            .ok_or_else(|| err(format!("bad size `{v}`")))?;
                        m.size = (h, w);
                    }
                    "seed" => m.seed = v.parse().map_err(|_| err(format!("bad seed `{v}`")))?,
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, mask, aug, split] = fields[..] else {
                return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            m.records.push(SampleRecord {
                image: image.into(),
                mask: mask.into(),
                augment: aug.parse().map_err(|e: Error| err(e.to_string()))?,
                split: split.parse().map_err(|e: Error| err(e.to_string()))?,
            });
        }
        Ok(m)
    }
}

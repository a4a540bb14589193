use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fileio::{read, write_atomic};
use crate::{Error, Result};

/// Item indices of a train/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle of `0..n`; the first `round(n * train_fraction)` items
/// train, the rest test.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_fraction).round() as usize;
    let test = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        test,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            _ => Err(Error::Config(format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: SplitTag,
}

/// Volume files with their split, stored as `path,split` lines. A leading
/// `# seed N` comment records the split seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    /// Tags `paths[i]` by membership of `i` in `split`, in path order.
    pub fn from_split(paths: &[PathBuf], split: &Split) -> Result<Self> {
        let n = split.train.len() + split.test.len();
        if n != paths.len() {
            return Err(Error::Config(format!(
                "split covers {n} items but {} paths were given",
                paths.len()
            )));
        }
        let mut tags = vec![SplitTag::Test; n];
        for &i in &split.train {
            tags[i] = SplitTag::Train;
        }
        let entries = paths
            .iter()
            .zip(tags)
            .map(|(p, split)| ManifestEntry {
                path: p.clone(),
                split,
            })
            .collect();
        Ok(Self {
            entries,
            seed: split.seed,
        })
    }

    pub fn paths(&self, tag: SplitTag) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |e| e.split == tag)
            .map(|e| e.path.as_path())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# seed {}\n", self.seed);
        for e in &self.entries {
            s.push_str(&format!("{},{}\n", e.path.display(), e.split));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = 0;
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("seed") {
                    seed = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad manifest seed line {line:?}")))?;
                }
                continue;
            }
            let (path, tag) = line.rsplit_once(',').ok_or_else(|| {
                Error::Config(format!("manifest line {line:?} is not path,split"))
            })?;
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                split: tag.parse()?,
            });
        }
        Ok(Self { entries, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(text)
    }
}

//! Dataset ingestion: label manifest, fold partition and sample loading.

mod image;
mod synth;

pub use self::image::{ImageCache, Sample, IMAGENET_MEAN, IMAGENET_STD};
pub use self::synth::{synth_dataset, SynthParams};

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::AugmentConfig;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MANIFEST_HEADER: [&str; 3] = ["image_path", "score", "fold"];

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// Absolute or manifest-relative path, resolved at load time.
    pub image_path: PathBuf,
    pub score: f64,
    /// 1-based fold id.
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<Record>,
    pub folds: usize,
}

#[derive(Deserialize)]
struct Row {
    image_path: String,
    score: f64,
    fold: usize,
}

impl Manifest {
    /// Parses and validates a manifest with `folds` folds. Image paths are
    /// resolved against the manifest's directory.
    pub fn load(path: &Path, folds: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, folds)
    }

    pub fn parse(text: &str, path: &Path, folds: usize) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let parse_err = |line: usize, msg: String| Error::ManifestParse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(parse_err(1, format!("expected header {}", MANIFEST_HEADER.join(","))));
        }
        let mut records = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = records.len() + 2;
            if !(1.0..=5.0).contains(&row.score) {
                return Err(Error::ScoreOutOfRange {
                    path: path.to_path_buf(),
                    line,
                    score: row.score,
                });
            }
            if row.fold == 0 || row.fold > folds {
                return Err(parse_err(line, format!("fold {} is not in 1..={folds}", row.fold)));
            }
            records.push(Record {
                image_path: base.join(row.image_path),
                score: row.score,
                fold: row.fold,
            });
        }
        if records.is_empty() {
            return Err(Error::EmptyManifest(path.to_path_buf()));
        }
        for k in 1..=folds {
            if !records.iter().any(|r| r.fold == k) {
                return Err(Error::EmptyFold(k));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            records,
            folds,
        })
    }

    /// Writes the manifest with paths relative to `dir` where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.records {
            let rel = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
            w.write_record([
                rel.to_string_lossy().as_ref(),
                &r.score.to_string(),
                &r.fold.to_string(),
            ])
            .map_err(|e| Error::io(path, e.into()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Partitions records into `(train, test)` by fold id, preserving order.
    pub fn fold_split(&self, test_fold: usize) -> Result<(Vec<Record>, Vec<Record>)> {
        if test_fold == 0 || test_fold > self.folds {
            return Err(Error::InvalidFold {
                fold: test_fold,
                folds: self.folds,
            });
        }
        let (test, train): (Vec<Record>, Vec<Record>) = self.records.iter().cloned().partition(|r| r.fold == test_fold);
        if train.is_empty() {
            return Err(Error::EmptyTrainSplit(test_fold));
        }
        Ok((train, test))
    }
}

/// Loads samples on a dedicated pool of `workers` threads and returns them
/// in request order regardless of completion order.
#[derive(Debug)]
pub struct Loader {
    pub cache: ImageCache,
    pool: rayon::ThreadPool,
}

impl Loader {
    pub fn new(image_size: usize, workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} loader threads: {e}")))?;
        Ok(Self {
            cache: ImageCache::new(image_size),
            pool,
        })
    }

    /// `rng_for(i)` supplies the augmentation stream of the `i`-th request.
    pub fn load<F: Scalar>(
        &self,
        records: &[&Record],
        train_mode: bool,
        aug: &AugmentConfig,
        rng_for: impl Fn(usize) -> ChaCha8Rng + Sync,
    ) -> Result<Vec<Sample<F>>> {
        self.pool.install(|| {
            records
                .par_iter()
                .enumerate()
                .map(|(i, r)| self.cache.load_sample(r, train_mode, aug, &mut rng_for(i)))
                .collect()
        })
    }

    /// Evaluation-path samples (no augmentation).
    pub fn load_eval<F: Scalar>(&self, records: &[Record]) -> Result<Vec<Sample<F>>> {
        let refs: Vec<&Record> = records.iter().collect();
        let aug = AugmentConfig::disabled();
        self.load(&refs, false, &aug, |_| rand::SeedableRng::seed_from_u64(0))
    }
}

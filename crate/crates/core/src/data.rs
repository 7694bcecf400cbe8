//! Labelled samples with a k-fold partition.
//!
//! Text format: one sample per line, whitespace-separated feature values
//! followed by an integer class label. Blank lines and `#` comments are
//! ignored.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1797 8×8 handwritten digits, pixel intensities 0–16, 10 classes.
pub const BUNDLED_DIGITS: &str = include_str!("../data/digits.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[height, width]` for images, `[n]` otherwise.
    pub features: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_count: usize,
    folds: Vec<usize>,
    fold_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= class_count) {
            return Err(Error::Config(format!(
                "label {} out of range for {class_count} classes",
                s.label
            )));
        }
        if let Some(first) = samples.first() {
            let width = first.features.len();
            if samples.iter().any(|s| s.features.len() != width) {
                return Err(Error::Config(
                    "samples have differing feature counts".into(),
                ));
            }
        }
        let n = samples.len();
        Ok(Self {
            samples,
            class_count,
            folds: vec![0; n],
            fold_count: 1,
        })
    }

    /// Parses the text format. `image` reshapes each feature row to
    /// `[height, width]`; every value is multiplied by `feature_scale`.
    pub fn parse(
        text: &str,
        origin: &Path,
        image: Option<(usize, usize)>,
        feature_scale: f64,
    ) -> Result<Self> {
        let mut samples = Vec::new();
        let mut width = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::parse(origin, format!("line {}: {msg}", lineno + 1));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let (label, feats) = tokens.split_last().expect("non-empty line");
            let label: usize = label
                .parse()
                .map_err(|_| err(format!("bad label `{label}`")))?;
            let values = feats
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(|v| v * feature_scale)
                        .ok_or_else(|| err(format!("bad feature `{t}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(err("no features".into()));
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(err(format!(
                        "expected {w} features, found {}",
                        values.len()
                    )))
                }
                _ => {}
            }
            let shape = match image {
                Some((h, w)) if h * w == values.len() => vec![h, w],
                Some((h, w)) => {
                    return Err(err(format!(
                        "{} features do not form a {h}x{w} image",
                        values.len()
                    )))
                }
                None => vec![values.len()],
            };
            samples.push(Sample {
                features: Tensor::new(values, shape)?,
                label,
            });
        }
        let class_count = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        Self::new(samples, class_count)
    }

    pub fn load(path: &Path, image: Option<(usize, usize)>, feature_scale: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, image, feature_scale)
    }

    /// The bundled 8×8 digits, pixels scaled to `[0, 1]`.
    pub fn bundled_digits() -> Self {
        Self::parse(
            BUNDLED_DIGITS,
            Path::new("bundled:digits"),
            Some((8, 8)),
            1.0 / 16.0,
        )
        .expect("bundled dataset parses")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Shuffles sample positions with `seed` and deals them round-robin
    /// into `k` folds, so fold sizes differ by at most one.
    pub fn assign_folds(&mut self, k: usize, seed: u64) -> Result<()> {
        if k < 1 {
            return Err(Error::Config("fold count must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (pos, &i) in order.iter().enumerate() {
            self.folds[i] = pos % k;
        }
        self.fold_count = k;
        Ok(())
    }

    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.folds[i]
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(train, held_out)` sample indices; `None` trains on everything.
    pub fn split(&self, fold: Option<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
        match fold {
            None => Ok(((0..self.len()).collect(), Vec::new())),
            Some(f) if f >= self.fold_count => Err(Error::Config(format!(
                "fold {f} out of range for {} folds",
                self.fold_count
            ))),
            Some(f) => Ok((0..self.len()).partition(|&i| self.folds[i] != f)),
        }
    }

    /// Row-major `[indices.len(), feature_len]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let width = self.feature_len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.samples[i].features.data());
        }
        Tensor::new(data, vec![indices.len(), width])
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }
}

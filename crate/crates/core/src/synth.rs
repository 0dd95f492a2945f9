//! Synthetic long-tailed multi-label datasets.
//!
//! Geometry: each class owns a unit-norm random prototype; a sample's feature
//! is the mean of its classes' prototypes plus isotropic Gaussian noise.
//! Labels: cardinality is `1 + Binomial(L-1, (avg-1)/(L-1))`, classes are
//! drawn without replacement under power-law weights `rank^(-tail_exponent)`,
//! so low ranks dominate and high ranks form the tail.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_algebra::LabelSet;
use crate::seed::mix;

/// Generation parameters. `avg_labels` must lie in `[1, num_classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_samples: usize,
    pub feature_dim: usize,
    /// Expected label-set cardinality.
    pub avg_labels: f64,
    /// Power-law exponent of the class weights; 0 gives a uniform head.
    pub tail_exponent: f64,
    /// Scale of the Gaussian noise added at generation time and again by
    /// [`augment_pair`] during training.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            num_samples: 2000,
            feature_dim: 32,
            avg_labels: 2.5,
            tail_exponent: 1.5,
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidConfig("num_samples must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if !self.avg_labels.is_finite()
            || self.avg_labels < 1.0
            || self.avg_labels > self.num_classes as f64
        {
            return Err(Error::InvalidConfig(format!(
                "avg_labels must lie in [1, {}], got {}",
                self.num_classes, self.avg_labels
            )));
        }
        if !self.tail_exponent.is_finite() || self.tail_exponent < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tail_exponent must be non-negative, got {}",
                self.tail_exponent
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Unnormalized class weight of `rank` (0 is the head).
    pub fn class_weight(&self, rank: usize) -> f64 {
        ((rank + 1) as f64).powf(-self.tail_exponent)
    }
}

/// Features, label sets, and (when generated here) the prototypes behind
/// them. `augment_sigma` is the noise scale [`augment_pair`] should use for
/// this data; imported datasets default it to 0.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<LabelSet>,
    pub prototypes: Option<Array2<f64>>,
    pub augment_sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn universe_size(&self) -> usize {
        self.labels.first().map_or(0, |l| l.universe_size())
    }

    /// Occurrences of each class across all label sets.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.universe_size()];
        for l in &self.labels {
            for c in l.members() {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn mean_cardinality(&self) -> f64 {
        self.labels.iter().map(|l| l.len()).sum::<usize>() as f64 / self.len() as f64
    }

    /// One `{"features": […], "labels": […]}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for (row, labels) in self.features.rows().into_iter().zip(&self.labels) {
            let record = SampleRecord {
                features: row.to_vec(),
                labels: labels.to_vec(),
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the JSONL form. The label universe is inferred as one past the
    /// largest class index present; prototypes are unknown and
    /// `augment_sigma` starts at 0.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut records = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Degenerate("dataset file has no samples".into()));
        }
        let dim = records[0].features.len();
        if dim == 0 || records.iter().any(|r| r.features.len() != dim) {
            return Err(Error::Parse("inconsistent feature widths".into()));
        }
        let universe = records
            .iter()
            .flat_map(|r| r.labels.iter())
            .max()
            .map(|m| m + 1)
            .ok_or(Error::EmptyLabelSet)?;
        let labels = records
            .iter()
            .map(|r| LabelSet::from_indices(universe, r.labels.iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = records.into_iter().flat_map(|r| r.features).collect();
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let rows = flat.len() / dim;
        let features =
            Array2::from_shape_vec((rows, dim), flat).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Dataset {
            features,
            labels,
            prototypes: None,
            augment_sigma: 0.0,
        })
    }
}

fn unit_normal_row<R: Rng>(rng: &mut R, dim: usize) -> Array1<f64> {
    loop {
        let row = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = row.dot(&row).sqrt();
        if norm > 1e-9 {
            return row / norm;
        }
    }
}

/// Draws `count` distinct indices, each step proportional to the remaining
/// weights. Returned sorted.
fn weighted_without_replacement<R: Rng>(rng: &mut R, weights: &[f64], count: usize) -> Vec<usize> {
    let mut active: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = active.iter().map(|(_, w)| *w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = active.len() - 1;
        for (j, (_, w)) in active.iter().enumerate() {
            if u < *w {
                pick = j;
                break;
            }
            u -= *w;
        }
        chosen.push(active.swap_remove(pick).0);
    }
    chosen.sort_unstable();
    chosen
}

/// Generates a dataset. Fully determined by its [`SynthSpec`], seed included.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[spec.seed, 0xDA7A]));
    let classes = spec.num_classes;

    let mut prototypes = Array2::<f64>::zeros((classes, spec.feature_dim));
    for c in 0..classes {
        prototypes
            .row_mut(c)
            .assign(&unit_normal_row(&mut rng, spec.feature_dim));
    }

    let weights: Vec<f64> = (0..classes).map(|r| spec.class_weight(r)).collect();
    let cardinality_p = if classes > 1 {
        (spec.avg_labels - 1.0) / (classes - 1) as f64
    } else {
        0.0
    };
    let binomial = Binomial::new((classes - 1) as u64, cardinality_p)
        .map_err(|e| Error::InvalidConfig(format!("label cardinality distribution: {e}")))?;

    let mut features = Array2::<f64>::zeros((spec.num_samples, spec.feature_dim));
    let mut labels = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let cardinality = 1 + binomial.sample(&mut rng) as usize;
        let chosen = weighted_without_replacement(&mut rng, &weights, cardinality);
        let mut row = Array1::<f64>::zeros(spec.feature_dim);
        for &c in &chosen {
            row += &prototypes.row(c);
        }
        row /= chosen.len() as f64;
        for k in 0..spec.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features[[i, k]] = row[k] + spec.noise_sigma * noise;
        }
        labels.push(LabelSet::from_indices(classes, chosen)?);
    }

    Ok(Dataset {
        features,
        labels,
        prototypes: Some(prototypes),
        augment_sigma: spec.noise_sigma,
    })
}

/// Two stochastic views of one feature row: the row plus fresh Gaussian noise
/// of scale `sigma` each. With `sigma` 0 both views equal the input.
pub fn augment_pair_with_rng<R: Rng>(
    row: ArrayView1<'_, f64>,
    sigma: f64,
    rng: &mut R,
) -> (Array1<f64>, Array1<f64>) {
    assert!(
        sigma >= 0.0,
        "augmentation noise scale must be non-negative"
    );
    let mut view = || {
        Array1::from_shape_fn(row.len(), |k| {
            let noise: f64 = rng.sample(StandardNormal);
            row[k] + sigma * noise
        })
    };
    let a = view();
    let b = view();
    (a, b)
}

/// Seeded convenience form of [`augment_pair_with_rng`].
pub fn augment_pair(row: ArrayView1<'_, f64>, sigma: f64, seed: u64) -> (Array1<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_pair_with_rng(row, sigma, &mut rng)
}

//! Contrastive losses over batches of embedded, multi-labelled samples.
//!
//! Every strategy here instantiates one scaffold. For anchor `i` with
//! positive set `P(i)` and logits `d_{ia} = z_i · z_a / τ`, the per-anchor
//! loss is
//!
//! ```text
//! L_i = -Σ_{p ∈ P(i)} c_{ip} · d_{ip}  +  m_i · logsumexp_{a ≠ i}(d_{ia})  +  k_i
//! ```
//!
//! and the strategies differ only in `P(i)`, the positive coefficients
//! `c_{ip}`, the log-sum-exp multiplier `m_i`, and the offset `k_i`:
//!
//! * `All`: positives share the anchor's exact label set; `c = 1/|P|`, `m = 1`.
//! * `Any`: positives share at least one label; same coefficients.
//! * `MulSupCon`: one term per anchor label, each averaging over the samples
//!   carrying that label, so `c_{ip}` sums `1/|P_l|` across shared labels and
//!   `m` counts the anchor's labels with nonempty positive sets. The batch
//!   total is normalized by the summed label cardinality of all anchors.
//! * `SimDis`: positives as in `Any`, but each pair is weighted by the
//!   similarity/dissimilarity product from [`crate::label_algebra`], attached
//!   per [`Placement`].
//!
//! Gradients with respect to the embeddings come from the same scaffold:
//! with `s = softmax_{a≠i}(d_{i·})`,
//!
//! ```text
//! ∂L_i/∂d_{ia} = m_i · s_a - c_{ia}
//! ```
//!
//! chained through `d_{ia} = z_i · z_a / τ` and accumulated in anchor order
//! so results are bit-reproducible.
//!
//! The batch total (and the gradient, which differentiates it) averages the
//! per-anchor losses: over the anchors that have positives for `All`, `Any`,
//! and `SimDis`, and over the summed label cardinality for `MulSupCon`.
//! Either way the magnitude is invariant to batch size, so one learning
//! rate works across batch shapes and strategies.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_algebra::{pair_factors, LabelSet, PenaltyKind};

/// Where the pair weight enters the weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Weight multiplies the exponentiated logit inside the log. Splits into
    /// a constant offset, so the gradient matches `Any` exactly.
    InsideLog,
    /// Weight multiplies the whole log-softmax term. This is the variant
    /// whose gradient actually rescales pull strength per pair.
    OutsideLog,
    /// Weight rescales the anchor-positive logit before the log-softmax; the
    /// denominator stays unweighted.
    TemperatureScaled,
}

impl Placement {
    pub const ALL: [Placement; 3] = [
        Placement::InsideLog,
        Placement::OutsideLog,
        Placement::TemperatureScaled,
    ];

    fn slug(&self) -> &'static str {
        match self {
            Placement::InsideLog => "inside_log",
            Placement::OutsideLog => "outside_log",
            Placement::TemperatureScaled => "temperature_scaled",
        }
    }
}

/// Positive-set strategy for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Positives must carry the anchor's exact label set.
    All,
    /// Positives share at least one label with the anchor.
    Any,
    /// One contrastive term per anchor label over that label's carriers.
    #[serde(rename = "mulsupcon")]
    MulSupCon,
    /// Overlap positives, re-weighted by the similarity/dissimilarity product.
    #[serde(rename = "simdis")]
    SimDis {
        placement: Placement,
        #[serde(default)]
        penalty: PenaltyKind,
    },
}

impl Strategy {
    /// The six variants exercised by verification sweeps: the three
    /// baselines plus one weighted variant per placement.
    pub fn verification_set() -> Vec<Strategy> {
        let mut out = vec![Strategy::All, Strategy::Any, Strategy::MulSupCon];
        for placement in Placement::ALL {
            out.push(Strategy::SimDis {
                placement,
                penalty: PenaltyKind::Reciprocal,
            });
        }
        out
    }

    /// Stable, filesystem-safe name.
    pub fn slug(&self) -> String {
        match self {
            Strategy::All => "all".into(),
            Strategy::Any => "any".into(),
            Strategy::MulSupCon => "mulsupcon".into(),
            Strategy::SimDis { placement, penalty } => {
                let base = format!("simdis_{}", placement.slug());
                match penalty {
                    PenaltyKind::Reciprocal => base,
                    PenaltyKind::ExponentialDecay { .. } => format!("{base}_exp"),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::SimDis { penalty, .. } => penalty.validate(),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::All => write!(f, "all"),
            Strategy::Any => write!(f, "any"),
            Strategy::MulSupCon => write!(f, "mulsupcon"),
            Strategy::SimDis { placement, penalty } => {
                write!(f, "simdis:{}", placement.slug())?;
                if let PenaltyKind::ExponentialDecay { alpha } = penalty {
                    write!(f, ":exp({alpha})")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `all`, `any`, `mulsupcon`, `simdis` (defaulting to
    /// `inside_log`), or `simdis:<placement>`; case-insensitive, `-` and `_`
    /// interchangeable. The penalty is always the reciprocal here; the
    /// exponential form is reachable only through configuration files.
    fn from_str(text: &str) -> Result<Self> {
        let norm = text.trim().to_ascii_lowercase().replace('-', "_");
        let simdis = |placement| Strategy::SimDis {
            placement,
            penalty: PenaltyKind::Reciprocal,
        };
        match norm.as_str() {
            "all" => Ok(Strategy::All),
            "any" => Ok(Strategy::Any),
            "mulsupcon" => Ok(Strategy::MulSupCon),
            "simdis" | "simdis:inside_log" => Ok(simdis(Placement::InsideLog)),
            "simdis:outside_log" => Ok(simdis(Placement::OutsideLog)),
            "simdis:temperature_scaled" => Ok(simdis(Placement::TemperatureScaled)),
            other => Err(Error::Parse(format!(
                "unknown strategy `{other}`; expected all, any, mulsupcon, \
                 simdis[:inside_log|:outside_log|:temperature_scaled]"
            ))),
        }
    }
}

/// A batch of embeddings with one label set per row and a shared temperature.
///
/// Rows are used as-is: normalize beforehand if unit-norm embeddings are
/// wanted. Construction validates shapes, finiteness, a positive temperature,
/// and a single label universe.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    embeddings: Array2<f64>,
    labels: Vec<LabelSet>,
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct BatchWire {
    temperature: f64,
    labels: Vec<Vec<usize>>,
    embeddings: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Array2<f64>, labels: Vec<LabelSet>, temperature: f64) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} embedding rows but {} label sets",
                embeddings.nrows(),
                labels.len()
            )));
        }
        if embeddings.nrows() < 2 {
            return Err(Error::InvalidConfig(
                "a contrastive batch needs at least two samples".into(),
            ));
        }
        if embeddings.ncols() == 0 {
            return Err(Error::InvalidConfig("embeddings must have width".into()));
        }
        if !embeddings.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding entries".into()));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        let universe = labels[0].universe_size();
        for l in &labels[1..] {
            if l.universe_size() != universe {
                return Err(Error::UniverseMismatch {
                    left: universe,
                    right: l.universe_size(),
                });
            }
        }
        Ok(Self {
            embeddings,
            labels,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    pub fn embedding(&self, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(i)
    }

    /// Same batch with different embedding values (shape must match).
    pub fn with_embeddings(&self, embeddings: Array2<f64>) -> Result<Self> {
        Self::new(embeddings, self.labels.clone(), self.temperature)
    }

    /// Serializes to the wire form:
    /// `{"temperature": t, "labels": [[…]], "embeddings": [[…]]}`.
    pub fn to_json(&self) -> String {
        let wire = BatchWire {
            temperature: self.temperature,
            labels: self.labels.iter().map(|l| l.to_vec()).collect(),
            embeddings: self
                .embeddings
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        };
        serde_json::to_string(&wire).expect("batch wire form serializes")
    }

    /// Parses the wire form. The label universe is inferred as one past the
    /// largest class index present.
    pub fn from_json(text: &str) -> Result<Self> {
        let wire: BatchWire = serde_json::from_str(text)?;
        let universe = wire
            .labels
            .iter()
            .flatten()
            .max()
            .map(|m| m + 1)
            .ok_or(Error::EmptyLabelSet)?;
        let labels = wire
            .labels
            .into_iter()
            .map(|l| LabelSet::from_indices(universe, l))
            .collect::<Result<Vec<_>>>()?;
        let rows = wire.embeddings.len();
        let cols = wire.embeddings.first().map_or(0, |r| r.len());
        if wire.embeddings.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("ragged embedding rows".into()));
        }
        let flat: Vec<f64> = wire.embeddings.into_iter().flatten().collect();
        let embeddings =
            Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(embeddings, labels, wire.temperature)
    }
}

/// Loss value, per-anchor breakdown, and embedding gradient for one batch.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// Batch loss: the per-anchor losses averaged over contributing anchors,
    /// except for `MulSupCon` where the sum is normalized by the batch's
    /// total label cardinality instead.
    pub total: f64,
    /// `(anchor index, unnormalized per-anchor loss)` for anchors that had
    /// at least one positive.
    pub per_anchor: Vec<(usize, f64)>,
    /// `∂ total / ∂ embeddings`, same shape as the batch embeddings.
    pub gradient: Array2<f64>,
    /// Anchors skipped because the strategy found no positives for them.
    pub skipped: Vec<usize>,
}

/// Positive set of `anchor` under `strategy`, as `(sample index,
/// multiplicity)` in ascending index order. Multiplicity is 1 except for
/// `MulSupCon`, where a positive is counted once per shared label.
pub fn positive_set(
    batch: &ContrastiveBatch,
    strategy: Strategy,
    anchor: usize,
) -> Result<Vec<(usize, usize)>> {
    strategy.validate()?;
    let n = batch.len();
    if anchor >= n {
        return Err(Error::AnchorOutOfRange { anchor, len: n });
    }
    let labels = batch.labels();
    let mut out = Vec::new();
    for p in 0..n {
        if p == anchor {
            continue;
        }
        let shared = labels[anchor].intersection_len(&labels[p])?;
        let multiplicity = match strategy {
            Strategy::All => usize::from(labels[anchor] == labels[p]),
            Strategy::Any | Strategy::SimDis { .. } => usize::from(shared > 0),
            Strategy::MulSupCon => shared,
        };
        if multiplicity > 0 {
            out.push((p, multiplicity));
        }
    }
    Ok(out)
}

/// One anchor's loss written as coefficients on the shared scaffold.
struct AnchorTerm {
    /// Coefficient on each sample's logit; zero outside the positive set.
    coeff: Vec<f64>,
    /// Multiplier on the anchor's log-sum-exp over all non-anchor samples.
    lse_coeff: f64,
    /// Embedding-independent offset.
    constant: f64,
}

fn anchor_term(
    batch: &ContrastiveBatch,
    strategy: Strategy,
    i: usize,
) -> Result<Option<AnchorTerm>> {
    let n = batch.len();
    let labels = batch.labels();
    let mut coeff = vec![0.0; n];

    match strategy {
        Strategy::All | Strategy::Any => {
            let positives: Vec<usize> = (0..n)
                .filter(|&p| p != i)
                .filter(|&p| match strategy {
                    Strategy::All => labels[p] == labels[i],
                    _ => labels[i].overlaps(&labels[p]).unwrap_or(false),
                })
                .collect();
            if positives.is_empty() {
                return Ok(None);
            }
            let c = 1.0 / positives.len() as f64;
            for p in positives {
                coeff[p] = c;
            }
            Ok(Some(AnchorTerm {
                coeff,
                lse_coeff: 1.0,
                constant: 0.0,
            }))
        }
        Strategy::MulSupCon => {
            let mut active_labels = 0usize;
            for label in labels[i].members() {
                let carriers: Vec<usize> = (0..n)
                    .filter(|&p| p != i && labels[p].contains(label))
                    .collect();
                if carriers.is_empty() {
                    continue;
                }
                active_labels += 1;
                let c = 1.0 / carriers.len() as f64;
                for p in carriers {
                    coeff[p] += c;
                }
            }
            if active_labels == 0 {
                return Ok(None);
            }
            Ok(Some(AnchorTerm {
                coeff,
                lse_coeff: active_labels as f64,
                constant: 0.0,
            }))
        }
        Strategy::SimDis { placement, penalty } => {
            let positives: Vec<usize> = (0..n)
                .filter(|&p| p != i && labels[i].overlaps(&labels[p]).unwrap_or(false))
                .collect();
            if positives.is_empty() {
                return Ok(None);
            }
            let inv = 1.0 / positives.len() as f64;
            let mut lse_coeff = match placement {
                Placement::OutsideLog => 0.0,
                _ => 1.0,
            };
            let mut constant = 0.0;
            for p in positives {
                let f = pair_factors(&labels[i], &labels[p], penalty)?;
                match placement {
                    Placement::InsideLog => {
                        coeff[p] = inv;
                        // ln(weight) computed from the factors to stay finite
                        // even when the weight itself underflows.
                        let ln_weight = f.similarity.ln()
                            + match penalty {
                                PenaltyKind::Reciprocal => -(1.0 + f.excess as f64).ln(),
                                PenaltyKind::ExponentialDecay { alpha } => -alpha * f.excess as f64,
                            };
                        constant -= inv * ln_weight;
                    }
                    Placement::OutsideLog => {
                        coeff[p] = inv * f.weight;
                        lse_coeff += inv * f.weight;
                    }
                    Placement::TemperatureScaled => {
                        coeff[p] = inv * f.weight;
                    }
                }
            }
            Ok(Some(AnchorTerm {
                coeff,
                lse_coeff,
                constant,
            }))
        }
    }
}

/// Computes the batch loss and its embedding gradient under `strategy`.
///
/// Anchors whose positive set is empty contribute nothing and are listed in
/// [`LossReport::skipped`]. Log-sum-exp terms are evaluated with max
/// subtraction, so any temperature and embedding scale that fits in `f64`
/// is handled without overflow.
pub fn evaluate(batch: &ContrastiveBatch, strategy: Strategy) -> Result<LossReport> {
    strategy.validate()?;
    let n = batch.len();
    let dim = batch.dim();
    let inv_tau = 1.0 / batch.temperature();
    let emb = batch.embeddings();

    let mut per_anchor = Vec::new();
    let mut skipped = Vec::new();
    let mut gradient = Array2::<f64>::zeros((n, dim));
    let mut total = 0.0;

    for i in 0..n {
        let Some(term) = anchor_term(batch, strategy, i)? else {
            skipped.push(i);
            continue;
        };

        // Logits of anchor i against every other sample.
        let zi = emb.row(i);
        let mut logits = vec![0.0; n];
        let mut max_logit = f64::NEG_INFINITY;
        for a in 0..n {
            if a == i {
                continue;
            }
            let mut dot = 0.0;
            for k in 0..dim {
                dot += zi[k] * emb[[a, k]];
            }
            logits[a] = dot * inv_tau;
            max_logit = max_logit.max(logits[a]);
        }
        let mut sum_exp = 0.0;
        for (a, &logit) in logits.iter().enumerate() {
            if a != i {
                sum_exp += (logit - max_logit).exp();
            }
        }
        let lse = max_logit + sum_exp.ln();

        let mut loss_i = term.constant + term.lse_coeff * lse;
        for (a, &c) in term.coeff.iter().enumerate() {
            if c != 0.0 {
                loss_i -= c * logits[a];
            }
        }
        per_anchor.push((i, loss_i));
        total += loss_i;

        // ∂L_i/∂logit_a = m·softmax_a − c_a, pushed through both rows of the
        // dot product.
        for a in 0..n {
            if a == i {
                continue;
            }
            let softmax = (logits[a] - lse).exp();
            let g_logit = term.lse_coeff * softmax - term.coeff[a];
            if g_logit == 0.0 {
                continue;
            }
            let scaled = g_logit * inv_tau;
            for k in 0..dim {
                gradient[[i, k]] += scaled * emb[[a, k]];
                gradient[[a, k]] += scaled * zi[k];
            }
        }
    }

    // Normalize total and gradient to a per-anchor (or, for the label-led
    // strategy, per-label) mean; per_anchor keeps the raw values.
    let scale = match strategy {
        Strategy::MulSupCon => {
            let label_mass: usize = batch.labels().iter().map(|l| l.len()).sum();
            1.0 / label_mass as f64
        }
        _ if !per_anchor.is_empty() => 1.0 / per_anchor.len() as f64,
        _ => 1.0,
    };
    if scale != 1.0 {
        total *= scale;
        gradient.mapv_inplace(|g| g * scale);
    }

    Ok(LossReport {
        total,
        per_anchor,
        gradient,
        skipped,
    })
}

/// Loss under one of the two unweighted baselines (`All` or `Any`).
pub fn loss_supcon(batch: &ContrastiveBatch, strategy: Strategy) -> Result<LossReport> {
    match strategy {
        Strategy::All | Strategy::Any => evaluate(batch, strategy),
        other => Err(Error::InvalidConfig(format!(
            "loss_supcon takes the all or any strategy, got {other}"
        ))),
    }
}

/// Loss with one contrastive term per anchor label.
pub fn loss_mulsupcon(batch: &ContrastiveBatch) -> Result<LossReport> {
    evaluate(batch, Strategy::MulSupCon)
}

/// Weighted loss with the given placement and penalty.
pub fn loss_simdis(
    batch: &ContrastiveBatch,
    placement: Placement,
    penalty: PenaltyKind,
) -> Result<LossReport> {
    evaluate(batch, Strategy::SimDis { placement, penalty })
}

/// Embedding gradient only.
pub fn gradient(batch: &ContrastiveBatch, strategy: Strategy) -> Result<Array2<f64>> {
    Ok(evaluate(batch, strategy)?.gradient)
}

//! Independent checks of the library's central claims: brute-force loss
//! oracles, finite-difference gradient checks, and exhaustive or randomized
//! verification of the weight bounds each relation guarantees.
//!
//! The oracle here deliberately shares no code with [`crate::losses`]: it
//! evaluates the textbook formulas with plain loops, plain `Vec` set
//! operations, and no log-sum-exp stabilization, so agreement between the two
//! is evidence rather than tautology.

use ndarray::Array2;
use num_rational::Ratio;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::label_algebra::{pair_factors, LabelSet, PenaltyKind, Relation};
use crate::losses::{evaluate, ContrastiveBatch, Placement, Strategy};
use crate::seed::mix;

/// Largest batch the brute-force oracle accepts. Without the log-sum-exp
/// trick its intermediate exponentials are only trustworthy for small,
/// bounded-logit batches, so the limit is part of the contract.
pub const ORACLE_MAX_SAMPLES: usize = 64;

/// Default finite-difference step for [`grad_check`].
pub const DEFAULT_FD_STEP: f64 = 2.5e-4;

/// Per-entry relative tolerance for gradient checks…
pub const GRAD_REL_TOL: f64 = 1e-6;
/// …with this absolute floor for near-zero entries.
pub const GRAD_ABS_FLOOR: f64 = 1e-8;

/// Outcome of one verified property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property_name: String,
    /// Number of inputs on which the property was asserted.
    pub trials: u64,
    pub failures: u64,
    /// Seed of the generator for randomized checks; `None` when the inputs
    /// were enumerated or supplied by the caller.
    pub seed: Option<u64>,
    /// Largest normalized error seen, for numeric properties.
    pub max_error: Option<f64>,
    /// First failing input, serialized as JSON for replay.
    pub first_counterexample: Option<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Accumulates trial outcomes for one property.
struct Accumulator {
    name: &'static str,
    trials: u64,
    failures: u64,
    first: Option<String>,
}

impl Accumulator {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            first: None,
        }
    }

    fn record(&mut self, holds: bool, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if !holds {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(describe());
            }
        }
    }

    fn finish(self, seed: Option<u64>) -> PropertyReport {
        PropertyReport {
            property_name: self.name.to_string(),
            trials: self.trials,
            failures: self.failures,
            seed,
            max_error: None,
            first_counterexample: self.first,
        }
    }
}

/// How [`check_theorems`] generates inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Every ordered pair of nonempty subsets; universe size 5 at most.
    Exhaustive,
    /// Seeded constructive generation, one assertion per property per trial;
    /// universe size 4 at least.
    Randomized { trials: u64, seed: u64 },
}

const PROP_DISJOINT: &str = "disjoint_pairs_have_zero_weight";
const PROP_EQUAL: &str = "equal_pairs_have_unit_weight";
const PROP_PARTIAL: &str = "partial_overlap_weight_is_interior";
const PROP_SUPERSET: &str = "superset_beats_partial_at_equal_cardinality";
const PROP_SUBSET: &str = "subset_beats_partial_at_bounded_excess";
const PROP_BANDS: &str = "relation_weight_bands";

fn zero() -> Ratio<u64> {
    Ratio::from_integer(0)
}

fn one() -> Ratio<u64> {
    Ratio::from_integer(1)
}

/// The band each relation pins the weight to: exactly 0 for disjoint pairs,
/// exactly 1 for equal pairs, strictly between for everything else. Together
/// the bands give the ordering
/// `0 = w(disjoint) < w(partial | superset | subset) < w(equal) = 1`.
fn weight_band_holds(relation: Relation, weight: Ratio<u64>) -> bool {
    match relation {
        Relation::Disjoint => weight == zero(),
        Relation::Equal => weight == one(),
        _ => weight > zero() && weight < one(),
    }
}

fn exact_weight(anchor: &LabelSet, sample: &LabelSet) -> Result<Ratio<u64>> {
    let factors = pair_factors(anchor, sample, PenaltyKind::Reciprocal)?;
    Ok(factors
        .exact()
        .expect("reciprocal penalty has exact factors")
        .weight)
}

fn pair_counterexample(universe: usize, anchor: &LabelSet, sample: &LabelSet) -> String {
    json!({
        "universe": universe,
        "anchor": anchor.to_vec(),
        "sample": sample.to_vec(),
    })
    .to_string()
}

fn triple_counterexample(
    universe: usize,
    anchor: &LabelSet,
    favored_key: &str,
    favored: &LabelSet,
    partial: &LabelSet,
) -> String {
    json!({
        "universe": universe,
        "anchor": anchor.to_vec(),
        favored_key: favored.to_vec(),
        "partial_sample": partial.to_vec(),
    })
    .to_string()
}

/// Checks the relation/weight guarantees under the reciprocal penalty, using
/// exact rational arithmetic throughout. Returns one report per property.
pub fn check_theorems(universe: usize, mode: CheckMode) -> Result<Vec<PropertyReport>> {
    match mode {
        CheckMode::Exhaustive => {
            if universe == 0 || universe > 5 {
                return Err(Error::InvalidConfig(format!(
                    "exhaustive enumeration supports universe sizes 1 through 5, got {universe}"
                )));
            }
            check_exhaustive(universe)
        }
        CheckMode::Randomized { trials, seed } => {
            if universe < 4 {
                return Err(Error::InvalidConfig(format!(
                    "randomized checks need a universe of at least 4, got {universe}"
                )));
            }
            check_randomized(universe, trials, seed)
        }
    }
}

fn all_nonempty_subsets(universe: usize) -> Vec<LabelSet> {
    (1u32..1 << universe)
        .map(|mask| {
            let indices = (0..universe).filter(|i| mask >> i & 1 == 1);
            LabelSet::from_indices(universe, indices).expect("nonempty subset")
        })
        .collect()
}

fn check_exhaustive(universe: usize) -> Result<Vec<PropertyReport>> {
    let sets = all_nonempty_subsets(universe);
    let mut disjoint = Accumulator::new(PROP_DISJOINT);
    let mut equal = Accumulator::new(PROP_EQUAL);
    let mut partial = Accumulator::new(PROP_PARTIAL);
    let mut superset = Accumulator::new(PROP_SUPERSET);
    let mut subset = Accumulator::new(PROP_SUBSET);
    let mut bands = Accumulator::new(PROP_BANDS);

    for anchor in &sets {
        // (sample, relation, weight, excess, cardinality) for this anchor.
        let mut rows = Vec::with_capacity(sets.len());
        for sample in &sets {
            let factors = pair_factors(anchor, sample, PenaltyKind::Reciprocal)?;
            let weight = factors.exact().expect("reciprocal is exact").weight;
            bands.record(weight_band_holds(factors.relation, weight), || {
                pair_counterexample(universe, anchor, sample)
            });
            match factors.relation {
                Relation::Disjoint => disjoint.record(weight == zero(), || {
                    pair_counterexample(universe, anchor, sample)
                }),
                Relation::Equal => equal.record(weight == one(), || {
                    pair_counterexample(universe, anchor, sample)
                }),
                Relation::PartialOverlap => partial
                    .record(weight > zero() && weight < one(), || {
                        pair_counterexample(universe, anchor, sample)
                    }),
                _ => {}
            }
            rows.push((
                sample,
                factors.relation,
                weight,
                factors.excess,
                factors.sample_len,
            ));
        }

        let partials: Vec<_> = rows
            .iter()
            .filter(|r| r.1 == Relation::PartialOverlap)
            .collect();
        for contained in rows.iter().filter(|r| r.1 == Relation::AnchorSuperset) {
            for p in partials.iter().filter(|p| p.4 == contained.4) {
                superset.record(contained.2 > p.2, || {
                    triple_counterexample(universe, anchor, "contained_sample", contained.0, p.0)
                });
            }
        }
        for containing in rows.iter().filter(|r| r.1 == Relation::AnchorSubset) {
            for p in partials.iter().filter(|p| containing.3 <= p.3) {
                subset.record(containing.2 > p.2, || {
                    triple_counterexample(universe, anchor, "containing_sample", containing.0, p.0)
                });
            }
        }
    }

    Ok(vec![
        disjoint.finish(None),
        equal.finish(None),
        partial.finish(None),
        superset.finish(None),
        subset.finish(None),
        bands.finish(None),
    ])
}

fn sample_from<R: Rng>(rng: &mut R, pool: &[usize], amount: usize) -> Vec<usize> {
    index::sample(rng, pool.len(), amount)
        .iter()
        .map(|i| pool[i])
        .collect()
}

fn complement(universe: usize, inside: &LabelSet) -> Vec<usize> {
    (0..universe).filter(|i| !inside.contains(*i)).collect()
}

fn build(universe: usize, indices: Vec<usize>) -> LabelSet {
    LabelSet::from_indices(universe, indices).expect("generator produces valid sets")
}

/// Label set with cardinality uniform in `[1, universe]` and members sampled
/// without replacement.
pub fn random_label_set<R: Rng>(rng: &mut R, universe: usize) -> LabelSet {
    let card = rng.gen_range(1..=universe);
    build(universe, index::sample(rng, universe, card).into_vec())
}

fn gen_disjoint<R: Rng>(rng: &mut R, universe: usize) -> (LabelSet, LabelSet) {
    let s_card = rng.gen_range(1..=universe - 1);
    let s = build(universe, index::sample(rng, universe, s_card).into_vec());
    let rest = complement(universe, &s);
    let t_card = rng.gen_range(1..=rest.len());
    let t = build(universe, sample_from(rng, &rest, t_card));
    (s, t)
}

fn gen_equal<R: Rng>(rng: &mut R, universe: usize) -> (LabelSet, LabelSet) {
    let s = random_label_set(rng, universe);
    let t = s.clone();
    (s, t)
}

/// Partial-overlap sample against `anchor`: overlap in `[1, |S|-1]`, excess
/// in `[1, universe-|S|]`. Requires `2 <= |S| <= universe-1`.
fn gen_partial_against<R: Rng>(rng: &mut R, universe: usize, anchor: &LabelSet) -> LabelSet {
    let inside = anchor.to_vec();
    let outside = complement(universe, anchor);
    let overlap = rng.gen_range(1..=inside.len() - 1);
    let excess = rng.gen_range(1..=outside.len());
    let mut indices = sample_from(rng, &inside, overlap);
    indices.extend(sample_from(rng, &outside, excess));
    build(universe, indices)
}

fn gen_partial<R: Rng>(rng: &mut R, universe: usize) -> (LabelSet, LabelSet) {
    let s_card = rng.gen_range(2..=universe - 1);
    let s = build(universe, index::sample(rng, universe, s_card).into_vec());
    let t = gen_partial_against(rng, universe, &s);
    (s, t)
}

/// Anchor, a sample strictly inside it, and a partial-overlap sample of the
/// same cardinality.
fn gen_superset_triple<R: Rng>(rng: &mut R, universe: usize) -> (LabelSet, LabelSet, LabelSet) {
    let s_card = rng.gen_range(3..=universe - 1);
    let s = build(universe, index::sample(rng, universe, s_card).into_vec());
    let inside = s.to_vec();
    let outside = complement(universe, &s);
    let t_card = rng.gen_range(2..=s_card - 1);
    let contained = build(universe, sample_from(rng, &inside, t_card));
    // Same cardinality, at least one member on each side of the anchor.
    let overlap_lo = t_card.saturating_sub(outside.len()).max(1);
    let overlap = rng.gen_range(overlap_lo..=t_card - 1);
    let mut indices = sample_from(rng, &inside, overlap);
    indices.extend(sample_from(rng, &outside, t_card - overlap));
    let partial = build(universe, indices);
    (s, contained, partial)
}

/// Anchor, a sample strictly containing it, and a partial-overlap sample
/// whose excess is at least as large.
fn gen_subset_triple<R: Rng>(rng: &mut R, universe: usize) -> (LabelSet, LabelSet, LabelSet) {
    let s_card = rng.gen_range(2..=universe - 1);
    let s = build(universe, index::sample(rng, universe, s_card).into_vec());
    let inside = s.to_vec();
    let outside = complement(universe, &s);
    let extra = rng.gen_range(1..=outside.len());
    let mut containing_indices = inside.clone();
    containing_indices.extend(sample_from(rng, &outside, extra));
    let containing = build(universe, containing_indices);
    let partial_excess = rng.gen_range(extra..=outside.len());
    let overlap = rng.gen_range(1..=inside.len() - 1);
    let mut partial_indices = sample_from(rng, &inside, overlap);
    partial_indices.extend(sample_from(rng, &outside, partial_excess));
    let partial = build(universe, partial_indices);
    (s, containing, partial)
}

fn check_randomized(universe: usize, trials: u64, seed: u64) -> Result<Vec<PropertyReport>> {
    let mut disjoint = Accumulator::new(PROP_DISJOINT);
    let mut equal = Accumulator::new(PROP_EQUAL);
    let mut partial = Accumulator::new(PROP_PARTIAL);
    let mut superset = Accumulator::new(PROP_SUPERSET);
    let mut subset = Accumulator::new(PROP_SUBSET);
    let mut bands = Accumulator::new(PROP_BANDS);

    for k in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 1, k]));
        let (s, t) = gen_disjoint(&mut rng, universe);
        disjoint.record(exact_weight(&s, &t)? == zero(), || {
            pair_counterexample(universe, &s, &t)
        });

        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 2, k]));
        let (s, t) = gen_equal(&mut rng, universe);
        equal.record(exact_weight(&s, &t)? == one(), || {
            pair_counterexample(universe, &s, &t)
        });

        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 3, k]));
        let (s, t) = gen_partial(&mut rng, universe);
        let w = exact_weight(&s, &t)?;
        partial.record(w > zero() && w < one(), || {
            pair_counterexample(universe, &s, &t)
        });

        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 4, k]));
        let (s, contained, straddling) = gen_superset_triple(&mut rng, universe);
        superset.record(
            exact_weight(&s, &contained)? > exact_weight(&s, &straddling)?,
            || triple_counterexample(universe, &s, "contained_sample", &contained, &straddling),
        );

        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 5, k]));
        let (s, containing, straddling) = gen_subset_triple(&mut rng, universe);
        subset.record(
            exact_weight(&s, &containing)? > exact_weight(&s, &straddling)?,
            || triple_counterexample(universe, &s, "containing_sample", &containing, &straddling),
        );

        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 6, k]));
        let s = random_label_set(&mut rng, universe);
        let t = random_label_set(&mut rng, universe);
        let relation = Relation::of(&s, &t)?;
        bands.record(weight_band_holds(relation, exact_weight(&s, &t)?), || {
            pair_counterexample(universe, &s, &t)
        });
    }

    Ok(vec![
        disjoint.finish(Some(seed)),
        equal.finish(Some(seed)),
        partial.finish(Some(seed)),
        superset.finish(Some(seed)),
        subset.finish(Some(seed)),
        bands.finish(Some(seed)),
    ])
}

/// Parameters for [`random_batch`].
#[derive(Debug, Clone, Copy)]
pub struct BatchParams {
    pub min_samples: usize,
    pub max_samples: usize,
    pub max_dim: usize,
    pub universe: usize,
    pub min_temperature: f64,
    pub max_temperature: f64,
}

impl Default for BatchParams {
    fn default() -> Self {
        Self {
            min_samples: 4,
            max_samples: 16,
            max_dim: 6,
            universe: 6,
            min_temperature: 0.2,
            max_temperature: 1.0,
        }
    }
}

/// Embedding matrix with entries uniform in `±1/√dim`, so every pairwise dot
/// product lies in `[-1, 1]` and the oracle's raw exponentials stay bounded.
pub fn random_embeddings(seed: u64, samples: usize, dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    Array2::from_shape_fn((samples, dim), |_| rng.gen_range(-1.0..1.0) * scale)
}

/// Seeded random batch: sample count, width, temperature, labels, and
/// embeddings all drawn from `params` ranges.
pub fn random_batch(seed: u64, params: &BatchParams) -> Result<ContrastiveBatch> {
    if params.min_samples < 2 || params.max_samples < params.min_samples {
        return Err(Error::InvalidConfig("bad sample range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xBA7C4]));
    let samples = rng.gen_range(params.min_samples..=params.max_samples);
    let dim = rng.gen_range(2..=params.max_dim.max(2));
    let temperature = rng.gen_range(params.min_temperature..=params.max_temperature);
    let labels: Vec<LabelSet> = (0..samples)
        .map(|_| random_label_set(&mut rng, params.universe))
        .collect();
    let scale = 1.0 / (dim as f64).sqrt();
    let embeddings = Array2::from_shape_fn((samples, dim), |_| rng.gen_range(-1.0..1.0) * scale);
    ContrastiveBatch::new(embeddings, labels, temperature)
}

/// Brute-force loss evaluation, straight from the formulas: explicit
/// denominators, per-pair `exp`/`ln` round trips, linear-scan set operations,
/// and no shared code with the production path.
pub fn oracle_loss(batch: &ContrastiveBatch, strategy: Strategy) -> Result<f64> {
    strategy.validate()?;
    let n = batch.len();
    if n > ORACLE_MAX_SAMPLES {
        return Err(Error::BatchTooLarge {
            len: n,
            max: ORACLE_MAX_SAMPLES,
        });
    }
    let labels: Vec<Vec<usize>> = batch.labels().iter().map(|l| l.to_vec()).collect();
    let emb = batch.embeddings();
    let dim = batch.dim();
    let tau = batch.temperature();

    let dot = |i: usize, j: usize| -> f64 { (0..dim).map(|k| emb[[i, k]] * emb[[j, k]]).sum() };
    let shared = |a: &[usize], b: &[usize]| -> usize { a.iter().filter(|x| b.contains(x)).count() };
    let denom = |i: usize| -> f64 {
        (0..n)
            .filter(|&a| a != i)
            .map(|a| (dot(i, a) / tau).exp())
            .sum()
    };

    let mut total = 0.0;
    let mut contributing = 0usize;
    match strategy {
        Strategy::All | Strategy::Any => {
            for i in 0..n {
                let positives: Vec<usize> = (0..n)
                    .filter(|&p| p != i)
                    .filter(|&p| match strategy {
                        Strategy::All => labels[p] == labels[i],
                        _ => shared(&labels[i], &labels[p]) > 0,
                    })
                    .collect();
                if positives.is_empty() {
                    continue;
                }
                let d = denom(i);
                let mut li = 0.0;
                for &p in &positives {
                    li -= ((dot(i, p) / tau).exp() / d).ln();
                }
                total += li / positives.len() as f64;
                contributing += 1;
            }
            if contributing > 0 {
                total /= contributing as f64;
            }
        }
        Strategy::MulSupCon => {
            let label_mass: usize = labels.iter().map(|l| l.len()).sum();
            for i in 0..n {
                for &label in &labels[i] {
                    let carriers: Vec<usize> = (0..n)
                        .filter(|&p| p != i && labels[p].contains(&label))
                        .collect();
                    if carriers.is_empty() {
                        continue;
                    }
                    let d = denom(i);
                    let mut term = 0.0;
                    for &p in &carriers {
                        term -= ((dot(i, p) / tau).exp() / d).ln();
                    }
                    total += term / carriers.len() as f64;
                }
            }
            total /= label_mass as f64;
        }
        Strategy::SimDis { placement, penalty } => {
            for i in 0..n {
                let positives: Vec<usize> = (0..n)
                    .filter(|&p| p != i && shared(&labels[i], &labels[p]) > 0)
                    .collect();
                if positives.is_empty() {
                    continue;
                }
                let d = denom(i);
                let mut li = 0.0;
                for &p in &positives {
                    let overlap = shared(&labels[i], &labels[p]);
                    let similarity = overlap as f64 / labels[i].len() as f64;
                    let weight = similarity * penalty.apply(labels[p].len() - overlap);
                    li -= match placement {
                        Placement::InsideLog => (weight * (dot(i, p) / tau).exp() / d).ln(),
                        Placement::OutsideLog => weight * ((dot(i, p) / tau).exp() / d).ln(),
                        Placement::TemperatureScaled => ((dot(i, p) * weight / tau).exp() / d).ln(),
                    };
                }
                total += li / positives.len() as f64;
                contributing += 1;
            }
            if contributing > 0 {
                total /= contributing as f64;
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("oracle loss".into()));
    }
    Ok(total)
}

/// Five-point central-difference gradient of the batch loss with respect to
/// each embedding entry. Fourth-order accurate, so a step near
/// [`DEFAULT_FD_STEP`] leaves both truncation and cancellation error far
/// below the gradient-check tolerance.
pub fn finite_difference_gradient(
    batch: &ContrastiveBatch,
    strategy: Strategy,
    step: f64,
) -> Result<Array2<f64>> {
    let mut numeric = Array2::<f64>::zeros(batch.embeddings().raw_dim());
    let eval_at = |row: usize, col: usize, offset: f64| -> Result<f64> {
        let mut shifted = batch.embeddings().clone();
        shifted[[row, col]] += offset;
        Ok(evaluate(&batch.with_embeddings(shifted)?, strategy)?.total)
    };
    for row in 0..batch.len() {
        for col in 0..batch.dim() {
            let f_p2 = eval_at(row, col, 2.0 * step)?;
            let f_p1 = eval_at(row, col, step)?;
            let f_m1 = eval_at(row, col, -step)?;
            let f_m2 = eval_at(row, col, -2.0 * step)?;
            numeric[[row, col]] = (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * step);
        }
    }
    Ok(numeric)
}

/// `(trials, failures, max normalized error, first failing cell)`.
type Discrepancy = (u64, u64, f64, Option<(usize, usize, f64, f64)>);

/// Entry-wise comparison of two gradients. An entry passes when
/// `|a - n| < GRAD_REL_TOL * max(|a|, |n|) + GRAD_ABS_FLOOR`; the reported
/// error is normalized so the pass condition reads `error < GRAD_REL_TOL`.
fn gradient_discrepancy(analytic: &Array2<f64>, numeric: &Array2<f64>) -> Discrepancy {
    let mut trials = 0;
    let mut failures = 0;
    let mut max_error = 0.0f64;
    let mut first = None;
    for ((row, col), &a) in analytic.indexed_iter() {
        let n = numeric[[row, col]];
        trials += 1;
        let error = (a - n).abs() / (a.abs().max(n.abs()) + GRAD_ABS_FLOOR / GRAD_REL_TOL);
        max_error = max_error.max(error);
        let pass = error < GRAD_REL_TOL;
        if !pass {
            failures += 1;
            if first.is_none() {
                first = Some((row, col, a, n));
            }
        }
    }
    (trials, failures, max_error, first)
}

/// Validates the analytic gradient against central finite differences of the
/// loss itself. `step` must lie in `[1e-7, 1e-3]`.
pub fn grad_check(
    batch: &ContrastiveBatch,
    strategy: Strategy,
    step: f64,
) -> Result<PropertyReport> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {step}"
        )));
    }
    let analytic = evaluate(batch, strategy)?.gradient;
    let numeric = finite_difference_gradient(batch, strategy, step)?;
    let (trials, failures, max_error, first) = gradient_discrepancy(&analytic, &numeric);
    Ok(PropertyReport {
        property_name: format!("gradient_matches_finite_differences/{}", strategy.slug()),
        trials,
        failures,
        seed: None,
        max_error: Some(max_error),
        first_counterexample: first.map(|(row, col, a, n)| {
            json!({
                "row": row,
                "col": col,
                "analytic": a,
                "numeric": n,
                "batch": serde_json::from_str::<serde_json::Value>(&batch.to_json())
                    .expect("batch json"),
            })
            .to_string()
        }),
    })
}

/// Gradient checks over seeded random batches, one aggregated report per
/// strategy in [`Strategy::verification_set`]. Batches use moderate
/// temperatures so finite-difference noise stays well under the tolerance.
pub fn grad_check_suite(seed: u64, batches_per_strategy: usize) -> Result<Vec<PropertyReport>> {
    let params = BatchParams {
        min_samples: 4,
        max_samples: 12,
        max_dim: 6,
        universe: 6,
        min_temperature: 0.4,
        max_temperature: 1.0,
    };
    let mut reports = Vec::new();
    for (strategy_idx, strategy) in Strategy::verification_set().into_iter().enumerate() {
        let mut trials = 0;
        let mut failures = 0;
        let mut max_error = 0.0f64;
        let mut first = None;
        for b in 0..batches_per_strategy {
            let batch = random_batch(mix(&[seed, strategy_idx as u64, b as u64]), &params)?;
            let report = grad_check(&batch, strategy, DEFAULT_FD_STEP)?;
            trials += report.trials;
            failures += report.failures;
            max_error = max_error.max(report.max_error.unwrap_or(0.0));
            if first.is_none() {
                first = report.first_counterexample;
            }
        }
        reports.push(PropertyReport {
            property_name: format!("gradient_matches_finite_differences/{}", strategy.slug()),
            trials,
            failures,
            seed: Some(seed),
            max_error: Some(max_error),
            first_counterexample: first,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_map(reports: &[PropertyReport]) -> Vec<(&str, u64, u64)> {
        reports
            .iter()
            .map(|r| (r.property_name.as_str(), r.trials, r.failures))
            .collect()
    }

    /// Trial counts at universe 3, derived by hand: 7 nonempty subsets give
    /// 49 ordered pairs splitting into 12 disjoint, 7 equal, 6 partial, 12
    /// contained, and 12 containing; the comparative properties admit 0 and
    /// 6 qualifying triples respectively.
    #[test]
    fn exhaustive_universe_three_counts() {
        let reports = check_theorems(3, CheckMode::Exhaustive).unwrap();
        assert_eq!(
            report_map(&reports),
            vec![
                (PROP_DISJOINT, 12, 0),
                (PROP_EQUAL, 7, 0),
                (PROP_PARTIAL, 6, 0),
                (PROP_SUPERSET, 0, 0),
                (PROP_SUBSET, 6, 0),
                (PROP_BANDS, 49, 0),
            ]
        );
    }

    #[test]
    fn exhaustive_passes_through_universe_five() {
        for universe in 1..=5 {
            let reports = check_theorems(universe, CheckMode::Exhaustive).unwrap();
            for r in &reports {
                assert!(
                    r.passed(),
                    "{} failed at universe {universe}",
                    r.property_name
                );
            }
            // All 4^u - …  ordered pairs get a band assertion.
            let pairs = ((1u64 << universe) - 1).pow(2);
            assert_eq!(reports.last().unwrap().trials, pairs);
        }
        assert!(check_theorems(6, CheckMode::Exhaustive).is_err());
        assert!(check_theorems(0, CheckMode::Exhaustive).is_err());
    }

    #[test]
    fn randomized_mode_is_deterministic_and_passes() {
        let mode = CheckMode::Randomized {
            trials: 500,
            seed: 11,
        };
        let a = check_theorems(20, mode).unwrap();
        let b = check_theorems(20, mode).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!(ra.passed(), "{}", ra.property_name);
            assert_eq!(ra.trials, 500);
            assert_eq!(ra.to_json_line(), rb.to_json_line());
        }
        assert!(check_theorems(
            3,
            CheckMode::Randomized {
                trials: 10,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn randomized_generators_hit_their_relations() {
        // Every constructive generator must actually produce the relation
        // whose guarantee it feeds.
        let universe = 8;
        for k in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[99, 1, k]));
            let (s, t) = gen_disjoint(&mut rng, universe);
            assert_eq!(Relation::of(&s, &t).unwrap(), Relation::Disjoint);

            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[99, 3, k]));
            let (s, t) = gen_partial(&mut rng, universe);
            assert_eq!(Relation::of(&s, &t).unwrap(), Relation::PartialOverlap);

            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[99, 4, k]));
            let (s, contained, straddling) = gen_superset_triple(&mut rng, universe);
            assert_eq!(
                Relation::of(&s, &contained).unwrap(),
                Relation::AnchorSuperset
            );
            assert_eq!(
                Relation::of(&s, &straddling).unwrap(),
                Relation::PartialOverlap
            );
            assert_eq!(contained.len(), straddling.len());

            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[99, 5, k]));
            let (s, containing, straddling) = gen_subset_triple(&mut rng, universe);
            assert_eq!(
                Relation::of(&s, &containing).unwrap(),
                Relation::AnchorSubset
            );
            assert_eq!(
                Relation::of(&s, &straddling).unwrap(),
                Relation::PartialOverlap
            );
            assert!(
                containing.len() - s.len()
                    <= straddling.len() - s.intersection_len(&straddling).unwrap()
            );
        }
    }

    #[test]
    fn band_check_rejects_out_of_band_weights() {
        let half = Ratio::new(1, 2);
        assert!(!weight_band_holds(Relation::Disjoint, half));
        assert!(!weight_band_holds(Relation::Equal, half));
        assert!(!weight_band_holds(Relation::PartialOverlap, zero()));
        assert!(!weight_band_holds(Relation::PartialOverlap, one()));
        assert!(weight_band_holds(Relation::AnchorSuperset, half));
        assert!(weight_band_holds(Relation::Disjoint, zero()));
        assert!(weight_band_holds(Relation::Equal, one()));
    }

    #[test]
    fn accumulator_captures_the_first_counterexample() {
        let mut acc = Accumulator::new("demo");
        acc.record(true, || unreachable!("passing trials never describe"));
        acc.record(false, || "first".to_string());
        acc.record(false, || "second".to_string());
        let report = acc.finish(Some(5));
        assert_eq!(report.trials, 3);
        assert_eq!(report.failures, 2);
        assert!(!report.passed());
        assert_eq!(report.first_counterexample.as_deref(), Some("first"));
        assert_eq!(report.seed, Some(5));
        // Reports serialize as single JSON lines.
        let line = report.to_json_line();
        assert!(line.starts_with('{') && line.ends_with('}'));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn oracle_rejects_oversized_batches() {
        let n = ORACLE_MAX_SAMPLES + 1;
        let labels = vec![LabelSet::from_indices(3, [0usize]).unwrap(); n];
        let batch = ContrastiveBatch::new(Array2::zeros((n, 2)), labels, 0.5).unwrap();
        assert!(matches!(
            oracle_loss(&batch, Strategy::All),
            Err(Error::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_and_production_losses_agree_on_random_batches() {
        let params = BatchParams::default();
        for b in 0..40u64 {
            let batch = random_batch(mix(&[0x0AC1E, b]), &params).unwrap();
            for strategy in Strategy::verification_set() {
                let fast = evaluate(&batch, strategy).unwrap().total;
                let slow = oracle_loss(&batch, strategy).unwrap();
                let scale = fast.abs().max(slow.abs()).max(1.0);
                assert!(
                    (fast - slow).abs() <= 1e-10 * scale,
                    "batch {b} strategy {strategy}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn grad_check_validates_step_and_passes_on_random_batches() {
        let params = BatchParams {
            max_samples: 10,
            min_temperature: 0.4,
            ..BatchParams::default()
        };
        let batch = random_batch(7, &params).unwrap();
        assert!(grad_check(&batch, Strategy::Any, 1e-2).is_err());
        assert!(grad_check(&batch, Strategy::Any, 1e-8).is_err());
        for strategy in Strategy::verification_set() {
            let report = grad_check(&batch, strategy, DEFAULT_FD_STEP).unwrap();
            assert!(
                report.passed(),
                "{}: max error {:?}",
                report.property_name,
                report.max_error
            );
            assert_eq!(report.trials, (batch.len() * batch.dim()) as u64);
        }
    }

    #[test]
    fn gradient_discrepancy_flags_a_corrupted_entry() {
        let batch = random_batch(21, &BatchParams::default()).unwrap();
        let analytic = evaluate(&batch, Strategy::Any).unwrap().gradient;
        let mut corrupted = analytic.clone();
        corrupted[[1, 0]] += 1e-3;
        let (trials, failures, max_error, first) = gradient_discrepancy(&analytic, &corrupted);
        assert_eq!(trials, (batch.len() * batch.dim()) as u64);
        assert_eq!(failures, 1);
        assert!(max_error > GRAD_REL_TOL);
        assert_eq!(first.map(|(r, c, _, _)| (r, c)), Some((1, 0)));
        // And the clean comparison is exact.
        let (_, clean_failures, clean_max, _) = gradient_discrepancy(&analytic, &analytic);
        assert_eq!(clean_failures, 0);
        assert_eq!(clean_max, 0.0);
    }

    #[test]
    fn grad_suite_covers_every_strategy() {
        let reports = grad_check_suite(3, 2).unwrap();
        assert_eq!(reports.len(), Strategy::verification_set().len());
        for r in &reports {
            assert!(r.passed(), "{}: {:?}", r.property_name, r.max_error);
            assert!(r.max_error.unwrap() < GRAD_REL_TOL);
        }
    }
}

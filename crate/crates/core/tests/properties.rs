//! Randomized laws over much wider input spaces than the unit fixtures:
//! factor bounds and identities for arbitrary label-set pairs, invariance
//! under relabeling, and loss equivariance under batch permutation.

use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;
use simdis::losses::Strategy as Objective;
use simdis::{evaluate, pair_factors, ContrastiveBatch, LabelSet, PenaltyKind, Relation};

const UNIVERSE: usize = 64;

fn as_f64(r: num_rational::Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn label_set(universe: usize, max_card: usize) -> impl Strategy<Value = LabelSet> {
    proptest::collection::btree_set(0..universe, 1..=max_card)
        .prop_map(move |s| LabelSet::from_indices(universe, s).unwrap())
}

fn penalty() -> impl Strategy<Value = PenaltyKind> {
    prop_oneof![
        Just(PenaltyKind::Reciprocal),
        (0.1f64..3.0).prop_map(|alpha| PenaltyKind::ExponentialDecay { alpha }),
    ]
}

proptest! {
    /// Factor bounds, the excess identity, the product identity, and the
    /// per-relation weight bands hold for every pair and both penalties.
    #[test]
    fn factors_obey_the_band_laws(
        anchor in label_set(UNIVERSE, 12),
        sample in label_set(UNIVERSE, 12),
        penalty in penalty(),
    ) {
        let f = pair_factors(&anchor, &sample, penalty).unwrap();
        prop_assert_eq!(f.overlap + f.excess, sample.len());
        prop_assert!((0.0..=1.0).contains(&f.similarity));
        prop_assert!(f.dissimilarity > 0.0 && f.dissimilarity <= 1.0);
        prop_assert_eq!(f.weight, f.similarity * f.dissimilarity);
        match f.relation {
            Relation::Disjoint => prop_assert_eq!(f.weight, 0.0),
            Relation::Equal => prop_assert_eq!(f.weight, 1.0),
            _ => prop_assert!(0.0 < f.weight && f.weight < 1.0),
        }
        match (penalty, f.exact()) {
            (PenaltyKind::Reciprocal, Some(exact)) => {
                assert_relative_eq!(as_f64(exact.similarity), f.similarity, max_relative = 1e-14);
                assert_relative_eq!(as_f64(exact.dissimilarity), f.dissimilarity, max_relative = 1e-14);
                assert_relative_eq!(as_f64(exact.weight), f.weight, max_relative = 1e-14, epsilon = 0.0);
            }
            (PenaltyKind::ExponentialDecay { .. }, None) => {}
            (kind, exact) => prop_assert!(false, "penalty {kind:?} gave exact = {exact:?}"),
        }
    }

    /// Relabeling the universe through any permutation changes nothing:
    /// relations and factors depend only on the overlap pattern.
    #[test]
    fn factors_are_invariant_under_relabeling(
        anchor in label_set(UNIVERSE, 12),
        sample in label_set(UNIVERSE, 12),
        perm in Just((0..UNIVERSE).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let relabel = |s: &LabelSet| {
            LabelSet::from_indices(UNIVERSE, s.members().map(|i| perm[i])).unwrap()
        };
        let before = pair_factors(&anchor, &sample, PenaltyKind::Reciprocal).unwrap();
        let after = pair_factors(&relabel(&anchor), &relabel(&sample), PenaltyKind::Reciprocal).unwrap();
        prop_assert_eq!(before.relation, after.relation);
        prop_assert_eq!(before.overlap, after.overlap);
        prop_assert_eq!(before.excess, after.excess);
        prop_assert_eq!(before.weight, after.weight);
    }
}

fn batch_and_permutation() -> impl Strategy<Value = (ContrastiveBatch, Vec<usize>)> {
    (4usize..9, 2usize..5).prop_flat_map(|(n, dim)| {
        (
            proptest::collection::vec(-1.0f64..1.0, n * dim),
            proptest::collection::vec(label_set(6, 3), n),
            0.3f64..1.0,
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
            .prop_map(move |(entries, labels, temperature, perm)| {
                let embeddings = Array2::from_shape_vec((n, dim), entries).unwrap();
                (
                    ContrastiveBatch::new(embeddings, labels, temperature).unwrap(),
                    perm,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Reordering the rows of a batch permutes per-anchor losses and
    /// gradient rows and leaves the total unchanged, for every strategy.
    #[test]
    fn losses_are_equivariant_under_batch_permutation(
        (batch, perm) in batch_and_permutation(),
    ) {
        let n = batch.len();
        let dim = batch.dim();
        let mut embeddings = Array2::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for (new_row, &old_row) in perm.iter().enumerate() {
            embeddings
                .row_mut(new_row)
                .assign(&batch.embeddings().row(old_row));
            labels.push(batch.labels()[old_row].clone());
        }
        let permuted = ContrastiveBatch::new(embeddings, labels, batch.temperature()).unwrap();

        for strategy in Objective::verification_set() {
            let base = evaluate(&batch, strategy).unwrap();
            let moved = evaluate(&permuted, strategy).unwrap();
            assert_relative_eq!(base.total, moved.total, max_relative = 1e-11, epsilon = 1e-12);

            let by_anchor: std::collections::HashMap<usize, f64> =
                base.per_anchor.iter().copied().collect();
            prop_assert_eq!(moved.per_anchor.len(), base.per_anchor.len());
            for &(new_row, loss) in &moved.per_anchor {
                assert_relative_eq!(
                    by_anchor[&perm[new_row]],
                    loss,
                    max_relative = 1e-11,
                    epsilon = 1e-12
                );
            }
            for (new_row, &old_row) in perm.iter().enumerate() {
                for k in 0..dim {
                    assert_relative_eq!(
                        moved.gradient[[new_row, k]],
                        base.gradient[[old_row, k]],
                        max_relative = 1e-11,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    /// Putting the reciprocal-penalty weight inside the logarithm only adds
    /// a per-anchor constant: the gradient is bit-identical to the
    /// unweighted any-overlap loss and the loss is never smaller.
    #[test]
    fn inside_log_is_a_constant_shift_of_any(
        (batch, _) in batch_and_permutation(),
    ) {
        let plain = evaluate(&batch, Objective::Any).unwrap();
        let shifted = evaluate(
            &batch,
            Objective::SimDis {
                placement: simdis::Placement::InsideLog,
                penalty: PenaltyKind::Reciprocal,
            },
        )
        .unwrap();
        prop_assert_eq!(plain.gradient, shifted.gradient);
        prop_assert!(shifted.total >= plain.total - 1e-12);
    }
}

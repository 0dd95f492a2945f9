//! Multi-label supervised contrastive learning with set-relation
//! re-weighting, plus the machinery to verify it at desk scale.
//!
//! The crate is organized around one idea: when an anchor and another sample
//! carry label *sets* rather than single labels, the pair's training signal
//! should depend on how the two sets relate. [`label_algebra`] classifies a
//! pair into one of five relations and turns it into a weight in `[0, 1]`;
//! [`losses`] builds that weight into a contrastive objective next to the
//! three standard baselines; [`verify`] checks the claimed guarantees with
//! brute-force oracles, exact rational arithmetic, and finite differences;
//! [`synth`], [`trainer`], and [`metrics`] round out a small but complete
//! training stack for long-tailed multi-label toy problems.
//!
//! ```
//! use ndarray::array;
//! use simdis::{ContrastiveBatch, LabelSet, PenaltyKind, Placement, Relation, Strategy};
//!
//! // A pair of label sets: the anchor {0,1,2} against {0,3,4}.
//! let anchor = LabelSet::from_indices(6, [0, 1, 2])?;
//! let sample = LabelSet::from_indices(6, [0, 3, 4])?;
//! let factors = simdis::pair_factors(&anchor, &sample, PenaltyKind::Reciprocal)?;
//! assert_eq!(factors.relation, Relation::PartialOverlap);
//! assert_eq!(factors.weight, (1.0 / 3.0) * (1.0 / 3.0)); // shares 1 of 3, excess 2
//!
//! // The same weights driving a batch loss and its embedding gradient.
//! let batch = ContrastiveBatch::new(
//!     array![[0.8, 0.1], [0.2, -0.5], [-0.3, 0.4]],
//!     vec![
//!         anchor.clone(),
//!         sample.clone(),
//!         LabelSet::from_indices(6, [0, 1, 2])?,
//!     ],
//!     0.5,
//! )?;
//! let report = simdis::evaluate(
//!     &batch,
//!     Strategy::SimDis {
//!         placement: Placement::OutsideLog,
//!         penalty: PenaltyKind::Reciprocal,
//!     },
//! )?;
//! assert!(report.total.is_finite());
//! assert_eq!(report.gradient.dim(), (3, 2));
//! # Ok::<(), simdis::Error>(())
//! ```

pub mod error;
pub mod label_algebra;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod trainer;
pub mod verify;

mod seed;

pub use error::{Error, Result};
pub use label_algebra::{
    dissimilarity_factor, pair_factors, similarity_factor, LabelSet, PairFactors, PenaltyKind,
    Relation,
};
pub use losses::{
    evaluate, gradient, loss_mulsupcon, loss_simdis, loss_supcon, positive_set, ContrastiveBatch,
    LossReport, Placement, Strategy,
};
pub use verify::{check_theorems, grad_check, oracle_loss, CheckMode, PropertyReport};

//! Statistical tests used by the vrlab analysis engine.
//!
//! The crate is self-contained: the F, t and studentized-range tails are
//! computed from first principles in [`special`] and [`dist`], so the
//! results can be audited without a numerical library dependency.

pub mod dist;
pub mod quadrature;
pub mod special;

mod anova;
mod descriptives;
mod fisher;
mod grouped;
mod tukey;

pub use anova::{one_way_anova, AnovaResult};
pub use descriptives::{descriptives, Descriptives};
pub use fisher::{fisher_exact, ContingencyTable2x2};
pub use grouped::{Group, GroupedSamples};
pub use tukey::{tukey_hsd, TukeyPair, TukeyResult};

/// Smallest p value ever reported. Tails that underflow are clamped here so
/// every p value stays in `(0, 1]`.
pub const P_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} groups, got {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("group {label:?} has {size} values, need at least {needed}")]
    GroupTooSmall { label: String, size: usize, needed: usize },
    #[error("all values are identical")]
    DegenerateInput,
    #[error("non-finite value in group {label:?}")]
    NonFinite { label: String },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("contingency table has no positive count")]
    AllZeroMargin,
}

pub(crate) fn clamp_p(p: f64) -> f64 {
    if p.is_nan() {
        return 1.0;
    }
    p.clamp(P_FLOOR, 1.0)
}

//! Server-side aggregation rules.

mod baselines;
mod ordering;
mod quantifier;

pub use baselines::{
    bulyan, coordinate_median, fedavg, krum_scores, multikrum, norm_clip, rlr, trimmed_mean, wdp,
    Selection,
};
pub use ordering::{
    accuracy, accuracy_ordering, ddaba_aggregate, lle_ordering, lle_scores, quantified_aggregate,
    rab2def_aggregate, QuantifiedAggregate,
};
pub use quantifier::{
    outlier_quantile, quantifier_params, quantifier_value, quantifier_weights, top_quantile,
    OrderingResult, QuantifierParams, WeightVector,
};

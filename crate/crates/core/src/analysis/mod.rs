//! Post-hoc analysis of trained models: attention-based word scores, pivot
//! classification, 2-D projections and a domain probe.

mod attention;
mod pivots;
mod probe;
mod projection;

pub use attention::{
    attention_dump, extract_word_scores, parse_word_scores, WordScore, WordScoreTable,
};
pub use pivots::{classify_pivots, quantile_ranks, PivotCategory, PivotEntry, PivotReport};
pub use probe::{domain_probe_accuracy, LogisticProbe, PROBE_ITERATIONS, PROBE_L2, PROBE_LEARNING_RATE};
pub use projection::{export_representations, pca_2d, ProjectedDocument, ReprProjection};

//! Per-input relevance scores for model predictions.

mod aggregate;
mod explain;
mod report;

pub use aggregate::{aggregate_feature_attributions, FeatureRanking, FeatureScore, MIN_TOKEN_COUNT};
pub use explain::{attention_rollout, explain, explain_all, gi_attribute, gi_attribute_standard, ExplainOptions};
pub use report::{
    read_reports_json, write_reports_csv, write_reports_json, AttributionReport, CsvRow, ExplainerKind, ModalitySums,
};

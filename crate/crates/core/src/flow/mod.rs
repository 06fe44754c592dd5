//! Activation-flow analysis: similarity of layer activations within and
//! across classes, class mean profiles, and alignment-layer selection.

mod plan;
mod profile;
mod report;
mod similarity;

pub use plan::{is_alignable, select_layers, AlignmentPlan, PlanEntry};
pub use profile::{
    class_profiles, decode_profiles, encode_profiles, load_profiles, record_all, save_profiles, ClassEntry, ClassProfile,
};
pub use report::{flow_report, FlowConfig, FlowReport, LayerFlow};
pub use similarity::{cosine_similarity, similarity, Metric, Similarity};

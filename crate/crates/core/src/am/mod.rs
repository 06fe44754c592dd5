//! Activation maximization: loss terms, baseline regularizers, and the
//! optimization driver.

mod config;
mod engine;
mod losses;
mod trace;

pub use config::{BaselineRegConfig, FlowAmConfig, InitMode, Method, NoiseConfig, NoiseSite, Terms};
pub use engine::{gaussian_blur, generate, AmObjective, AmResources, EvaluatedLoss, ExplanationResult, AVERAGE_INIT_SEED};
pub use losses::{
    alignment_targets, continuity_grad, latent_alignment_grad, legal_grad, loss_am, loss_am_grad, loss_continuity,
    loss_flow_total, loss_latent_alignment, loss_legal, total_variation_grad, AlignTarget, LossComponents,
};
pub use trace::{AmTrace, Termination, TraceEntry};

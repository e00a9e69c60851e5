//! Spectral learning of latent junction trees through an observable
//! representation: every clique tensor is recovered, up to invertible
//! transforms that cancel during message passing, from low-order joint
//! moments of observed variables.

mod diagnostics;
mod learn;
mod moments;
mod plan;

pub use diagnostics::{diagnostics, Diagnostics, NodeDiagnostics};
pub use learn::{
    combine_minus_candidates, infer, infer_dataset, learn, learn_with, node_system, Estimate, LearnOptions, NodeParams, NodeSystem,
    ObservableParams,
};
pub use moments::{estimate_moment, EmpiricalMoments, MomentSource, PopulationMoments};
pub use plan::{
    plan_observed_sets, plan_with, projected_var, NodeAnchors, ObservedSetPlan, PlanOptions, PROJECTED_BASE,
};

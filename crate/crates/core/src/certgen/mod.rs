//! Certificate generators and grading.

pub mod design;
pub mod energy;
pub mod grading;
pub mod interactive;
pub mod transform;

pub use design::design_certificates;
pub use energy::{energy_distance, normalized_distance, relevance_distance};
pub use grading::{grade_all, grade_certificate, Grader, GradingConfig};
pub use interactive::{
    adversarial_search, holdout_validation, invariance_check, ood_evaluate, oot_evaluate, AdversarialOutcome,
    AdversarialSearch, FlipCriterion, SearchStrategy,
};
pub use transform::{Transform, TransformSpec};

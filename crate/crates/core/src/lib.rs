//! Invariants, integrability checks and moving-frame reconstruction of
//! timelike surfaces in Minkowski 4-space `R^4_1`.
//!
//! The pipeline:
//!
//! * [`analysis`] extracts the geometric frame `(x, y, n1, n2)` and the
//!   invariants `(f, nu, lambda1, lambda2, mu1, mu2)` of a sampled surface
//!   in isotropic parameters;
//! * [`invariants`] classifies invariant sets, derives `gamma`, `beta` and
//!   evaluates the compatibility conditions;
//! * [`reconstruction`] integrates the frame and position systems back to a
//!   surface;
//! * [`congruence`] compares patches up to a Lorentz motion.

pub mod analysis;
pub mod catalog;
pub mod congruence;
pub mod error;
pub mod grid;
pub mod invariants;
pub mod io;
pub mod minkowski;
pub mod reconstruction;

pub use analysis::{
    check_isotropic, detect_degeneracies, extract_invariants, geometric_frame, AnalysisOptions,
    Extraction, SurfacePatch,
};
pub use congruence::congruence_distance;
pub use error::{Error, IsotropyDefect, Result};
pub use grid::{GridDomain, ScalarField, Stencil, Vec4Field};
pub use invariants::{
    classify, derived_coefficients, integrability_residuals, theorem_conditions_residuals,
    DerivedCoefficients, InvariantSet, ResidualReport, SurfaceType,
};
pub use minkowski::{
    apply_motion, causal_class, frame_gram_residual, minkowski_dot, motion_from_frames,
    reorthonormalize, CausalClass, LorentzMotion, PseudoOrthonormalFrame, Vec4,
};
pub use reconstruction::{
    flatness_residual, integrate_frame, integrate_position, reconstruct, PathStrategy,
    ReconstructionConfig,
};

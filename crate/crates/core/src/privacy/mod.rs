//! Differential-privacy layer: samplers, mechanism calibration, local
//! sensitivity bounds and the two private releases.

pub mod mechanisms;
pub mod release;
pub mod sensitivity;

pub use mechanisms::{
    delta2_floor, gaussian_scale, laplace_scale, sample_gaussian_vector, sample_laplace_vector,
    PrivacyBudget,
};
pub use release::{
    method1_scales, method2_scales, release_method1, release_method1_with_noise, release_method2,
    release_method2_with_noise, ridge_solve, Method1Noise, NoiseMode, NoiseScales, PrivateRelease,
    ReleaseKind, StructuredGramNoise,
};
pub use sensitivity::{
    build_sensitivity_context, gram_sensitivities, method1_crossprod_sensitivity,
    method1_crossprod_terms, method2_estimate_sensitivity, method2_estimate_sensitivity_with_ridge,
    method2_lambda_floor, raw_gram_frobenius, SensitivityContext,
};

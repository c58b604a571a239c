//! Differentially private fixed-X knockoff filter.
//!
//! The pipeline: normalize a design ([`design`]), build equicorrelated
//! knockoffs ([`knockoff`]), release a noisy Gram pair or a noisy estimate
//! ([`privacy`]), turn the estimate into knockoff statistics and a
//! knockoff+ selection ([`selection`]), and measure FDR and power by
//! simulation ([`sim`]).
//!
//! ```
//! use privknock::prelude::*;
//!
//! let cfg = SimConfig { n_grid: vec![200], p: 10, k: 3, trials: 1, ..SimConfig::benchmark(Method::Two, vec![]) };
//! let (data, truth) = generate_trial(200, &cfg, 7).unwrap();
//! let bounds = compute_bounds(&data, None).unwrap();
//! let nd = normalize_columns(data).unwrap();
//! let y = nd.y().clone();
//! let spectrum = GramSpectrum::from_design(&nd).unwrap();
//! let raw = raw_gram_frobenius(&nd, &spectrum);
//! let ad = build_knockoffs(nd, spectrum.lambda_min).unwrap();
//! let budget = PrivacyBudget::method2(0.2, 0.05, 0.05).unwrap();
//! let ctx = build_sensitivity_context(bounds, &truth, &ad.spectrum, raw, &budget, 10).unwrap();
//! let release = release_method2(&ad, &y, &ctx, &budget, 0.0, 1, NoiseMode::Calibrated).unwrap();
//! let src = EstimateSource::new(EstimateKind::Method2 { release }, 0.0).unwrap();
//! let w = compute_statistics(&src.coefficients(&ad, &y).unwrap(), StatKind::Csm).unwrap();
//! let report = knockoff_threshold(w, 0.2);
//! assert!(report.selected.iter().all(|&j| j < 10));
//! ```

pub mod design;
pub mod error;
pub mod knockoff;
pub mod linalg;
pub mod privacy;
pub mod rng;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};

/// The types and functions most pipelines need.
pub mod prelude {
    pub use crate::design::{
        compute_bounds, load_dataset, normalize_columns, Dataset, ModelOracle, NormBounds,
        NormalizedDesign,
    };
    pub use crate::error::{Error, Result};
    pub use crate::knockoff::{
        build_knockoffs, build_knockoffs_from, choose_s, lemma_eigenvalues, AugmentedDesign,
        GramSpectrum, SChoice,
    };
    pub use crate::privacy::{
        build_sensitivity_context, raw_gram_frobenius, release_method1, release_method2, NoiseMode,
        NoiseScales, PrivacyBudget, PrivateRelease, SensitivityContext,
    };
    pub use crate::selection::{
        compute_statistics, evaluate_selection, knockoff_threshold, EstimateKind, EstimateSource,
        SelectionReport, StatKind, StatisticVector, SwapSet,
    };
    pub use crate::sim::{generate_trial, run_sweep, run_trial, DeltaRule, Method, SimConfig};
}

/// Runs the code listings of the guide in `book/` as doctests.
#[cfg(doctest)]
mod booktest {
    macro_rules! booktest {
        ($i:ident) => {
            #[doc = include_str!(concat!("../../../book/src/", stringify!($i), ".md"))]
            mod $i {}
        };
    }
    booktest!(introduction);
    booktest!(designs);
    booktest!(knockoffs);
    booktest!(selection);
    booktest!(privacy);
    booktest!(simulation);
    booktest!(cli);
}

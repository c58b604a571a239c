//! Monte Carlo harness: synthetic data, the per-trial pipeline and FDR/power
//! aggregation.
//!
//! Trial seeds are a pure function of `(base_seed, n_index, trial_index)` and
//! results are reduced in trial order, so a sweep is reproducible bit for bit
//! regardless of the worker count.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{compute_bounds, normalize_columns, Dataset, ModelOracle};
use crate::error::{Error, Result};
use crate::knockoff::{build_knockoffs_from, choose_s, GramSpectrum, SChoice};
use crate::privacy::{
    build_sensitivity_context, raw_gram_frobenius, release_method1, release_method2, NoiseMode,
    PrivacyBudget,
};
use crate::rng;
use crate::selection::{
    compute_statistics, evaluate_selection, knockoff_threshold, EstimateKind, EstimateSource,
    SelectionReport, StatKind,
};

/// Largest failure fraction tolerated at any sample size.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "none")]
    None,
    /// Perturbed Gram pair.
    #[serde(rename = "1")]
    One,
    /// Perturbed estimate.
    #[serde(rename = "2")]
    Two,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "0" => Ok(Self::None),
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            other => Err(Error::ConfigInvalid(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::One => "1",
            Self::Two => "2",
        })
    }
}

/// How the total per-trial delta is chosen. It is split equally across the
/// delta knobs the method uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DeltaRule {
    Fixed(f64),
    TwoPOverN,
}

impl DeltaRule {
    pub fn total(&self, n: usize, p: usize) -> f64 {
        match self {
            Self::Fixed(v) => *v,
            Self::TwoPOverN => 2.0 * p as f64 / n as f64,
        }
    }
}

impl TryFrom<String> for DeltaRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DeltaRule> for String {
    fn from(r: DeltaRule) -> String {
        r.to_string()
    }
}

impl FromStr for DeltaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "2p/n" || s == "two_p_over_n" {
            return Ok(Self::TwoPOverN);
        }
        let v = s.strip_prefix("fixed:").unwrap_or(s);
        v.parse::<f64>()
            .map(Self::Fixed)
            .map_err(|_| Error::ConfigInvalid(format!("delta rule {s:?}: expected \"2p/n\" or \"fixed:<value>\"")))
    }
}

impl fmt::Display for DeltaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(v) => write!(f, "fixed:{v}"),
            Self::TwoPOverN => f.write_str("2p/n"),
        }
    }
}

fn default_threads() -> usize {
    1
}

fn default_pessimism() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_grid: Vec<usize>,
    pub p: usize,
    pub k: usize,
    pub amplitude: f64,
    pub sigma2: f64,
    pub q: f64,
    pub trials: usize,
    pub method: Method,
    pub stat: StatKind,
    /// Epsilon of the estimate perturbation; for the Gram-pair method, the
    /// sum of `eps_split`.
    #[serde(default)]
    pub eps_total: f64,
    /// `(eps, eps1, eps2)` for the Gram-pair method.
    #[serde(default)]
    pub eps_split: (f64, f64, f64),
    pub delta_rule: DeltaRule,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Lasso penalty; 0 gives OLS.
    #[serde(default)]
    pub lambda: f64,
    /// Ridge term added to the Gram matrix.
    #[serde(default)]
    pub ridge: f64,
    /// Multiplies the oracle sigma^2 and ||beta|| bounds (>= 1).
    #[serde(default = "default_pessimism")]
    pub pessimism: f64,
}

impl SimConfig {
    /// `p = 50`, `k = 15`, `A = 4.5`, `sigma^2 = 1`, `q = 0.2`, CSM on OLS,
    /// 250 trials, delta = 2p/n; `eps = 0.1, eps1 = eps2 = 0.05` for the
    /// Gram pair and `eps = 0.2` for the estimate.
    pub fn benchmark(method: Method, n_grid: Vec<usize>) -> Self {
        Self {
            n_grid,
            p: 50,
            k: 15,
            amplitude: 4.5,
            sigma2: 1.0,
            q: 0.2,
            trials: 250,
            method,
            stat: StatKind::Csm,
            eps_total: 0.2,
            eps_split: (0.1, 0.05, 0.05),
            delta_rule: DeltaRule::TwoPOverN,
            base_seed: 0,
            threads: 1,
            lambda: 0.0,
            ridge: 0.0,
            pessimism: 1.0,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.p == 0 || self.k > self.p {
            return bad(format!("need p >= k >= 0 and p > 0 (p = {}, k = {})", self.p, self.k));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} must lie in (0, 1)", self.q));
        }
        if self.trials == 0 || self.threads == 0 {
            return bad("trials and threads must be >= 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n < 2 * self.p) {
            return bad(format!("n = {n} < 2p = {}", 2 * self.p));
        }
        if !self.amplitude.is_finite() || !(self.sigma2 > 0.0) {
            return bad("amplitude must be finite and sigma2 > 0".into());
        }
        if !(self.lambda >= 0.0) || !(self.ridge >= 0.0) || !(self.pessimism >= 1.0) {
            return bad("lambda, ridge must be >= 0 and pessimism >= 1".into());
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        match self.method {
            Method::None => {}
            Method::One => {
                let (e, e1, e2) = self.eps_split;
                if !(unit(e) && unit(e1) && unit(e2)) {
                    return bad(format!("eps_split {:?} must lie in (0, 1)", self.eps_split));
                }
                if (e + e1 + e2 - self.eps_total).abs() > 1e-9 {
                    return bad(format!(
                        "eps_split sums to {} but eps_total = {}",
                        e + e1 + e2,
                        self.eps_total
                    ));
                }
            }
            Method::Two => {
                if !unit(self.eps_total) {
                    return bad(format!("eps_total = {} must lie in (0, 1)", self.eps_total));
                }
            }
        }
        if self.method != Method::None {
            for &n in &self.n_grid {
                let d = self.delta_rule.total(n, self.p);
                if !(d > 0.0 && d < 1.0) {
                    return bad(format!("total delta {d} at n = {n} must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// The budget used at sample size `n`.
    pub fn budget(&self, n: usize) -> Result<Option<PrivacyBudget>> {
        let total = self.delta_rule.total(n, self.p);
        match self.method {
            Method::None => Ok(None),
            Method::One => {
                let (e, e1, e2) = self.eps_split;
                let d = total / 3.0;
                PrivacyBudget::method1(e, e1, e2, d, d, d).map(Some)
            }
            Method::Two => {
                let d = total / 2.0;
                PrivacyBudget::method2(self.eps_total, d, d).map(Some)
            }
        }
    }
}

/// i.i.d. standard normal design, `beta` equal to `+A` on the first `k`
/// coordinates, `y = X beta + N(0, sigma^2 I)`.
pub fn generate_trial(n: usize, cfg: &SimConfig, trial_seed: u64) -> Result<(Dataset, ModelOracle)> {
    let p = cfg.p;
    let mut rng = rng::stream(trial_seed, rng::label::DATA);
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let beta = DVector::from_fn(p, |j, _| if j < cfg.k { cfg.amplitude } else { 0.0 });
    let sd = cfg.sigma2.sqrt();
    let noise = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + noise;
    let oracle = ModelOracle::from_truth(beta, cfg.sigma2)?;
    Ok((Dataset::new(x, y)?, oracle))
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub fdp: f64,
    pub power: f64,
    pub report: SelectionReport,
}

/// Runs one trial end to end: generate, normalize, bound, build knockoffs
/// with `s = lambda_min`, release, compute statistics, threshold, evaluate.
pub fn run_trial(cfg: &SimConfig, n: usize, n_index: usize, trial_index: usize) -> Result<TrialOutcome> {
    let seed = rng::trial_seed(cfg.base_seed, n_index, trial_index);
    let (data, truth) = generate_trial(n, cfg, rng::child_seed(seed, rng::label::DATA))?;
    let budget = cfg.budget(n)?;
    let bounds = match budget {
        Some(_) => Some(compute_bounds(&data, None)?),
        None => None,
    };
    let nd = normalize_columns(data)?;
    let spectrum = GramSpectrum::from_design(&nd)?;
    let s = choose_s(&spectrum, SChoice::PrivateRecommended);
    let raw_frob = raw_gram_frobenius(&nd, &spectrum);
    let y = nd.y().clone();
    let ad = build_knockoffs_from(nd, spectrum, s)?;

    let release_seed = rng::child_seed(seed, rng::label::RELEASE);
    let lambda = (cfg.lambda > 0.0).then_some(cfg.lambda);
    let kind = match (cfg.method, budget, bounds) {
        (Method::None, _, _) => match lambda {
            Some(lambda) => EstimateKind::NonprivateLasso { lambda },
            None => EstimateKind::NonprivateOls,
        },
        (method, Some(budget), Some(bounds)) => {
            let oracle = truth.clone().pessimistic(cfg.pessimism)?;
            let ctx = build_sensitivity_context(bounds, &oracle, &ad.spectrum, raw_frob, &budget, cfg.p)?;
            if method == Method::One {
                let release = release_method1(&ad, &y, &ctx, &budget, release_seed, NoiseMode::Calibrated)?;
                EstimateKind::Method1 { release, lambda, clip_floor: None }
            } else {
                let release =
                    release_method2(&ad, &y, &ctx, &budget, cfg.ridge, release_seed, NoiseMode::Calibrated)?;
                EstimateKind::Method2 { release }
            }
        }
        _ => unreachable!("private methods always carry a budget and bounds"),
    };
    let ridge = if cfg.method == Method::Two { 0.0 } else { cfg.ridge };
    let source = EstimateSource::new(kind, ridge)?;
    let coef = source.coefficients(&ad, &y)?;
    let w = compute_statistics(&coef, cfg.stat)?;
    let report = knockoff_threshold(w, cfg.q);
    let (fdp, power) = evaluate_selection(&report, &truth)?;
    Ok(TrialOutcome { fdp, power, report })
}

/// Errors that mark a trial as failed rather than aborting the sweep.
pub fn is_trial_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::PrivacyPreconditionFailed { .. } | Error::SingularSystem | Error::NonConvergence { .. }
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub n: usize,
    pub method: Method,
    pub stat: StatKind,
    pub trials: usize,
    pub fdr_hat: f64,
    pub fdr_se: f64,
    pub power_hat: f64,
    pub power_se: f64,
    pub eps_total: f64,
    pub delta_total: f64,
    pub failures: usize,
    /// Standard errors are reported as 0 because fewer than two trials
    /// succeeded.
    pub se_degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimulationReport {
    pub rows: Vec<SimRow>,
}

/// Mean and standard error (sample sd / sqrt(m)), summed in slice order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn privacy_totals(cfg: &SimConfig, n: usize) -> Result<(f64, f64)> {
    Ok(match cfg.budget(n)? {
        Some(b) => b.total(),
        None => (f64::INFINITY, 0.0),
    })
}

pub fn run_sweep(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (n_index, &n) in cfg.n_grid.iter().enumerate() {
        let outcomes: Vec<Result<TrialOutcome>> = pool.install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, n, n_index, t))
                .collect()
        });
        let mut fdps = Vec::with_capacity(cfg.trials);
        let mut powers = Vec::with_capacity(cfg.trials);
        let mut failures = 0;
        for outcome in outcomes {
            match outcome {
                Ok(o) => {
                    fdps.push(o.fdp);
                    powers.push(o.power);
                }
                Err(e) if is_trial_failure(&e) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        if failures as f64 > MAX_FAILURE_RATE * cfg.trials as f64 {
            return Err(Error::TooManyFailures { n, failures, trials: cfg.trials });
        }
        let (fdr_hat, fdr_se) = mean_and_se(&fdps);
        let (power_hat, power_se) = mean_and_se(&powers);
        let (eps_total, delta_total) = privacy_totals(cfg, n)?;
        rows.push(SimRow {
            n,
            method: cfg.method,
            stat: cfg.stat,
            trials: cfg.trials,
            fdr_hat,
            fdr_se,
            power_hat,
            power_se,
            eps_total,
            delta_total,
            failures,
            se_degenerate: fdps.len() < 2,
        });
    }
    rows.sort_by_key(|r| r.n);
    Ok(SimulationReport { rows })
}

pub const REPORT_HEADER: [&str; 11] = [
    "n", "method", "stat", "trials", "fdr_hat", "fdr_se", "power_hat", "power_se", "eps_total",
    "delta_total", "failures",
];

/// Rounds to six significant digits and prints the shortest form that reads
/// back to the rounded value.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn sorted_rows(report: &SimulationReport) -> Vec<&SimRow> {
    let mut rows: Vec<&SimRow> = report.rows.iter().collect();
    rows.sort_by(|a, b| a.n.cmp(&b.n).then_with(|| a.method.to_string().cmp(&b.method.to_string())));
    rows
}

pub fn write_report(report: &SimulationReport, out_path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record(REPORT_HEADER)?;
    for r in sorted_rows(report) {
        w.write_record([
            r.n.to_string(),
            r.method.to_string(),
            r.stat.to_string(),
            r.trials.to_string(),
            sig6(r.fdr_hat),
            sig6(r.fdr_se),
            sig6(r.power_hat),
            sig6(r.power_se),
            sig6(r.eps_total),
            sig6(r.delta_total),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready companion CSV with `log10(n)` and +-2 se bands.
pub fn write_plot_data(report: &SimulationReport, out_path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record([
        "n", "log10_n", "method", "stat", "fdr_hat", "fdr_lo", "fdr_hi", "power_hat", "power_lo", "power_hi",
    ])?;
    for r in sorted_rows(report) {
        w.write_record([
            r.n.to_string(),
            sig6((r.n as f64).log10()),
            r.method.to_string(),
            r.stat.to_string(),
            sig6(r.fdr_hat),
            sig6((r.fdr_hat - 2.0 * r.fdr_se).max(0.0)),
            sig6((r.fdr_hat + 2.0 * r.fdr_se).min(1.0)),
            sig6(r.power_hat),
            sig6((r.power_hat - 2.0 * r.power_se).max(0.0)),
            sig6((r.power_hat + 2.0 * r.power_se).min(1.0)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> SimConfig {
        SimConfig {
            n_grid: vec![120],
            p: 10,
            k: 3,
            amplitude: 3.0,
            trials: 4,
            ..SimConfig::benchmark(method, vec![])
        }
    }

    #[test]
    fn generate_trial_contract() {
        let cfg = small(Method::None);
        let (d, o) = generate_trial(120, &cfg, 5).unwrap();
        assert_eq!((d.n(), d.p()), (120, 10));
        assert_eq!(o.true_support.as_deref(), Some(&[0usize, 1, 2][..]));
        assert!((o.beta_norm_bound - 3.0 * 3f64.sqrt()).abs() < 1e-12);
        let (d2, _) = generate_trial(120, &cfg, 5).unwrap();
        assert_eq!(d.x(), d2.x());
        assert_eq!(d.y(), d2.y());

        let null = SimConfig { k: 0, ..cfg };
        let (_, o) = generate_trial(120, &null, 5).unwrap();
        assert!(o.true_support.unwrap().is_empty());
        let bench = SimConfig::benchmark(Method::Two, vec![1000]);
        let (_, o) = generate_trial(1000, &bench, 1).unwrap();
        assert!((o.beta_norm_bound - 17.428).abs() < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(small(Method::One).validate().is_ok());
        assert!(SimConfig { k: 11, ..small(Method::None) }.validate().is_err());
        assert!(SimConfig { n_grid: vec![15], ..small(Method::None) }.validate().is_err());
        assert!(SimConfig { q: 1.0, ..small(Method::None) }.validate().is_err());
        assert!(SimConfig { eps_total: 0.3, ..small(Method::One) }.validate().is_err());
        assert!(SimConfig { delta_rule: DeltaRule::Fixed(1.5), ..small(Method::Two) }.validate().is_err());
    }

    #[test]
    fn budget_split() {
        let cfg = SimConfig::benchmark(Method::One, vec![1000]);
        let b = cfg.budget(1000).unwrap().unwrap();
        assert!((b.delta - 0.1 / 3.0).abs() < 1e-15);
        let (e, d) = b.total();
        assert!((e - 0.2).abs() < 1e-15 && (d - 0.1).abs() < 1e-15);
        let cfg2 = SimConfig::benchmark(Method::Two, vec![1000]);
        let b2 = cfg2.budget(1000).unwrap().unwrap();
        assert_eq!(b2.total(), (0.2, 0.1));
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            n_grid = [200, 100]
            p = 10
            k = 3
            amplitude = 3.5
            sigma2 = 1.0
            q = 0.2
            trials = 5
            method = "1"
            stat = "csm"
            eps_total = 0.2
            eps_split = [0.1, 0.05, 0.05]
            delta_rule = "2p/n"
            base_seed = 9
        "#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.method, Method::One);
        assert_eq!(cfg.delta_rule, DeltaRule::TwoPOverN);
        assert_eq!(cfg.threads, 1);
        assert!(SimConfig::from_toml_str(&format!("{text}\nbogus = 1")).is_err());
        assert_eq!("fixed:0.01".parse::<DeltaRule>().unwrap(), DeltaRule::Fixed(0.01));
    }

    #[test]
    fn single_trial_se_is_degenerate() {
        let cfg = SimConfig { trials: 1, ..small(Method::None) };
        let r = run_sweep(&cfg).unwrap();
        assert_eq!(r.rows[0].fdr_se, 0.0);
        assert!(r.rows[0].se_degenerate);
    }

    #[test]
    fn private_sweeps_run() {
        for m in [Method::One, Method::Two] {
            let cfg = SimConfig { n_grid: vec![1000], delta_rule: DeltaRule::Fixed(0.09), ..small(m) };
            let r = run_sweep(&cfg).unwrap();
            let row = &r.rows[0];
            assert!((0.0..=1.0).contains(&row.fdr_hat) && (0.0..=1.0).contains(&row.power_hat));
            assert!((row.delta_total - 0.09).abs() < 1e-12);
        }
    }

    #[test]
    fn sig6_rounding() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::INFINITY), "inf");
        assert_eq!(sig6(1234567.0), "1234570");
    }

    #[test]
    fn mean_se() {
        let (m, s) = mean_and_se(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((s - 0.5).abs() < 1e-15);
    }
}

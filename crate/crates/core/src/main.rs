use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use privknock::design::{compute_bounds, load_dataset, normalize_columns, Dataset, ModelOracle};
use privknock::knockoff::{build_knockoffs_from, choose_s, classic_lambda_min_g, lemma_eigenvalues, GramSpectrum, SChoice};
use privknock::privacy::{
    build_sensitivity_context, delta2_floor, gram_sensitivities, method1_crossprod_sensitivity, method1_scales,
    method2_estimate_sensitivity_with_ridge, method2_scales, raw_gram_frobenius, release_method1, release_method2,
    NoiseMode, PrivacyBudget,
};
use privknock::selection::{compute_statistics, knockoff_threshold, EstimateKind, EstimateSource, StatKind};
use privknock::sim::{run_sweep, write_plot_data, write_report, Method, SimConfig};
use privknock::{Error, Result};

#[derive(Parser)]
#[command(name = "privknock", version, about = "Differentially private fixed-X knockoff filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the spectrum, knockoff parameter and noise calibration for a dataset.
    Calibrate(CalibrateArgs),
    /// Run the knockoff filter on a dataset.
    Run(RunArgs),
    /// Run a Monte Carlo FDR/power sweep.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    x: PathBuf,
    /// Response, one value per line.
    #[arg(long)]
    y: PathBuf,
    /// Skip the first line of each file.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct BudgetArgs {
    /// Defaults to 0.1 for method 1 and 0.2 for method 2.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    eps1: f64,
    #[arg(long, default_value_t = 0.05)]
    eps2: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    delta1: f64,
    #[arg(long, default_value_t = 0.01)]
    delta2: f64,
    #[arg(long)]
    beta_norm_bound: Option<f64>,
    #[arg(long)]
    sigma2_bound: Option<f64>,
    /// Replaces the observed maximum row norm; must not be smaller.
    #[arg(long)]
    row_bound: Option<f64>,
}

impl BudgetArgs {
    fn budget(&self, method: Method) -> Result<Option<PrivacyBudget>> {
        match method {
            Method::None => Ok(None),
            Method::One => PrivacyBudget::method1(
                self.eps.unwrap_or(0.1),
                self.eps1,
                self.eps2,
                self.delta,
                self.delta1,
                self.delta2,
            )
            .map(Some),
            Method::Two => PrivacyBudget::method2(self.eps.unwrap_or(0.2), self.delta1, self.delta2).map(Some),
        }
    }

    fn oracle(&self) -> Result<ModelOracle> {
        match (self.beta_norm_bound, self.sigma2_bound) {
            (Some(b), Some(s)) => ModelOracle::from_bounds(b, s),
            _ => Err(Error::PreconditionViolated(
                "private methods need --beta-norm-bound and --sigma2-bound".into(),
            )),
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Which method's scales and totals to report.
    #[arg(long, default_value = "1")]
    method: Method,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value = "none")]
    method: Method,
    #[arg(long, default_value = "csm")]
    stat: StatKind,
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    /// Lasso penalty; 0 gives OLS.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Clip the noisy Gram spectrum at this floor (method 1 only).
    #[arg(long)]
    clip_floor: Option<f64>,
    /// Use s = min(2 lambda_min, 1) instead of s = lambda_min.
    #[arg(long)]
    classic_s: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `base_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `threads` from the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write a plot-ready CSV to this path.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
}

fn load(args: &DataArgs) -> Result<Dataset> {
    load_dataset(&args.x, &args.y, args.header)
}

fn calibrate(args: CalibrateArgs) -> Result<Value> {
    let data = load(&args.data)?;
    let p = data.p();
    let bounds = compute_bounds(&data, args.budget.row_bound)?;
    let nd = normalize_columns(data)?;
    let spectrum = GramSpectrum::from_design(&nd)?;
    let s = choose_s(&spectrum, SChoice::PrivateRecommended);
    let (lemma_max, lemma_min) = lemma_eigenvalues(&spectrum, s)?;
    let mut out = json!({
        "lambda_min": spectrum.lambda_min,
        "lambda_max": spectrum.lambda_max,
        "s": s,
        "s_classic": choose_s(&spectrum, SChoice::Classic),
        "lemma_lambda_max_g": lemma_max,
        "lemma_lambda_min_g": lemma_min,
        "classic_lambda_min_g": classic_lambda_min_g(&spectrum),
        "delta2_floor": delta2_floor(p),
        "row_bound": bounds.row_bound,
        "col_min": bounds.col_min,
    });
    if args.method == Method::None {
        return Ok(out);
    }
    let budget = args.budget.budget(args.method)?.expect("private method");
    let oracle = args.budget.oracle()?;
    let raw = raw_gram_frobenius(&nd, &spectrum);
    let ctx = build_sensitivity_context(bounds, &oracle, &spectrum, raw, &budget, p)?;
    let (lam_sens, frob_sens) = gram_sensitivities(&ctx);
    let m2 = method2_estimate_sensitivity_with_ridge(&ctx, args.ridge);
    let scales = match args.method {
        Method::One => method1_scales(&ctx, &budget)?,
        _ => method2_scales(&ctx, &budget, args.ridge)?,
    };
    let (total_eps, total_delta) = budget.total();
    let extra = json!({
        "eta2": ctx.eta2,
        "zeta": ctx.zeta,
        "gamma": ctx.gamma,
        "lambda_min_sens": lam_sens,
        "gram_frob_sens": frob_sens,
        "method1_sensitivity": method1_crossprod_sensitivity(&ctx),
        "method2_sensitivity": m2.as_ref().ok(),
        "method2_error": m2.as_ref().err().map(ToString::to_string),
        "theta1_scale": scales.theta1_scale,
        "kappa1_sq": scales.kappa1_sq,
        "kappa2_sq_or_kappa_sq": scales.kappa2_sq.or(scales.kappa_sq),
        "total_eps": total_eps,
        "total_delta": total_delta,
    });
    if let (Value::Object(o), Value::Object(e)) = (&mut out, extra) {
        o.extend(e);
    }
    Ok(out)
}

fn run(args: RunArgs) -> Result<Value> {
    if !(args.q > 0.0 && args.q < 1.0) {
        return Err(Error::PreconditionViolated(format!("q = {} must lie in (0, 1)", args.q)));
    }
    let data = load(&args.data)?;
    let p = data.p();
    let budget = args.budget.budget(args.method)?;
    let bounds = match budget {
        Some(_) => Some(compute_bounds(&data, args.budget.row_bound)?),
        None => None,
    };
    let nd = normalize_columns(data)?;
    let spectrum = GramSpectrum::from_design(&nd)?;
    let choice = if args.classic_s { SChoice::Classic } else { SChoice::PrivateRecommended };
    let s = choose_s(&spectrum, choice);
    let raw = raw_gram_frobenius(&nd, &spectrum);
    let y = nd.y().clone();
    let ad = build_knockoffs_from(nd, spectrum, s)?;
    let lambda = (args.lambda > 0.0).then_some(args.lambda);

    let (kind, ridge) = match (args.method, budget, bounds) {
        (Method::None, _, _) => (
            match lambda {
                Some(lambda) => EstimateKind::NonprivateLasso { lambda },
                None => EstimateKind::NonprivateOls,
            },
            args.ridge,
        ),
        (method, Some(budget), Some(bounds)) => {
            let oracle = args.budget.oracle()?;
            let ctx = build_sensitivity_context(bounds, &oracle, &ad.spectrum, raw, &budget, p)?;
            if method == Method::One {
                let release = release_method1(&ad, &y, &ctx, &budget, args.seed, NoiseMode::Calibrated)?;
                (EstimateKind::Method1 { release, lambda, clip_floor: args.clip_floor }, args.ridge)
            } else {
                let release =
                    release_method2(&ad, &y, &ctx, &budget, args.ridge, args.seed, NoiseMode::Calibrated)?;
                (EstimateKind::Method2 { release }, 0.0)
            }
        }
        _ => unreachable!("private methods always carry a budget and bounds"),
    };
    let (noise_scales, total_privacy) = match &kind {
        EstimateKind::Method1 { release, .. } | EstimateKind::Method2 { release } => {
            let (e, d) = release.total_privacy();
            (serde_json::to_value(release.noise_scales).ok(), Some(json!({ "eps": e, "delta": d })))
        }
        _ => (None, None),
    };
    let source = EstimateSource::new(kind, ridge)?;
    let coef = source.coefficients(&ad, &y)?;
    let w = compute_statistics(&coef, args.stat)?;
    let report = knockoff_threshold(w, args.q);
    Ok(json!({
        "selected": report.selected,
        "threshold": report.threshold,
        "q": report.q,
        "s": s,
        "statistics": report.w.w,
        "statistic_kind": report.w.statistic_kind,
        "noise_scales": noise_scales,
        "total_privacy": total_privacy,
    }))
}

fn simulate(args: SimulateArgs) -> Result<Value> {
    let mut cfg = SimConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    let report = run_sweep(&cfg)?;
    write_report(&report, &args.out)?;
    if let Some(path) = &args.emit_plot_data {
        write_plot_data(&report, path)?;
    }
    Ok(json!({ "rows": report.rows.len(), "out": args.out }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("JSON values serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

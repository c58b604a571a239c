//! Regression designs: ingestion, validation and column normalization.
//!
//! A [`Dataset`] holds the raw design `X` (n x p) and the response `y`. The
//! privacy calibration needs two scalars from the raw design, a bound `B` on
//! every row norm and the smallest column norm `C_min`; [`compute_bounds`]
//! extracts them. [`normalize_columns`] rescales every column to unit length,
//! which is the design the knockoff construction and all statistics work on.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column norms below this are treated as zero.
pub const MIN_COLUMN_NORM: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Validates shape and column norms. Requires `n >= 2p` so that a
    /// knockoff copy exists.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response length vs design rows",
                expected: n,
                found: y.len(),
            });
        }
        if p == 0 {
            return Err(Error::InvalidDesign("design has no columns".into()));
        }
        if n < 2 * p {
            return Err(Error::InvalidDesign(format!(
                "n = {n} < 2p = {}; fixed-X knockoffs need n >= 2p",
                2 * p
            )));
        }
        if let Some((j, norm)) = column_norms(&x)
            .iter()
            .enumerate()
            .find(|(_, &c)| !(c >= MIN_COLUMN_NORM))
        {
            return Err(Error::InvalidDesign(format!(
                "column {j} has norm {norm:e}"
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite entry".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Bounds on the raw design used by the sensitivity calibration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NormBounds {
    /// Upper bound on every row's l2 norm.
    pub row_bound: f64,
    /// Smallest column l2 norm.
    pub col_min: f64,
}

impl NormBounds {
    pub fn new(row_bound: f64, col_min: f64) -> Result<Self> {
        if !(row_bound > 0.0) || !(col_min > 0.0) || !row_bound.is_finite() || !col_min.is_finite()
        {
            return Err(Error::InvalidDesign(format!(
                "norm bounds must be positive and finite (B = {row_bound}, C_min = {col_min})"
            )));
        }
        if row_bound >= col_min {
            return Err(Error::BoundViolation { row_bound, col_min });
        }
        Ok(Self { row_bound, col_min })
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedDesign {
    x_prime: DMatrix<f64>,
    normalizer: DVector<f64>,
    source: Dataset,
}

impl NormalizedDesign {
    /// Design with unit-norm columns.
    pub fn x_prime(&self) -> &DMatrix<f64> {
        &self.x_prime
    }

    /// Diagonal of `D`: reciprocal raw column norms, so `X' = X D`.
    pub fn normalizer(&self) -> &DVector<f64> {
        &self.normalizer
    }

    pub fn source(&self) -> &Dataset {
        &self.source
    }

    pub fn y(&self) -> &DVector<f64> {
        self.source.y()
    }

    pub fn n(&self) -> usize {
        self.x_prime.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_prime.ncols()
    }

    /// Same source and normalizer, different unit-column matrix.
    pub(crate) fn with_x_prime(&self, x_prime: DMatrix<f64>) -> Self {
        Self {
            x_prime,
            normalizer: self.normalizer.clone(),
            source: self.source.clone(),
        }
    }
}

/// Bounds on the unknown model parameters, plus ground truth when it is known
/// (simulation).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOracle {
    pub beta_norm_bound: f64,
    pub sigma2_bound: f64,
    pub true_beta: Option<DVector<f64>>,
    pub true_support: Option<Vec<usize>>,
}

impl ModelOracle {
    /// User-supplied bounds with no ground truth.
    pub fn from_bounds(beta_norm_bound: f64, sigma2_bound: f64) -> Result<Self> {
        if !(beta_norm_bound >= 0.0) || !beta_norm_bound.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "beta norm bound must be finite and >= 0, got {beta_norm_bound}"
            )));
        }
        if !(sigma2_bound > 0.0) || !sigma2_bound.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "sigma^2 bound must be finite and > 0, got {sigma2_bound}"
            )));
        }
        Ok(Self {
            beta_norm_bound,
            sigma2_bound,
            true_beta: None,
            true_support: None,
        })
    }

    /// Oracle built from the true coefficients: the norm bound is exactly
    /// `||beta||` and the support is read off the nonzero entries.
    pub fn from_truth(beta: DVector<f64>, sigma2: f64) -> Result<Self> {
        let mut oracle = Self::from_bounds(beta.norm(), sigma2)?;
        oracle.true_support = Some(
            beta.iter()
                .enumerate()
                .filter(|(_, &b)| b != 0.0)
                .map(|(j, _)| j)
                .collect(),
        );
        oracle.true_beta = Some(beta);
        Ok(oracle)
    }

    /// Multiplies both bounds by `factor >= 1`; ground truth is kept.
    pub fn pessimistic(mut self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) || !factor.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "pessimism factor must be >= 1, got {factor}"
            )));
        }
        self.beta_norm_bound *= factor;
        self.sigma2_bound *= factor;
        Ok(self)
    }
}

pub fn column_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm()).collect()
}

pub fn row_norms(x: &DMatrix<f64>) -> Vec<f64> {
    let mut sq = vec![0.0; x.nrows()];
    for col in x.column_iter() {
        for (acc, v) in sq.iter_mut().zip(col.iter()) {
            *acc += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Divides every column by its l2 norm.
pub fn normalize_columns(d: Dataset) -> Result<NormalizedDesign> {
    let norms = column_norms(d.x());
    if let Some((j, &c)) = norms.iter().enumerate().find(|(_, &c)| !(c >= MIN_COLUMN_NORM)) {
        return Err(Error::InvalidDesign(format!("column {j} has norm {c:e}")));
    }
    let normalizer = DVector::from_iterator(norms.len(), norms.iter().map(|c| 1.0 / c));
    let mut x_prime = d.x().clone();
    for (mut col, &c) in x_prime.column_iter_mut().zip(norms.iter()) {
        col /= c;
    }
    Ok(NormalizedDesign {
        x_prime,
        normalizer,
        source: d,
    })
}

/// Minimum column norm and the row bound (observed maximum row norm unless
/// overridden). The override may only loosen the observed bound.
pub fn compute_bounds(d: &Dataset, row_bound_override: Option<f64>) -> Result<NormBounds> {
    let col_min = column_norms(d.x())
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let observed = row_norms(d.x()).into_iter().fold(0.0, f64::max);
    let row_bound = match row_bound_override {
        Some(b) if b < observed => {
            return Err(Error::PreconditionViolated(format!(
                "row bound override {b} is below the observed maximum row norm {observed}"
            )))
        }
        Some(b) => b,
        None => observed,
    };
    NormBounds::new(row_bound, col_min)
}

fn parse_field(raw: &str, source_name: &str, line: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: format!("field {raw:?}: {e}"),
    })
}

fn read_rows(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| parse_field(f, &name, line))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    source_name: name,
                    line,
                    message: format!("ragged row: {} fields, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a comma-separated design (rows are samples) and a response file with
/// one value per line.
pub fn load_dataset(
    x_path: impl AsRef<Path>,
    y_path: impl AsRef<Path>,
    has_header: bool,
) -> Result<Dataset> {
    let x_rows = read_rows(x_path.as_ref(), has_header)?;
    let y_rows = read_rows(y_path.as_ref(), has_header)?;
    let n = x_rows.len();
    let p = x_rows.first().map_or(0, Vec::len);
    if let Some(bad) = y_rows.iter().position(|r| r.len() != 1) {
        return Err(Error::Parse {
            source_name: y_path.as_ref().display().to_string(),
            line: bad + 1 + usize::from(has_header),
            message: "response file must hold one value per line".into(),
        });
    }
    if y_rows.len() != n {
        return Err(Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: n,
            found: y_rows.len(),
        });
    }
    let x = DMatrix::from_fn(n, p, |i, j| x_rows[i][j]);
    let y = DVector::from_iterator(n, y_rows.into_iter().map(|r| r[0]));
    Dataset::new(x, y)
}

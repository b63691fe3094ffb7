//! Datasets, sufficient statistics and the normal-Wishart prior.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SymMatrix};

/// Complete data sample: `n_obs` rows of `n_vars` finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    values: Vec<f64>,
    n_obs: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no variables".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "variable {i} has an empty name"
                )));
            }
            if names[..i].contains(a) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate variable name `{a}`"
                )));
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse {
                    row: r + 1,
                    column: row.len().min(n) + 1,
                    message: format!("expected {n} fields, found {}", row.len()),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: r + 1,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Dataset {
            names,
            values,
            n_obs: rows.len(),
        })
    }

    /// Parses comma-separated text with a header row of variable names.
    /// Row and column numbers in errors are 1-based file lines and fields.
    pub fn from_csv_reader<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let names: Vec<String> = rdr
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            row: line,
                            column: c + 1,
                            message: format!("`{cell}` is not a finite number"),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if names.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyData);
        }
        Self::new(names, rows)
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_vars();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_vars())
    }

    /// First `k` observations.
    pub fn head(&self, k: usize) -> Result<Dataset> {
        if k == 0 {
            return Err(Error::EmptyData);
        }
        let k = k.min(self.n_obs);
        Ok(Dataset {
            names: self.names.clone(),
            values: self.values[..k * self.n_vars()].to_vec(),
            n_obs: k,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_error(e: csv::Error) -> Error {
    let (row, column) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, len, .. } => (
            pos.as_ref().map_or(0, |p| p.line() as usize),
            *len as usize + 1,
        ),
        _ => (e.position().map_or(0, |p| p.line() as usize), 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            row,
            column,
            message: format!("{kind:?}"),
        },
    }
}

/// Reads a CSV dataset from a file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    Dataset::from_csv_reader(std::io::BufReader::new(file))
}

/// Sample mean and scatter matrix `Σ (x_i - x̄)(x_i - x̄)^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    pub mean: Vec<f64>,
    pub scatter: SymMatrix,
    pub n_obs: usize,
}

impl SuffStats {
    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }
}

/// Two-pass sufficient statistics: the mean first, then deviations from it.
///
/// Rows are accumulated in lexicographic order so the result is bit-for-bit
/// independent of the observation order.
pub fn sufficient_stats(d: &Dataset) -> SuffStats {
    let n = d.n_vars();
    let big_n = d.n_obs() as f64;
    let mut order: Vec<&[f64]> = d.rows().collect();
    order.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut mean = vec![0.0; n];
    for row in &order {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= big_n);

    let mut upper = vec![0.0; n * n];
    let mut dev = vec![0.0; n];
    for row in &order {
        for ((e, x), m) in dev.iter_mut().zip(row.iter()).zip(&mean) {
            *e = x - m;
        }
        for i in 0..n {
            for j in i..n {
                upper[i * n + j] += dev[i] * dev[j];
            }
        }
    }
    let scatter = SymMatrix::from_fn(n, |i, j| upper[i * n + j]);
    SuffStats {
        mean,
        scatter,
        n_obs: d.n_obs(),
    }
}

/// Which determinant/gamma formula a score uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Corrected score with `l`-dependent degrees of freedom.
    Bge,
    /// Legacy formula with fixed exponents `α_w/2`, `(N+α_w)/2`.
    Hg95,
    /// Corrected exponents but inverse-select-invert submatrices.
    Gh02,
}

impl ScoreMode {
    pub const ALL: [ScoreMode; 3] = [ScoreMode::Bge, ScoreMode::Hg95, ScoreMode::Gh02];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Bge => "bge",
            ScoreMode::Hg95 => "hg95",
            ScoreMode::Gh02 => "gh02",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bge" => Ok(ScoreMode::Bge),
            "hg95" => Ok(ScoreMode::Hg95),
            "gh02" => Ok(ScoreMode::Gh02),
            other => Err(Error::InvalidConfig(format!(
                "unknown score mode `{other}`"
            ))),
        }
    }
}

/// Coefficient on the rank-one mean-shift term of the posterior matrix:
/// `N α / (N + α)` with `α` taken from one of the two prior weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOneCoefficient {
    #[default]
    AlphaMu,
    AlphaW,
}

impl RankOneCoefficient {
    pub fn as_str(self) -> &'static str {
        match self {
            RankOneCoefficient::AlphaMu => "alpha_mu",
            RankOneCoefficient::AlphaW => "alpha_w",
        }
    }
}

impl FromStr for RankOneCoefficient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha_mu" => Ok(RankOneCoefficient::AlphaMu),
            "alpha_w" => Ok(RankOneCoefficient::AlphaW),
            other => Err(Error::InvalidConfig(format!(
                "unknown rank-one coefficient `{other}`"
            ))),
        }
    }
}

/// Normal-Wishart hyperparameters: `μ | W ~ N(ν, (α_μ W)^{-1})` and
/// `W ~ Wishart(α_w, T^{-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub alpha_mu: f64,
    pub alpha_w: f64,
    pub nu: Vec<f64>,
    /// Wishart parametric matrix (inverse of the scale matrix).
    pub t: SpdMatrix,
    pub mode: ScoreMode,
    pub rank_one_coefficient_uses: RankOneCoefficient,
    /// Legacy-only toggle: build the `hg95` posterior matrix from the sample
    /// variance `S_N / (N-1)` instead of the scatter matrix.
    pub hg95_sample_variance: bool,
}

impl PriorConfig {
    pub fn n_vars(&self) -> usize {
        self.nu.len()
    }

    /// `α_μ (α_w - n - 1) / (α_μ + 1)`, the identity scale used by
    /// [`default_prior`].
    pub fn default_t_scale(alpha_mu: f64, alpha_w: f64, n: usize) -> f64 {
        alpha_mu * (alpha_w - n as f64 - 1.0) / (alpha_mu + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(Error::InvalidPrior(
                "prior must cover at least one variable".into(),
            ));
        }
        if !(self.alpha_mu > 0.0) || !self.alpha_mu.is_finite() {
            return Err(Error::InvalidPrior(format!(
                "alpha_mu must be > 0, got {}",
                self.alpha_mu
            )));
        }
        if !(self.alpha_w > n as f64 - 1.0) || !self.alpha_w.is_finite() {
            return Err(Error::InvalidPrior(format!(
                "alpha_w must be > n - 1 = {}, got {}",
                n - 1,
                self.alpha_w
            )));
        }
        if self.t.dim() != n {
            return Err(Error::InvalidPrior(format!(
                "T has dimension {} but nu has length {n}",
                self.t.dim()
            )));
        }
        if self.nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPrior("nu must be finite".into()));
        }
        Ok(())
    }
}

/// Default hyperparameters: `α_μ = 1`, `α_w = n + 2`, `ν = 0` and
/// `T = t I` with `t = α_μ (α_w - n - 1) / (α_μ + 1)`.
pub fn default_prior(n: usize) -> PriorConfig {
    assert!(n >= 1, "default_prior needs n >= 1");
    let alpha_mu = 1.0;
    let alpha_w = n as f64 + 2.0;
    let t = PriorConfig::default_t_scale(alpha_mu, alpha_w, n);
    PriorConfig {
        alpha_mu,
        alpha_w,
        nu: vec![0.0; n],
        t: SpdMatrix::scaled_identity(n, t).expect("t > 0"),
        mode: ScoreMode::Bge,
        rank_one_coefficient_uses: RankOneCoefficient::AlphaMu,
        hg95_sample_variance: false,
    }
}

/// Posterior parametric matrix `R = T + S_N + c (ν - x̄)(ν - x̄)^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix(pub SpdMatrix);

impl PosteriorMatrix {
    pub fn matrix(&self) -> &SpdMatrix {
        &self.0
    }
}

/// `c = N α / (N + α)` for the configured `α`.
pub fn rank_one_coefficient(n_obs: usize, p: &PriorConfig) -> f64 {
    let big_n = n_obs as f64;
    let alpha = match p.rank_one_coefficient_uses {
        RankOneCoefficient::AlphaMu => p.alpha_mu,
        RankOneCoefficient::AlphaW => p.alpha_w,
    };
    big_n * alpha / (big_n + alpha)
}

pub fn posterior_matrix(s: &SuffStats, p: &PriorConfig) -> Result<PosteriorMatrix> {
    posterior_matrix_with_scatter(&s.scatter, s, p)
}

pub(crate) fn posterior_matrix_with_scatter(
    scatter: &SymMatrix,
    s: &SuffStats,
    p: &PriorConfig,
) -> Result<PosteriorMatrix> {
    let n = s.n_vars();
    for found in [p.n_vars(), p.t.dim(), scatter.dim()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let c = rank_one_coefficient(s.n_obs, p);
    let shift: Vec<f64> = p.nu.iter().zip(&s.mean).map(|(v, m)| v - m).collect();
    let r = p.t.as_sym().add(scatter)?.add_rank_one(c, &shift);
    Ok(PosteriorMatrix(SpdMatrix::new(r)?))
}

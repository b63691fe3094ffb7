//! Simulation of the bge vs hg95 local-score gap as a function of the number
//! of parents and the sample size.

use bge_core::{
    local_log_score, random_dag, sample_gaussian_data, EdgeWeights, IndexSet, PriorConfig, Result,
    ScoreContext, ScoreMode,
};

use crate::report::{fmt_num, RunReport, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct BiasConfig {
    pub n: usize,
    pub parents_max: usize,
    pub sample_sizes: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasRow {
    pub l: usize,
    /// `bge - hg95` local score, one per sample size.
    pub deltas: Vec<f64>,
    /// Least-squares slope of `deltas` against `ln N`.
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasStudy {
    pub sample_sizes: Vec<usize>,
    pub rows: Vec<BiasRow>,
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// The child is the last variable and its parents are the first `l`. Data
/// for the smaller sample sizes are prefixes of one simulated dataset.
pub fn bias_study(cfg: &BiasConfig, prior: impl Fn(usize) -> PriorConfig) -> Result<BiasStudy> {
    let n = cfg.n;
    let truth = random_dag(n, n, 0.5, cfg.seed);
    let weights = EdgeWeights::random(&truth, 0.3, 1.0, cfg.seed.wrapping_add(1));
    let n_max = cfg.sample_sizes.iter().copied().max().unwrap_or(0);
    let data = sample_gaussian_data(&truth, &weights, 1.0, n_max, cfg.seed.wrapping_add(2))?;
    let child = n - 1;
    let mut deltas = vec![Vec::new(); cfg.parents_max + 1];
    for &big_n in &cfg.sample_sizes {
        let ctx = ScoreContext::from_dataset(&data.head(big_n)?, prior(n))?;
        for (l, row) in deltas.iter_mut().enumerate() {
            let pa = IndexSet::new((0..l).collect())?;
            let bge = local_log_score(child, &pa, &ctx, ScoreMode::Bge)?.value;
            let hg = local_log_score(child, &pa, &ctx, ScoreMode::Hg95)?.value;
            row.push(bge - hg);
        }
    }
    let ln_n: Vec<f64> = cfg.sample_sizes.iter().map(|&s| (s as f64).ln()).collect();
    let rows = deltas
        .into_iter()
        .enumerate()
        .map(|(l, deltas)| BiasRow {
            l,
            slope: ols_slope(&ln_n, &deltas),
            deltas,
        })
        .collect();
    Ok(BiasStudy {
        sample_sizes: cfg.sample_sizes.clone(),
        rows,
    })
}

impl BiasStudy {
    /// Slope differences between consecutive `l`.
    pub fn increments(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].slope - w[0].slope)
            .collect()
    }

    pub fn write_into(&self, report: &mut RunReport) {
        let mut header = vec!["l".to_string()];
        header.extend(self.sample_sizes.iter().map(|s| format!("delta_N{s}")));
        header.push("slope".into());
        header.push("increment".into());
        let mut t = Table {
            name: "slope_vs_l".into(),
            header,
            rows: Vec::new(),
        };
        for (i, row) in self.rows.iter().enumerate() {
            let mut cells = vec![row.l.to_string()];
            cells.extend(row.deltas.iter().map(|&d| fmt_num(d)));
            cells.push(fmt_num(row.slope));
            cells.push(match i {
                0 => "-".into(),
                _ => fmt_num(row.slope - self.rows[i - 1].slope),
            });
            t.push(cells);
        }
        report.add_table(t);
    }
}

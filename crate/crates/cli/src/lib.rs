//! Command implementations behind the `bge` binary. Each command returns a
//! [`RunReport`]; [`run`] parses arguments and renders it.

pub mod bias;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bge_core::score::{dag_local_scores, ScoreCache};
use bge_core::search::{hill_climb_with, structure_mcmc_with};
use bge_core::{
    load_dataset, Dag, Dataset, Error, IndexSet, McmcConfig, PriorConfig, RankOneCoefficient,
    ScoreContext, ScoreMode, SearchConfig, SpdMatrix, StructurePrior,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error as ThisError;

pub use bias::{bias_study, BiasConfig, BiasStudy};
pub use report::{fmt_num, RunReport, Table};

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("name mismatch: {0}")]
    NameMismatch(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => 2,
            CliError::NameMismatch(_) => 3,
            CliError::InvalidPrior(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse { .. }
            | Error::EmptyData
            | Error::InvalidDataset(_)
            | Error::InvalidGraph(_)
            | Error::CyclicGraph
            | Error::Io(_) => CliError::Parse(msg),
            Error::UnknownNode(name) => CliError::NameMismatch(format!("unknown node `{name}`")),
            Error::InvalidPrior(m) => CliError::InvalidPrior(m),
            Error::InvalidConfig(m) => CliError::Usage(m),
            _ => CliError::Runtime(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bge",
    version,
    about = "BGe scoring, legacy comparison, structure search and MCMC"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Total and per-node log score of a DAG.
    Score(ScoreArgs),
    /// Per-node bge, hg95 and gh02 local scores side by side.
    Compare(CompareArgs),
    /// Greedy hill climbing.
    Search(SearchArgs),
    /// Metropolis-Hastings structure sampler.
    Mcmc(McmcArgs),
    /// bge - hg95 local-score gap against ln N, per number of parents.
    BiasStudy(BiasArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    /// Prior weight on the mean (default 1).
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_mu: Option<f64>,
    /// Wishart degrees of freedom (default n + 2).
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_w: Option<f64>,
    /// `T = t I`; defaults to alpha_mu (alpha_w - n - 1) / (alpha_mu + 1).
    #[arg(long, allow_hyphen_values = true)]
    pub t_scale: Option<f64>,
    /// Prior mean: one value for all variables or a comma list of n.
    #[arg(long, allow_hyphen_values = true)]
    pub nu: Option<String>,
    /// Weight in the rank-one posterior term: alpha_mu or alpha_w.
    #[arg(long, default_value = "alpha_mu")]
    pub rank_one: RankOneCoefficient,
    /// hg95 only: use the sample variance S/(N-1) instead of the scatter S.
    #[arg(long)]
    pub hg95_sample_variance: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append wall-clock time to the report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dag: PathBuf,
    #[arg(long, default_value = "bge")]
    pub mode: ScoreMode,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dag: PathBuf,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bge")]
    pub mode: ScoreMode,
    #[arg(long)]
    pub max_parents: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub threshold: f64,
    /// Write the best DAG here in edge-list format.
    #[arg(long)]
    pub out_dag: Option<PathBuf>,
    /// Write one JSON record per accepted move here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct McmcArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bge")]
    pub mode: ScoreMode,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thinning: usize,
    /// Structure prior `-gamma |E|`; uniform when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub edge_penalty: Option<f64>,
    #[arg(long)]
    pub max_parents: Option<usize>,
    /// Starting DAG; empty when absent.
    #[arg(long)]
    pub init_dag: Option<PathBuf>,
    /// Write one JSON record per kept sample here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct BiasArgs {
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub parents_max: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub sample_sizes: Vec<usize>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

fn parse_nu(s: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let vals = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::InvalidPrior(format!("--nu: {e}")))?;
    match vals.len() {
        1 => Ok(vec![vals[0]; n]),
        k if k == n => Ok(vals),
        k => Err(CliError::InvalidPrior(format!(
            "--nu has {k} values for {n} variables"
        ))),
    }
}

/// Prior for `n` variables with flag overrides applied.
pub fn build_prior(args: &PriorArgs, n: usize) -> Result<PriorConfig, CliError> {
    let alpha_mu = args.alpha_mu.unwrap_or(1.0);
    let alpha_w = args.alpha_w.unwrap_or(n as f64 + 2.0);
    let t = args
        .t_scale
        .unwrap_or_else(|| PriorConfig::default_t_scale(alpha_mu, alpha_w, n));
    if !(t > 0.0) || !t.is_finite() {
        return Err(CliError::InvalidPrior(format!(
            "T scale must be > 0, got {t}"
        )));
    }
    let nu = match &args.nu {
        Some(s) => parse_nu(s, n)?,
        None => vec![0.0; n],
    };
    let prior = PriorConfig {
        alpha_mu,
        alpha_w,
        nu,
        t: SpdMatrix::scaled_identity(n, t).map_err(|e| CliError::InvalidPrior(e.to_string()))?,
        mode: ScoreMode::Bge,
        rank_one_coefficient_uses: args.rank_one,
        hg95_sample_variance: args.hg95_sample_variance,
    };
    prior.validate()?;
    Ok(prior)
}

fn echo_prior(report: &mut RunReport, p: &PriorConfig) {
    report
        .set_num("alpha_mu", p.alpha_mu)
        .set_num("alpha_w", p.alpha_w)
        .set_num("t_scale", p.t.get(0, 0))
        .set(
            "nu",
            p.nu.iter()
                .map(|&v| fmt_num(v))
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("rank_one", p.rank_one_coefficient_uses.as_str())
        .set("hg95_sample_variance", p.hg95_sample_variance);
}

/// Re-indexes `dag` onto the data columns. Columns the DAG does not mention
/// become isolated nodes.
pub fn align_dag(dag: &Dag, data: &Dataset) -> Result<Dag, CliError> {
    let names = data.names();
    let mut index = Vec::with_capacity(dag.n());
    for name in dag.names() {
        match names.iter().position(|c| c == name) {
            Some(i) => index.push(i),
            None => {
                return Err(CliError::NameMismatch(format!(
                    "DAG node `{name}` is not a data column"
                )))
            }
        }
    }
    let mut parents = vec![IndexSet::empty(); names.len()];
    for v in 0..dag.n() {
        parents[index[v]] = IndexSet::new(dag.parents(v).iter().map(|u| index[u]).collect())?;
    }
    Ok(Dag::from_parents_named(parents, names.to_vec())?)
}

fn read_dag(path: &Path) -> Result<Dag, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Dag::parse_text(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn read_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn parents_cell(g: &Dag, v: usize) -> String {
    let pa = g.parents(v);
    if pa.is_empty() {
        return "-".into();
    }
    pa.iter()
        .map(|u| g.names()[u].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

fn edges_cell(g: &Dag) -> String {
    let e: Vec<String> = g
        .edges()
        .iter()
        .map(|&(u, v)| format!("{}->{}", g.names()[u], g.names()[v]))
        .collect();
    if e.is_empty() {
        "-".into()
    } else {
        e.join(";")
    }
}

fn header(report: &mut RunReport, echo: &str, data_path: &Path, data: &Dataset) {
    report
        .set("command", echo)
        .set("data", data_path.display())
        .set("n_vars", data.n_vars())
        .set("n_obs", data.n_obs());
}

pub fn cmd_score(args: &ScoreArgs, echo: &str) -> Result<RunReport, CliError> {
    let data = read_data(&args.data)?;
    let dag = align_dag(&read_dag(&args.dag)?, &data)?;
    let prior = build_prior(&args.prior, data.n_vars())?;
    let ctx = ScoreContext::from_dataset(&data, prior)?;
    let locals = dag_local_scores(&dag, &ctx, &ScoreCache::new(), args.mode)?;
    let mut report = RunReport::new();
    header(&mut report, echo, &args.data, &data);
    report.set("dag", args.dag.display()).set("mode", args.mode);
    echo_prior(&mut report, ctx.prior());
    report.set("seed", args.common.seed);
    report.set_num("total_log_score", locals.iter().map(|s| s.value).sum());
    let mut t = Table::new("local", &["node", "parents", "l", "log_score"]);
    for s in &locals {
        t.push(vec![
            dag.names()[s.node].clone(),
            parents_cell(&dag, s.node),
            s.parents.len().to_string(),
            fmt_num(s.value),
        ]);
    }
    report.add_table(t);
    Ok(report)
}

pub fn cmd_compare(args: &CompareArgs, echo: &str) -> Result<RunReport, CliError> {
    let data = read_data(&args.data)?;
    let dag = align_dag(&read_dag(&args.dag)?, &data)?;
    let prior = build_prior(&args.prior, data.n_vars())?;
    let ctx = ScoreContext::from_dataset(&data, prior)?;
    let cache = ScoreCache::new();
    let per_mode = ScoreMode::ALL
        .iter()
        .map(|&m| dag_local_scores(&dag, &ctx, &cache, m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = RunReport::new();
    header(&mut report, echo, &args.data, &data);
    report.set("dag", args.dag.display());
    echo_prior(&mut report, ctx.prior());
    report.set("seed", args.common.seed);
    for (m, locals) in ScoreMode::ALL.iter().zip(&per_mode) {
        report.set_num(&format!("total_{m}"), locals.iter().map(|s| s.value).sum());
    }
    let mut t = Table::new(
        "local",
        &[
            "node",
            "parents",
            "l",
            "bge",
            "hg95",
            "gh02",
            "bge_minus_hg95",
            "bge_minus_gh02",
        ],
    );
    let mut by_l: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for v in 0..dag.n() {
        let (b, h, g) = (
            per_mode[0][v].value,
            per_mode[1][v].value,
            per_mode[2][v].value,
        );
        let l = dag.parents(v).len();
        by_l.entry(l).or_default().push(b - h);
        t.push(vec![
            dag.names()[v].clone(),
            parents_cell(&dag, v),
            l.to_string(),
            fmt_num(b),
            fmt_num(h),
            fmt_num(g),
            fmt_num(b - h),
            fmt_num(b - g),
        ]);
    }
    report.add_table(t);
    let mut s = Table::new("by_l", &["l", "nodes", "mean_bge_minus_hg95"]);
    for (l, d) in &by_l {
        s.push(vec![
            l.to_string(),
            d.len().to_string(),
            fmt_num(d.iter().sum::<f64>() / d.len() as f64),
        ]);
    }
    report.add_table(s);
    Ok(report)
}

fn move_text(g: &Dag, mv: Option<bge_core::Move>) -> serde_json::Value {
    match mv {
        Some(mv) => json!(mv.describe(g.names())),
        None => serde_json::Value::Null,
    }
}

pub fn cmd_search(args: &SearchArgs, echo: &str) -> Result<RunReport, CliError> {
    let data = read_data(&args.data)?;
    let prior = build_prior(&args.prior, data.n_vars())?;
    let ctx = ScoreContext::from_dataset(&data, prior)?;
    let cfg = SearchConfig {
        max_parents: args.max_parents,
        max_iterations: args.max_iterations,
        restarts: args.restarts,
        seed: args.common.seed,
        improvement_threshold: args.threshold,
    };
    let cache = ScoreCache::new();
    let res = hill_climb_with(&ctx, &cfg, &cache, args.mode)?;
    let best = res.dag.with_names(data.names().to_vec())?;
    let mut report = RunReport::new();
    header(&mut report, echo, &args.data, &data);
    report.set("mode", args.mode);
    echo_prior(&mut report, ctx.prior());
    report
        .set("seed", args.common.seed)
        .set(
            "max_parents",
            args.max_parents.map_or("none".into(), |m| m.to_string()),
        )
        .set("max_iterations", args.max_iterations)
        .set("restarts", args.restarts)
        .set_num("threshold", args.threshold)
        .set_num("best_log_score", res.log_score)
        .set("best_restart", res.best_restart)
        .set("n_edges", best.n_edges())
        .set(
            "accepted_moves",
            res.trace.iter().filter(|t| t.mv.is_some()).count(),
        )
        .set("evaluations", res.cache.evaluations)
        .set("cache_hits", res.cache.hits)
        .set("distinct_families", res.cache.entries);
    let mut t = Table::new("edges", &["parent", "child"]);
    for (u, v) in best.edges() {
        t.push(vec![best.names()[u].clone(), best.names()[v].clone()]);
    }
    report.add_table(t);
    if let Some(path) = &args.out_dag {
        write_file(path, &best.to_text())?;
    }
    if let Some(path) = &args.trace {
        let mut out = String::new();
        for r in &res.trace {
            let rec = json!({
                "restart": r.restart,
                "iteration": r.iteration,
                "log_score": r.log_score,
                "move": move_text(&best, r.mv),
                "delta": r.delta,
                "accept_evaluations": r.accept_evaluations,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        write_file(path, &out)?;
    }
    Ok(report)
}

pub fn cmd_mcmc(args: &McmcArgs, echo: &str) -> Result<RunReport, CliError> {
    let data = read_data(&args.data)?;
    let prior = build_prior(&args.prior, data.n_vars())?;
    let ctx = ScoreContext::from_dataset(&data, prior)?;
    let initial = match &args.init_dag {
        Some(p) => Some(align_dag(&read_dag(p)?, &data)?),
        None => None,
    };
    let cfg = McmcConfig {
        iterations: args.iterations,
        burn_in: args.burn_in,
        thinning: args.thinning,
        seed: args.common.seed,
        structure_prior: args
            .edge_penalty
            .map_or(StructurePrior::Uniform, StructurePrior::PerEdgePenalty),
        max_parents: args.max_parents,
        initial,
    };
    let mut accepted = 0usize;
    let mut moves = Vec::new();
    let samples = structure_mcmc_with(&ctx, &cfg, &ScoreCache::new(), args.mode, |it, step| {
        accepted += step.accepted as usize;
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thinning == 0 {
            moves.push((step.proposed, step.accepted));
        }
    })?;
    let names = data.names().to_vec();
    let n = names.len();
    let mut edge_counts = vec![vec![0usize; n]; n];
    let mut graphs: BTreeMap<Vec<(usize, usize)>, usize> = BTreeMap::new();
    for s in &samples {
        let e = s.dag.edges();
        for &(u, v) in &e {
            edge_counts[u][v] += 1;
        }
        *graphs.entry(e).or_default() += 1;
    }
    // most frequent graph; ties go to the smallest edge list
    let (map_edges, map_count) = graphs
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(e, c)| (e.clone(), *c))
        .unwrap_or_default();
    let map_dag = Dag::from_edges(n, &map_edges)?.with_names(names.clone())?;
    let k = samples.len() as f64;
    let mut report = RunReport::new();
    header(&mut report, echo, &args.data, &data);
    report.set("mode", args.mode);
    echo_prior(&mut report, ctx.prior());
    report
        .set("seed", args.common.seed)
        .set("iterations", cfg.iterations)
        .set("burn_in", cfg.burn_in)
        .set("thinning", cfg.thinning)
        .set(
            "structure_prior",
            match cfg.structure_prior {
                StructurePrior::Uniform => "uniform".to_string(),
                StructurePrior::PerEdgePenalty(g) => format!("per_edge_penalty({})", fmt_num(g)),
            },
        )
        .set("n_samples", samples.len())
        .set_num("acceptance_rate", accepted as f64 / cfg.iterations as f64)
        .set_num(
            "mean_log_score",
            samples.iter().map(|s| s.log_score).sum::<f64>() / k,
        )
        .set("map_dag", edges_cell(&map_dag))
        .set_num("map_frequency", map_count as f64 / k)
        .set("distinct_dags", graphs.len());
    let mut t = Table::new("edge_marginals", &["parent", "child", "probability"]);
    for u in 0..n {
        for v in 0..n {
            if edge_counts[u][v] > 0 {
                t.push(vec![
                    names[u].clone(),
                    names[v].clone(),
                    fmt_num(edge_counts[u][v] as f64 / k),
                ]);
            }
        }
    }
    report.add_table(t);
    if let Some(path) = &args.trace {
        let mut out = String::new();
        for (s, (mv, acc)) in samples.iter().zip(&moves) {
            let g = s.dag.clone().with_names(names.clone())?;
            let edges: Vec<[&str; 2]> = g
                .edges()
                .iter()
                .map(|&(u, v)| [names[u].as_str(), names[v].as_str()])
                .collect();
            let rec = json!({
                "iteration": s.iteration,
                "log_score": s.log_score,
                "move": move_text(&g, *mv),
                "accepted": acc,
                "edges": edges,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        write_file(path, &out)?;
    }
    Ok(report)
}

pub fn cmd_bias_study(args: &BiasArgs, echo: &str) -> Result<RunReport, CliError> {
    if args.parents_max + 1 > args.n {
        return Err(CliError::Usage(format!(
            "--parents-max {} needs --n of at least {}",
            args.parents_max,
            args.parents_max + 1
        )));
    }
    let mut sizes = args.sample_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 || sizes[0] == 0 {
        return Err(CliError::Usage(
            "--sample-sizes needs at least two distinct positive sizes".into(),
        ));
    }
    let prior = build_prior(&args.prior, args.n)?;
    let cfg = BiasConfig {
        n: args.n,
        parents_max: args.parents_max,
        sample_sizes: args.sample_sizes.clone(),
        seed: args.common.seed,
    };
    let study = bias_study(&cfg, |_| prior.clone())?;
    let mut report = RunReport::new();
    report
        .set("command", echo)
        .set("n_vars", args.n)
        .set("parents_max", args.parents_max)
        .set(
            "sample_sizes",
            args.sample_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    echo_prior(&mut report, &prior);
    report.set("seed", args.common.seed);
    study.write_into(&mut report);
    Ok(report)
}

/// Parses `args` (program name first) and runs the command. Help and
/// version requests come back as `Ok` text.
pub fn run<I, S>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(e.to_string()),
                _ => Err(CliError::Usage(e.to_string())),
            };
        }
    };
    let mut echo = vec!["bge".to_string()];
    echo.extend(args.iter().skip(1).cloned());
    let echo = echo.join(" ");
    let start = Instant::now();
    let (mut report, timing) = match &cli.command {
        Command::Score(a) => (cmd_score(a, &echo)?, a.common.timing),
        Command::Compare(a) => (cmd_compare(a, &echo)?, a.common.timing),
        Command::Search(a) => (cmd_search(a, &echo)?, a.common.timing),
        Command::Mcmc(a) => (cmd_mcmc(a, &echo)?, a.common.timing),
        Command::BiasStudy(a) => (cmd_bias_study(a, &echo)?, a.common.timing),
    };
    if timing {
        report.set_num("elapsed_ms", start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(report.to_string())
}

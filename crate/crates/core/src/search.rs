//! Greedy hill climbing and Metropolis-Hastings structure MCMC over DAGs.
//!
//! Both procedures score candidate moves through [`score_delta`], so a move
//! only touches the families it alters and everything else comes out of the
//! shared [`ScoreCache`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dag::{random_dag, Dag, Move};
use crate::data::ScoreMode;
use crate::error::{Error, Result};
use crate::score::{dag_log_score, family_delta, CacheStats, ScoreCache, ScoreContext};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// In-degree bound; `None` leaves it open.
    pub max_parents: Option<usize>,
    /// Accepted moves per restart. Zero returns the start graph.
    pub max_iterations: usize,
    /// Extra restarts from random graphs after the one from the empty graph.
    pub restarts: usize,
    pub seed: u64,
    pub improvement_threshold: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_parents: None,
            max_iterations: 1000,
            restarts: 0,
            seed: 0,
            improvement_threshold: 1e-12,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.improvement_threshold >= 0.0) {
            return Err(Error::InvalidConfig(
                "improvement_threshold must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One accepted hill-climbing move, or the start of a restart (`mv` empty).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub restart: usize,
    pub iteration: usize,
    pub log_score: f64,
    #[serde(rename = "move")]
    pub mv: Option<Move>,
    pub delta: f64,
    /// Local scores evaluated while rescoring the accepted graph.
    pub accept_evaluations: u64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub dag: Dag,
    pub log_score: f64,
    /// Index of the restart that produced `dag`.
    pub best_restart: usize,
    /// Records of all restarts, in restart order.
    pub trace: Vec<TraceRecord>,
    pub cache: CacheStats,
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Starting graph of restart `r`: empty for 0, seeded random otherwise.
pub fn restart_start(n: usize, cfg: &SearchConfig, r: usize) -> Dag {
    if r == 0 {
        return Dag::empty(n);
    }
    let cap = cfg.max_parents.unwrap_or(n);
    random_dag(n, cap, 0.2, restart_seed(cfg.seed, r))
}

/// Hill climbing under the bge score with a fresh cache.
pub fn hill_climb(ctx: &ScoreContext, cfg: &SearchConfig) -> Result<SearchResult> {
    hill_climb_with(ctx, cfg, &ScoreCache::new(), ScoreMode::Bge)
}

/// Hill climbing with a caller-provided cache. Restarts run in parallel and
/// share the cache; the result does not depend on scheduling.
pub fn hill_climb_with(
    ctx: &ScoreContext,
    cfg: &SearchConfig,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<SearchResult> {
    cfg.validate()?;
    let runs = (0..=cfg.restarts)
        .into_par_iter()
        .map(|r| climb_from(restart_start(ctx.n(), cfg, r), r, ctx, cfg, cache, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1 > runs[best].1 {
            best = i;
        }
    }
    let trace = runs.iter().flat_map(|run| run.2.iter().cloned()).collect();
    let (dag, log_score, _) = runs.into_iter().nth(best).expect("at least one restart");
    Ok(SearchResult {
        dag,
        log_score,
        best_restart: best,
        trace,
        cache: cache.stats(),
    })
}

/// Greedy ascent from `start`. Ties go to the first move in
/// [`Dag::legal_moves`] order.
pub fn climb_from(
    start: Dag,
    restart: usize,
    ctx: &ScoreContext,
    cfg: &SearchConfig,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<(Dag, f64, Vec<TraceRecord>)> {
    let mut g = start;
    let mut score = dag_log_score(&g, ctx, cache, mode)?;
    let mut trace = vec![TraceRecord {
        restart,
        iteration: 0,
        log_score: score,
        mv: None,
        delta: 0.0,
        accept_evaluations: 0,
    }];
    for iteration in 1..=cfg.max_iterations {
        debug_assert!(g.is_acyclic());
        let mut best: Option<(Move, Dag, f64)> = None;
        for mv in g.legal_moves(cfg.max_parents) {
            let next = g.apply(mv)?;
            let delta = family_delta(&g, &next, mv, ctx, cache, mode)?;
            if best.as_ref().is_none_or(|b| delta > b.2) {
                best = Some((mv, next, delta));
            }
        }
        let Some((mv, next, delta)) = best else { break };
        if delta <= cfg.improvement_threshold {
            break;
        }
        let before = cache.stats().evaluations;
        let rescored = dag_log_score(&next, ctx, cache, mode)?;
        let accept_evaluations = cache.stats().evaluations - before;
        g = next;
        score = rescored;
        trace.push(TraceRecord {
            restart,
            iteration,
            log_score: score,
            mv: Some(mv),
            delta,
            accept_evaluations,
        });
    }
    Ok((g, score, trace))
}

/// Structure prior on DAGs, as a log weight up to a constant.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub enum StructurePrior {
    #[default]
    Uniform,
    /// `-gamma * |E|`.
    PerEdgePenalty(f64),
}

impl StructurePrior {
    pub fn log_weight(&self, g: &Dag) -> f64 {
        match *self {
            StructurePrior::Uniform => 0.0,
            StructurePrior::PerEdgePenalty(gamma) => -gamma * g.n_edges() as f64,
        }
    }

    pub fn delta(&self, mv: Move) -> f64 {
        match *self {
            StructurePrior::Uniform => 0.0,
            StructurePrior::PerEdgePenalty(gamma) => -gamma * mv.edge_delta() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub structure_prior: StructurePrior,
    pub max_parents: Option<usize>,
    /// Starting graph; empty when absent.
    pub initial: Option<Dag>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 10_000,
            burn_in: 1000,
            thinning: 1,
            seed: 0,
            structure_prior: StructurePrior::Uniform,
            max_parents: None,
            initial: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be at least 1".into()));
        }
        if let StructurePrior::PerEdgePenalty(g) = self.structure_prior {
            if !g.is_finite() {
                return Err(Error::InvalidConfig("edge penalty must be finite".into()));
            }
        }
        if let Some(g) = &self.initial {
            if g.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: g.n(),
                });
            }
            if let Some(m) = self.max_parents {
                if g.parent_sets().iter().any(|p| p.len() > m) {
                    return Err(Error::InvalidConfig(
                        "initial graph exceeds max_parents".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct McmcSample {
    pub dag: Dag,
    pub log_score: f64,
    pub iteration: usize,
}

/// Outcome of one Metropolis-Hastings proposal.
#[derive(Clone, Debug)]
pub struct Step {
    pub dag: Dag,
    pub log_score: f64,
    pub proposed: Option<Move>,
    pub accepted: bool,
    pub log_acceptance: f64,
}

/// Log Metropolis-Hastings ratio for moving `g -> g.apply(mv)`: score
/// delta, prior delta and the neighbourhood-size correction.
pub fn log_acceptance_ratio(
    g: &Dag,
    mv: Move,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
    prior: StructurePrior,
    max_parents: Option<usize>,
) -> Result<f64> {
    let next = g.apply(mv)?;
    let nbd = g.legal_moves(max_parents).len();
    ratio_with(g, &next, mv, nbd, ctx, cache, mode, prior, max_parents)
}

#[allow(clippy::too_many_arguments)]
fn ratio_with(
    g: &Dag,
    next: &Dag,
    mv: Move,
    nbd: usize,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
    prior: StructurePrior,
    max_parents: Option<usize>,
) -> Result<f64> {
    let nbd_next = next.legal_moves(max_parents).len();
    let delta = family_delta(g, next, mv, ctx, cache, mode)?;
    Ok(delta + prior.delta(mv) + (nbd as f64).ln() - (nbd_next as f64).ln())
}

/// One proposal from `g` (whose total score is `log_score`).
#[allow(clippy::too_many_arguments)]
pub fn mcmc_step<R: Rng>(
    g: &Dag,
    log_score: f64,
    rng: &mut R,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
    prior: StructurePrior,
    max_parents: Option<usize>,
) -> Result<Step> {
    let moves = g.legal_moves(max_parents);
    if moves.is_empty() {
        return Ok(Step {
            dag: g.clone(),
            log_score,
            proposed: None,
            accepted: false,
            log_acceptance: f64::NEG_INFINITY,
        });
    }
    let mv = moves[rng.random_range(0..moves.len())];
    let next = g.apply(mv)?;
    let log_acceptance = ratio_with(
        g,
        &next,
        mv,
        moves.len(),
        ctx,
        cache,
        mode,
        prior,
        max_parents,
    )?;
    let u: f64 = rng.random();
    if log_acceptance >= 0.0 || u.ln() < log_acceptance {
        let log_score = dag_log_score(&next, ctx, cache, mode)?;
        debug_assert!(next.is_acyclic());
        Ok(Step {
            dag: next,
            log_score,
            proposed: Some(mv),
            accepted: true,
            log_acceptance,
        })
    } else {
        Ok(Step {
            dag: g.clone(),
            log_score,
            proposed: Some(mv),
            accepted: false,
            log_acceptance,
        })
    }
}

/// Structure MCMC under the bge score with a fresh cache.
pub fn structure_mcmc(ctx: &ScoreContext, cfg: &McmcConfig) -> Result<Vec<McmcSample>> {
    structure_mcmc_with(ctx, cfg, &ScoreCache::new(), ScoreMode::Bge, |_, _| {})
}

/// Runs the chain; `on_step(iteration, step)` sees every proposal. Samples
/// are kept for iterations `burn_in, burn_in + thinning, ...`.
pub fn structure_mcmc_with<F: FnMut(usize, &Step)>(
    ctx: &ScoreContext,
    cfg: &McmcConfig,
    cache: &ScoreCache,
    mode: ScoreMode,
    mut on_step: F,
) -> Result<Vec<McmcSample>> {
    cfg.validate(ctx.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = cfg.initial.clone().unwrap_or_else(|| Dag::empty(ctx.n()));
    let mut score = dag_log_score(&g, ctx, cache, mode)?;
    let mut samples = Vec::with_capacity((cfg.iterations - cfg.burn_in).div_ceil(cfg.thinning));
    for it in 0..cfg.iterations {
        let step = mcmc_step(
            &g,
            score,
            &mut rng,
            ctx,
            cache,
            mode,
            cfg.structure_prior,
            cfg.max_parents,
        )?;
        on_step(it, &step);
        g = step.dag;
        score = step.log_score;
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thinning == 0 {
            samples.push(McmcSample {
                dag: g.clone(),
                log_score: score,
                iteration: it,
            });
        }
    }
    Ok(samples)
}

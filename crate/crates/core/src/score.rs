//! BGe marginal likelihoods, per-family local scores and the memo cache.
//!
//! The marginal likelihood of a complete Gaussian DAG restricted to a subset
//! `Y` of size `l` is
//!
//! ```text
//! ln p(d^Y) = (l/2) ln(α_μ/(N+α_μ)) + ln Γ_l((N+α_w-n+l)/2) - ln Γ_l((α_w-n+l)/2)
//!           - (lN/2) ln π + ((α_w-n+l)/2) ln|T_YY| - ((N+α_w-n+l)/2) ln|R_YY|
//! ```
//!
//! and a DAG scores as `Σ_i ln p(d^{Pa_i ∪ {i}}) - ln p(d^{Pa_i})`. The
//! production local score collapses each ratio to a single ordinary-gamma
//! ratio and reads both determinants off one Cholesky factor of the family
//! with the child ordered last, so the node's conditional variance is the
//! final pivot. The two-subset difference is kept as [`ScorePath::Naive`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use crate::dag::{Dag, Move};
use crate::data::{
    posterior_matrix, posterior_matrix_with_scatter, sufficient_stats, Dataset, PosteriorMatrix,
    PriorConfig, ScoreMode, SuffStats,
};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_ordered, ln_compensated, ln_gamma, log_multigamma_compensated,
    logdet_submatrix_compensated, Compensated, IndexSet, SpdMatrix,
};

/// How local scores are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScorePath {
    /// Single gamma ratio and one factorization per family.
    #[default]
    Simplified,
    /// Difference of two subset marginal likelihoods. Verification only.
    Naive,
}

/// Everything needed to score families for one dataset and prior.
#[derive(Clone, Debug)]
pub struct ScoreContext {
    prior: PriorConfig,
    stats: SuffStats,
    r: PosteriorMatrix,
    r_legacy: SpdMatrix,
    r_inv: SpdMatrix,
    t_inv: SpdMatrix,
    bge_consts: Vec<f64>,
    hg95_consts: Vec<f64>,
    path: ScorePath,
}

impl ScoreContext {
    pub fn new(stats: SuffStats, prior: PriorConfig) -> Result<Self> {
        prior.validate()?;
        let n = stats.n_vars();
        if prior.n_vars() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: prior.n_vars(),
            });
        }
        let r = posterior_matrix(&stats, &prior)?;
        let r_legacy = if prior.hg95_sample_variance && stats.n_obs > 1 {
            let scaled = stats.scatter.scale(1.0 / (stats.n_obs as f64 - 1.0));
            posterior_matrix_with_scatter(&scaled, &stats, &prior)?.0
        } else {
            r.0.clone()
        };
        let r_inv = r.0.inverse()?;
        let t_inv = prior.t.inverse()?;

        let big_n = stats.n_obs as f64;
        let (nf, aw, am) = (n as f64, prior.alpha_w, prior.alpha_mu);
        let mut shared = Compensated::new();
        shared
            .add_product(0.5, (am / (big_n + am)).ln())
            .add_product(-big_n / 2.0, PI.ln());
        let bge_consts: Vec<f64> = (0..=n)
            .map(|l| {
                let m = aw - nf + l as f64;
                let mut c = shared;
                c.add(ln_gamma((big_n + m + 1.0) / 2.0))
                    .add(-ln_gamma((m + 1.0) / 2.0));
                c.value()
            })
            .collect();
        let hg95_consts: Vec<f64> = (0..n)
            .map(|l| {
                let l = l as f64;
                let mut c = shared;
                c.add(ln_gamma((big_n + aw - l) / 2.0))
                    .add(-ln_gamma((aw - l) / 2.0));
                c.value()
            })
            .collect();
        if let Some(bad) = bge_consts
            .iter()
            .chain(&hg95_consts)
            .find(|v| !v.is_finite())
        {
            return Err(Error::Domain(format!("non-finite score constant {bad}")));
        }
        Ok(ScoreContext {
            prior,
            stats,
            r,
            r_legacy,
            r_inv,
            t_inv,
            bge_consts,
            hg95_consts,
            path: ScorePath::Simplified,
        })
    }

    pub fn from_dataset(d: &Dataset, prior: PriorConfig) -> Result<Self> {
        Self::new(sufficient_stats(d), prior)
    }

    pub fn with_path(mut self, path: ScorePath) -> Self {
        self.path = path;
        self
    }

    pub fn path(&self) -> ScorePath {
        self.path
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn stats(&self) -> &SuffStats {
        &self.stats
    }

    pub fn posterior(&self) -> &PosteriorMatrix {
        &self.r
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.stats.n_vars()
    }

    /// Number of observations.
    pub fn n_obs(&self) -> usize {
        self.stats.n_obs
    }

    /// Family-independent part of the corrected local score, by parent count.
    pub fn bge_constants(&self) -> &[f64] {
        &self.bge_consts
    }

    pub fn hg95_constants(&self) -> &[f64] {
        &self.hg95_consts
    }

    fn check_family(&self, node: usize, parents: &IndexSet) -> Result<()> {
        let n = self.n();
        if node >= n {
            return Err(Error::InvalidIndexSet(format!(
                "node {node} out of range for {n} variables"
            )));
        }
        parents.check_bound(n)?;
        if parents.contains(node) {
            return Err(Error::InvalidFamily { node });
        }
        Ok(())
    }
}

/// One factor of the modular DAG score, in natural-log units.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalScore {
    pub value: f64,
    pub node: usize,
    pub parents: IndexSet,
    pub mode: ScoreMode,
}

fn subset_terms(y: &IndexSet, ctx: &ScoreContext, mode: ScoreMode) -> Result<f64> {
    Ok(subset_terms_compensated(y, ctx, mode)?.value())
}

fn subset_terms_compensated(
    y: &IndexSet,
    ctx: &ScoreContext,
    mode: ScoreMode,
) -> Result<Compensated> {
    y.check_bound(ctx.n())?;
    if y.is_empty() {
        return Ok(Compensated::new());
    }
    let l = y.len() as f64;
    let big_n = ctx.n_obs() as f64;
    let p = &ctx.prior;
    let (nf, aw, am) = (ctx.n() as f64, p.alpha_w, p.alpha_mu);
    // (prior exponent, posterior exponent) as twice the power
    let (prior_df, post_df) = match mode {
        ScoreMode::Bge | ScoreMode::Gh02 => (aw - nf + l, big_n + aw - nf + l),
        ScoreMode::Hg95 => (aw, big_n + aw),
    };
    let ld = logdet_submatrix_compensated;
    let (ld_t, ld_r, sign) = match mode {
        ScoreMode::Bge => (ld(&p.t, y)?, ld(&ctx.r.0, y)?, 1.0),
        ScoreMode::Hg95 => (ld(&p.t, y)?, ld(&ctx.r_legacy, y)?, 1.0),
        ScoreMode::Gh02 => (ld(&ctx.t_inv, y)?, ld(&ctx.r_inv, y)?, -1.0),
    };
    let l_usize = y.len();
    let mut acc = Compensated::new();
    acc.add_product(l / 2.0, (am / (big_n + am)).ln())
        .add_scaled(&log_multigamma_compensated(l_usize, post_df)?, 1.0)
        .add_scaled(&log_multigamma_compensated(l_usize, prior_df)?, -1.0)
        .add_product(-l * big_n / 2.0, PI.ln())
        .add_product_compensated(sign * prior_df / 2.0, &ld_t)
        .add_product_compensated(-sign * post_df / 2.0, &ld_r);
    Ok(acc)
}

/// `ln p(d^Y)` for the corrected score; `0` for the empty set.
pub fn log_marginal_subset(y: &IndexSet, ctx: &ScoreContext) -> Result<f64> {
    subset_terms(y, ctx, ScoreMode::Bge)
}

/// Subset marginal with the legacy fixed exponents `α_w/2` and `(N+α_w)/2`.
pub fn legacy_hg95_log_marginal_subset(y: &IndexSet, ctx: &ScoreContext) -> Result<f64> {
    subset_terms(y, ctx, ScoreMode::Hg95)
}

/// Corrected exponents with `A_YY` replaced by `((A^{-1})_YY)^{-1}`.
pub fn legacy_gh02_log_marginal_subset(y: &IndexSet, ctx: &ScoreContext) -> Result<f64> {
    subset_terms(y, ctx, ScoreMode::Gh02)
}

pub fn log_marginal_subset_mode(y: &IndexSet, ctx: &ScoreContext, mode: ScoreMode) -> Result<f64> {
    subset_terms(y, ctx, mode)
}

/// Log of the last pivot and log-determinant of the leading block, for the
/// family ordered as `[parents..., node]`.
fn family_factor(a: &SpdMatrix, order: &[usize]) -> Result<(Compensated, Compensated)> {
    let l = order.len() - 1;
    let f = cholesky_ordered(a, order)?;
    Ok((ln_compensated(f.diag(l)), f.logdet_leading_compensated(l)))
}

fn simplified_local(
    node: usize,
    parents: &IndexSet,
    ctx: &ScoreContext,
    mode: ScoreMode,
) -> Result<f64> {
    let mut order: Vec<usize> = parents.as_slice().to_vec();
    order.push(node);
    let l = parents.len();
    let big_n = ctx.n_obs() as f64;
    let aw = ctx.prior.alpha_w;
    match mode {
        ScoreMode::Bge => {
            let m = aw - ctx.n() as f64 + l as f64;
            let (piv_t, lead_t) = family_factor(&ctx.prior.t, &order)?;
            let (piv_r, lead_r) = family_factor(&ctx.r.0, &order)?;
            Ok(Compensated::new()
                .add(ctx.bge_consts[l])
                .add_product_compensated(0.5, &lead_t)
                .add_product_compensated(m + 1.0, &piv_t)
                .add_product_compensated(-0.5, &lead_r)
                .add_product_compensated(-(big_n + m + 1.0), &piv_r)
                .value())
        }
        ScoreMode::Gh02 => {
            // ln|A_Y| = -ln|(A^{-1})_YY|; the inverse's pivots enter negated
            let m = aw - ctx.n() as f64 + l as f64;
            let (piv_t, lead_t) = family_factor(&ctx.t_inv, &order)?;
            let (piv_r, lead_r) = family_factor(&ctx.r_inv, &order)?;
            Ok(Compensated::new()
                .add(ctx.bge_consts[l])
                .add_product_compensated(-0.5, &lead_t)
                .add_product_compensated(-(m + 1.0), &piv_t)
                .add_product_compensated(0.5, &lead_r)
                .add_product_compensated(big_n + m + 1.0, &piv_r)
                .value())
        }
        ScoreMode::Hg95 => {
            let (piv_t, _) = family_factor(&ctx.prior.t, &order)?;
            let (piv_r, _) = family_factor(&ctx.r_legacy, &order)?;
            Ok(Compensated::new()
                .add(ctx.hg95_consts[l])
                .add_product_compensated(aw, &piv_t)
                .add_product_compensated(-(big_n + aw), &piv_r)
                .value())
        }
    }
}

fn naive_local(
    node: usize,
    parents: &IndexSet,
    ctx: &ScoreContext,
    mode: ScoreMode,
) -> Result<f64> {
    let mut acc = subset_terms_compensated(&parents.with(node), ctx, mode)?;
    acc.add_scaled(&subset_terms_compensated(parents, ctx, mode)?, -1.0);
    Ok(acc.value())
}

/// Local score of `node` given `parents`, via the context's [`ScorePath`].
pub fn local_log_score(
    node: usize,
    parents: &IndexSet,
    ctx: &ScoreContext,
    mode: ScoreMode,
) -> Result<LocalScore> {
    ctx.check_family(node, parents)?;
    let value = match ctx.path {
        ScorePath::Simplified => simplified_local(node, parents, ctx, mode)?,
        ScorePath::Naive => naive_local(node, parents, ctx, mode)?,
    };
    if !value.is_finite() {
        return Err(Error::Domain(format!(
            "local score of node {node} given {parents} is {value}"
        )));
    }
    Ok(LocalScore {
        value,
        node,
        parents: parents.clone(),
        mode,
    })
}

/// Local score as a difference of two subset marginals, regardless of the
/// context's path.
pub fn local_log_score_naive(
    node: usize,
    parents: &IndexSet,
    ctx: &ScoreContext,
    mode: ScoreMode,
) -> Result<f64> {
    ctx.check_family(node, parents)?;
    naive_local(node, parents, ctx, mode)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct FamilyKey {
    node: usize,
    parents: IndexSet,
    mode: ScoreMode,
}

/// Counter snapshot of a [`ScoreCache`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Local-score computations performed on behalf of callers.
    pub evaluations: u64,
    /// Distinct families stored.
    pub entries: usize,
}

/// Memo table from `(node, parents, mode)` to local score for one
/// [`ScoreContext`]. Readers share the table; inserts take the write lock.
/// Two threads may race to evaluate the same family; the value is a pure
/// function of the key, so whichever insert lands last is identical.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: RwLock<HashMap<FamilyKey, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
    evaluations: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached value without evaluating or touching counters.
    pub fn peek(&self, node: usize, parents: &IndexSet, mode: ScoreMode) -> Option<f64> {
        let key = FamilyKey {
            node,
            parents: parents.clone(),
            mode,
        };
        self.map
            .read()
            .expect("cache lock poisoned")
            .get(&key)
            .copied()
    }

    pub fn local(
        &self,
        ctx: &ScoreContext,
        node: usize,
        parents: &IndexSet,
        mode: ScoreMode,
    ) -> Result<LocalScore> {
        let key = FamilyKey {
            node,
            parents: parents.clone(),
            mode,
        };
        if let Some(&value) = self.map.read().expect("cache lock poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(LocalScore {
                value,
                node,
                parents: key.parents,
                mode,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let score = local_log_score(node, parents, ctx, mode)?;
        self.map
            .write()
            .expect("cache lock poisoned")
            .insert(key, score.value);
        Ok(score)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evaluations: self.evaluations.load(Ordering::Relaxed),
            entries: self.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_graph(g: &Dag, ctx: &ScoreContext) -> Result<()> {
    if g.n() != ctx.n() {
        return Err(Error::DimensionMismatch {
            expected: ctx.n(),
            found: g.n(),
        });
    }
    if !g.is_acyclic() {
        return Err(Error::CyclicGraph);
    }
    Ok(())
}

/// Per-node local scores of `g`, in node order.
pub fn dag_local_scores(
    g: &Dag,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<Vec<LocalScore>> {
    check_graph(g, ctx)?;
    (0..g.n())
        .map(|v| cache.local(ctx, v, g.parents(v), mode))
        .collect()
}

/// Total log marginal likelihood of `g`.
pub fn dag_log_score(
    g: &Dag,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<f64> {
    Ok(dag_local_scores(g, ctx, cache, mode)?
        .iter()
        .map(|s| s.value)
        .sum())
}

/// Score change from applying `mv` to `g`, touching only the one or two
/// families the move alters.
pub fn score_delta(
    g: &Dag,
    mv: Move,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<f64> {
    let next = g.apply(mv)?;
    family_delta(g, &next, mv, ctx, cache, mode)
}

/// Like [`score_delta`] when the moved graph is already at hand.
pub(crate) fn family_delta(
    g: &Dag,
    next: &Dag,
    mv: Move,
    ctx: &ScoreContext,
    cache: &ScoreCache,
    mode: ScoreMode,
) -> Result<f64> {
    let mut delta = 0.0;
    for v in mv.affected_nodes() {
        delta += cache.local(ctx, v, next.parents(v), mode)?.value
            - cache.local(ctx, v, g.parents(v), mode)?.value;
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{random_dag, sample_gaussian_data, EdgeWeights};
    use crate::data::default_prior;
    use crate::linalg::{logdet_submatrix, SymMatrix};

    fn fixture(n: usize, n_obs: usize, seed: u64) -> Dataset {
        let g = random_dag(n, n - 1, 0.5, seed);
        sample_gaussian_data(
            &g,
            &EdgeWeights::random(&g, 0.5, 1.5, seed + 1),
            1.0,
            n_obs,
            seed + 2,
        )
        .unwrap()
    }

    fn ctx(n: usize, n_obs: usize, seed: u64) -> ScoreContext {
        ScoreContext::from_dataset(&fixture(n, n_obs, seed), default_prior(n)).unwrap()
    }

    fn set(v: &[usize]) -> IndexSet {
        IndexSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn empty_subset_scores_zero() {
        let c = ctx(3, 20, 1);
        for mode in ScoreMode::ALL {
            assert_eq!(
                log_marginal_subset_mode(&IndexSet::empty(), &c, mode).unwrap(),
                0.0
            );
        }
    }

    /// `n = 2`, `Y = {0,1}`, `N = 3`, with the 2x2 determinants and the
    /// multivariate gamma expanded by hand.
    #[test]
    fn two_variable_subset_matches_direct_formula() {
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.3, -1.2], vec![1.7, 0.4], vec![-0.6, 0.9]],
        )
        .unwrap();
        let prior = default_prior(2);
        let c = ScoreContext::from_dataset(&d, prior.clone()).unwrap();
        // direct assembly of R with explicit loops
        let xbar = [(0.3 + 1.7 - 0.6) / 3.0, (-1.2 + 0.4 + 0.9) / 3.0];
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = d.rows().map(|x| (x[i] - xbar[i]) * (x[j] - xbar[j])).sum();
                r[i][j] = prior.t.get(i, j) + s + 3.0 * 1.0 / 4.0 * xbar[i] * xbar[j];
            }
        }
        let det_r = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        let det_t = prior.t.get(0, 0) * prior.t.get(1, 1);
        let (big_n, aw) = (3.0, prior.alpha_w);
        let m = aw - 2.0 + 2.0;
        let lgam2 = |x: f64| 0.5 * PI.ln() + ln_gamma(x / 2.0) + ln_gamma((x - 1.0) / 2.0);
        let want = (1.0f64 / 4.0).ln() + lgam2(big_n + m) - lgam2(m) - big_n * PI.ln()
            + m / 2.0 * det_t.ln()
            - (big_n + m) / 2.0 * det_r.ln();
        let got = log_marginal_subset(&IndexSet::full(2), &c).unwrap();
        assert!((got - want).abs() < 1e-11, "{got} vs {want}");
    }

    #[test]
    fn simplified_equals_naive_across_modes() {
        for seed in 0..20 {
            let c = ctx(6, 40 + 13 * seed as usize, seed);
            let naive = c.clone().with_path(ScorePath::Naive);
            for node in 0..6 {
                for mask in 0u32..64 {
                    if mask & (1 << node) != 0 {
                        continue;
                    }
                    let pa =
                        IndexSet::new((0..6).filter(|i| mask & (1 << i) != 0).collect()).unwrap();
                    for mode in ScoreMode::ALL {
                        let a = local_log_score(node, &pa, &c, mode).unwrap().value;
                        let b = local_log_score(node, &pa, &naive, mode).unwrap().value;
                        assert!(
                            (a - b).abs() < 1e-10,
                            "{mode} node {node} pa {pa}: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn root_local_score_is_singleton_marginal() {
        let c = ctx(4, 30, 3);
        for node in 0..4 {
            let a = local_log_score(node, &IndexSet::empty(), &c, ScoreMode::Bge)
                .unwrap()
                .value;
            let b = log_marginal_subset(&IndexSet::singleton(node), &c).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn node_in_own_parents_is_rejected() {
        let c = ctx(3, 10, 4);
        assert!(matches!(
            local_log_score(1, &set(&[0, 1]), &c, ScoreMode::Bge),
            Err(Error::InvalidFamily { node: 1 })
        ));
    }

    #[test]
    fn gh02_matches_bge_on_t_terms_with_diagonal_t() {
        // with T diagonal and R replaced by a diagonal matrix too, both modes coincide
        let d = fixture(4, 25, 5);
        let prior = default_prior(4);
        let c = ScoreContext::from_dataset(&d, prior.clone()).unwrap();
        for y in [set(&[0]), set(&[1, 3]), set(&[0, 2, 3])] {
            let bge_t = logdet_submatrix(&prior.t, &y).unwrap();
            let gh_t = -logdet_submatrix(&c.t_inv, &y).unwrap();
            assert_eq!(bge_t, gh_t);
        }
        let mut diag = c.clone();
        let rdiag: Vec<f64> = (0..4).map(|i| c.r.0.get(i, i)).collect();
        diag.r = PosteriorMatrix(SpdMatrix::new(SymMatrix::diagonal(&rdiag)).unwrap());
        diag.r_inv = diag.r.0.inverse().unwrap();
        for (node, pa) in [(0, set(&[])), (2, set(&[0, 1])), (3, set(&[0, 1, 2]))] {
            let a = local_log_score(node, &pa, &diag, ScoreMode::Bge)
                .unwrap()
                .value;
            let b = local_log_score(node, &pa, &diag, ScoreMode::Gh02)
                .unwrap()
                .value;
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn legacy_subset_cases() {
        let c = ctx(3, 100, 6);
        assert_eq!(
            legacy_hg95_log_marginal_subset(&IndexSet::empty(), &c).unwrap(),
            0.0
        );
        let full = IndexSet::full(3);
        let a = legacy_hg95_log_marginal_subset(&full, &c).unwrap();
        let b = log_marginal_subset(&full, &c).unwrap();
        assert!((a - b).abs() < 1e-9 * b.abs());

        // the gap is O(1) in N: the ln N terms of the gamma ratio and the
        // determinant power cancel, so successive gaps settle down
        let y = IndexSet::singleton(0);
        let mut gaps = Vec::new();
        for n_obs in [100, 1000, 10000] {
            let c = ScoreContext::from_dataset(&fixture(3, n_obs, 6), default_prior(3)).unwrap();
            let gap = log_marginal_subset(&y, &c).unwrap()
                - legacy_hg95_log_marginal_subset(&y, &c).unwrap();
            gaps.push(gap);
        }
        assert!(gaps[0].abs() > 1e-3);
        assert!(
            (gaps[2] - gaps[1]).abs() < (gaps[1] - gaps[0]).abs(),
            "{gaps:?}"
        );
    }

    #[test]
    fn hg95_sample_variance_toggle_changes_only_hg95() {
        let d = fixture(3, 50, 7);
        let mut prior = default_prior(3);
        let plain = ScoreContext::from_dataset(&d, prior.clone()).unwrap();
        prior.hg95_sample_variance = true;
        let toggled = ScoreContext::from_dataset(&d, prior).unwrap();
        let pa = set(&[0]);
        let bge = |c: &ScoreContext| local_log_score(1, &pa, c, ScoreMode::Bge).unwrap().value;
        let hg = |c: &ScoreContext| local_log_score(1, &pa, c, ScoreMode::Hg95).unwrap().value;
        assert_eq!(bge(&plain), bge(&toggled));
        assert_ne!(hg(&plain), hg(&toggled));
    }

    #[test]
    fn empty_graph_is_sum_of_singletons() {
        let c = ctx(4, 30, 8);
        let cache = ScoreCache::new();
        let total = dag_log_score(&Dag::empty(4), &c, &cache, ScoreMode::Bge).unwrap();
        let want: f64 = (0..4)
            .map(|i| log_marginal_subset(&IndexSet::singleton(i), &c).unwrap())
            .sum();
        assert!((total - want).abs() < 1e-10);
    }

    #[test]
    fn complete_dag_telescopes() {
        let c = ctx(5, 60, 9);
        let cache = ScoreCache::new();
        let perm = [3usize, 0, 4, 1, 2];
        let mut edges = Vec::new();
        for i in 0..5 {
            for j in (i + 1)..5 {
                edges.push((perm[i], perm[j]));
            }
        }
        let g = Dag::from_edges(5, &edges).unwrap();
        let total = dag_log_score(&g, &c, &cache, ScoreMode::Bge).unwrap();
        let full = log_marginal_subset(&IndexSet::full(5), &c).unwrap();
        assert!((total - full).abs() < 1e-10);
    }

    #[test]
    fn reversed_chains_score_equally() {
        let c = ctx(3, 40, 10);
        let cache = ScoreCache::new();
        let fwd = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let back = Dag::from_edges(3, &[(2, 1), (1, 0)]).unwrap();
        let a = dag_log_score(&fwd, &c, &cache, ScoreMode::Bge).unwrap();
        let b = dag_log_score(&back, &c, &cache, ScoreMode::Bge).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_when_scoring() {
        let c = ctx(3, 10, 11);
        assert!(dag_log_score(&Dag::empty(4), &c, &ScoreCache::new(), ScoreMode::Bge).is_err());
    }

    #[test]
    fn delta_matches_full_rescore_and_add_remove_cancels() {
        let c = ctx(5, 50, 12);
        for seed in 0..30 {
            let g = random_dag(5, 4, 0.4, seed);
            let cache = ScoreCache::new();
            let base = dag_log_score(&g, &c, &cache, ScoreMode::Bge).unwrap();
            for mv in g.legal_moves(None) {
                let delta = score_delta(&g, mv, &c, &cache, ScoreMode::Bge).unwrap();
                let h = g.apply(mv).unwrap();
                let full = dag_log_score(&h, &c, &cache, ScoreMode::Bge).unwrap();
                assert!((delta - (full - base)).abs() < 1e-11);
                if let Move::Add { .. } = mv {
                    let back = score_delta(&h, mv.inverse(), &c, &cache, ScoreMode::Bge).unwrap();
                    assert!((delta + back).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn illegal_delta_is_reported() {
        let c = ctx(3, 10, 13);
        let g = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let err = score_delta(
            &g,
            Move::Add { from: 2, to: 0 },
            &c,
            &ScoreCache::new(),
            ScoreMode::Bge,
        );
        assert!(matches!(err, Err(Error::IllegalMove(_))));
    }

    #[test]
    fn reversal_touches_exactly_two_families() {
        let c = ctx(4, 30, 14);
        let g = Dag::from_edges(4, &[(0, 1), (2, 1), (1, 3)]).unwrap();
        let cache = ScoreCache::new();
        score_delta(
            &g,
            Move::Reverse { from: 1, to: 3 },
            &c,
            &cache,
            ScoreMode::Bge,
        )
        .unwrap();
        let s = cache.stats();
        assert_eq!(s.evaluations, 4);
        assert!(cache.peek(1, &set(&[0, 2, 3]), ScoreMode::Bge).is_some());
        assert!(cache.peek(3, &set(&[]), ScoreMode::Bge).is_some());
        assert!(cache.peek(1, &set(&[0, 2]), ScoreMode::Bge).is_some());
        assert!(cache.peek(3, &set(&[1]), ScoreMode::Bge).is_some());
        score_delta(
            &g,
            Move::Reverse { from: 1, to: 3 },
            &c,
            &cache,
            ScoreMode::Bge,
        )
        .unwrap();
        assert_eq!(cache.stats().evaluations, 4);
        assert_eq!(cache.stats().hits, 4);
    }

    #[test]
    fn cache_hits_are_bit_identical() {
        let c = ctx(4, 30, 15);
        let cache = ScoreCache::new();
        let pa = set(&[0, 2]);
        let first = cache.local(&c, 3, &pa, ScoreMode::Gh02).unwrap();
        for _ in 0..5 {
            let again = cache.local(&c, 3, &pa, ScoreMode::Gh02).unwrap();
            assert_eq!(again.value.to_bits(), first.value.to_bits());
        }
        let fresh = local_log_score(3, &pa, &c, ScoreMode::Gh02).unwrap();
        assert_eq!(fresh.value.to_bits(), first.value.to_bits());
        let s = cache.stats();
        assert_eq!((s.hits, s.misses, s.evaluations, s.entries), (5, 1, 1, 1));
    }

    #[test]
    fn cache_is_shareable_across_threads() {
        let c = ctx(5, 40, 16);
        let cache = ScoreCache::new();
        std::thread::scope(|s| {
            for t in 0..4 {
                let (c, cache) = (&c, &cache);
                s.spawn(move || {
                    for seed in 0..20 {
                        let g = random_dag(5, 3, 0.5, seed + 100 * (t % 2));
                        dag_log_score(&g, c, cache, ScoreMode::Bge).unwrap();
                    }
                });
            }
        });
        let fresh = ScoreCache::new();
        for seed in 0..20 {
            let g = random_dag(5, 3, 0.5, seed);
            let a = dag_log_score(&g, &c, &cache, ScoreMode::Bge).unwrap();
            let b = dag_log_score(&g, &c, &fresh, ScoreMode::Bge).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn constant_tables_have_expected_shape() {
        let c = ctx(4, 20, 17);
        assert_eq!(c.bge_constants().len(), 5);
        assert_eq!(c.hg95_constants().len(), 4);
    }
}

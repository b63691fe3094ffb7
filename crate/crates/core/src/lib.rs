//! Marginal-likelihood scoring of Gaussian DAG models under a
//! normal-Wishart prior, with the legacy variants kept for comparison, and
//! score-based structure search built on the score's modularity.
//!
//! Module map:
//!
//! - [`linalg`]: SPD matrices, principal-submatrix log-determinants,
//!   multivariate log-gamma.
//! - [`data`]: datasets, sufficient statistics, priors, posterior matrix.
//! - [`score`]: subset marginals, local scores, DAG scores, score cache.
//! - [`dag`]: DAGs, moves, Markov equivalence, simulation.
//! - [`search`]: hill climbing and structure MCMC.

pub mod dag;
pub mod data;
pub mod error;
pub mod linalg;
pub mod score;
pub mod search;

pub use dag::{
    enumerate_dags, markov_equivalent, random_dag, sample_gaussian_data, Dag, EdgeWeights, Move,
};
pub use data::{
    default_prior, load_dataset, sufficient_stats, Dataset, PriorConfig, RankOneCoefficient,
    ScoreMode, SuffStats,
};
pub use error::{Error, Result};
pub use linalg::{IndexSet, SpdMatrix, SymMatrix};
pub use score::{
    dag_log_score, local_log_score, log_marginal_subset, score_delta, LocalScore, ScoreCache,
    ScoreContext, ScorePath,
};
pub use search::{
    hill_climb, structure_mcmc, McmcConfig, McmcSample, SearchConfig, SearchResult, StructurePrior,
};

//! Directed acyclic graphs, single-edge moves, Markov equivalence and
//! simulation of linear-Gaussian data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::IndexSet;

/// Kahn-style peeling on a raw parent list. Out-of-range parents make the
/// graph invalid and count as not acyclic.
pub fn is_acyclic(parents: &[IndexSet]) -> bool {
    topological_order_of(parents).is_some()
}

fn topological_order_of(parents: &[IndexSet]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (v, pa) in parents.iter().enumerate() {
        for u in pa {
            if u >= n || u == v {
                return None;
            }
            children[u].push(v);
            indeg[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &c in children[u].iter().rev() {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Single-edge modification of a DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Move {
    Add {
        from: usize,
        to: usize,
    },
    Remove {
        from: usize,
        to: usize,
    },
    /// Turns `from -> to` into `to -> from`.
    Reverse {
        from: usize,
        to: usize,
    },
}

impl Move {
    /// Nodes whose parent sets change.
    pub fn affected_nodes(&self) -> Vec<usize> {
        match *self {
            Move::Add { to, .. } | Move::Remove { to, .. } => vec![to],
            Move::Reverse { from, to } => vec![from, to],
        }
    }

    pub fn inverse(&self) -> Move {
        match *self {
            Move::Add { from, to } => Move::Remove { from, to },
            Move::Remove { from, to } => Move::Add { from, to },
            Move::Reverse { from, to } => Move::Reverse { from: to, to: from },
        }
    }

    /// Change in edge count.
    pub fn edge_delta(&self) -> i64 {
        match self {
            Move::Add { .. } => 1,
            Move::Remove { .. } => -1,
            Move::Reverse { .. } => 0,
        }
    }

    pub fn describe(&self, names: &[String]) -> String {
        match *self {
            Move::Add { from, to } => format!("add {} -> {}", names[from], names[to]),
            Move::Remove { from, to } => format!("remove {} -> {}", names[from], names[to]),
            Move::Reverse { from, to } => format!("reverse {} -> {}", names[from], names[to]),
        }
    }
}

/// Labeled DAG stored as one sorted parent set per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dag {
    parents: Vec<IndexSet>,
    names: Vec<String>,
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn check_names(names: &[String]) -> Result<()> {
    for (i, a) in names.iter().enumerate() {
        if a.is_empty() || a.contains(',') || a.chars().any(char::is_whitespace) {
            return Err(Error::InvalidGraph(format!(
                "node name `{a}` must be nonempty without commas or whitespace"
            )));
        }
        if names[..i].contains(a) {
            return Err(Error::InvalidGraph(format!("duplicate node name `{a}`")));
        }
    }
    Ok(())
}

impl Dag {
    /// Graph with no edges and names `x0, x1, ...`.
    pub fn empty(n: usize) -> Self {
        Dag {
            parents: vec![IndexSet::empty(); n],
            names: default_names(n),
        }
    }

    pub fn empty_named(names: Vec<String>) -> Result<Self> {
        check_names(&names)?;
        Ok(Dag {
            parents: vec![IndexSet::empty(); names.len()],
            names,
        })
    }

    pub fn from_parents(parents: Vec<IndexSet>) -> Result<Self> {
        let names = default_names(parents.len());
        Self::from_parents_named(parents, names)
    }

    pub fn from_parents_named(parents: Vec<IndexSet>, names: Vec<String>) -> Result<Self> {
        if names.len() != parents.len() {
            return Err(Error::DimensionMismatch {
                expected: parents.len(),
                found: names.len(),
            });
        }
        check_names(&names)?;
        let n = parents.len();
        for (v, pa) in parents.iter().enumerate() {
            if pa.contains(v) {
                return Err(Error::InvalidGraph(format!("self-loop on node {v}")));
            }
            pa.check_bound(n)?;
        }
        if !is_acyclic(&parents) {
            return Err(Error::CyclicGraph);
        }
        Ok(Dag { parents, names })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); n];
        for &(u, v) in edges {
            if v >= n {
                return Err(Error::InvalidGraph(format!("node {v} out of range")));
            }
            parents[v].push(u);
        }
        let parents = parents
            .into_iter()
            .map(IndexSet::new)
            .collect::<Result<Vec<_>>>()?;
        Self::from_parents(parents)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: names.len(),
            });
        }
        check_names(&names)?;
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self, v: usize) -> &IndexSet {
        &self.parents[v]
    }

    pub fn parent_sets(&self) -> &[IndexSet] {
        &self.parents
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.parents[v].contains(u)
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.has_edge(u, v) || self.has_edge(v, u)
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(IndexSet::len).sum()
    }

    /// Edges sorted by `(from, to)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(v, pa)| pa.iter().map(move |u| (u, v)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn is_acyclic(&self) -> bool {
        is_acyclic(&self.parents)
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topological_order_of(&self.parents).expect("Dag is acyclic by construction")
    }

    /// `reach[u][v]` is true iff a directed path of length >= 1 leads from
    /// `u` to `v`.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        let mut reach = vec![vec![false; n]; n];
        // reverse topological order: children are complete before parents
        for &u in self.topological_order().iter().rev() {
            let mut row = vec![false; n];
            for v in (0..n).filter(|&v| self.has_edge(u, v)) {
                row[v] = true;
                for (r, &x) in row.iter_mut().zip(&reach[v]) {
                    *r |= x;
                }
            }
            reach[u] = row;
        }
        reach
    }

    /// Applies a move, checking that it is well-formed and keeps the graph
    /// acyclic.
    pub fn apply(&self, mv: Move) -> Result<Dag> {
        let n = self.n();
        let (from, to) = match mv {
            Move::Add { from, to } | Move::Remove { from, to } | Move::Reverse { from, to } => {
                (from, to)
            }
        };
        if from >= n || to >= n || from == to {
            return Err(Error::IllegalMove(format!("{mv:?} on {n} nodes")));
        }
        let mut parents = self.parents.clone();
        match mv {
            Move::Add { .. } => {
                if self.adjacent(from, to) {
                    return Err(Error::IllegalMove(format!(
                        "{mv:?}: nodes already adjacent"
                    )));
                }
                parents[to] = parents[to].with(from);
            }
            Move::Remove { .. } => {
                if !self.has_edge(from, to) {
                    return Err(Error::IllegalMove(format!("{mv:?}: edge absent")));
                }
                parents[to] = parents[to].without(from);
            }
            Move::Reverse { .. } => {
                if !self.has_edge(from, to) {
                    return Err(Error::IllegalMove(format!("{mv:?}: edge absent")));
                }
                parents[to] = parents[to].without(from);
                parents[from] = parents[from].with(to);
            }
        }
        if !is_acyclic(&parents) {
            return Err(Error::IllegalMove(format!("{mv:?} creates a cycle")));
        }
        Ok(Dag {
            parents,
            names: self.names.clone(),
        })
    }

    /// All acyclic single-edge moves, optionally bounding in-degree. Order is
    /// deterministic: additions, removals, then reversals, each by `(from, to)`.
    pub fn legal_moves(&self, max_parents: Option<usize>) -> Vec<Move> {
        let n = self.n();
        let reach = self.reachability();
        let room = |v: usize| max_parents.is_none_or(|m| self.parents[v].len() < m);
        let mut moves = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && !self.adjacent(u, v) && room(v) && !reach[v][u] {
                    moves.push(Move::Add { from: u, to: v });
                }
            }
        }
        for (u, v) in self.edges() {
            moves.push(Move::Remove { from: u, to: v });
        }
        for (u, v) in self.edges() {
            // reversing u -> v closes a cycle iff another path u ~> v exists
            let other_path = (0..n).any(|c| c != v && self.has_edge(u, c) && reach[c][v]);
            if !other_path && room(u) {
                moves.push(Move::Reverse { from: u, to: v });
            }
        }
        moves
    }

    /// Renames node `i` to `perm[i]`, carrying edges along.
    pub fn relabel(&self, perm: &[usize]) -> Result<Dag> {
        let n = self.n();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidGraph(
                "relabeling must be a permutation".into(),
            ));
        }
        let mut parents = vec![IndexSet::empty(); n];
        let mut names = vec![String::new(); n];
        for v in 0..n {
            parents[perm[v]] = IndexSet::new(self.parents[v].iter().map(|u| perm[u]).collect())?;
            names[perm[v]] = self.names[v].clone();
        }
        Ok(Dag { parents, names })
    }

    /// Unshielded-collider signature used for Markov-equivalence testing.
    pub fn equivalence_signature(&self) -> EquivalenceSignature {
        let skeleton = self
            .edges()
            .into_iter()
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        let mut v_structures = BTreeSet::new();
        for (c, pa) in self.parents.iter().enumerate() {
            let pa = pa.as_slice();
            for (i, &a) in pa.iter().enumerate() {
                for &b in &pa[i + 1..] {
                    if !self.adjacent(a, b) {
                        v_structures.insert((a, c, b));
                    }
                }
            }
        }
        EquivalenceSignature {
            skeleton,
            v_structures,
        }
    }

    /// Edge-list text: a `nodes:` header followed by `parent child` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes: {}\n", self.names.join(","));
        for (u, v) in self.edges() {
            out.push_str(&self.names[u]);
            out.push(' ');
            out.push_str(&self.names[v]);
            out.push('\n');
        }
        out
    }

    /// Parses the edge-list format. Without a `nodes:` header, nodes are
    /// numbered in order of first appearance. Blank lines and `#` comments
    /// are ignored.
    pub fn parse_text(text: &str) -> Result<Dag> {
        let mut names: Vec<String> = Vec::new();
        let mut declared = false;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let row = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("nodes:") {
                if declared || !edges.is_empty() {
                    return Err(Error::Parse {
                        row,
                        column: 1,
                        message: "`nodes:` header must come first and only once".into(),
                    });
                }
                declared = true;
                names = rest
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                check_names(&names).map_err(|e| Error::Parse {
                    row,
                    column: 1,
                    message: e.to_string(),
                })?;
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    row,
                    column: 1,
                    message: format!("expected `parent child`, found {} fields", fields.len()),
                });
            }
            let mut idx = [0usize; 2];
            for (k, name) in fields.iter().enumerate() {
                idx[k] = match names.iter().position(|a| a == name) {
                    Some(i) => i,
                    None if declared => {
                        return Err(Error::Parse {
                            row,
                            column: k + 1,
                            message: format!("node `{name}` not declared in header"),
                        })
                    }
                    None => {
                        names.push((*name).to_string());
                        names.len() - 1
                    }
                };
            }
            if edges.contains(&(idx[0], idx[1])) {
                return Err(Error::Parse {
                    row,
                    column: 1,
                    message: "duplicate edge".into(),
                });
            }
            edges.push((idx[0], idx[1]));
        }
        let mut parents = vec![Vec::new(); names.len()];
        for (u, v) in edges {
            parents[v].push(u);
        }
        let parents = parents
            .into_iter()
            .map(IndexSet::new)
            .collect::<Result<Vec<_>>>()?;
        Dag::from_parents_named(parents, names)
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self
            .edges()
            .iter()
            .map(|&(u, v)| format!("{}->{}", self.names[u], self.names[v]))
            .collect();
        write!(f, "[{}]", edges.join(" "))
    }
}

/// Skeleton plus unshielded colliders `(a, c, b)` with `a < b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EquivalenceSignature {
    pub skeleton: BTreeSet<(usize, usize)>,
    pub v_structures: BTreeSet<(usize, usize, usize)>,
}

pub fn equivalence_signature(g: &Dag) -> EquivalenceSignature {
    g.equivalence_signature()
}

/// Two DAGs are Markov equivalent iff they share skeleton and v-structures.
pub fn markov_equivalent(g1: &Dag, g2: &Dag) -> bool {
    g1.n() == g2.n() && g1.equivalence_signature() == g2.equivalence_signature()
}

/// Every labeled DAG on `n` nodes, in a fixed order (empty graph first).
/// Intended for small `n`: there are 25 DAGs on 3 nodes and 543 on 4.
pub fn enumerate_dags(n: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut parents = vec![Vec::new(); n];
        for &(i, j) in &pairs {
            match c % 3 {
                1 => parents[j].push(i),
                2 => parents[i].push(j),
                _ => {}
            }
            c /= 3;
        }
        let parents: Vec<IndexSet> = parents
            .into_iter()
            .map(|p| IndexSet::new(p).unwrap())
            .collect();
        if is_acyclic(&parents) {
            out.push(Dag::from_parents(parents).unwrap());
        }
    }
    out
}

/// Random DAG whose edges follow a seeded random node permutation. Each
/// forward pair is an edge with probability `edge_prob`, subject to the
/// in-degree cap.
pub fn random_dag(n: usize, max_parents: usize, edge_prob: f64, seed: u64) -> Dag {
    assert!(
        (0.0..=1.0).contains(&edge_prob),
        "edge_prob must lie in [0, 1]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut parents = vec![IndexSet::empty(); n];
    for pos in 1..n {
        let child = perm[pos];
        let mut candidates: Vec<usize> = perm[..pos].to_vec();
        candidates.shuffle(&mut rng);
        for u in candidates {
            if parents[child].len() >= max_parents {
                break;
            }
            if rng.random_bool(edge_prob) {
                parents[child] = parents[child].with(u);
            }
        }
    }
    Dag::from_parents(parents).expect("forward edges are acyclic")
}

/// Coefficients of a linear-Gaussian structural model, one per edge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeWeights(BTreeMap<(usize, usize), f64>);

impl EdgeWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, from: usize, to: usize, w: f64) -> &mut Self {
        self.0.insert((from, to), w);
        self
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.0.get(&(from, to)).copied()
    }

    /// Same weight on every edge of `g`.
    pub fn constant(g: &Dag, w: f64) -> Self {
        EdgeWeights(g.edges().into_iter().map(|e| (e, w)).collect())
    }

    /// Weights drawn uniformly from `[lo, hi]` with a random sign.
    pub fn random(g: &Dag, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EdgeWeights(
            g.edges()
                .into_iter()
                .map(|e| {
                    let w = rng.random_range(lo..=hi);
                    (e, if rng.random_bool(0.5) { w } else { -w })
                })
                .collect(),
        )
    }
}

/// Ancestral sampling of `x_i = Σ_p w_pi x_p + ε_i`, `ε_i ~ N(0, noise_sd²)`.
pub fn sample_gaussian_data(
    g: &Dag,
    weights: &EdgeWeights,
    noise_sd: f64,
    n_obs: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_sd > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise_sd must be > 0, got {noise_sd}"
        )));
    }
    let n = g.n();
    let mut coef: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (u, v) in g.edges() {
        let w = weights
            .get(u, v)
            .ok_or_else(|| Error::InvalidConfig(format!("no weight for edge {u} -> {v}")))?;
        coef[v].push((u, w));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let order = g.topological_order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_obs)
        .map(|_| {
            let mut x = vec![0.0; n];
            for &v in &order {
                x[v] = coef[v].iter().map(|&(u, w)| w * x[u]).sum::<f64>() + noise.sample(&mut rng);
            }
            x
        })
        .collect();
    Dataset::new(g.names().to_vec(), rows)
}

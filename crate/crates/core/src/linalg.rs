//! Dense symmetric positive-definite matrices, principal-submatrix
//! log-determinants and the multivariate log-gamma function.
//!
//! Everything here works in log space. Determinants of principal
//! submatrices are obtained from a Cholesky factor of a compact copy of the
//! selected rows and columns, so a family of size `l` costs `O(l^3)`
//! regardless of the full dimension.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot guard for Cholesky: a pivot must exceed this fraction of
/// the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Strictly increasing list of distinct indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `{0, 1, ..., n-1}`.
    pub fn full(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    pub fn singleton(i: usize) -> Self {
        IndexSet(vec![i])
    }

    /// Builds a set from indices in any order. Duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndexSet(format!("duplicate index {}", w[0])));
        }
        Ok(IndexSet(indices))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Largest index, if any.
    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Copy with `i` inserted (no-op if already present).
    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        IndexSet(v)
    }

    /// Copy with `i` removed (no-op if absent).
    pub fn without(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Ok(pos) = v.binary_search(&i) {
            v.remove(pos);
        }
        IndexSet(v)
    }

    pub(crate) fn check_bound(&self, dim: usize) -> Result<()> {
        match self.max() {
            Some(m) if m >= dim => Err(Error::InvalidIndexSet(format!(
                "index {m} out of range for dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = usize;
    type IntoIter = std::iter::Copied<std::slice::Iter<'a, usize>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}

/// Dense symmetric matrix stored row-major. Symmetry is exact: every
/// constructor either checks it or writes both triangles from one value.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, t: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = t;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds from rows; fails unless square and exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Builds from an entry function evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `self + c * v v^T`.
    pub fn add_rank_one(&self, c: f64, v: &[f64]) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(i, j) + c * v[i] * v[j])
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(Self::from_fn(self.dim, |i, j| {
            self.get(i, j) + other.get(i, j)
        }))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_fn(self.dim, |i, j| c * self.get(i, j))
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let row = self.row(i);
            acc += v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    /// Compact copy of the rows and columns listed in `order`, in that order.
    pub fn select_ordered(&self, order: &[usize]) -> SymMatrix {
        let l = order.len();
        let mut data = Vec::with_capacity(l * l);
        for &i in order {
            let row = self.row(i);
            data.extend(order.iter().map(|&j| row[j]));
        }
        SymMatrix { dim: l, data }
    }

    pub fn select(&self, y: &IndexSet) -> SymMatrix {
        self.select_ordered(y.as_slice())
    }
}

/// Symmetric positive-definite matrix. Construction runs a Cholesky
/// factorization and rejects the input if any pivot fails.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    inner: SymMatrix,
}

impl SpdMatrix {
    pub fn new(m: SymMatrix) -> Result<Self> {
        if m.dim == 0 {
            return Err(Error::Domain("SPD matrix must have dim >= 1".into()));
        }
        cholesky_sym(&m)?;
        Ok(SpdMatrix { inner: m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            inner: SymMatrix::identity(dim),
        }
    }

    pub fn scaled_identity(dim: usize, t: f64) -> Result<Self> {
        Self::new(SymMatrix::scaled_identity(dim, t))
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.inner
    }

    pub fn into_sym(self) -> SymMatrix {
        self.inner
    }

    pub fn cholesky(&self) -> LowerTriangular {
        cholesky_sym(&self.inner).expect("validated at construction")
    }

    /// `ln |A|` for the full matrix.
    pub fn logdet(&self) -> f64 {
        self.cholesky().logdet()
    }

    /// Full inverse through the Cholesky factor, symmetrized exactly.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let l = self.cholesky();
        let n = self.dim();
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            l.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        let sym = SymMatrix::from_fn(n, |i, j| 0.5 * (inv[i * n + j] + inv[j * n + i]));
        SpdMatrix::new(sym)
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[i * self.dim + j]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * self.dim + i]
    }

    /// `2 Σ ln L_ii` over all pivots.
    pub fn logdet(&self) -> f64 {
        self.logdet_leading(self.dim)
    }

    /// Log-determinant of the leading `k × k` principal block of `A`.
    pub fn logdet_leading(&self, k: usize) -> f64 {
        self.logdet_leading_compensated(k).value()
    }

    pub(crate) fn logdet_leading_compensated(&self, k: usize) -> Compensated {
        let mut acc = Compensated::new();
        for i in 0..k {
            acc.add_scaled(&ln_compensated(self.diag(i)), 2.0);
        }
        acc
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.data[i * n + k] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.data[k * n + i] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Cholesky factorization of a symmetric matrix.
pub fn cholesky(a: &SpdMatrix) -> LowerTriangular {
    a.cholesky()
}

/// Cholesky factorization of a symmetric matrix that has not been validated.
pub fn cholesky_sym(a: &SymMatrix) -> Result<LowerTriangular> {
    let n = a.dim;
    let max_diag = (0..n)
        .map(|i| a.get(i, i))
        .fold(f64::NEG_INFINITY, f64::max);
    let guard = PIVOT_TOLERANCE * max_diag.max(0.0);
    let mut l = vec![0.0; n * n];
    // inner products carry a compensation term; pivots of nearly collinear
    // families are otherwise dominated by cancellation error
    for j in 0..n {
        let mut d = Compensated::new();
        d.add(a.get(j, j));
        for k in 0..j {
            d.add_product(-l[j * n + k], l[j * n + k]);
        }
        let d = d.value();
        if !(d > guard) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = Compensated::new();
            s.add(a.get(i, j));
            for k in 0..j {
                s.add_product(-l[i * n + k], l[j * n + k]);
            }
            l[i * n + j] = s.value() / djj;
        }
    }
    Ok(LowerTriangular { dim: n, data: l })
}

/// Factors the principal submatrix picked out by `order` (rows and columns
/// in that order). Placing a variable last makes its conditional variance
/// given the others the final pivot.
pub fn cholesky_ordered(a: &SpdMatrix, order: &[usize]) -> Result<LowerTriangular> {
    cholesky_sym(&a.inner.select_ordered(order))
}

/// `ln |A_YY|`; `0` for the empty set.
pub fn logdet_submatrix(a: &SpdMatrix, y: &IndexSet) -> Result<f64> {
    y.check_bound(a.dim())?;
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(cholesky_sym(&a.inner.select(y))?.logdet())
}

/// `ln x` as a double-word value. The binary exponent is split off so the
/// rounded logarithm is of a number near one.
pub(crate) fn ln_compensated(x: f64) -> Compensated {
    const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;
    let (mut m, mut k) = libm::frexp(x);
    if m < std::f64::consts::FRAC_1_SQRT_2 {
        m *= 2.0;
        k -= 1;
    }
    let k = k as f64;
    let mut acc = Compensated::new();
    acc.add_product(k, std::f64::consts::LN_2)
        .add(k * LN2_LO)
        .add(m.ln());
    acc
}

pub(crate) fn logdet_submatrix_compensated(a: &SpdMatrix, y: &IndexSet) -> Result<Compensated> {
    y.check_bound(a.dim())?;
    if y.is_empty() {
        return Ok(Compensated::new());
    }
    Ok(cholesky_sym(&a.inner.select(y))?.logdet_leading_compensated(y.len()))
}

/// `((A^{-1})_YY)^{-1}`: invert, select, invert again.
pub fn inverse_selected_submatrix(a: &SpdMatrix, y: &IndexSet) -> Result<SpdMatrix> {
    y.check_bound(a.dim())?;
    if y.is_empty() {
        return Err(Error::InvalidIndexSet("selection must be nonempty".into()));
    }
    let inv = a.inverse()?;
    SpdMatrix::new(inv.inner.select(y))?.inverse()
}

/// Double-word accumulator: sums and products of `f64` terms carried with
/// an error term, rounded once at the end. Score terms reach `1e5` in
/// magnitude at large `N` while the result may be `1e1`, so plain sums lose
/// the low digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) -> &mut Self {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
        self
    }

    /// Adds `a * b` including the rounding error of the product.
    pub fn add_product(&mut self, a: f64, b: f64) -> &mut Self {
        let p = a * b;
        let perr = a.mul_add(b, -p);
        self.add(p);
        self.lo += perr;
        self
    }

    /// Adds `a * other` where `other` is itself double-word.
    pub fn add_product_compensated(&mut self, a: f64, other: &Compensated) -> &mut Self {
        self.add_product(a, other.hi);
        self.lo += a * other.lo;
        self
    }

    /// Adds `sign * other`, keeping both words.
    pub fn add_scaled(&mut self, other: &Compensated, sign: f64) -> &mut Self {
        self.add(sign * other.hi);
        self.lo += sign * other.lo;
        self
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Natural log of the ordinary gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ_l(x/2) = l(l-1)/4 · ln π + Σ_{j=1..l} ln Γ((x+1-j)/2)`.
///
/// Requires `x > l - 1` so that every ordinary gamma argument is positive.
pub fn log_multigamma(l: usize, x: f64) -> Result<f64> {
    Ok(log_multigamma_compensated(l, x)?.value())
}

pub(crate) fn log_multigamma_compensated(l: usize, x: f64) -> Result<Compensated> {
    if l == 0 {
        return Ok(Compensated::new());
    }
    let lf = l as f64;
    if !(x > lf - 1.0) {
        return Err(Error::Domain(format!(
            "multivariate gamma of order {l} needs x > {}, got {x}",
            l - 1
        )));
    }
    let mut acc = Compensated::new();
    acc.add_product(lf * (lf - 1.0) / 4.0, PI.ln());
    for j in 1..=l {
        acc.add(ln_gamma((x + 1.0 - j as f64) / 2.0));
    }
    Ok(acc)
}

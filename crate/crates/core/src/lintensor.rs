//! Dense and sparse complex linear algebra on tensor-product spaces.
//!
//! Global basis convention: site 1 is the slowest-varying index.

use std::ops::{Index, IndexMut, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Default dimension cap for dense spectral work.
pub const EIG_CAP: usize = 4096;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Real row-major literal. Panics on a length mismatch (programmer error).
    pub fn from_real(rows: usize, cols: usize, vals: &[f64]) -> Self {
        assert_eq!(vals.len(), rows * cols, "literal size");
        CMatrix {
            rows,
            cols,
            data: vals.iter().map(|&x| re(x)).collect(),
        }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let cl = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == cl), "ragged rows");
        CMatrix {
            rows: r,
            cols: cl,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn diag(d: &[C64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![ZERO; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[k * p..(k + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        CMatrix {
            rows: n,
            cols: p,
            data: out,
        }
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matvec shape");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub shape");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add_scaled_identity(&self, s: C64) -> CMatrix {
        assert!(self.is_square());
        let mut m = self.clone();
        for i in 0..self.rows {
            m.data[i * self.cols + i] += s;
        }
        m
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Entrywise max modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn dist(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "dist shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn column_sums(&self) -> Vec<C64> {
        let mut s = vec![ZERO; self.cols];
        for i in 0..self.rows {
            for (acc, x) in s.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        s
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMatrix {
        CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("inverse of non-square matrix".into()));
        }
        self.to_nalgebra()
            .try_inverse()
            .map(|m| CMatrix::from_nalgebra(&m))
            .filter(CMatrix::is_finite)
            .ok_or_else(|| Error::Singular("matrix inverse".into()))
    }

    /// Entrywise real parts, failing if any imaginary part exceeds `tol`.
    pub fn real_parts(&self, tol: f64) -> Result<Vec<f64>> {
        if let Some(z) = self.data.iter().find(|z| z.im.abs() > tol) {
            return Err(Error::InvalidParameter(format!(
                "expected a real matrix, found imaginary part {:e}",
                z.im
            )));
        }
        Ok(self.data.iter().map(|z| z.re).collect())
    }

    /// Reorders tensor legs: output leg `k` is input leg `perm[k]`.
    pub fn permute_legs(&self, dims: &[usize], perm: &[usize]) -> CMatrix {
        assert!(self.is_square());
        assert_eq!(dims.iter().product::<usize>(), self.rows, "leg dims");
        let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
        let map: Vec<usize> = (0..self.rows)
            .map(|idx| {
                let digits = decode_mixed(idx, dims);
                let nd: Vec<usize> = perm.iter().map(|&p| digits[p]).collect();
                encode_mixed(&nd, &new_dims)
            })
            .collect();
        let mut out = CMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[map[i] * self.cols + map[j]] = self.get(i, j);
            }
        }
        out
    }

    /// Transpose on one tensor leg.
    pub fn partial_transpose(&self, dims: &[usize], leg: usize) -> CMatrix {
        assert!(self.is_square());
        let mut out = CMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let mut di = decode_mixed(i, dims);
            for j in 0..self.cols {
                let mut dj = decode_mixed(j, dims);
                std::mem::swap(&mut di[leg], &mut dj[leg]);
                let (ni, nj) = (encode_mixed(&di, dims), encode_mixed(&dj, dims));
                std::mem::swap(&mut di[leg], &mut dj[leg]);
                out.data[ni * self.cols + nj] = self.get(i, j);
            }
        }
        out
    }

    /// Trace over a slowest-varying leg of dimension `aux`.
    pub fn partial_trace_first(&self, aux: usize) -> CMatrix {
        assert!(self.is_square() && self.rows % aux == 0);
        let p = self.rows / aux;
        let mut out = CMatrix::zeros(p, p);
        for a in 0..aux {
            for i in 0..p {
                for j in 0..p {
                    out.data[i * p + j] += self.get(a * p + i, a * p + j);
                }
            }
        }
        out
    }

    /// Block (a, b) of a matrix whose slowest leg has dimension `aux`.
    pub fn aux_block(&self, aux: usize, a: usize, b: usize) -> CMatrix {
        let p = self.rows / aux;
        CMatrix::from_fn(p, p, |i, j| self.get(a * p + i, b * p + j))
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct CMatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for CMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CMatrixRepr {
            rows: self.rows,
            cols: self.cols,
            entries: self.data.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CMatrixRepr::deserialize(d)?;
        let data = r.entries.iter().map(|&[a, b]| c(a, b)).collect();
        CMatrix::new(r.rows, r.cols, data).map_err(de::Error::custom)
    }
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.matmul(b).sub(&b.matmul(a))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (br, bc) = (b.rows, b.cols);
    CMatrix::from_fn(a.rows * br, a.cols * bc, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    })
}

/// A ⊗ I + I ⊗ B.
pub fn kron_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert!(a.is_square() && b.is_square());
    kron(a, &CMatrix::identity(b.rows)).add(&kron(&CMatrix::identity(a.rows), b))
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

fn decode_mixed(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut d = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        d[k] = idx % dims[k];
        idx /= dims[k];
    }
    d
}

fn encode_mixed(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Basis bookkeeping for a chain of `n` sites with `local_dim` states each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteIndexing {
    pub n: usize,
    pub local_dim: usize,
}

impl SiteIndexing {
    pub fn new(n: usize, local_dim: usize) -> Self {
        SiteIndexing { n, local_dim }
    }

    pub fn dim(&self) -> usize {
        self.local_dim.pow(self.n as u32)
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.n);
        digits.iter().fold(0, |acc, &x| acc * self.local_dim + x)
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for k in (0..self.n).rev() {
            d[k] = idx % self.local_dim;
            idx /= self.local_dim;
        }
        d
    }

    /// Local state at 0-based `site`.
    pub fn digit(&self, idx: usize, site: usize) -> usize {
        (idx / self.local_dim.pow((self.n - 1 - site) as u32)) % self.local_dim
    }
}

/// Precomputed action of a local operator on chosen legs of a product space.
struct LegAction {
    /// For every global index: (local index on the legs, global index with those legs zeroed).
    split: Vec<(usize, usize)>,
    /// Global offset contributed by each local index.
    offset: Vec<usize>,
    /// Nonzeros of the operator grouped by row: (col, value).
    rows: Vec<Vec<(usize, C64)>>,
}

impl LegAction {
    fn new(op: &CMatrix, legs: &[usize], dims: &[usize]) -> Result<Self> {
        let ld: usize = legs.iter().map(|&l| dims[l]).product();
        if op.rows != ld || op.cols != ld {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} on legs of total dimension {}",
                op.rows, op.cols, ld
            )));
        }
        for (k, &l) in legs.iter().enumerate() {
            if l >= dims.len() || legs[..k].contains(&l) {
                return Err(Error::DimensionMismatch(format!("bad leg list {legs:?}")));
            }
        }
        let n = dims.len();
        let mut stride = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            stride[k] = stride[k + 1] * dims[k + 1];
        }
        let offset: Vec<usize> = (0..ld)
            .map(|li| {
                let mut rem = li;
                let mut off = 0;
                for &l in legs.iter().rev() {
                    off += (rem % dims[l]) * stride[l];
                    rem /= dims[l];
                }
                off
            })
            .collect();
        let total: usize = dims.iter().product();
        let split = (0..total)
            .map(|g| {
                let mut li = 0;
                let mut base = g;
                for &l in legs {
                    let dgt = (g / stride[l]) % dims[l];
                    li = li * dims[l] + dgt;
                    base -= dgt * stride[l];
                }
                (li, base)
            })
            .collect();
        let rows = (0..ld)
            .map(|i| {
                (0..ld)
                    .filter_map(|j| {
                        let v = op.get(i, j);
                        (v != ZERO).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Ok(LegAction {
            split,
            offset,
            rows,
        })
    }
}

/// Operator acting as `op` on `legs` (in op's own leg order) and identity elsewhere.
pub fn embed(op: &CMatrix, legs: &[usize], dims: &[usize]) -> Result<CMatrix> {
    let act = LegAction::new(op, legs, dims)?;
    let total = act.split.len();
    let mut out = CMatrix::zeros(total, total);
    for (r, &(lr, base)) in act.split.iter().enumerate() {
        for &(lc, v) in &act.rows[lr] {
            out.data[r * total + base + act.offset[lc]] += v;
        }
    }
    Ok(out)
}

/// `embed(op, legs, dims) * m` without materializing the embedding.
pub fn apply_left(op: &CMatrix, legs: &[usize], dims: &[usize], m: &CMatrix) -> Result<CMatrix> {
    let act = LegAction::new(op, legs, dims)?;
    let total = act.split.len();
    if m.rows != total {
        return Err(Error::DimensionMismatch("apply_left rows".into()));
    }
    let p = m.cols;
    let mut out = CMatrix::zeros(total, p);
    for (r, &(lr, base)) in act.split.iter().enumerate() {
        let orow = &mut out.data[r * p..(r + 1) * p];
        for &(lc, v) in &act.rows[lr] {
            let src = base + act.offset[lc];
            for (o, x) in orow.iter_mut().zip(&m.data[src * p..(src + 1) * p]) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// `embed(op, legs, dims) * v`.
pub fn apply_vec(op: &CMatrix, legs: &[usize], dims: &[usize], v: &[C64]) -> Result<Vec<C64>> {
    let act = LegAction::new(op, legs, dims)?;
    if v.len() != act.split.len() {
        return Err(Error::DimensionMismatch("apply_vec length".into()));
    }
    Ok(act
        .split
        .iter()
        .map(|&(lr, base)| {
            act.rows[lr]
                .iter()
                .map(|&(lc, x)| x * v[base + act.offset[lc]])
                .sum()
        })
        .collect())
}

/// Two-site operator on sites (k, k+1), 1-based; k = N wraps onto (N, 1).
pub fn embed_pair(op: &CMatrix, k: usize, n: usize, local_dim: usize) -> Result<CMatrix> {
    if op.rows != local_dim * local_dim || op.cols != op.rows {
        return Err(Error::DimensionMismatch(format!(
            "pair operator {}x{} for local dimension {}",
            op.rows, op.cols, local_dim
        )));
    }
    if k == 0 || k > n || n < 2 {
        return Err(Error::InvalidParameter(format!("bond {k} on a chain of {n} sites")));
    }
    embed(op, &[k - 1, k % n], &vec![local_dim; n])
}

/// Single-site operator on 1-based `k`.
pub fn embed_site(op: &CMatrix, k: usize, n: usize, local_dim: usize) -> Result<CMatrix> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("site {k} on a chain of {n} sites")));
    }
    embed(op, &[k - 1], &vec![local_dim; n])
}

/// Cyclic shift S with S|j1 … jN> = |jN j1 … j(N-1)>, so S·O_k·S⁻¹ = O_(k+1).
pub fn cyclic_shift(n: usize, local_dim: usize) -> CMatrix {
    let ix = SiteIndexing::new(n, local_dim);
    let mut s = CMatrix::zeros(ix.dim(), ix.dim());
    for i in 0..ix.dim() {
        let mut d = ix.decode(i);
        d.rotate_right(1);
        s[(ix.encode(&d), i)] = ONE;
    }
    s
}

/// Index permutation between the site-ordered basis |j1 … jN> (j = 2a + b)
/// and the lane-ordered basis |a1 … aN> ⊗ |b1 … bN>.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interleave {
    pub n: usize,
    /// `to_lane[site_index] = lane_index`
    pub to_lane: Vec<usize>,
}

impl Interleave {
    pub fn new(n: usize) -> Self {
        let ix = SiteIndexing::new(n, 4);
        let half = 1usize << n;
        let to_lane = (0..ix.dim())
            .map(|i| {
                let (mut a, mut b) = (0, 0);
                for j in ix.decode(i) {
                    a = 2 * a + (j >> 1);
                    b = 2 * b + (j & 1);
                }
                a * half + b
            })
            .collect();
        Interleave { n, to_lane }
    }

    pub fn dim(&self) -> usize {
        self.to_lane.len()
    }

    pub fn matrix(&self) -> CMatrix {
        let d = self.dim();
        let mut p = CMatrix::zeros(d, d);
        for (s, &l) in self.to_lane.iter().enumerate() {
            p[(l, s)] = ONE;
        }
        p
    }

    /// Π A Πᵀ.
    pub fn to_lane_basis(&self, a: &CMatrix) -> CMatrix {
        let d = self.dim();
        let mut out = CMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[(self.to_lane[i], self.to_lane[j])] = a.get(i, j);
            }
        }
        out
    }

    /// Πᵀ A Π.
    pub fn to_site_basis(&self, a: &CMatrix) -> CMatrix {
        let d = self.dim();
        CMatrix::from_fn(d, d, |i, j| a.get(self.to_lane[i], self.to_lane[j]))
    }

    pub fn vec_to_site_basis(&self, v: &[C64]) -> Vec<C64> {
        self.to_lane.iter().map(|&l| v[l]).collect()
    }
}

pub fn interleave_permutation(n: usize) -> CMatrix {
    Interleave::new(n).matrix()
}

#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<C64>,
    /// Column `k` of this matrix is the unit-norm right eigenvector of `values[k]`.
    pub vectors: CMatrix,
    pub max_residual: f64,
}

fn check_square_cap(a: &CMatrix, cap: usize) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("eigenproblem needs a square matrix".into()));
    }
    if a.rows > cap {
        return Err(Error::DimensionCap { dim: a.rows, cap });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigenproblem input".into()));
    }
    Ok(())
}

fn schur(a: &CMatrix) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let n = a.rows;
    nalgebra::linalg::Schur::try_new(a.to_nalgebra(), f64::EPSILON, 1000 * n.max(10))
        .map(|s| s.unpack())
        .ok_or(Error::Convergence {
            residual: f64::INFINITY,
        })
}

pub fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>> {
    check_square_cap(a, EIG_CAP)?;
    if a.rows == 0 {
        return Ok(vec![]);
    }
    let (_, t) = schur(a)?;
    Ok((0..a.rows).map(|i| t[(i, i)]).collect())
}

pub fn eig(a: &CMatrix) -> Result<Eigen> {
    eig_capped(a, EIG_CAP)
}

/// Schur decomposition followed by triangular back-substitution.
pub fn eig_capped(a: &CMatrix, cap: usize) -> Result<Eigen> {
    check_square_cap(a, cap)?;
    let n = a.rows;
    if n == 0 {
        return Ok(Eigen {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
            max_residual: 0.0,
        });
    }
    let (q, t) = schur(a)?;
    let tnorm = t.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        let lam = values[k];
        y[(k, k)] = ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for l in j + 1..=k {
                s += t[(j, l)] * y[(l, k)];
            }
            let mut den = t[(j, j)] - lam;
            if den.norm() < small {
                den = re(small);
            }
            y[(j, k)] = -s / den;
        }
    }
    let v = q * y;
    let anorm = a.max_abs().max(f64::MIN_POSITIVE);
    let mut vectors = CMatrix::zeros(n, n);
    let mut max_residual = 0.0f64;
    for k in 0..n {
        let col: Vec<C64> = (0..n).map(|i| v[(i, k)]).collect();
        let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let col: Vec<C64> = col.iter().map(|z| z / nrm).collect();
        let av = a.matvec(&col);
        let res = av
            .iter()
            .zip(&col)
            .map(|(x, y)| (x - values[k] * y).norm())
            .fold(0.0, f64::max)
            / anorm;
        max_residual = max_residual.max(res);
        for i in 0..n {
            vectors[(i, k)] = col[i];
        }
    }
    if !(max_residual <= 1e-9) {
        return Err(Error::Convergence {
            residual: max_residual,
        });
    }
    Ok(Eigen {
        values,
        vectors,
        max_residual,
    })
}

/// Orthonormal basis of the right kernel: singular values ≤ tol · σ_max.
pub fn null_space(a: &CMatrix, tol: f64) -> Result<Vec<Vec<C64>>> {
    check_square_cap(a, EIG_CAP)?;
    let n = a.rows;
    if n == 0 {
        return Ok(vec![]);
    }
    let svd = a.to_nalgebra().svd(false, true);
    let vt = svd.v_t.ok_or(Error::Convergence {
        residual: f64::INFINITY,
    })?;
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    if smax == 0.0 {
        return Ok((0..n)
            .map(|i| (0..n).map(|j| if i == j { ONE } else { ZERO }).collect())
            .collect());
    }
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol * smax {
            out.push((0..n).map(|j| vt[(i, j)].conj()).collect());
        }
    }
    Ok(out)
}

/// Real square sparse matrix in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicates are summed; exact zeros after summation are dropped.
    pub fn from_triplets(dim: usize, mut trip: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = trip.iter().find(|t| t.0 >= dim || t.1 >= dim) {
            return Err(Error::DimensionMismatch(format!("triplet ({i}, {j}) outside {dim}")));
        }
        if trip.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::NonFinite("sparse triplets".into()));
        }
        trip.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of = Vec::with_capacity(trip.len());
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                rows_of.push(i);
                last = Some((i, j));
            }
        }
        let mut keep_c = Vec::with_capacity(col_idx.len());
        let mut keep_v = Vec::with_capacity(values.len());
        for ((i, j), v) in rows_of.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[i + 1] += 1;
                keep_c.push(j);
                keep_v.push(v);
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            dim,
            row_ptr,
            col_idx: keep_c,
            values: keep_v,
        })
    }

    pub fn from_dense(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("sparse matrices are square".into()));
        }
        let vals = a.real_parts(0.0)?;
        let n = a.rows;
        let trip = vals
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (k / n, k % n, v))
            .collect();
        Self::from_triplets(n, trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = re(v);
        }
        m
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for (_, j, v) in self.triplets() {
            s[j] += v;
        }
        s
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Max absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut s = vec![0.0f64; self.dim];
        for (_, j, v) in self.triplets() {
            s[j] += v.abs();
        }
        s.into_iter().fold(0.0, f64::max)
    }
}

/// Real linear operator y = A x.
pub trait MatVec {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn norm1(&self) -> f64;
}

impl MatVec for SparseMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    fn norm1(&self) -> f64 {
        SparseMatrix::norm1(self)
    }
}

#[derive(Serialize, Deserialize)]
struct SparseRepr {
    dim: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl Serialize for SparseMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SparseRepr {
            dim: self.dim,
            triplets: self.triplets().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SparseRepr::deserialize(d)?;
        SparseMatrix::from_triplets(r.dim, r.triplets).map_err(de::Error::custom)
    }
}

fn rk4_step(a: &dyn MatVec, y: &[f64], h: f64, buf: &mut [Vec<f64>; 5]) -> Vec<f64> {
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = buf;
    a.apply(y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    a.apply(tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    a.apply(tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    a.apply(tmp, k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// exp(A t) v by RK4 with step doubling; the local error budget is
/// distributed proportionally to step length.
pub fn expm_action(a: &dyn MatVec, v: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    if v.len() != a.dim() {
        return Err(Error::DimensionMismatch("expm_action vector length".into()));
    }
    if !(t >= 0.0) || !t.is_finite() || !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("t = {t}, tol = {tol}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("expm_action vector".into()));
    }
    let mut y = v.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    let n = v.len();
    let mut buf: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let anorm = a.norm1().max(1e-300);
    let mut h = (1.0 / anorm).min(t);
    let mut s = 0.0;
    let vnorm = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    while s < t {
        h = h.min(t - s);
        let full = rk4_step(a, &y, h, &mut buf);
        let half = rk4_step(a, &y, 0.5 * h, &mut buf);
        let two = rk4_step(a, &half, 0.5 * h, &mut buf);
        let err = full
            .iter()
            .zip(&two)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
            / 15.0;
        let budget = (tol * vnorm * h / t).max(64.0 * f64::EPSILON * vnorm);
        if err <= budget {
            s += h;
            for i in 0..n {
                y[i] = two[i] + (two[i] - full[i]) / 15.0;
            }
            if y.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("expm_action state".into()));
            }
        }
        let fac = if err == 0.0 {
            4.0
        } else {
            (0.9 * (budget / err).powf(0.2)).clamp(0.2, 4.0)
        };
        h *= fac;
        if h < 1e-14 * t {
            return Err(Error::Convergence { residual: err });
        }
    }
    Ok(y)
}

/// Central difference with one Richardson step (error O(h⁴)).
pub fn num_derivative<F>(f: F, u0: C64, h: f64) -> Result<CMatrix>
where
    F: Fn(C64) -> Result<CMatrix>,
{
    let fp1 = f(u0 + h)?;
    let fm1 = f(u0 - h)?;
    let fp2 = f(u0 + 2.0 * h)?;
    let fm2 = f(u0 - 2.0 * h)?;
    for m in [&fp1, &fm1, &fp2, &fm2] {
        if !m.is_finite() {
            return Err(Error::Singular("derivative stencil".into()));
        }
    }
    let d1 = fp1.sub(&fm1).scale(re(1.0 / (2.0 * h)));
    let d2 = fp2.sub(&fm2).scale(re(1.0 / (4.0 * h)));
    Ok(d1.scale(re(4.0 / 3.0)).sub(&d2.scale(re(1.0 / 3.0))))
}

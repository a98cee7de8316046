//! Symmetric third-order tensors: canonical index triples, sparse observation
//! storage, mode-3 unfoldings and products, CP evaluation, and the
//! least-squares loss with its gradient.
//!
//! All indices in this module are 0-based. A triple `(i, j, k)` is stored once
//! in canonical (sorted) form and stands for its whole permutation orbit; sums
//! over the symmetric closure of an index set are computed as
//! multiplicity-weighted sums over canonical triples.

use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A sorted index triple `i ≤ j ≤ k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanonicalTriple {
    i: u32,
    j: u32,
    k: u32,
}

impl CanonicalTriple {
    /// Sorts the three indices.
    pub fn new(a: usize, b: usize, c: usize) -> Self {
        let mut v = [a as u32, b as u32, c as u32];
        v.sort_unstable();
        Self { i: v[0], j: v[1], k: v[2] }
    }

    pub fn i(&self) -> usize {
        self.i as usize
    }

    pub fn j(&self) -> usize {
        self.j as usize
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn indices(&self) -> [usize; 3] {
        [self.i(), self.j(), self.k()]
    }

    /// Number of distinct permutations of the triple: 1, 3 or 6.
    pub fn multiplicity(&self) -> u8 {
        match (self.i == self.j, self.j == self.k) {
            (true, true) => 1,
            (false, false) => 6,
            _ => 3,
        }
    }

    /// Position in the enumeration ordered by `(k, j, i)`.
    pub fn linear_index(&self) -> usize {
        let (i, j, k) = (self.i(), self.j(), self.k());
        tetrahedral(k) + j * (j + 1) / 2 + i
    }

    pub fn from_linear_index(idx: usize) -> Self {
        let mut k = 0;
        while tetrahedral(k + 1) <= idx {
            k += 1;
        }
        let mut rem = idx - tetrahedral(k);
        let mut j = 0;
        while (j + 1) * (j + 2) / 2 <= rem {
            j += 1;
        }
        rem -= j * (j + 1) / 2;
        Self { i: rem as u32, j: j as u32, k: k as u32 }
    }

    /// The distinct permutations of the triple.
    pub fn orbit(&self) -> Orbit {
        let (i, j, k) = (self.i(), self.j(), self.k());
        let mut perms = [[0usize; 3]; 6];
        let len = match self.multiplicity() {
            1 => {
                perms[0] = [i, i, i];
                1
            }
            3 if i == j => {
                perms[..3].copy_from_slice(&[[i, i, k], [i, k, i], [k, i, i]]);
                3
            }
            3 => {
                perms[..3].copy_from_slice(&[[i, k, k], [k, i, k], [k, k, i]]);
                3
            }
            _ => {
                perms = [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]];
                6
            }
        };
        Orbit { perms, len, pos: 0 }
    }
}

impl PartialOrd for CanonicalTriple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalTriple {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.k, self.j, self.i).cmp(&(other.k, other.j, other.i))
    }
}

/// Iterator over the distinct permutations of a canonical triple.
#[derive(Debug, Clone)]
pub struct Orbit {
    perms: [[usize; 3]; 6],
    len: usize,
    pos: usize,
}

impl Iterator for Orbit {
    type Item = [usize; 3];

    fn next(&mut self) -> Option<[usize; 3]> {
        if self.pos < self.len {
            self.pos += 1;
            Some(self.perms[self.pos - 1])
        } else {
            None
        }
    }
}

fn tetrahedral(n: usize) -> usize {
    n * (n + 1) * (n + 2) / 6
}

/// Number of canonical triples for dimension `d`, i.e. `C(d+2, 3)`.
pub fn num_canonical(d: usize) -> usize {
    tetrahedral(d)
}

/// Canonicalizes `(i, j, k)` after checking each index is below `d`.
pub fn canonicalize(i: usize, j: usize, k: usize, d: usize) -> Result<CanonicalTriple> {
    if i >= d || j >= d || k >= d {
        return Err(Error::IndexOutOfRange { i, j, k, d });
    }
    Ok(CanonicalTriple::new(i, j, k))
}

/// All canonical triples of dimension `d` in linear-index order.
pub fn canonical_triples(d: usize) -> impl Iterator<Item = CanonicalTriple> {
    (0..d).flat_map(move |k| {
        (0..=k).flat_map(move |j| {
            (0..=j).map(move |i| CanonicalTriple { i: i as u32, j: j as u32, k: k as u32 })
        })
    })
}

/// A `d × r` matrix whose columns are CP factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix(DMatrix<f64>);

impl FactorMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.nrows() == 0 {
            return Err(Error::InvalidParameter("factor matrix must be non-empty"));
        }
        if m.ncols() > m.nrows() {
            return Err(Error::InvalidParameter("rank exceeds dimension"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("factor entries must be finite"));
        }
        Ok(Self(m))
    }

    /// Builds from column vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let r = columns.len();
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch("factor columns differ in length"));
        }
        Self::new(DMatrix::from_fn(d, r, |i, l| columns[l][i]))
    }

    pub fn zeros(d: usize, r: usize) -> Self {
        Self(DMatrix::zeros(d, r))
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn r(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.0[(i, l)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `Σ_l u_{l,i} u_{l,j} u_{l,k}`.
    pub fn cp_eval(&self, t: CanonicalTriple) -> f64 {
        self.cp_eval_at(t.i(), t.j(), t.k())
    }

    pub fn cp_eval_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let m = &self.0;
        (0..m.ncols()).map(|l| m[(i, l)] * m[(j, l)] * m[(k, l)]).sum()
    }

    /// Row `(i, j)` of the lifted matrix `[u_s ⊗ u_s]_s`, i.e. `[u_{s,i} u_{s,j}]_s`.
    pub fn lifted_row(&self, i: usize, j: usize) -> DVector<f64> {
        let m = &self.0;
        DVector::from_fn(m.ncols(), |s, _| m[(i, s)] * m[(j, s)])
    }

    /// Gram matrix of the lift, `[(u_sᵀ u_t)²]_{s,t}`.
    pub fn gram_lifted(&self) -> DMatrix<f64> {
        let g = self.0.tr_mul(&self.0);
        g.map(|v| v * v)
    }

    /// `‖Ũ‖_{2,∞}`: the largest lifted-row norm over all ordered pairs.
    pub fn lifted_two_inf_norm(&self) -> f64 {
        let d = self.d();
        let mut best = 0.0f64;
        for i in 0..d {
            for j in i..d {
                best = best.max(self.lifted_row(i, j).norm());
            }
        }
        best
    }

    /// Returns the matrix whose column `l` is column `order[l]` of `self`.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        Self(DMatrix::from_fn(self.d(), order.len(), |i, l| self.0[(i, order[l])]))
    }

    /// Dense evaluation of the CP tensor.
    pub fn to_dense(&self) -> DenseSymTensor {
        let d = self.d();
        DenseSymTensor {
            d,
            values: canonical_triples(d).map(|t| self.cp_eval(t)).collect(),
        }
    }
}

/// Anything exposing a symmetric tensor through its canonical entries.
pub trait SymmetricEntries {
    fn dim(&self) -> usize;
    fn canonical_entries(&self) -> impl Iterator<Item = (CanonicalTriple, f64)> + '_;
}

/// Observed entries of a symmetric tensor on a symmetric index set.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    d: usize,
    p: f64,
    entries: Vec<(CanonicalTriple, f64)>,
}

impl ObservationSet {
    /// Validates and sorts the entries. Duplicated triples are an error.
    pub fn new(d: usize, p: f64, mut entries: Vec<(CanonicalTriple, f64)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive"));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter("sampling rate must lie in (0, 1]"));
        }
        for (t, v) in &entries {
            if t.k() >= d {
                return Err(Error::IndexOutOfRange { i: t.i(), j: t.j(), k: t.k(), d });
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter("observed values must be finite"));
            }
        }
        entries.sort_by_key(|a| a.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate observed triple"));
        }
        Ok(Self { d, p, entries })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by canonical linear index.
    pub fn entries(&self) -> &[(CanonicalTriple, f64)] {
        &self.entries
    }

    /// Value at any permutation of `(i, j, k)`, if observed.
    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let t = CanonicalTriple::new(i, j, k);
        self.entries
            .binary_search_by(|(s, _)| s.cmp(&t))
            .ok()
            .map(|pos| self.entries[pos].1)
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.get(i, j, k).is_some()
    }

    /// Same index set, new values (in the order of [`Self::entries`]).
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.entries.len() {
            return Err(Error::DimensionMismatch("value count differs from observation count"));
        }
        Ok(Self {
            d: self.d,
            p: self.p,
            entries: self.entries.iter().zip(values).map(|(e, v)| (e.0, *v)).collect(),
        })
    }
}

impl SymmetricEntries for ObservationSet {
    fn dim(&self) -> usize {
        self.d
    }

    fn canonical_entries(&self) -> impl Iterator<Item = (CanonicalTriple, f64)> + '_ {
        self.entries.iter().copied()
    }
}

/// A fully specified symmetric tensor, one value per canonical triple.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymTensor {
    d: usize,
    values: Vec<f64>,
}

impl DenseSymTensor {
    pub fn zeros(d: usize) -> Self {
        Self { d, values: alloc::vec![0.0; num_canonical(d)] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[CanonicalTriple::new(i, j, k).linear_index()]
    }

    pub fn set(&mut self, t: CanonicalTriple, v: f64) {
        self.values[t.linear_index()] = v;
    }

    /// Values in canonical linear-index order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ_{i,j,k} T²` over the full cube.
    pub fn frobenius_sq(&self) -> f64 {
        canonical_triples(self.d)
            .zip(&self.values)
            .map(|(t, v)| f64::from(t.multiplicity()) * v * v)
            .sum()
    }
}

impl SymmetricEntries for DenseSymTensor {
    fn dim(&self) -> usize {
        self.d
    }

    fn canonical_entries(&self) -> impl Iterator<Item = (CanonicalTriple, f64)> + '_ {
        canonical_triples(self.d).zip(self.values.iter().copied())
    }
}

/// Row-wise sparse matrix; each row holds `(column, value)` sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = &self.rows[row];
        r.binary_search_by(|(c, _)| c.cmp(&col)).map_or(0.0, |p| r[p].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Mode-3 matricization: entry `(k, i·d + j)` holds `T_{i,j,k}` (0-based).
pub fn unfold_mode3<S: SymmetricEntries>(src: &S) -> SparseRows {
    let d = src.dim();
    let mut rows = alloc::vec![Vec::new(); d];
    for (t, v) in src.canonical_entries() {
        for [a, b, c] in t.orbit() {
            rows[c].push((a * d + b, v));
        }
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|e| e.0);
    }
    SparseRows { ncols: d * d, rows }
}

/// `[S ×₃ θ]_{i,j} = Σ_k S_{i,j,k} θ_k` over the symmetric closure.
pub fn tvp_mode3<S: SymmetricEntries>(src: &S, theta: &DVector<f64>) -> DMatrix<f64> {
    let d = src.dim();
    let mut m = DMatrix::zeros(d, d);
    for (t, v) in src.canonical_entries() {
        for [a, b, c] in t.orbit() {
            m[(a, b)] += v * theta[c];
        }
    }
    m
}

/// `⟨S, ν⊗ν⊗ν⟩` over the symmetric closure.
pub fn cubic_form<S: SymmetricEntries>(src: &S, nu: &DVector<f64>) -> f64 {
    src.canonical_entries()
        .map(|(t, v)| f64::from(t.multiplicity()) * v * nu[t.i()] * nu[t.j()] * nu[t.k()])
        .sum()
}

fn check_dims(u: &FactorMatrix, obs: &ObservationSet) -> Result<()> {
    if u.d() != obs.d() {
        return Err(Error::DimensionMismatch("factor dimension differs from observation dimension"));
    }
    Ok(())
}

/// Least-squares loss `f(U) = Σ_{Ω} (cp(U) − T^obs)²` over the symmetric closure.
pub fn loss(u: &FactorMatrix, obs: &ObservationSet) -> Result<f64> {
    check_dims(u, obs)?;
    Ok(obs
        .entries()
        .iter()
        .map(|&(t, v)| {
            let res = u.cp_eval(t) - v;
            f64::from(t.multiplicity()) * res * res
        })
        .sum())
}

/// Gradient of [`loss`], a `d × r` matrix.
///
/// This is `∇f = 6·unfold(P_Ω(cp(U) − T^obs))·Ũ`; the rescaled objective
/// `g = f/(6p)` has gradient `∇f/(6p)`.
pub fn gradient(u: &FactorMatrix, obs: &ObservationSet) -> Result<DMatrix<f64>> {
    loss_and_gradient(u, obs).map(|(_, g)| g)
}

/// [`loss`] and [`gradient`] from a single pass over the observations.
pub fn loss_and_gradient(u: &FactorMatrix, obs: &ObservationSet) -> Result<(f64, DMatrix<f64>)> {
    check_dims(u, obs)?;
    let m = u.as_matrix();
    let r = u.r();
    let mut grad = DMatrix::zeros(u.d(), r);
    let mut total = 0.0;
    for &(t, v) in obs.entries() {
        let (i, j, k) = (t.i(), t.j(), t.k());
        let mult = f64::from(t.multiplicity());
        let res = u.cp_eval(t) - v;
        total += mult * res * res;
        let w = 2.0 * mult * res;
        for l in 0..r {
            let (ui, uj, uk) = (m[(i, l)], m[(j, l)], m[(k, l)]);
            grad[(i, l)] += w * uj * uk;
            grad[(j, l)] += w * ui * uk;
            grad[(k, l)] += w * ui * uj;
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn canonicalize_examples() {
        // 1-based (3,1,2) → (1,2,3; 6)
        let t = canonicalize(2, 0, 1, 5).unwrap();
        assert_eq!(t.indices(), [0, 1, 2]);
        assert_eq!(t.multiplicity(), 6);
        let t = canonicalize(4, 1, 1, 5).unwrap();
        assert_eq!(t.indices(), [1, 1, 4]);
        assert_eq!(t.multiplicity(), 3);
        let t = canonicalize(3, 3, 3, 5).unwrap();
        assert_eq!(t.indices(), [3, 3, 3]);
        assert_eq!(t.multiplicity(), 1);
        assert!(matches!(canonicalize(5, 0, 0, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn linear_index_roundtrip_and_partition() {
        for d in 1..8 {
            let all: Vec<_> = canonical_triples(d).collect();
            assert_eq!(all.len(), num_canonical(d));
            let mut total = 0usize;
            for (n, t) in all.iter().enumerate() {
                assert_eq!(t.linear_index(), n);
                assert_eq!(CanonicalTriple::from_linear_index(n), *t);
                assert_eq!(t.orbit().count(), t.multiplicity() as usize);
                total += t.multiplicity() as usize;
            }
            assert_eq!(total, d * d * d);
        }
    }

    #[test]
    fn orbit_lists_distinct_permutations() {
        let t = CanonicalTriple::new(1, 3, 3);
        let mut o: Vec<_> = t.orbit().collect();
        o.sort();
        assert_eq!(o, vec![[1, 3, 3], [3, 1, 3], [3, 3, 1]]);
    }

    #[test]
    fn cp_eval_small_cases() {
        let u = FactorMatrix::from_columns(&[vec![1.0, 2.0, 0.0]]).unwrap();
        assert_eq!(u.cp_eval(CanonicalTriple::new(0, 1, 1)), 4.0);
        let u = FactorMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(u.cp_eval(CanonicalTriple::new(0, 0, 1)), 0.0);
    }

    #[test]
    fn factor_matrix_rejects_bad_shapes() {
        assert!(FactorMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(FactorMatrix::new(DMatrix::from_element(2, 1, f64::NAN)).is_err());
    }

    #[test]
    fn unfold_symmetric_copies() {
        // 1-based (1,1,2) = 5 with d = 2
        let obs = ObservationSet::new(2, 1.0, vec![(CanonicalTriple::new(0, 0, 1), 5.0)]).unwrap();
        let a = unfold_mode3(&obs);
        assert_eq!(a.get(1, 0), 5.0);
        assert_eq!(a.get(0, 1), 5.0);
        assert_eq!(a.get(0, 2), 5.0);
        assert_eq!(a.nnz(), 3);
        let empty = ObservationSet::new(2, 1.0, vec![]).unwrap();
        assert_eq!(unfold_mode3(&empty).nnz(), 0);
    }

    #[test]
    fn tvp_single_observation() {
        let obs = ObservationSet::new(3, 1.0, vec![(CanonicalTriple::new(0, 1, 2), 7.0)]).unwrap();
        let m = tvp_mode3(&obs, &DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(m[(0, 1)], 7.0);
        assert_eq!(m[(1, 0)], 7.0);
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 2);
        let zero = tvp_mode3(&obs, &DVector::zeros(3));
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lifted_row_and_gram_examples() {
        let u = FactorMatrix::from_columns(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(u.lifted_row(0, 1)[0], 6.0);
        let e = FactorMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(e.lifted_row(0, 0).as_slice(), &[1.0, 0.0]);
        assert_eq!(e.gram_lifted(), DMatrix::identity(2, 2));
        let c = FactorMatrix::from_columns(&[vec![0.0, 3.0, 4.0]]).unwrap();
        assert_eq!(c.gram_lifted()[(0, 0)], 625.0);
    }

    #[test]
    fn duplicate_observation_rejected() {
        let t = CanonicalTriple::new(0, 1, 2);
        let u = CanonicalTriple::new(2, 1, 0);
        assert!(ObservationSet::new(3, 0.5, vec![(t, 1.0), (u, 2.0)]).is_err());
        let obs = ObservationSet::new(3, 0.5, vec![(t, 1.0)]).unwrap();
        assert_eq!(obs.get(2, 0, 1), Some(1.0));
        assert_eq!(obs.get(0, 0, 1), None);
    }

    #[test]
    fn loss_at_zero_is_weighted_square_sum() {
        let obs = ObservationSet::new(
            3,
            1.0,
            vec![(CanonicalTriple::new(0, 1, 2), 2.0), (CanonicalTriple::new(1, 1, 1), 3.0)],
        )
        .unwrap();
        assert_eq!(loss(&FactorMatrix::zeros(3, 1), &obs).unwrap(), 6.0 * 4.0 + 9.0);
    }
}

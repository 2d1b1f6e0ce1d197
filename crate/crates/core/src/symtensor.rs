//! Packed symmetric tensors in `Sym^d(ℝ^n)`.
//!
//! A tensor is stored as one coefficient per sorted multi-index `i_1 ≤ … ≤ i_d`
//! (0-based), in lexicographic order. The stored value is the entry of the full
//! tensor at any permutation of that index, so the Frobenius product weights
//! each stored coefficient by its multinomial multiplicity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{binom, factorial};

/// Sorted multi-indices of one `(n, d)` shape with their multiplicities.
#[derive(Debug)]
pub struct Basis {
    pub n: usize,
    pub d: usize,
    pub indices: Vec<Vec<usize>>,
    /// Number of distinct permutations of each index.
    pub weights: Vec<f64>,
    /// Exponent vector (length `n`) of each index.
    pub exponents: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
}

impl Basis {
    fn build(n: usize, d: usize) -> Basis {
        let mut indices = Vec::with_capacity(binom(n + d - 1, d));
        let mut cur = Vec::with_capacity(d);
        fill(n, d, 0, &mut cur, &mut indices);
        let exponents: Vec<Vec<usize>> = indices
            .iter()
            .map(|idx| {
                let mut e = vec![0; n];
                for &i in idx {
                    e[i] += 1;
                }
                e
            })
            .collect();
        let weights = exponents
            .iter()
            .map(|e| factorial(d) / e.iter().map(|&k| factorial(k)).product::<f64>())
            .collect();
        let lookup = indices
            .iter()
            .enumerate()
            .map(|(p, idx)| (idx.clone(), p))
            .collect();
        Basis {
            n,
            d,
            indices,
            weights,
            exponents,
            lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of a multi-index, which need not be sorted.
    pub fn position(&self, idx: &[usize]) -> Option<usize> {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            self.lookup.get(idx).copied()
        } else {
            let mut s = idx.to_vec();
            s.sort_unstable();
            self.lookup.get(&s).copied()
        }
    }
}

fn fill(n: usize, d: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == d {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        fill(n, d, i, cur, out);
        cur.pop();
    }
}

/// Shared, lazily built basis for `(n, d)`.
pub fn basis(n: usize, d: usize) -> Arc<Basis> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Basis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((n, d))
        .or_insert_with(|| Arc::new(Basis::build(n, d)))
        .clone()
}

/// Multinomial multiplicity of a multi-index.
pub fn multiplicity(idx: &[usize]) -> f64 {
    let mut s = idx.to_vec();
    s.sort_unstable();
    let mut denom = 1.0;
    let mut run = 1;
    for w in s.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            denom *= factorial(run);
            run = 1;
        }
    }
    if !s.is_empty() {
        denom *= factorial(run);
    }
    factorial(s.len()) / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    n: usize,
    d: usize,
    coeffs: Vec<f64>,
}

impl SymTensor {
    /// `binom(n+d-1, d)`.
    pub fn dim(n: usize, d: usize) -> usize {
        binom(n + d - 1, d)
    }

    pub fn zeros(n: usize, d: usize) -> SymTensor {
        SymTensor {
            n,
            d,
            coeffs: vec![0.0; Self::dim(n, d)],
        }
    }

    pub fn from_coeffs(n: usize, d: usize, coeffs: Vec<f64>) -> Result<SymTensor> {
        let expected = Self::dim(n, d);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(SymTensor { n, d, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn basis(&self) -> Arc<Basis> {
        basis(self.n, self.d)
    }

    /// Entry at any (not necessarily sorted) multi-index.
    pub fn get(&self, idx: &[usize]) -> Option<f64> {
        if idx.len() != self.d || idx.iter().any(|&i| i >= self.n) {
            return None;
        }
        self.basis().position(idx).map(|p| self.coeffs[p])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        if idx.len() != self.d || idx.iter().any(|&i| i >= self.n) {
            return Err(invalid(format!("multi-index {idx:?} out of range")));
        }
        let p = self.basis().position(idx).expect("in-range index");
        self.coeffs[p] = value;
        Ok(())
    }

    pub fn check_same_shape(&self, other: &SymTensor) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::ShapeMismatch(format!(
                "Sym^{}(R^{}) vs Sym^{}(R^{})",
                self.d, self.n, other.d, other.n
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> SymTensor {
        SymTensor {
            n: self.n,
            d: self.d,
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SymTensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &SymTensor) -> Result<SymTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn frobenius_inner(&self, other: &SymTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        let b = self.basis();
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(&b.weights)
            .map(|((s, t), w)| w * s * t)
            .sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_inner(self).unwrap_or(0.0).max(0.0).sqrt()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Value of the homogeneous polynomial `⟨T, x^{⊗d}⟩_F`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let b = self.basis();
        Ok(b.indices
            .iter()
            .zip(&b.weights)
            .zip(&self.coeffs)
            .map(|((idx, w), c)| w * c * idx.iter().map(|&i| x[i]).product::<f64>())
            .sum())
    }

    /// Gradient in `x` of the polynomial `⟨T, x^{⊗d}⟩_F`.
    pub fn poly_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let b = self.basis();
        let mut g = vec![0.0; self.n];
        for ((idx, w), c) in b.indices.iter().zip(&b.weights).zip(&self.coeffs) {
            if *c == 0.0 {
                continue;
            }
            for k in 0..idx.len() {
                if k > 0 && idx[k] == idx[k - 1] {
                    continue;
                }
                let e = idx.iter().filter(|&&i| i == idx[k]).count() as f64;
                let rest: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &i)| x[i])
                    .product();
                g[idx[k]] += w * c * e * rest;
            }
        }
        Ok(g)
    }

    /// Full tensor as a row-major array of length `n^d`.
    pub fn to_dense(&self) -> Vec<f64> {
        let total = self.n.pow(self.d as u32);
        let b = self.basis();
        let mut out = vec![0.0; total];
        let mut idx = vec![0usize; self.d];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for k in (0..self.d).rev() {
                idx[k] = rem % self.n;
                rem /= self.n;
            }
            *slot = self.coeffs[b.position(&idx).expect("valid index")];
        }
        out
    }

    /// Packs a full row-major tensor by reading its sorted-index entries.
    pub fn from_dense(n: usize, d: usize, dense: &[f64]) -> Result<SymTensor> {
        let total = n.pow(d as u32);
        if dense.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: dense.len(),
            });
        }
        let b = basis(n, d);
        let coeffs = b
            .indices
            .iter()
            .map(|idx| dense[idx.iter().fold(0, |acc, &i| acc * n + i)])
            .collect();
        Ok(SymTensor { n, d, coeffs })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<SymTensor> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch("matrix is not square".into()));
        }
        let n = m.nrows();
        let b = basis(n, 2);
        let coeffs = b
            .indices
            .iter()
            .map(|idx| 0.5 * (m[(idx[0], idx[1])] + m[(idx[1], idx[0])]))
            .collect();
        Ok(SymTensor { n, d: 2, coeffs })
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.d != 2 {
            return Err(Error::InvalidDegree(self.d));
        }
        Ok(DMatrix::from_row_slice(self.n, self.n, &self.to_dense()))
    }
}

/// `λ v^{⊗d}`.
pub fn rank_one(v: &[f64], lambda: f64, d: usize) -> Result<SymTensor> {
    if d == 0 {
        return Err(Error::InvalidDegree(d));
    }
    let n = v.len();
    let b = basis(n, d);
    let coeffs = b
        .indices
        .iter()
        .map(|idx| lambda * idx.iter().map(|&i| v[i]).product::<f64>())
        .collect();
    Ok(SymTensor { n, d, coeffs })
}

pub fn frobenius_inner(s: &SymTensor, t: &SymTensor) -> Result<f64> {
    s.frobenius_inner(t)
}

pub fn evaluate_poly(t: &SymTensor, x: &[f64]) -> Result<f64> {
    t.evaluate(x)
}

/// Unnormalized symmetrization `Σ_k w^{⊗k} ⊗ u ⊗ w^{⊗(d-1-k)}`.
pub fn sym_outer(w: &[f64], u: &[f64], d: usize) -> Result<SymTensor> {
    if d == 0 {
        return Err(Error::InvalidDegree(d));
    }
    if w.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: u.len(),
        });
    }
    let n = w.len();
    let b = basis(n, d);
    let coeffs = b
        .indices
        .iter()
        .map(|idx| {
            (0..d)
                .map(|k| {
                    u[idx[k]]
                        * idx
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != k)
                            .map(|(_, &i)| w[i])
                            .product::<f64>()
                })
                .sum()
        })
        .collect();
    Ok(SymTensor { n, d, coeffs })
}

/// Unfolds a degree-`2k` tensor into the `n^k × n^k` matrix with rows
/// `(i_1..i_k)` and columns `(i_{k+1}..i_{2k})`, both lexicographic.
pub fn matricize_2d(m: &SymTensor) -> Result<DMatrix<f64>> {
    if m.d % 2 != 0 {
        return Err(Error::InvalidDegree(m.d));
    }
    let n = m.n;
    let k = m.d / 2;
    let side = n.pow(k as u32);
    let b = m.basis();
    let unflatten = |mut flat: usize, out: &mut [usize]| {
        for slot in out.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
    };
    let mut out = DMatrix::zeros(side, side);
    let mut idx = vec![0usize; 2 * k];
    for r in 0..side {
        for c in r..side {
            unflatten(r, &mut idx[..k]);
            unflatten(c, &mut idx[k..]);
            let v = m.coeffs[b.position(&idx).expect("valid index")];
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SymTensorJson {
    n: usize,
    d: usize,
    coeffs: Vec<(Vec<usize>, f64)>,
}

impl Serialize for SymTensor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let b = self.basis();
        SymTensorJson {
            n: self.n,
            d: self.d,
            coeffs: b.indices.iter().cloned().zip(self.coeffs.iter().copied()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymTensor {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = SymTensorJson::deserialize(de)?;
        if raw.d == 0 {
            return Err(D::Error::custom("degree must be positive"));
        }
        let mut t = SymTensor::zeros(raw.n, raw.d);
        for (idx, v) in raw.coeffs {
            t.set(&idx, v).map_err(D::Error::custom)?;
        }
        Ok(t)
    }
}

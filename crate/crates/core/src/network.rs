//! The parameterization `τ_r(α, W) = Σ α_i w_i^{⊗d}`, its differential, and
//! the combinatorics of widths and fibers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, binom, null_space, numerical_rank, RANK_RTOL};
use crate::symtensor::{basis, rank_one, sym_outer, SymTensor};

/// Student weights: output weights `alpha` and neuron rows of `w` (`r × n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsJson", into = "ParamsJson")]
pub struct NetworkParams {
    pub alpha: DVector<f64>,
    pub w: DMatrix<f64>,
    pub d: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    alpha: Vec<f64>,
    w: Vec<Vec<f64>>,
    d: usize,
}

impl TryFrom<ParamsJson> for NetworkParams {
    type Error = Error;

    fn try_from(p: ParamsJson) -> Result<Self> {
        let w = linalg::matrix_from_rows(&p.w).ok_or_else(|| invalid("ragged weight rows"))?;
        let w = if p.w.is_empty() { DMatrix::zeros(0, 0) } else { w };
        NetworkParams::new(DVector::from_vec(p.alpha), w, p.d)
    }
}

impl From<NetworkParams> for ParamsJson {
    fn from(p: NetworkParams) -> Self {
        ParamsJson {
            alpha: p.alpha.iter().copied().collect(),
            w: linalg::matrix_to_rows(&p.w),
            d: p.d,
        }
    }
}

impl NetworkParams {
    pub fn new(alpha: DVector<f64>, w: DMatrix<f64>, d: usize) -> Result<NetworkParams> {
        if d == 0 {
            return Err(Error::InvalidDegree(d));
        }
        if alpha.len() != w.nrows() {
            return Err(Error::DimensionMismatch {
                expected: alpha.len(),
                got: w.nrows(),
            });
        }
        Ok(NetworkParams { alpha, w, d })
    }

    pub fn width(&self) -> usize {
        self.alpha.len()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn neuron(&self, i: usize) -> Vec<f64> {
        self.w.row(i).iter().copied().collect()
    }

    /// `f(x) = Σ α_i (w_i·x)^d`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (0..self.width())
            .map(|i| {
                let dot: f64 = self.w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                self.alpha[i] * dot.powi(self.d as i32)
            })
            .sum()
    }

    /// Per-neuron `δ_i = α_i² − ‖w_i‖²/d`.
    pub fn deltas(&self) -> Vec<f64> {
        (0..self.width())
            .map(|i| self.alpha[i].powi(2) - self.w.row(i).norm_squared() / self.d as f64)
            .collect()
    }

    /// `(α, w_1, …, w_r)` flattened.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.alpha.iter().copied().collect();
        for i in 0..self.width() {
            v.extend(self.w.row(i).iter());
        }
        v
    }

    pub fn from_flat(flat: &[f64], r: usize, n: usize, d: usize) -> Result<NetworkParams> {
        if flat.len() != r + r * n {
            return Err(Error::DimensionMismatch {
                expected: r + r * n,
                got: flat.len(),
            });
        }
        let alpha = DVector::from_column_slice(&flat[..r]);
        let w = DMatrix::from_row_slice(r, n, &flat[r..]);
        NetworkParams::new(alpha, w, d)
    }

    pub fn norm(&self) -> f64 {
        (self.alpha.norm_squared() + self.w.norm_squared()).sqrt()
    }
}

pub fn tau(params: &NetworkParams) -> SymTensor {
    let mut out = SymTensor::zeros(params.n(), params.d);
    for i in 0..params.width() {
        let t = rank_one(&params.neuron(i), params.alpha[i], params.d).expect("degree checked");
        out.axpy(1.0, &t).expect("same shape");
    }
    out
}

/// Jacobian of `τ_r` in packed coordinates. Columns are ordered
/// `α_1..α_r, w_{1,1..n}, …, w_{r,1..n}`.
pub fn d_tau(params: &NetworkParams) -> DMatrix<f64> {
    let (r, n, d) = (params.width(), params.n(), params.d);
    let dim = SymTensor::dim(n, d);
    let mut jac = DMatrix::zeros(dim, r + r * n);
    let mut e = vec![0.0; n];
    for i in 0..r {
        let wi = params.neuron(i);
        let col = rank_one(&wi, 1.0, d).expect("degree checked");
        jac.set_column(i, &DVector::from_column_slice(col.coeffs()));
        for j in 0..n {
            e[j] = 1.0;
            let col = sym_outer(&wi, &e, d).expect("same length").scaled(params.alpha[i]);
            jac.set_column(r + i * n + j, &DVector::from_column_slice(col.coeffs()));
            e[j] = 0.0;
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritLocusReport {
    pub in_crit: bool,
    pub rank: usize,
    /// Unit-norm form orthogonal to the image of the differential.
    pub witness: Option<SymTensor>,
    /// Largest `‖∇P(w_i)‖` over neurons with `α_i ≠ 0`.
    pub witness_residual: Option<f64>,
}

pub fn crit_locus_test(params: &NetworkParams, tol: f64) -> CritLocusReport {
    let (n, d) = (params.n(), params.d);
    let jac = d_tau(params);
    let dim = jac.nrows();
    let rank = numerical_rank(&jac, RANK_RTOL);
    let in_crit = rank < dim.min(jac.ncols());
    let mut witness = None;
    let mut witness_residual = None;
    if rank < dim {
        let b = basis(n, d);
        // Frobenius orthocomplement of the image: (diag(w) J)ᵀ p = 0.
        let weighted = DMatrix::from_fn(dim, jac.ncols(), |i, j| b.weights[i] * jac[(i, j)]);
        let ns = null_space(&weighted.transpose(), RANK_RTOL);
        if ns.ncols() > 0 {
            let mut p = SymTensor::from_coeffs(n, d, ns.column(0).iter().copied().collect())
                .expect("dimension matches");
            let norm = p.frobenius_norm();
            p = p.scaled(1.0 / norm);
            let big = p
                .coeffs()
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(0.0);
            if big < 0.0 {
                p = p.scaled(-1.0);
            }
            let res = (0..params.width())
                .filter(|&i| params.alpha[i] != 0.0)
                .map(|i| {
                    let g = p.poly_gradient(&params.neuron(i)).expect("dimension matches");
                    g.iter().map(|x| x * x).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max);
            debug_assert!(res <= tol.max(1e-6));
            witness_residual = Some(res);
            witness = Some(p);
        }
    }
    CritLocusReport {
        in_crit,
        rank,
        witness,
        witness_residual,
    }
}

/// Necessary-condition test for the branch locus, available for `d = 2`
/// (matrix rank) and `n = 2` (middle catalecticant rank).
pub fn branch_membership(t: &SymTensor) -> Result<bool> {
    let (n, d) = (t.n(), t.d());
    if d == 2 {
        let m = t.to_matrix()?;
        return Ok(numerical_rank(&m, RANK_RTOL) + 1 <= n);
    }
    if n == 2 {
        let half = d / 2;
        let entry = |k: usize| {
            let mut idx = vec![0; d - k];
            idx.extend(std::iter::repeat(1).take(k));
            t.get(&idx).expect("valid index")
        };
        let cat = DMatrix::from_fn(half + 1, d - half + 1, |i, j| entry(i + j));
        return Ok(numerical_rank(&cat, RANK_RTOL) <= half);
    }
    Err(invalid(format!(
        "branch test needs d = 2 or n = 2, got d = {d}, n = {n}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LowDimensional,
    Thick,
    ThickOrFilling,
    Filling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub r_thick: usize,
    pub r_fill_lower: usize,
    pub r_fill_upper: usize,
    pub r_fill_exact: Option<usize>,
    pub regime: Regime,
}

const THICK_EXCEPTIONS: [(usize, usize); 4] = [(4, 3), (4, 4), (4, 5), (3, 5)];

pub fn r_thick(d: usize, n: usize) -> usize {
    if d == 2 {
        return n;
    }
    let base = binom(n + d - 1, d).div_ceil(n);
    if THICK_EXCEPTIONS.contains(&(d, n)) {
        base + 1
    } else {
        base
    }
}

pub fn regime(d: usize, n: usize, r: usize) -> Result<RegimeReport> {
    if d < 2 {
        return Err(Error::InvalidDegree(d));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let thick = r_thick(d, n);
    let exact = if n == 1 {
        Some(1)
    } else if d == 2 {
        Some(n)
    } else if n == 2 {
        Some(d)
    } else {
        None
    };
    let upper = exact.unwrap_or(2 * thick);
    let regime = if r < thick {
        Regime::LowDimensional
    } else if r >= upper {
        Regime::Filling
    } else if exact.is_some() {
        Regime::Thick
    } else {
        Regime::ThickOrFilling
    };
    Ok(RegimeReport {
        d,
        n,
        r,
        r_thick: thick,
        r_fill_lower: thick,
        r_fill_upper: upper,
        r_fill_exact: exact,
        regime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureTriple {
    pub s_plus: usize,
    pub s_minus: usize,
    pub s_zero: usize,
}

impl SignatureTriple {
    pub fn rank(&self) -> usize {
        self.s_plus + self.s_minus
    }

    pub fn n(&self) -> usize {
        self.s_plus + self.s_minus + self.s_zero
    }
}

/// Number of connected components of the fiber `τ_r^{-1}(S)` for a quadratic
/// network and a matrix `S` of the given signature.
pub fn fiber_components(sig: SignatureTriple, r: usize) -> u64 {
    let rank = sig.rank();
    if rank > r {
        0
    } else if rank < r {
        1
    } else if sig.s_plus == 0 || sig.s_minus == 0 {
        2
    } else {
        4 * binom(r, sig.s_plus) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullityReport {
    pub predicted: usize,
    pub numeric: usize,
}

/// Predicted and numerical nullity of `(α, U) ↦ Uᵀ diag(α) U` on the tangent
/// space of `ℝ^r × St(r, n)`.
pub fn stiefel_nullity_check(alpha: &[f64], u: &DMatrix<f64>) -> Result<NullityReport> {
    let r = alpha.len();
    let n = u.ncols();
    if u.nrows() != r || r > n {
        return Err(Error::ShapeMismatch(format!(
            "expected an r×n frame with r = {r} ≤ n, got {}×{}",
            u.nrows(),
            n
        )));
    }
    if (u * u.transpose() - DMatrix::identity(r, r)).amax() > 1e-10 {
        return Err(invalid("rows of U must be orthonormal"));
    }
    let predicted = (0..r)
        .flat_map(|i| (i + 1..r).map(move |j| (i, j)))
        .filter(|&(i, j)| alpha[i] == alpha[j])
        .count();

    // Rows of q complete u to an orthonormal basis.
    let q = null_space(u, RANK_RTOL).transpose();
    let rho = |a: &DVector<f64>, m: &DMatrix<f64>| {
        let s = m.transpose() * DMatrix::from_diagonal(a) * m;
        SymTensor::from_matrix(&s).expect("square").into_coeffs()
    };
    let a0 = DVector::from_column_slice(alpha);
    let mut directions: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
    for i in 0..r {
        let mut da = DVector::zeros(r);
        da[i] = 1.0;
        directions.push((da, DMatrix::zeros(r, n)));
    }
    for i in 0..r {
        for j in i + 1..r {
            let mut omega = DMatrix::zeros(r, r);
            omega[(i, j)] = 1.0;
            omega[(j, i)] = -1.0;
            directions.push((DVector::zeros(r), omega * u));
        }
    }
    for i in 0..r {
        for k in 0..q.nrows() {
            let mut du = DMatrix::zeros(r, n);
            du.set_row(i, &q.row(k));
            directions.push((DVector::zeros(r), du));
        }
    }
    // The map is quadratic in U, so central differences are exact up to rounding.
    let h = 1e-4;
    let dim = SymTensor::dim(n, 2);
    let mut jac = DMatrix::zeros(dim, directions.len());
    for (c, (da, du)) in directions.iter().enumerate() {
        let plus = rho(&(&a0 + da * h), &(u + du * h));
        let minus = rho(&(&a0 - da * h), &(u - du * h));
        for k in 0..dim {
            jac[(k, c)] = (plus[k] - minus[k]) / (2.0 * h);
        }
    }
    let numeric = directions.len() - numerical_rank(&jac, 1e-7);
    Ok(NullityReport { predicted, numeric })
}

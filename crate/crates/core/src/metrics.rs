//! Moment tensors of data distributions and the inner products they induce.
//!
//! For a distribution `D` on `ℝ^n`, the inner product of two degree-`d`
//! polynomials is `E[g(x) h(x)] = ⟨S ⊗ T, M⟩_F` with `M = E[x^{⊗2d}]`. A
//! [`MetricOperator`] stores that bilinear form as a Gram matrix on packed
//! coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, double_factorial_odd, numerical_rank, RANK_RTOL};
use crate::symtensor::{basis, SymTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentSpec {
    /// `x = ρ u` with `u` uniform on the sphere; `radial_moment = E[ρ^{2d}]`.
    RotInvariant { radial_moment: f64 },
    /// Independent coordinates with `moments[s] = E[y^s]`, `moments[0] = 1`.
    Iid { moments: Vec<f64> },
    /// Centered Gaussian with covariance `sigma`.
    ColoredGaussian {
        #[serde(with = "linalg::serde_rows")]
        sigma: DMatrix<f64>,
    },
    Mixture {
        weights: Vec<f64>,
        parts: Vec<MomentSpec>,
    },
    Empirical { points: Vec<Vec<f64>> },
}

impl MomentSpec {
    pub fn standard_gaussian(n: usize) -> MomentSpec {
        MomentSpec::ColoredGaussian {
            sigma: DMatrix::identity(n, n),
        }
    }

    /// Moments `E[y^s]`, `s = 0..=max_order`, of `N(0, var)`.
    pub fn gaussian_moments(var: f64, max_order: usize) -> Vec<f64> {
        (0..=max_order)
            .map(|s| {
                if s % 2 == 1 {
                    0.0
                } else {
                    double_factorial_odd(s / 2) * var.powi(s as i32 / 2)
                }
            })
            .collect()
    }

    /// Moments of the uniform distribution on `[-1, 1]`.
    pub fn uniform_moments(max_order: usize) -> Vec<f64> {
        (0..=max_order)
            .map(|s| if s % 2 == 1 { 0.0 } else { 1.0 / (s as f64 + 1.0) })
            .collect()
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            MomentSpec::RotInvariant { radial_moment } => {
                if !(*radial_moment >= 0.0) {
                    return Err(invalid("radial moment must be nonnegative"));
                }
            }
            MomentSpec::Iid { moments } => {
                if moments.len() < 2 * d + 1 {
                    return Err(invalid(format!(
                        "iid spec needs moments up to order {}, got {}",
                        2 * d,
                        moments.len().saturating_sub(1)
                    )));
                }
                if (moments[0] - 1.0).abs() > 1e-12 {
                    return Err(invalid("iid moment list must start with 1"));
                }
                for s in (2..=2 * d).step_by(2) {
                    if moments[s] < 0.0 {
                        return Err(invalid("even moments must be nonnegative"));
                    }
                }
            }
            MomentSpec::ColoredGaussian { sigma } => {
                if sigma.nrows() != n || sigma.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: sigma.nrows(),
                    });
                }
                if !linalg::is_symmetric(sigma, 1e-12) {
                    return Err(invalid("covariance must be symmetric"));
                }
                let min = linalg::sym_eigenvalues_asc(sigma).first().copied().unwrap_or(0.0);
                if min < -1e-10 * (1.0 + sigma.amax()) {
                    return Err(invalid("covariance must be positive semidefinite"));
                }
            }
            MomentSpec::Mixture { weights, parts } => {
                if weights.len() != parts.len() || parts.is_empty() {
                    return Err(invalid("mixture needs one weight per part"));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) {
                    return Err(invalid("mixture weights must be nonnegative"));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(invalid("mixture weights must sum to 1"));
                }
                for p in parts {
                    p.validate(n, d)?;
                }
            }
            MomentSpec::Empirical { points } => {
                if points.is_empty() {
                    return Err(invalid("empirical spec needs at least one point"));
                }
                if let Some(p) = points.iter().find(|p| p.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: p.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Standard-Gaussian moment `E[x^I]`: product of `(c-1)!!` over even counts.
fn standard_gaussian_entry(exponents: &[usize]) -> f64 {
    if exponents.iter().any(|c| c % 2 == 1) {
        return 0.0;
    }
    exponents.iter().map(|&c| double_factorial_odd(c / 2)).product()
}

/// Sum over perfect matchings of `idx` of products of `sigma` entries.
fn hafnian(idx: &mut Vec<usize>, sigma: &DMatrix<f64>) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx.remove(0);
    let mut total = 0.0;
    for j in 0..idx.len() {
        let partner = idx.remove(j);
        let s = sigma[(first, partner)];
        if s != 0.0 {
            total += s * hafnian(idx, sigma);
        }
        idx.insert(j, partner);
    }
    idx.insert(0, first);
    total
}

/// `E[x^{⊗2d}]` for the distribution described by `spec`.
pub fn moment_tensor(spec: &MomentSpec, n: usize, d: usize) -> Result<SymTensor> {
    if d == 0 {
        return Err(Error::InvalidDegree(d));
    }
    spec.validate(n, d)?;
    let b = basis(n, 2 * d);
    let coeffs: Vec<f64> = match spec {
        MomentSpec::RotInvariant { radial_moment } => {
            let chi: f64 = (0..d).map(|k| (n + 2 * k) as f64).product();
            b.exponents
                .iter()
                .map(|e| radial_moment / chi * standard_gaussian_entry(e))
                .collect()
        }
        MomentSpec::Iid { moments } => b
            .exponents
            .iter()
            .map(|e| e.iter().map(|&c| moments[c]).product())
            .collect(),
        MomentSpec::ColoredGaussian { sigma } => b
            .indices
            .iter()
            .map(|idx| hafnian(&mut idx.clone(), sigma))
            .collect(),
        MomentSpec::Mixture { weights, parts } => {
            let mut acc = vec![0.0; b.len()];
            for (w, p) in weights.iter().zip(parts) {
                let m = moment_tensor(p, n, d)?;
                for (a, c) in acc.iter_mut().zip(m.coeffs()) {
                    *a += w * c;
                }
            }
            acc
        }
        MomentSpec::Empirical { points } => {
            let scale = 1.0 / points.len() as f64;
            b.indices
                .iter()
                .map(|idx| {
                    scale
                        * points
                            .iter()
                            .map(|x| idx.iter().map(|&i| x[i]).product::<f64>())
                            .sum::<f64>()
                })
                .collect()
        }
    };
    SymTensor::from_coeffs(n, 2 * d, coeffs)
}

/// Symmetric bilinear form on packed `Sym^d(ℝ^n)`:
/// `inner(S, T) = packed(S)ᵀ · gram · packed(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOperator {
    n: usize,
    d: usize,
    #[serde(with = "linalg::serde_rows")]
    gram: DMatrix<f64>,
}

impl MetricOperator {
    pub fn from_gram(n: usize, d: usize, gram: DMatrix<f64>) -> Result<MetricOperator> {
        let dim = SymTensor::dim(n, d);
        if gram.nrows() != dim || gram.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: gram.nrows(),
            });
        }
        if !linalg::is_symmetric(&gram, 1e-12) {
            return Err(invalid("Gram matrix must be symmetric"));
        }
        Ok(MetricOperator { n, d, gram })
    }

    pub fn from_moments(m: &SymTensor) -> Result<MetricOperator> {
        if m.d() % 2 != 0 {
            return Err(Error::InvalidDegree(m.d()));
        }
        let (n, d) = (m.n(), m.d() / 2);
        let b = basis(n, d);
        let bm = m.basis();
        let dim = b.len();
        let mut gram = DMatrix::zeros(dim, dim);
        let mut joined = Vec::with_capacity(2 * d);
        for i in 0..dim {
            for j in i..dim {
                joined.clear();
                joined.extend_from_slice(&b.indices[i]);
                joined.extend_from_slice(&b.indices[j]);
                let p = bm.position(&joined).expect("valid index");
                let v = b.weights[i] * b.weights[j] * m.coeffs()[p];
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(MetricOperator { n, d, gram })
    }

    pub fn frobenius(n: usize, d: usize) -> MetricOperator {
        let b = basis(n, d);
        MetricOperator {
            n,
            d,
            gram: linalg::diag(&b.weights),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn check(&self, t: &SymTensor) -> Result<()> {
        if t.n() != self.n || t.d() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "metric on Sym^{}(R^{}) applied to Sym^{}(R^{})",
                self.d,
                self.n,
                t.d(),
                t.n()
            )));
        }
        Ok(())
    }

    pub fn inner(&self, s: &SymTensor, t: &SymTensor) -> Result<f64> {
        self.check(s)?;
        self.check(t)?;
        let sv = DVector::from_column_slice(s.coeffs());
        let tv = DVector::from_column_slice(t.coeffs());
        Ok(sv.dot(&(&self.gram * tv)))
    }

    pub fn norm_sq(&self, s: &SymTensor) -> Result<f64> {
        self.inner(s, s)
    }

    /// Frobenius representer `E` of the differential of `‖S − T‖²`, i.e.
    /// `⟨E, V⟩_F = 2 inner(S − T, V)` for all `V`.
    pub fn loss_gradient(&self, s: &SymTensor, t: &SymTensor) -> Result<SymTensor> {
        let diff = s.sub(t)?;
        self.check(&diff)?;
        let g = &self.gram * DVector::from_column_slice(diff.coeffs());
        let b = basis(self.n, self.d);
        let coeffs = g.iter().zip(&b.weights).map(|(v, w)| 2.0 * v / w).collect();
        SymTensor::from_coeffs(self.n, self.d, coeffs)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::sym_eigenvalues_asc(&self.gram)
            .first()
            .copied()
            .unwrap_or(0.0)
    }
}

pub fn metric_from_moments(m: &SymTensor) -> Result<MetricOperator> {
    MetricOperator::from_moments(m)
}

pub fn frobenius_metric(n: usize, d: usize) -> MetricOperator {
    MetricOperator::frobenius(n, d)
}

/// `(1/N) Σ S(x_i) T(x_i)`.
pub fn erm_inner(points: &[Vec<f64>], s: &SymTensor, t: &SymTensor) -> Result<f64> {
    if points.is_empty() {
        return Err(invalid("empirical inner product needs at least one point"));
    }
    s.check_same_shape(t)?;
    let mut acc = 0.0;
    for x in points {
        acc += s.evaluate(x)? * t.evaluate(x)?;
    }
    Ok(acc / points.len() as f64)
}

/// Whether no nonzero degree-`d` form vanishes on all the points.
pub fn erm_nondegenerate(points: &[Vec<f64>], n: usize, d: usize) -> bool {
    let b = basis(n, d);
    if points.len() < b.len() || points.iter().any(|p| p.len() != n) {
        return false;
    }
    let eval = DMatrix::from_fn(points.len(), b.len(), |r, c| {
        b.weights[c] * b.indices[c].iter().map(|&i| points[r][i]).product::<f64>()
    });
    numerical_rank(&eval, RANK_RTOL) == b.len()
}

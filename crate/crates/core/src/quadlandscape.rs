//! Critical points of quadratic networks (`d = 2`).
//!
//! Here `τ_r(α, W) = Wᵀ diag(α) W` ranges over symmetric matrices of rank at
//! most `r`, and the loss is a squared distance `h_T(S) = ‖S − T‖²` under one
//! of three inner products on symmetric matrices:
//!
//! * Frobenius: `tr(ST)`;
//! * Gaussian: `tr(ST) + ½ tr(S) tr(T)`, proportional to the one induced by
//!   any rotationally invariant distribution;
//! * iid: `2μ₂² tr(ST) + μ₂² tr(S) tr(T) + (μ₄ − 3μ₂²) Σ_i S_ii T_ii`, the one
//!   induced by centered data with independent coordinates.
//!
//! For the first two, critical points on the rank-`r` stratum are indexed by
//! `r`-subsets of the teacher's eigenvalues. For the iid norm and diagonal
//! teachers, rank-one critical points are indexed by a support and a sign
//! pattern.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discriminant::focal_points_on_segment;
use crate::error::{invalid, precondition, Error, Result};
use crate::linalg::{self, combinations, sym_eigen_desc};
use crate::network::{tau, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadMetric {
    Frobenius,
    Gaussian,
    Iid { mu2: f64, mu4: f64 },
}

impl QuadMetric {
    pub fn validate(&self) -> Result<()> {
        if let QuadMetric::Iid { mu2, mu4 } = *self {
            if !(mu2 > 0.0) {
                return Err(invalid("mu2 must be positive"));
            }
            if !(mu4 >= mu2 * mu2) {
                return Err(invalid("mu4 must be at least mu2^2"));
            }
        }
        Ok(())
    }

    /// Bilinear form `⟨S, T⟩` on symmetric matrices.
    pub fn inner(&self, s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let ff = s.component_mul(t).sum();
        match *self {
            QuadMetric::Frobenius => ff,
            QuadMetric::Gaussian => ff + 0.5 * s.trace() * t.trace(),
            QuadMetric::Iid { mu2, mu4 } => {
                let m2 = mu2 * mu2;
                2.0 * m2 * ff
                    + m2 * s.trace() * t.trace()
                    + (mu4 - 3.0 * m2) * s.diagonal().component_mul(&t.diagonal()).sum()
            }
        }
    }

    /// `‖S − T‖²`.
    pub fn loss(&self, s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let diff = s - t;
        self.inner(&diff, &diff)
    }

    /// Magnitude of the form, used to make residuals dimensionless.
    pub fn scale(&self) -> f64 {
        match *self {
            QuadMetric::Frobenius | QuadMetric::Gaussian => 1.0,
            QuadMetric::Iid { mu2, mu4 } => mu4.max(mu2 * mu2),
        }
    }
}

/// Euclidean gradient of `S ↦ ‖S − T‖²` over symmetric matrices.
pub fn func_gradient(metric: QuadMetric, s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    metric.validate()?;
    if s.shape() != t.shape() || !s.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            s.shape(),
            t.shape()
        )));
    }
    let n = s.nrows();
    let diff = s - t;
    let id = DMatrix::<f64>::identity(n, n);
    Ok(match metric {
        QuadMetric::Frobenius => diff * 2.0,
        QuadMetric::Gaussian => &diff * 2.0 + id * diff.trace(),
        QuadMetric::Iid { mu2, mu4 } => {
            let m2 = mu2 * mu2;
            let dg = DMatrix::from_diagonal(&diff.diagonal());
            &diff * (4.0 * m2) + id * (2.0 * m2 * diff.trace()) + dg * (2.0 * mu4 - 6.0 * m2)
        }
    })
}

/// Gradient of `‖τ_r(α, W) − T‖²` with respect to `α` and the rows of `W`.
pub fn param_gradient(
    params: &NetworkParams,
    metric: QuadMetric,
    t: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if params.d != 2 {
        return Err(Error::InvalidDegree(params.d));
    }
    let s = tau(params).to_matrix()?;
    let g = func_gradient(metric, &s, t)?;
    let gw = &params.w * &g;
    let grad_alpha = DVector::from_fn(params.width(), |i, _| gw.row(i).dot(&params.w.row(i)));
    let mut grad_w = gw;
    for i in 0..params.width() {
        let a = 2.0 * params.alpha[i];
        grad_w.row_mut(i).scale_mut(a);
    }
    Ok((grad_alpha, grad_w))
}

/// `‖∇h_T(S)·S‖_F / (scale · (‖T‖_F + ‖S‖_F)²)`.
pub fn criticality_residual(metric: QuadMetric, s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    let g = func_gradient(metric, s, t)?;
    let denom = metric.scale() * (t.norm() + s.norm()).powi(2);
    Ok(if denom > 0.0 { (g * s).norm() / denom } else { 0.0 })
}

pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidCertificate {
    pub support: Vec<usize>,
    /// `τ_i ∈ {−1, 0, 1}`, first nonzero entry `+1`.
    pub sign_pattern: Vec<i8>,
    pub epsilon: i8,
    pub beta: f64,
    pub gamma: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    #[serde(with = "linalg::serde_rows")]
    pub s: DMatrix<f64>,
    pub rank: usize,
    /// Selected teacher eigen-indices (descending order), or the iid support.
    pub support: Vec<usize>,
    /// Nonzero student eigenvalues, one per support entry.
    pub eigenvalues: Vec<f64>,
    /// Morse index within the rank stratum; `None` when undefined or unknown.
    pub index: Option<usize>,
    pub c_shift: f64,
    pub residual: f64,
    /// A shifted eigenvalue vanished, so the point is degenerate.
    pub degenerate: bool,
    pub certificate: Option<IidCertificate>,
}

/// Eigen-decomposition of a teacher that satisfies the genericity guard.
pub struct TeacherSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn teacher_spectrum(t: &DMatrix<f64>) -> Result<TeacherSpectrum> {
    if !t.is_square() || t.nrows() == 0 {
        return Err(Error::ShapeMismatch("teacher must be a nonempty square matrix".into()));
    }
    if !linalg::is_symmetric(t, 1e-12) {
        return Err(invalid("teacher must be symmetric"));
    }
    let (values, vectors) = sym_eigen_desc(t);
    let guard = 1e-8 * t.norm();
    if let Some(w) = values.windows(2).find(|w| w[0] - w[1] <= guard) {
        return Err(precondition(format!(
            "teacher eigenvalues {} and {} are not separated",
            w[0], w[1]
        )));
    }
    if values.iter().any(|v| v.abs() <= guard) {
        return Err(precondition("teacher is not full rank"));
    }
    Ok(TeacherSpectrum { values, vectors })
}

/// Index by the ratio count: pairs `(i, j) ∈ I × I^c` with
/// `0 ≤ (σ_i + c)/(σ_j + c) ≤ 1`.
pub fn ratio_index(sigma: &[f64], support: &[usize], c: f64) -> usize {
    let mut count = 0;
    for &i in support {
        for j in (0..sigma.len()).filter(|j| !support.contains(j)) {
            let den = sigma[j] + c;
            if den == 0.0 {
                continue;
            }
            let ratio = (sigma[i] + c) / den;
            if (0.0..=1.0).contains(&ratio) {
                count += 1;
            }
        }
    }
    count
}

fn eckart_young(t: &DMatrix<f64>, r: usize, gaussian: bool) -> Result<Vec<CriticalPoint>> {
    let n = t.nrows();
    if r == 0 || r > n {
        return Err(invalid(format!("rank {r} outside 1..={n}")));
    }
    let spec = teacher_spectrum(t)?;
    let metric = if gaussian {
        QuadMetric::Gaussian
    } else {
        QuadMetric::Frobenius
    };
    let scale = t.norm();
    let mut out = Vec::new();
    for support in combinations(n, r) {
        let c = if gaussian {
            (0..n)
                .filter(|j| !support.contains(j))
                .map(|j| spec.values[j])
                .sum::<f64>()
                / (r as f64 + 2.0)
        } else {
            0.0
        };
        let eigenvalues: Vec<f64> = support.iter().map(|&i| spec.values[i] + c).collect();
        let mut s = DMatrix::zeros(n, n);
        for (&i, &lam) in support.iter().zip(&eigenvalues) {
            let u = spec.vectors.column(i);
            s += u * u.transpose() * lam;
        }
        let degenerate = eigenvalues.iter().any(|l| l.abs() <= 1e-12 * scale);
        let index = (!degenerate).then(|| ratio_index(&spec.values, &support, c));
        let residual = criticality_residual(metric, &s, t)?;
        out.push(CriticalPoint {
            s,
            rank: if degenerate { r - 1 } else { r },
            support,
            eigenvalues,
            index,
            c_shift: c,
            residual,
            degenerate,
            certificate: None,
        });
    }
    Ok(out)
}

/// The `binom(n, r)` critical points of `‖S − T‖_F²` on rank-`r` matrices.
pub fn ey_frobenius_critical(t: &DMatrix<f64>, r: usize) -> Result<Vec<CriticalPoint>> {
    eckart_young(t, r, false)
}

/// The `binom(n, r)` critical points of the Gaussian-norm loss on rank-`r`
/// matrices; each keeps the teacher's eigenvectors and shifts the selected
/// eigenvalues by `c_I = Σ_{j∉I} σ_j / (r + 2)`.
pub fn ey_gaussian_critical(t: &DMatrix<f64>, r: usize) -> Result<Vec<CriticalPoint>> {
    eckart_young(t, r, true)
}

/// Critical points on every stratum of rank at most `r`, i.e. the image of
/// the parameter-space critical set apart from the origin.
pub fn critical_image_cover(t: &DMatrix<f64>, metric: QuadMetric, r: usize) -> Result<Vec<CriticalPoint>> {
    let gaussian = match metric {
        QuadMetric::Frobenius => false,
        QuadMetric::Gaussian => true,
        QuadMetric::Iid { .. } => {
            return Err(invalid("image cover is available for the Frobenius and Gaussian norms"))
        }
    };
    let mut out = Vec::new();
    for k in 1..=r {
        out.extend(eckart_young(t, k, gaussian)?);
    }
    Ok(out)
}

/// Precondition diagnostics for the iid enumeration; empty when all hold.
pub fn iid_precondition_warnings(t: &[f64], mu2: f64, mu4: f64) -> Vec<String> {
    let n = t.len();
    let mut w = Vec::new();
    if mu4 < 10.0 * n as f64 * mu2 * mu2 {
        w.push(format!("mu4 = {mu4} is below 10 n mu2^2 = {}", 10.0 * n as f64 * mu2 * mu2));
    }
    if t.iter().any(|&x| !(x > 0.0)) {
        w.push("teacher entries must be positive".into());
    } else {
        let max = t.iter().copied().fold(f64::MIN, f64::max);
        let min = t.iter().copied().fold(f64::MAX, f64::min);
        if max > 2.0 * min {
            w.push(format!("teacher spread max/min = {} exceeds 2", max / min));
        }
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[1] - p[0] <= 1e-12 * p[1].abs().max(1.0)) {
        w.push("teacher entries must be distinct".into());
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidEnumeration {
    pub points: Vec<CriticalPoint>,
    pub warnings: Vec<String>,
    pub all_residuals_ok: bool,
}

/// Rank-one critical points of the iid-norm loss for the teacher `diag(t)`.
pub fn iid_rank1_critical(t: &[f64], mu2: f64, mu4: f64) -> Result<IidEnumeration> {
    let metric = QuadMetric::Iid { mu2, mu4 };
    metric.validate()?;
    let n = t.len();
    if n == 0 {
        return Err(invalid("teacher must be nonempty"));
    }
    let m2 = mu2 * mu2;
    if (mu4 - 3.0 * m2).abs() <= 1e-12 * mu4 {
        return Err(invalid("mu4 = 3 mu2^2 is the Gaussian case, where gamma is undefined"));
    }
    let warnings = iid_precondition_warnings(t, mu2, mu4);
    let guaranteed = warnings.is_empty();
    let teacher = linalg::diag(t);
    let total: f64 = t.iter().sum();
    let mut points = Vec::new();
    let mut warnings = warnings;
    for k in 1..=n {
        for support in combinations(n, k) {
            let sub: f64 = support.iter().map(|&i| t[i]).sum();
            for epsilon in [1i8, -1] {
                let eps = epsilon as f64;
                let gamma = eps * (mu4 - m2) / (mu4 - 3.0 * m2);
                let beta = (eps * m2 * total - 3.0 * m2 * gamma * sub) / (mu4 + 3.0 * (k as f64 - 1.0) * m2);
                let sq: Vec<f64> = support.iter().map(|&i| beta + gamma * t[i]).collect();
                if sq.iter().any(|&q| !(q > 0.0)) {
                    if epsilon == 1 {
                        if guaranteed {
                            return Err(Error::Internal(format!(
                                "support {support:?} yields a negative square under valid preconditions"
                            )));
                        }
                        warnings.push(format!("support {support:?} has no real solution"));
                    }
                    continue;
                }
                if epsilon == -1 && guaranteed {
                    warnings.push(format!("unexpected negative-definite solution on {support:?}"));
                }
                let patterns = 1usize << (k - 1);
                for mask in 0..patterns {
                    let mut sign = vec![0i8; n];
                    let mut v = vec![0.0; n];
                    for (pos, (&i, &q)) in support.iter().zip(&sq).enumerate() {
                        let neg = pos > 0 && (mask >> (pos - 1)) & 1 == 1;
                        sign[i] = if neg { -1 } else { 1 };
                        v[i] = sign[i] as f64 * q.sqrt();
                    }
                    let vv = DVector::from_column_slice(&v);
                    let s = &vv * vv.transpose() * eps;
                    let residual = criticality_residual(metric, &s, &teacher)?;
                    points.push(CriticalPoint {
                        eigenvalues: vec![eps * vv.norm_squared()],
                        s,
                        rank: 1,
                        support: support.clone(),
                        index: None,
                        c_shift: 0.0,
                        residual,
                        degenerate: false,
                        certificate: Some(IidCertificate {
                            support: support.clone(),
                            sign_pattern: sign,
                            epsilon,
                            beta,
                            gamma,
                            v,
                        }),
                    });
                }
            }
        }
    }
    points.sort_by(|a, b| {
        let ca = a.certificate.as_ref().expect("iid certificate");
        let cb = b.certificate.as_ref().expect("iid certificate");
        a.support
            .cmp(&b.support)
            .then_with(|| cb.sign_pattern.cmp(&ca.sign_pattern))
            .then_with(|| cb.epsilon.cmp(&ca.epsilon))
    });
    let all_residuals_ok = points.iter().all(|p| p.residual <= RESIDUAL_TOL);
    Ok(IidEnumeration {
        points,
        warnings,
        all_residuals_ok,
    })
}

/// Morse index of a certified critical point, counted as focal points on the
/// segment from `S` to `T`.
pub fn index_by_focal_count(s: &DMatrix<f64>, t: &DMatrix<f64>, metric: QuadMetric) -> Result<usize> {
    let crossings = focal_points_on_segment(s, t, metric)?;
    Ok(crossings.iter().map(|c| c.multiplicity).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    const METRICS: [QuadMetric; 3] = [
        QuadMetric::Frobenius,
        QuadMetric::Gaussian,
        QuadMetric::Iid { mu2: 0.8, mu4: 5.0 },
    ];

    #[test]
    fn gradient_vanishes_at_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rand_sym(&mut rng, 3);
        for m in METRICS {
            assert_eq!(func_gradient(m, &t, &t).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn gaussian_trace_identity() {
        let t = DMatrix::zeros(3, 3);
        let s = DMatrix::identity(3, 3);
        let g = func_gradient(QuadMetric::Gaussian, &s, &t).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3) * 5.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in METRICS {
            let s = rand_sym(&mut rng, 3);
            let t = rand_sym(&mut rng, 3);
            let g = func_gradient(m, &s, &t).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                for j in i..3 {
                    let mut e = DMatrix::zeros(3, 3);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    let fd = (m.loss(&(&s + &e * h), &t) - m.loss(&(&s - &e * h), &t)) / (2.0 * h);
                    let an = g.component_mul(&e).sum();
                    assert!((fd - an).abs() < 1e-6, "{m:?} {fd} {an}");
                }
            }
        }
        assert!(func_gradient(QuadMetric::Iid { mu2: 0.0, mu4: 1.0 }, &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn iid_at_gaussian_boundary_is_scaled_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu2: f64 = 1.3;
        let iid = QuadMetric::Iid { mu2, mu4: 3.0 * mu2 * mu2 };
        for _ in 0..20 {
            let s = rand_sym(&mut rng, 4);
            let t = rand_sym(&mut rng, 4);
            let a = iid.inner(&s, &t);
            let b = 2.0 * mu2 * mu2 * QuadMetric::Gaussian.inner(&s, &t);
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        let t = linalg::diag(&[3.0, 1.0, -2.0]);
        for p in ey_gaussian_critical(&t, 2).unwrap() {
            assert!(criticality_residual(iid, &p.s, &t).unwrap() < 1e-12);
        }
    }

    #[test]
    fn param_gradient_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in METRICS {
            let t = rand_sym(&mut rng, 3);
            let p = NetworkParams::new(
                DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)),
                DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)),
                2,
            )
            .unwrap();
            let (ga, gw) = param_gradient(&p, m, &t).unwrap();
            let mut flat_grad: Vec<f64> = ga.iter().copied().collect();
            for i in 0..2 {
                flat_grad.extend(gw.row(i).iter());
            }
            let flat = p.to_flat();
            let loss = |f: &[f64]| {
                let q = NetworkParams::from_flat(f, 2, 3, 2).unwrap();
                m.loss(&tau(&q).to_matrix().unwrap(), &t)
            };
            let h = 1e-6;
            for c in 0..flat.len() {
                let mut fp = flat.clone();
                fp[c] += h;
                let mut fm = flat.clone();
                fm[c] -= h;
                let fd = (loss(&fp) - loss(&fm)) / (2.0 * h);
                assert!((fd - flat_grad[c]).abs() < 1e-6, "{fd} {}", flat_grad[c]);
            }
        }
    }

    #[test]
    fn param_gradient_zero_alpha() {
        let p = NetworkParams::new(DVector::zeros(2), DMatrix::from_element(2, 3, 0.5), 2).unwrap();
        let (_, gw) = param_gradient(&p, QuadMetric::Gaussian, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(gw.amax(), 0.0);
    }

    #[test]
    fn param_gradient_vanishes_at_critical_points() {
        let t = linalg::diag(&[4.0, -1.5, 2.5, 0.7]);
        for (metric, pts) in [
            (QuadMetric::Frobenius, ey_frobenius_critical(&t, 2).unwrap()),
            (QuadMetric::Gaussian, ey_gaussian_critical(&t, 2).unwrap()),
        ] {
            for p in pts {
                let (vals, vecs) = sym_eigen_desc(&p.s);
                let keep: Vec<usize> = (0..4).filter(|&i| vals[i].abs() > 1e-9).collect();
                let alpha = DVector::from_iterator(keep.len(), keep.iter().map(|&i| vals[i].signum()));
                let w = DMatrix::from_fn(keep.len(), 4, |r, c| vals[keep[r]].abs().sqrt() * vecs[(c, keep[r])]);
                let params = NetworkParams::new(alpha, w, 2).unwrap();
                let (ga, gw) = param_gradient(&params, metric, &t).unwrap();
                assert!(ga.amax() < 1e-9 && gw.amax() < 1e-9);
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        let t = linalg::diag(&[3.0, 1.0]);
        let pts = ey_frobenius_critical(&t, 1).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].s, linalg::diag(&[3.0, 0.0]));
        assert_eq!(pts[0].index, Some(0));
        assert_eq!(pts[1].s, linalg::diag(&[0.0, 1.0]));
        assert_eq!(pts[1].index, Some(1));

        let t = linalg::diag(&[2.0, -1.0]);
        let pts = ey_frobenius_critical(&t, 1).unwrap();
        assert!(pts.iter().all(|p| p.index == Some(0)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = rand_sym(&mut rng, 5);
        let pts = ey_frobenius_critical(&t, 3).unwrap();
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|p| p.residual <= RESIDUAL_TOL));

        assert!(matches!(
            ey_frobenius_critical(&DMatrix::identity(2, 2), 1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn gaussian_examples() {
        let t = linalg::diag(&[2.0, 1.0]);
        let pts = ey_gaussian_critical(&t, 1).unwrap();
        assert!((pts[0].s[(0, 0)] - 7.0 / 3.0).abs() < 1e-14);
        assert_eq!(pts[0].index, Some(0));
        assert!((pts[1].s[(1, 1)] - 5.0 / 3.0).abs() < 1e-14);
        assert_eq!(pts[1].index, Some(1));

        let t = linalg::diag(&[3.0, -1.0, 2.0]);
        let full = ey_gaussian_critical(&t, 3).unwrap();
        assert_eq!(full.len(), 1);
        assert!((&full[0].s - &t).amax() < 1e-12);
        assert_eq!(full[0].index, Some(0));
    }

    #[test]
    fn five_eigenvalue_teacher_global_minimum() {
        let beta = [-4.0, -2.0, 1.0, 3.0, 5.0];
        let v = DMatrix::identity(5, 5) - DMatrix::from_element(5, 5, 0.4);
        let t = v.transpose() * linalg::diag(&beta) * &v;
        let pts = ey_gaussian_critical(&t, 3).unwrap();
        // Descending order: 5, 3, 1, -2, -4.
        let p = pts.iter().find(|p| p.support == vec![0, 1, 4]).unwrap();
        assert!((p.c_shift + 0.2).abs() < 1e-12);
        let mut ev = p.eigenvalues.clone();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([-4.2, 2.8, 4.8]) {
            assert!((a - b).abs() < 1e-12);
        }
        let cover = critical_image_cover(&t, QuadMetric::Gaussian, 3).unwrap();
        assert_eq!(cover.len(), 25);
        let minima: Vec<usize> = (1..=3)
            .map(|k| cover.iter().filter(|p| p.rank == k && p.index == Some(0)).count())
            .collect();
        assert_eq!(minima, vec![2, 2, 2]);
    }

    #[test]
    fn cover_at_rank_one_is_enumeration() {
        let t = linalg::diag(&[3.0, -1.0, 2.0]);
        assert_eq!(
            critical_image_cover(&t, QuadMetric::Frobenius, 1).unwrap(),
            ey_frobenius_critical(&t, 1).unwrap()
        );
    }

    #[test]
    fn iid_examples() {
        let e = iid_rank1_critical(&[1.0, 1.5, 2.0], 1.0, 31.0).unwrap();
        assert_eq!(e.points.len(), 13);
        assert!(e.all_residuals_ok);
        assert!(e.warnings.is_empty());
        let c = e.points.iter().find(|p| p.support.len() == 2).unwrap();
        assert!((c.certificate.as_ref().unwrap().gamma - 15.0 / 14.0).abs() < 1e-15);

        let e = iid_rank1_critical(&[1.0, 2.0], 1.0, 25.0).unwrap();
        assert_eq!(e.points.len(), 4);
        let p = &e.points[0];
        assert_eq!(p.support, vec![0]);
        assert!((p.s[(0, 0)] - 27.0 / 25.0).abs() < 1e-14);
        assert!(p.residual <= 1e-12);

        assert!(iid_rank1_critical(&[1.0, 2.0], 1.0, 3.0).is_err());
    }

    #[test]
    fn iid_negative_branch_is_empty() {
        let e = iid_rank1_critical(&[1.0, 1.3, 1.7, 1.9], 1.0, 45.0).unwrap();
        assert_eq!(e.points.len(), 40);
        assert!(e.points.iter().all(|p| p.certificate.as_ref().unwrap().epsilon == 1));
    }

    #[test]
    fn focal_count_matches_ratio_index() {
        let t = linalg::diag(&[3.0, 1.0]);
        assert_eq!(index_by_focal_count(&linalg::diag(&[0.0, 1.0]), &t, QuadMetric::Frobenius).unwrap(), 1);
        assert_eq!(index_by_focal_count(&linalg::diag(&[3.0, 0.0]), &t, QuadMetric::Frobenius).unwrap(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn enumerations_are_complete_and_certified(
            vals in prop::collection::vec(0.2f64..5.0, 2..6),
            signs in prop::collection::vec(any::<bool>(), 6),
            r_pick in 0usize..6,
        ) {
            let n = vals.len();
            let mut sigma: Vec<f64> = vals.iter().zip(&signs).map(|(v, s)| if *s { *v } else { -*v }).collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sigma.windows(2).all(|w| w[0] - w[1] > 0.05));
            let t = linalg::diag(&sigma);
            let r = 1 + r_pick % n;
            for pts in [ey_frobenius_critical(&t, r).unwrap(), ey_gaussian_critical(&t, r).unwrap()] {
                prop_assert_eq!(pts.len(), linalg::binom(n, r));
                for p in &pts {
                    prop_assert!(p.residual <= RESIDUAL_TOL);
                    if !p.degenerate {
                        prop_assert_eq!(linalg::numerical_rank(&p.s, 1e-10), r);
                    }
                }
            }
        }

        #[test]
        fn iid_count_is_exact(
            n in 2usize..5,
            base in 0.5f64..3.0,
            spread in prop::collection::vec(0.0f64..1.0, 4),
            mu2 in 0.3f64..2.0,
            extra in 0.0f64..30.0,
        ) {
            let mut t: Vec<f64> = spread[..n].iter().map(|s| base * (1.0 + s)).collect();
            t.sort_by(f64::total_cmp);
            prop_assume!(t.windows(2).all(|w| w[1] - w[0] > 1e-3));
            let mu4 = mu2 * mu2 * (10.0 * n as f64 + extra);
            let e = iid_rank1_critical(&t, mu2, mu4).unwrap();
            prop_assert!(e.warnings.is_empty());
            prop_assert_eq!(e.points.len(), (3usize.pow(n as u32) - 1) / 2);
            prop_assert!(e.all_residuals_ok);
        }
    }
}

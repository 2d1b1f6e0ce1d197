//! Focal points, discriminant polynomials and stability probes.
//!
//! A teacher is a focal point of a critical student when the Hessian of the
//! restricted distance degenerates there. Along the segment from a critical
//! student `s` to its teacher, the number of focal points met equals the
//! Morse index of `s`. Off the discriminant the number of critical points and
//! their indices are locally constant.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Error, Result};
use crate::linalg::{self, sym_eigen_desc, sym_eigenvalues_asc};
use crate::quadlandscape::{
    criticality_residual, ey_frobenius_critical, ey_gaussian_critical, func_gradient, QuadMetric,
};

/// Checks that `sigma` is an `m × m` symmetric positive-definite matrix.
pub fn check_metric_pd(sigma: &DMatrix<f64>, m: usize) -> Result<()> {
    if sigma.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "metric is {:?}, expected {m}x{m}",
            sigma.shape()
        )));
    }
    if !linalg::is_symmetric(sigma, 1e-12) {
        return Err(invalid("metric must be symmetric"));
    }
    let min = sym_eigenvalues_asc(sigma)[0];
    if !(min > 0.0) {
        return Err(invalid(format!("metric is not positive definite (min eigenvalue {min})")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseCritical {
    pub theta: f64,
    pub point: [f64; 2],
    /// 0 for a local minimum, 1 for a local maximum, `None` on the discriminant.
    pub index: Option<u8>,
    pub value: f64,
    pub second_derivative: f64,
}

pub const ELLIPSE_SAMPLES: usize = 4096;
const BISECTION_TOL: f64 = 1e-12;
const DEGENERACY_RTOL: f64 = 1e-9;

struct Ellipse<'a> {
    a: f64,
    b: f64,
    t: [f64; 2],
    sigma: &'a DMatrix<f64>,
}

impl Ellipse<'_> {
    fn form(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let s = self.sigma;
        u[0] * (s[(0, 0)] * v[0] + s[(0, 1)] * v[1]) + u[1] * (s[(1, 0)] * v[0] + s[(1, 1)] * v[1])
    }

    fn point(&self, th: f64) -> [f64; 2] {
        [self.a * th.cos(), self.b * th.sin()]
    }

    /// `(L, L', L'')` for `L(θ) = ‖s(θ) − t‖²_Σ`.
    fn derivs(&self, th: f64) -> (f64, f64, f64) {
        let (sn, cs) = th.sin_cos();
        let s = [self.a * cs, self.b * sn];
        let ds = [-self.a * sn, self.b * cs];
        let dds = [-self.a * cs, -self.b * sn];
        let r = [s[0] - self.t[0], s[1] - self.t[1]];
        (
            self.form(r, r),
            2.0 * self.form(ds, r),
            2.0 * self.form(dds, r) + 2.0 * self.form(ds, ds),
        )
    }

    fn scale(&self) -> f64 {
        let lmax = sym_eigenvalues_asc(self.sigma)[1];
        let m = self.a.max(self.b);
        lmax * m * (m + self.t[0].hypot(self.t[1]))
    }
}

/// Critical points of `θ ↦ ‖(a cos θ, b sin θ) − t‖²_Σ` on `[0, 2π)`.
pub fn ellipse_critical_points(t: [f64; 2], sigma: &DMatrix<f64>, a: f64, b: f64) -> Result<Vec<EllipseCritical>> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid("ellipse semi-axes must be positive"));
    }
    if !t.iter().all(|x| x.is_finite()) {
        return Err(invalid("teacher must be finite"));
    }
    check_metric_pd(sigma, 2)?;
    if ((t[0] / a).powi(2) + (t[1] / b).powi(2) - 1.0).abs() <= 1e-12 {
        return Err(precondition("teacher lies on the ellipse"));
    }
    let e = Ellipse { a, b, t, sigma };
    let n = ELLIPSE_SAMPLES;
    let grid: Vec<f64> = (0..=n).map(|k| TAU * k as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&th| e.derivs(th).1).collect();
    let mut roots = Vec::new();
    for k in 0..n {
        let (f0, f1) = (vals[k], if k + 1 == n { vals[0] } else { vals[k + 1] });
        if f0 == 0.0 {
            roots.push(grid[k]);
        } else if f1 != 0.0 && f0.signum() != f1.signum() {
            let (mut lo, mut hi, mut flo) = (grid[k], grid[k + 1], f0);
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                let fm = e.derivs(mid).1;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                } else if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push((0.5 * (lo + hi)) % TAU);
        }
    }
    let tol = DEGENERACY_RTOL * e.scale();
    Ok(roots
        .into_iter()
        .map(|theta| {
            let (value, _, second) = e.derivs(theta);
            let index = if second.abs() < tol {
                None
            } else if second > 0.0 {
                Some(0)
            } else {
                Some(1)
            };
            EllipseCritical {
                theta,
                point: e.point(theta),
                index,
                value,
                second_derivative: second,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalCrossing {
    pub alpha: f64,
    pub multiplicity: usize,
}

const FOCAL_SAMPLES: usize = 4096;
const GAP_RTOL: f64 = 1e-10;
const ALPHA_MERGE: f64 = 1e-9;

/// Frobenius-equivalent teacher `S − ∇h(S)/2`: the focal points of the
/// segment under the Gaussian norm are those of this teacher under the
/// Frobenius norm, since both norms agree on the normal directions.
fn focal_setup(s: &DMatrix<f64>, t: &DMatrix<f64>, metric: QuadMetric) -> Result<DMatrix<f64>> {
    if matches!(metric, QuadMetric::Iid { .. }) {
        return Err(invalid("focal points are available for the Frobenius and Gaussian norms"));
    }
    if !linalg::is_symmetric(s, 1e-10) || !linalg::is_symmetric(t, 1e-10) {
        return Err(invalid("student and teacher must be symmetric"));
    }
    let res = criticality_residual(metric, s, t)?;
    if res > 1e-8 {
        return Err(precondition(format!("student is not critical (residual {res:e})")));
    }
    Ok(s - func_gradient(metric, s, t)? * 0.5)
}

fn group_crossings(mut raw: Vec<(f64, usize)>) -> Vec<FocalCrossing> {
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<FocalCrossing> = Vec::new();
    for (alpha, m) in raw {
        match out.last_mut() {
            Some(last) if alpha - last.alpha <= ALPHA_MERGE => last.multiplicity += m,
            _ => out.push(FocalCrossing { alpha, multiplicity: m }),
        }
    }
    out
}

/// Focal points on the segment from a critical student `S` towards `T`,
/// i.e. parameters `α ∈ (0, 1]` where `M_α = S + α(T̃ − S)` has a repeated
/// eigenvalue, with multiplicity the number of coinciding pairs.
///
/// When `S` and `T̃` commute the eigenvalues move on straight lines and the
/// crossings are solved in closed form; otherwise the eigenvalue gaps are
/// sampled and refined.
pub fn focal_points_on_segment(s: &DMatrix<f64>, t: &DMatrix<f64>, metric: QuadMetric) -> Result<Vec<FocalCrossing>> {
    let tt = focal_setup(s, t, metric)?;
    let scale = s.norm() + tt.norm();
    let comm = (s * &tt - &tt * s).norm();
    if comm > 1e-12 * scale * scale.max(1.0) {
        return numeric_crossings(s, &tt);
    }
    // A generic combination separates the joint eigenspaces.
    let (_, u) = sym_eigen_desc(&(s + &tt * 0.754_877_666_246_692_7));
    let n = s.nrows();
    let sv: Vec<f64> = (0..n).map(|k| (u.column(k).transpose() * s * u.column(k))[0]).collect();
    let tv: Vec<f64> = (0..n).map(|k| (u.column(k).transpose() * &tt * u.column(k))[0]).collect();
    let eps = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut raw = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let ds = sv[k] - sv[j];
            let dt = (tv[k] - sv[k]) - (tv[j] - sv[j]);
            if ds.abs() <= eps && dt.abs() <= eps {
                return Err(Error::NonGeneric(format!(
                    "eigenvalues {j} and {k} coincide along the whole segment"
                )));
            }
            if dt.abs() <= eps {
                continue;
            }
            let alpha = -ds / dt;
            if alpha > 1e-12 && alpha <= 1.0 + 1e-12 {
                raw.push((alpha.min(1.0), 1));
            }
        }
    }
    Ok(group_crossings(raw))
}

/// Sampling route of [`focal_points_on_segment`], usable on any critical pair.
pub fn focal_points_numeric(s: &DMatrix<f64>, t: &DMatrix<f64>, metric: QuadMetric) -> Result<Vec<FocalCrossing>> {
    let tt = focal_setup(s, t, metric)?;
    numeric_crossings(s, &tt)
}

fn numeric_crossings(s: &DMatrix<f64>, tt: &DMatrix<f64>) -> Result<Vec<FocalCrossing>> {
    let n = s.nrows();
    if n < 2 {
        return Ok(Vec::new());
    }
    let dir = tt - s;
    let m_at = |alpha: f64| s + &dir * alpha;
    let spectrum = |alpha: f64| sym_eigenvalues_asc(&m_at(alpha));
    // Avoided crossings from a residual commutator have gaps of this order.
    let comm = (s * tt - tt * s).norm();
    let tv = sym_eigenvalues_asc(tt);
    let delta = tv
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .max(1e-3 * tt.norm());
    let slack = if delta > 0.0 { 2.0 * comm / delta } else { 0.0 };
    let thr = |alpha: f64| GAP_RTOL * m_at(alpha).norm() + slack;

    let alphas: Vec<f64> = (1..=FOCAL_SAMPLES).map(|k| k as f64 / FOCAL_SAMPLES as f64).collect();
    let spectra: Vec<Vec<f64>> = alphas.iter().map(|&a| spectrum(a)).collect();
    let mut found = Vec::new();
    for g in 0..n - 1 {
        let gaps: Vec<f64> = spectra.iter().map(|sp| sp[g + 1] - sp[g]).collect();
        if gaps.iter().zip(&alphas).all(|(&gap, &a)| gap <= thr(a)) {
            return Err(Error::NonGeneric(format!(
                "eigenvalues {g} and {} coincide along the whole segment",
                g + 1
            )));
        }
        let last = gaps.len() - 1;
        for k in 0..=last {
            let left = if k == 0 { f64::INFINITY } else { gaps[k - 1] };
            let right = if k == last { f64::INFINITY } else { gaps[k + 1] };
            if !(gaps[k] <= left && gaps[k] < right) {
                continue;
            }
            let lo = if k == 0 { 0.0 } else { alphas[k - 1] };
            let hi = alphas[k.min(last - 1) + 1].min(1.0);
            let gap = |a: f64| {
                let sp = spectrum(a);
                sp[g + 1] - sp[g]
            };
            let (alpha, value) = golden_min(gap, lo, hi.max(alphas[k]));
            if alpha > 1e-9 && value <= thr(alpha) {
                found.push(alpha);
            }
        }
    }
    found.sort_by(f64::total_cmp);
    found.dedup_by(|a, b| (*a - *b).abs() <= 1e-7);
    let mut raw = Vec::new();
    for alpha in found {
        let sp = spectrum(alpha);
        let t = thr(alpha);
        let mut pairs = 0;
        let mut run = 1usize;
        for w in sp.windows(2) {
            if w[1] - w[0] <= t {
                run += 1;
            } else {
                pairs += run * (run - 1) / 2;
                run = 1;
            }
        }
        pairs += run * (run - 1) / 2;
        raw.push((alpha, pairs.max(1)));
    }
    Ok(group_crossings(raw))
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-14 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

fn check_2x2(t: &DMatrix<f64>) -> Result<()> {
    if t.shape() != (2, 2) {
        return Err(Error::ShapeMismatch(format!("expected 2x2, got {:?}", t.shape())));
    }
    if !linalg::is_symmetric(t, 1e-12) {
        return Err(invalid("teacher must be symmetric"));
    }
    Ok(())
}

/// `((t00 − t11)² + 4 t01²)³`, vanishing exactly on repeated eigenvalues.
pub fn discriminant_2x2_frobenius(t: &DMatrix<f64>) -> Result<f64> {
    check_2x2(t)?;
    let base = (t[(0, 0)] - t[(1, 1)]).powi(2) + 4.0 * t[(0, 1)].powi(2);
    Ok(base.powi(3))
}

/// Terms `(coefficient, [e(μ₂), e(μ₄), e(t00), e(t01), e(t11)])` of the
/// teacher-metric discriminant for 2×2 teachers under the iid norm.
pub const IID_DISCRIMINANT_TERMS: [(i64, [u8; 5]); 68] = [
    (729, [24, 0, 3, 0, 3]),
    (1458, [22, 1, 4, 0, 2]),
    (1458, [22, 1, 2, 0, 4]),
    (-2187, [20, 2, 4, 2, 0]),
    (972, [20, 2, 5, 0, 1]),
    (486, [20, 2, 2, 2, 2]),
    (1458, [20, 2, 3, 0, 3]),
    (-2187, [20, 2, 0, 2, 4]),
    (972, [20, 2, 1, 0, 5]),
    (216, [18, 3, 6, 0, 0]),
    (-5184, [18, 3, 3, 2, 1]),
    (-486, [18, 3, 4, 0, 2]),
    (-5184, [18, 3, 1, 2, 3]),
    (-486, [18, 3, 2, 0, 4]),
    (216, [18, 3, 0, 0, 6]),
    (3132, [16, 4, 4, 2, 0]),
    (-864, [16, 4, 5, 0, 1]),
    (6912, [16, 4, 1, 4, 1]),
    (-11448, [16, 4, 2, 2, 2]),
    (-1377, [16, 4, 3, 0, 3]),
    (3132, [16, 4, 0, 2, 4]),
    (-864, [16, 4, 1, 0, 5]),
    (-216, [14, 5, 6, 0, 0]),
    (4608, [14, 5, 2, 4, 0]),
    (2880, [14, 5, 3, 2, 1]),
    (-36, [14, 5, 4, 0, 2]),
    (4608, [14, 5, 0, 4, 2]),
    (2880, [14, 5, 1, 2, 3]),
    (-36, [14, 5, 2, 0, 4]),
    (-216, [14, 5, 0, 0, 6]),
    (-2034, [12, 6, 4, 2, 0]),
    (-4096, [12, 6, 0, 6, 0]),
    (360, [12, 6, 5, 0, 1]),
    (-1536, [12, 6, 1, 4, 1]),
    (7620, [12, 6, 2, 2, 2]),
    (604, [12, 6, 3, 0, 3]),
    (-2034, [12, 6, 0, 2, 4]),
    (360, [12, 6, 1, 0, 5]),
    (72, [10, 7, 6, 0, 0]),
    (-1536, [10, 7, 2, 4, 0]),
    (-960, [10, 7, 3, 2, 1]),
    (12, [10, 7, 4, 0, 2]),
    (-1536, [10, 7, 0, 4, 2]),
    (-960, [10, 7, 1, 2, 3]),
    (12, [10, 7, 2, 0, 4]),
    (72, [10, 7, 0, 0, 6]),
    (348, [8, 8, 4, 2, 0]),
    (-96, [8, 8, 5, 0, 1]),
    (768, [8, 8, 1, 4, 1]),
    (-1272, [8, 8, 2, 2, 2]),
    (-153, [8, 8, 3, 0, 3]),
    (348, [8, 8, 0, 2, 4]),
    (-96, [8, 8, 1, 0, 5]),
    (-8, [6, 9, 6, 0, 0]),
    (192, [6, 9, 3, 2, 1]),
    (18, [6, 9, 4, 0, 2]),
    (192, [6, 9, 1, 2, 3]),
    (18, [6, 9, 2, 0, 4]),
    (-8, [6, 9, 0, 0, 6]),
    (-27, [4, 10, 4, 2, 0]),
    (12, [4, 10, 5, 0, 1]),
    (6, [4, 10, 2, 2, 2]),
    (18, [4, 10, 3, 0, 3]),
    (-27, [4, 10, 0, 2, 4]),
    (12, [4, 10, 1, 0, 5]),
    (-6, [2, 11, 4, 0, 2]),
    (-6, [2, 11, 2, 0, 4]),
    (1, [0, 12, 3, 0, 3]),
];

fn iid_terms(t: &DMatrix<f64>, mu2: f64, mu4: f64) -> impl Iterator<Item = f64> + '_ {
    IID_DISCRIMINANT_TERMS.iter().map(move |&(c, e)| {
        c as f64
            * mu2.powi(e[0] as i32)
            * mu4.powi(e[1] as i32)
            * t[(0, 0)].powi(e[2] as i32)
            * t[(0, 1)].powi(e[3] as i32)
            * t[(1, 1)].powi(e[4] as i32)
    })
}

/// Discriminant of 2×2 teachers under the iid norm with moments `μ₂, μ₄`:
/// it vanishes where two rank-one critical points collide.
pub fn discriminant_2x2_iid(t: &DMatrix<f64>, mu2: f64, mu4: f64) -> Result<f64> {
    check_2x2(t)?;
    let mut sum = 0.0;
    let mut comp = 0.0;
    // Kahan summation: the terms cancel heavily near the zero set.
    for term in iid_terms(t, mu2, mu4) {
        let y = term - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
    }
    Ok(sum)
}

/// Sum of the absolute values of the terms, the natural size of the value.
pub fn discriminant_2x2_iid_scale(t: &DMatrix<f64>, mu2: f64, mu4: f64) -> Result<f64> {
    check_2x2(t)?;
    Ok(iid_terms(t, mu2, mu4).map(f64::abs).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilityTarget {
    Ellipse {
        a: f64,
        b: f64,
        teacher: [f64; 2],
        #[serde(with = "linalg::serde_rows")]
        sigma: DMatrix<f64>,
    },
    /// Perturbs the teacher only; the norm is fixed.
    RankStratum {
        #[serde(with = "linalg::serde_rows")]
        teacher: DMatrix<f64>,
        r: usize,
        metric: QuadMetric,
    },
}

struct Snapshot {
    points: Vec<Vec<f64>>,
    signature: Vec<usize>,
    on_discriminant: bool,
}

impl StabilityTarget {
    fn snapshot(&self) -> Result<Snapshot> {
        match self {
            StabilityTarget::Ellipse { a, b, teacher, sigma } => {
                let pts = ellipse_critical_points(*teacher, sigma, *a, *b)?;
                let mut signature: Vec<usize> = pts.iter().filter_map(|p| p.index.map(usize::from)).collect();
                signature.sort_unstable();
                Ok(Snapshot {
                    on_discriminant: pts.iter().any(|p| p.index.is_none()),
                    points: pts.iter().map(|p| p.point.to_vec()).collect(),
                    signature,
                })
            }
            StabilityTarget::RankStratum { teacher, r, metric } => {
                let pts = match metric {
                    QuadMetric::Frobenius => ey_frobenius_critical(teacher, *r),
                    QuadMetric::Gaussian => ey_gaussian_critical(teacher, *r),
                    QuadMetric::Iid { .. } => {
                        return Err(invalid("rank-stratum probes need the Frobenius or Gaussian norm"))
                    }
                };
                let pts = match pts {
                    Ok(p) => p,
                    Err(Error::Precondition(_)) => {
                        return Ok(Snapshot {
                            points: Vec::new(),
                            signature: Vec::new(),
                            on_discriminant: true,
                        })
                    }
                    Err(e) => return Err(e),
                };
                let mut signature: Vec<usize> = pts.iter().filter_map(|p| p.index).collect();
                signature.sort_unstable();
                Ok(Snapshot {
                    on_discriminant: pts.iter().any(|p| p.index.is_none()),
                    points: pts.iter().map(|p| p.s.iter().copied().collect()).collect(),
                    signature,
                })
            }
        }
    }

    fn teacher_norm(&self) -> f64 {
        match self {
            StabilityTarget::Ellipse { teacher, .. } => teacher[0].hypot(teacher[1]),
            StabilityTarget::RankStratum { teacher, .. } => teacher.norm(),
        }
    }

    fn perturbed(&self, radius: f64, rng: &mut ChaCha8Rng) -> StabilityTarget {
        let sym = |m: usize, rng: &mut ChaCha8Rng| {
            let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let e = (&a + a.transpose()) * 0.5;
            let nrm = e.norm();
            let len = radius * rng.random::<f64>();
            if nrm > 0.0 {
                e * (len / nrm)
            } else {
                e
            }
        };
        match self {
            StabilityTarget::Ellipse { a, b, teacher, sigma } => {
                let phi = rng.random_range(0.0..TAU);
                let len = radius * rng.random::<f64>().sqrt();
                let teacher = [teacher[0] + len * phi.cos(), teacher[1] + len * phi.sin()];
                StabilityTarget::Ellipse {
                    a: *a,
                    b: *b,
                    teacher,
                    sigma: sigma + sym(2, rng),
                }
            }
            StabilityTarget::RankStratum { teacher, r, metric } => StabilityTarget::RankStratum {
                teacher: teacher + sym(teacher.nrows(), rng),
                r: *r,
                metric: *metric,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub count: usize,
    pub signature: Vec<usize>,
    pub max_displacement: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub baseline_count: usize,
    pub baseline_signature: Vec<usize>,
    pub violations: Vec<Violation>,
    /// Critical-point count to number of samples showing it.
    pub observed_counts: BTreeMap<usize, usize>,
}

/// Displacements beyond this multiple of the radius break continuity.
pub const CONTINUITY_FACTOR: f64 = 1e3;

fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64 + 1);
    rng
}

fn check_probe_args(radius: f64, samples: usize) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid("radius must be positive"));
    }
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    Ok(())
}

/// Checks that the critical-point count, the index multiset and the
/// positions of the critical points persist under perturbations of size at
/// most `radius`.
pub fn stability_probe(target: &StabilityTarget, radius: f64, samples: usize, seed: u64) -> Result<StabilityReport> {
    check_probe_args(radius, samples)?;
    let base = target.snapshot()?;
    if base.on_discriminant {
        return Err(precondition(
            "baseline lies on the discriminant: a critical point is degenerate",
        ));
    }
    let limit = CONTINUITY_FACTOR * radius * target.teacher_norm().max(1.0);
    let results: Vec<(usize, Option<Violation>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let snap = match target.perturbed(radius, &mut rng).snapshot() {
                Ok(s) => s,
                Err(e) => {
                    return (
                        0,
                        Some(Violation {
                            sample: i,
                            count: 0,
                            signature: Vec::new(),
                            max_displacement: f64::NAN,
                            reason: e.to_string(),
                        }),
                    )
                }
            };
            let count = snap.points.len();
            let disp = snap
                .points
                .iter()
                .map(|p| {
                    base.points
                        .iter()
                        .map(|q| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            let reason = if snap.on_discriminant {
                Some("perturbation reached the discriminant")
            } else if count != base.points.len() {
                Some("critical-point count changed")
            } else if snap.signature != base.signature {
                Some("index multiset changed")
            } else if disp > limit {
                Some("critical point moved discontinuously")
            } else {
                None
            };
            (
                count,
                reason.map(|r| Violation {
                    sample: i,
                    count,
                    signature: snap.signature.clone(),
                    max_displacement: disp,
                    reason: r.to_string(),
                }),
            )
        })
        .collect();
    let mut observed_counts = BTreeMap::new();
    let mut violations = Vec::new();
    for (count, v) in results {
        *observed_counts.entry(count).or_insert(0) += 1;
        violations.extend(v);
    }
    Ok(StabilityReport {
        stable: violations.is_empty(),
        baseline_count: base.points.len(),
        baseline_signature: base.signature,
        violations,
        observed_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySurvey {
    pub samples: usize,
    pub observed_counts: BTreeMap<usize, usize>,
    pub on_discriminant: usize,
    pub failed: usize,
}

/// Critical-point counts seen under random perturbations, with no
/// requirement on the baseline.
pub fn stability_survey(target: &StabilityTarget, radius: f64, samples: usize, seed: u64) -> Result<StabilitySurvey> {
    check_probe_args(radius, samples)?;
    let snaps: Vec<Option<(usize, bool)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            target
                .perturbed(radius, &mut rng)
                .snapshot()
                .ok()
                .map(|s| (s.points.len(), s.on_discriminant))
        })
        .collect();
    let mut survey = StabilitySurvey {
        samples,
        observed_counts: BTreeMap::new(),
        on_discriminant: 0,
        failed: 0,
    };
    for s in snaps {
        match s {
            None => survey.failed += 1,
            Some((_, true)) => survey.on_discriminant += 1,
            Some((c, false)) => *survey.observed_counts.entry(c).or_insert(0) += 1,
        }
    }
    Ok(survey)
}

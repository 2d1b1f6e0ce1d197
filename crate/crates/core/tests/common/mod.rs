//! Independent numerical oracles shared by the integration tests.
//!
//! None of these call the closed-form enumerations they are used to check:
//! indices come from finite-difference Hessians in an explicit chart, roots
//! from damped Newton multi-starts, moments from Monte-Carlo sampling.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use polyland::quadlandscape::{func_gradient, QuadMetric};
use polyland::{MetricOperator, MomentSpec, SymTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, n).qr().q()
}

/// Eigenvalues in `[-5, 5]` with pairwise gaps and magnitudes at least `gap`.
pub fn separated_spectrum(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let gaps_ok = v.windows(2).all(|w| w[0] - w[1] >= gap);
        if gaps_ok && v.iter().all(|x| x.abs() >= gap) {
            return v;
        }
    }
}

/// `Qᵀ diag(λ) Q` with a random orthogonal `Q`.
pub fn rotated_teacher(rng: &mut ChaCha8Rng, eig: &[f64]) -> DMatrix<f64> {
    let q = random_orthogonal(rng, eig.len());
    let t = q.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(eig)) * &q;
    (&t + t.transpose()) * 0.5
}

/// Morse index on the rank stratum measured by finite differences.
#[derive(Debug, Clone, Copy)]
pub struct FdIndex {
    pub index: usize,
    /// Some Hessian eigenvalue is too small to classify.
    pub degenerate: bool,
}

fn cayley(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = &id - k * 0.5;
    let rhs = &id + k * 0.5;
    lhs.lu().solve(&rhs).expect("Cayley transform of a skew matrix")
}

/// Index of the loss `S ↦ ‖S − T‖²` restricted to rank-`rank` matrices at
/// the critical point `s`, in the chart
/// `(a, A, B) ↦ V(K)ᵀ diag(α + a) V(K)` where `V(K)` is the first `rank`
/// rows of `cay(K) O` and `K = [[A − Aᵀ, B], [−Bᵀ, 0]]`.
pub fn fd_stratum_index(metric: QuadMetric, s: &DMatrix<f64>, t: &DMatrix<f64>, rank: usize) -> FdIndex {
    let n = s.nrows();
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let alpha: Vec<f64> = order[..rank].iter().map(|&i| eig.eigenvalues[i]).collect();
    let o = DMatrix::from_fn(n, n, |row, col| eig.eigenvectors[(col, order[row])]);

    let n_a = rank * (rank - 1) / 2;
    let n_b = rank * (n - rank);
    let dim = rank + n_a + n_b;
    let chart = |x: &[f64]| -> DMatrix<f64> {
        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut pos = rank;
        for i in 0..rank {
            for j in i + 1..rank {
                k[(i, j)] = x[pos];
                k[(j, i)] = -x[pos];
                pos += 1;
            }
        }
        for i in 0..rank {
            for j in rank..n {
                k[(i, j)] = x[pos];
                k[(j, i)] = -x[pos];
                pos += 1;
            }
        }
        let v = (cayley(&k) * &o).rows(0, rank).into_owned();
        let d = DMatrix::from_fn(rank, rank, |i, j| if i == j { alpha[i] + x[i] } else { 0.0 });
        v.transpose() * d * v
    };
    let f = |x: &[f64]| metric.loss(&chart(x), t);

    let h = 1e-4;
    let x0 = vec![0.0; dim];
    let f0 = f(&x0);
    let shifted = |pairs: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(i, v) in pairs {
            x[i] += v;
        }
        f(&x)
    };
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        hess[(i, i)] = (shifted(&[(i, h)]) - 2.0 * f0 + shifted(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                + shifted(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let ev = hess.symmetric_eigenvalues();
    let scale = ev.amax().max(1.0);
    let tol = 1e-4 * scale;
    FdIndex {
        index: ev.iter().filter(|&&e| e < -tol).count(),
        degenerate: ev.iter().any(|e| e.abs() <= tol),
    }
}

/// Rank-one critical points `S = ε v vᵀ` of the iid loss towards `diag(t)`,
/// found by Levenberg-Marquardt on `F(v) = ∇h(ε v vᵀ) v` from random starts.
pub fn iid_multistart(t: &[f64], mu2: f64, mu4: f64, starts: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let n = t.len();
    let metric = QuadMetric::Iid { mu2, mu4 };
    let teacher = DMatrix::from_diagonal(&DVector::from_column_slice(t));
    let tmean = t.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    let base = (n as f64 * tmean * mu2 * mu2 / mu4).sqrt();
    let resid = |v: &DVector<f64>, eps: f64| -> DVector<f64> {
        let s = v * v.transpose() * eps;
        func_gradient(metric, &s, &teacher).expect("valid metric") * v
    };
    let mut found: Vec<DMatrix<f64>> = Vec::new();
    for start in 0..starts {
        let eps = if start % 2 == 0 { 1.0 } else { -1.0 };
        let spread: f64 = StandardNormal.sample(rng);
        let dir = DVector::from_fn(n, |_, _| StandardNormal.sample(rng)).normalize();
        let mut v = dir * base * spread.exp();
        let mut lambda = 1e-3;
        let mut fv = resid(&v, eps);
        for _ in 0..300 {
            let fd = 1e-7 * (1.0 + v.norm());
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for k in 0..n {
                let mut vp = v.clone();
                vp[k] += fd;
                let mut vm = v.clone();
                vm[k] -= fd;
                jac.set_column(k, &((resid(&vp, eps) - resid(&vm, eps)) / (2.0 * fd)));
            }
            let jt = jac.transpose();
            let lhs = &jt * &jac + DMatrix::<f64>::identity(n, n) * lambda;
            let Some(step) = lhs.lu().solve(&(-(&jt * &fv))) else {
                break;
            };
            let cand = &v + step;
            let fc = resid(&cand, eps);
            if fc.norm() < fv.norm() {
                v = cand;
                fv = fc;
                lambda = (lambda * 0.3).max(1e-15);
            } else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
            if fv.norm() <= 1e-14 * mu4 * (1.0 + v.norm()).powi(3) {
                break;
            }
        }
        let s = &v * v.transpose() * eps;
        let nonzero = v.norm() > 1e-6 * base;
        let certified = polyland::quadlandscape::criticality_residual(metric, &s, &teacher)
            .map(|r| r <= polyland::quadlandscape::RESIDUAL_TOL)
            .unwrap_or(false);
        if nonzero && certified && !found.iter().any(|f| (f - &s).norm() <= 1e-6 * (1.0 + s.norm())) {
            found.push(s);
        }
    }
    found
}

/// `(θ, T)` such that the rank-one critical equation of the iid norm on
/// 2x2 matrices has a double root at angle `θ` for teacher `T`.
///
/// With `u = (cos θ, sin θ)`, `p = ⟨T, uuᵀ⟩` and `q = ‖uuᵀ‖²` in the iid norm, nonzero
/// critical points are zeros of `F = 2 p' q − p q'`. Since `F` is linear in
/// `T`, the teachers with `F(θ₀) = F'(θ₀) = 0` form a line.
pub fn iid_collision_teacher(theta: f64, mu2: f64, mu4: f64) -> Option<DMatrix<f64>> {
    let m2 = mu2 * mu2;
    let k = mu4 - 3.0 * m2;
    let (s2, c2) = (2.0 * theta).sin_cos();
    let (s4, c4) = (4.0 * theta).sin_cos();
    let q = 3.0 * m2 + k * (1.0 - 0.5 * s2 * s2);
    let q1 = -k * s4;
    let q2 = -4.0 * k * c4;
    // p = ⟨T, uuᵀ⟩ and its θ-derivatives as linear forms in (t00, t01, t11).
    let (h, g) = (0.5 * (mu4 + m2), 0.5 * (mu4 - m2));
    let p = [h + g * c2, 2.0 * m2 * s2, h - g * c2];
    let p1 = [-2.0 * g * s2, 4.0 * m2 * c2, 2.0 * g * s2];
    let p2 = [-4.0 * g * c2, -8.0 * m2 * s2, 4.0 * g * c2];
    let row_f: Vec<f64> = (0..3).map(|i| 2.0 * p1[i] * q - p[i] * q1).collect();
    let row_df: Vec<f64> = (0..3).map(|i| 2.0 * p2[i] * q + p1[i] * q1 - p[i] * q2).collect();
    let a = DVector::from_column_slice(&row_f);
    let b = DVector::from_column_slice(&row_df);
    let null = a.cross(&b);
    if null.norm() < 1e-8 * a.norm() * b.norm() {
        return None;
    }
    let x = null.normalize();
    let pval: f64 = (0..3).map(|i| p[i] * x[i]).sum();
    if pval.abs() < 1e-3 * mu4 {
        return None;
    }
    Some(DMatrix::from_row_slice(2, 2, &[x[0], x[1], x[1], x[2]]))
}

/// Draws from a distribution whose moments are given in closed form.
pub enum Sampler {
    RotInvariant { radius: f64 },
    Iid { atoms: Vec<f64>, probs: Vec<f64> },
    Gaussian { chol: DMatrix<f64> },
    Mixture { weights: Vec<f64>, parts: Vec<Sampler> },
    Empirical { points: Vec<Vec<f64>> },
}

impl Sampler {
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Sampler::RotInvariant { radius } => {
                let mut norm = 0.0;
                for x in out.iter_mut() {
                    *x = StandardNormal.sample(rng);
                    norm += *x * *x;
                }
                let rho = rng.random_range(0.0..*radius) / norm.sqrt();
                out.iter_mut().for_each(|x| *x *= rho);
            }
            Sampler::Iid { atoms, probs } => {
                for x in out.iter_mut() {
                    let mut u: f64 = rng.random();
                    let mut k = 0;
                    while k + 1 < atoms.len() && u >= probs[k] {
                        u -= probs[k];
                        k += 1;
                    }
                    *x = atoms[k];
                }
            }
            Sampler::Gaussian { chol } => {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let x = chol * z;
                out.copy_from_slice(x.as_slice());
            }
            Sampler::Mixture { weights, parts } => {
                let mut u: f64 = rng.random();
                let mut k = 0;
                while k + 1 < parts.len() && u >= weights[k] {
                    u -= weights[k];
                    k += 1;
                }
                parts[k].sample(n, rng, out);
            }
            Sampler::Empirical { points } => {
                out.copy_from_slice(&points[rng.random_range(0..points.len())]);
            }
        }
    }
}

/// A random spec of the given kind (0..5) together with a matching sampler.
pub fn random_spec(kind: usize, n: usize, d: usize, rng: &mut ChaCha8Rng) -> (MomentSpec, Sampler) {
    match kind {
        0 => {
            let radius: f64 = rng.random_range(0.5..1.5);
            let m = radius.powi(2 * d as i32) / (2 * d + 1) as f64;
            (MomentSpec::RotInvariant { radial_moment: m }, Sampler::RotInvariant { radius })
        }
        1 => {
            let atoms: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let moments = (0..=2 * d)
                .map(|s| atoms.iter().zip(&probs).map(|(a, p)| p * a.powi(s as i32)).sum())
                .collect();
            (MomentSpec::Iid { moments }, Sampler::Iid { atoms, probs })
        }
        2 => {
            let l = DMatrix::from_fn(n, n, |i, j| {
                if j > i {
                    0.0
                } else if i == j {
                    rng.random_range(0.5..1.2)
                } else {
                    rng.random_range(-0.5..0.5)
                }
            });
            let sigma = &l * l.transpose();
            (MomentSpec::ColoredGaussian { sigma: (&sigma + sigma.transpose()) * 0.5 }, Sampler::Gaussian { chol: l })
        }
        3 => {
            let (s1, p1) = random_spec(0, n, d, rng);
            let (s2, p2) = random_spec(2, n, d, rng);
            let w: f64 = rng.random_range(0.2..0.8);
            (
                MomentSpec::Mixture { weights: vec![w, 1.0 - w], parts: vec![s1, s2] },
                Sampler::Mixture { weights: vec![w, 1.0 - w], parts: vec![p1, p2] },
            )
        }
        _ => {
            let points: Vec<Vec<f64>> = (0..7).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            (MomentSpec::Empirical { points: points.clone() }, Sampler::Empirical { points })
        }
    }
}

/// Monte-Carlo estimate of `E[g(x) h(x)]` and its standard error.
pub fn mc_inner(sampler: &Sampler, g: &SymTensor, h: &SymTensor, samples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = g.n();
    let mut x = vec![0.0; n];
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..samples {
        sampler.sample(n, rng, &mut x);
        let v = g.evaluate(&x).unwrap() * h.evaluate(&x).unwrap();
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (samples - 1) as f64;
    (mean, (var / samples as f64).sqrt())
}

pub fn random_tensor(n: usize, d: usize, rng: &mut ChaCha8Rng) -> SymTensor {
    let dim = SymTensor::dim(n, d);
    SymTensor::from_coeffs(n, d, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn gaussian_metric(n: usize, d: usize) -> MetricOperator {
    let m = polyland::metrics::moment_tensor(&MomentSpec::standard_gaussian(n), n, d).unwrap();
    MetricOperator::from_moments(&m).unwrap()
}

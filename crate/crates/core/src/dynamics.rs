//! Gradient flow, SGD and teacher-student experiments.
//!
//! Under the gradient flow of any loss `ℓ(τ_r(α, W))`, each neuron keeps
//! `δ_i = α_i² − ‖w_i‖²/d` constant. For even `d` this traps students that
//! start with all `α_i > 0` and `α_i² > ‖w_i‖²/d` in the nonnegative
//! polynomials, whatever the teacher.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, sym_eigen_desc};
use crate::metrics::{moment_tensor, MetricOperator, MomentSpec};
use crate::network::{tau, NetworkParams};
use crate::quadlandscape::{critical_image_cover, QuadMetric};
use crate::symtensor::{basis, rank_one, SymTensor};

/// A loss on parameter space with its closed-form gradient.
pub trait Objective: Sync {
    fn n(&self) -> usize;
    fn degree(&self) -> usize;
    /// `(L, ∇_α L, ∇_W L)`.
    fn gradient(&self, p: &NetworkParams) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;

    fn loss(&self, p: &NetworkParams) -> Result<f64> {
        Ok(self.gradient(p)?.0)
    }
}

/// `‖τ_r(α, W) − T‖²` under a metric on `Sym^d(ℝ^n)`.
#[derive(Debug, Clone)]
pub struct TensorObjective {
    pub metric: MetricOperator,
    pub teacher: SymTensor,
}

impl TensorObjective {
    pub fn new(metric: MetricOperator, teacher: SymTensor) -> Result<TensorObjective> {
        if metric.n() != teacher.n() || metric.d() != teacher.d() {
            return Err(Error::ShapeMismatch("metric and teacher spaces differ".into()));
        }
        Ok(TensorObjective { metric, teacher })
    }
}

fn check_params(p: &NetworkParams, n: usize, d: usize) -> Result<()> {
    if p.d != d {
        return Err(Error::InvalidDegree(p.d));
    }
    if p.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.n() });
    }
    Ok(())
}

impl Objective for TensorObjective {
    fn n(&self) -> usize {
        self.teacher.n()
    }

    fn degree(&self) -> usize {
        self.teacher.d()
    }

    fn gradient(&self, p: &NetworkParams) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        check_params(p, self.n(), self.degree())?;
        let s = tau(p);
        let diff = s.sub(&self.teacher)?;
        let loss = self.metric.norm_sq(&diff)?;
        let e = self.metric.loss_gradient(&s, &self.teacher)?;
        let r = p.width();
        let mut ga = DVector::zeros(r);
        let mut gw = DMatrix::zeros(r, self.n());
        for i in 0..r {
            let w = p.neuron(i);
            ga[i] = e.evaluate(&w)?;
            let g = e.poly_gradient(&w)?;
            for (c, v) in g.into_iter().enumerate() {
                gw[(i, c)] = p.alpha[i] * v;
            }
        }
        Ok((loss, ga, gw))
    }
}

/// `‖Wᵀ diag(α) W − T‖²` under a quadratic-network norm.
#[derive(Debug, Clone)]
pub struct QuadObjective {
    pub metric: QuadMetric,
    pub teacher: DMatrix<f64>,
}

impl Objective for QuadObjective {
    fn n(&self) -> usize {
        self.teacher.nrows()
    }

    fn degree(&self) -> usize {
        2
    }

    fn gradient(&self, p: &NetworkParams) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        check_params(p, self.n(), 2)?;
        let s = tau(p).to_matrix()?;
        let loss = self.metric.loss(&s, &self.teacher);
        let (ga, gw) = crate::quadlandscape::param_gradient(p, self.metric, &self.teacher)?;
        Ok((loss, ga, gw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub step: f64,
    pub steps: usize,
    pub integrator: Integrator,
    /// Snapshot period in steps; the first and last states are always kept.
    pub record_every: usize,
    /// Halve the step until the loss does not increase.
    pub backtracking: bool,
    /// Stop once `‖∇L‖ < grad_tol · (1 + L)`.
    pub grad_tol: f64,
    /// Stop once the loss falls to this value.
    pub loss_target: f64,
}

impl FlowOptions {
    pub fn new(step: f64, steps: usize, integrator: Integrator) -> FlowOptions {
        FlowOptions {
            step,
            steps,
            integrator,
            record_every: steps.max(1),
            backtracking: false,
            grad_tol: 1e-7,
            loss_target: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<usize>,
    pub params: Vec<NetworkParams>,
    pub losses: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
    /// Minimum over every step, not only snapshots.
    pub min_loss: f64,
    pub max_delta_drift: f64,
    pub min_alpha: f64,
    pub max_step_change: f64,
    pub steps_taken: usize,
    pub final_params: NetworkParams,
    pub final_loss: f64,
    pub converged: bool,
    pub diverged: bool,
}

pub const DIVERGENCE_NORM: f64 = 1e8;

fn flat_gradient(obj: &dyn Objective, flat: &[f64], r: usize, n: usize, d: usize) -> Result<(f64, Vec<f64>)> {
    let p = NetworkParams::from_flat(flat, r, n, d)?;
    let (loss, ga, gw) = obj.gradient(&p)?;
    let mut g: Vec<f64> = ga.iter().copied().collect();
    for i in 0..r {
        g.extend(gw.row(i).iter());
    }
    Ok((loss, g))
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| u + a * v).collect()
}

/// Integrates `θ' = −∇L(θ)` from `params0`.
pub fn gradient_flow(params0: &NetworkParams, obj: &dyn Objective, opts: &FlowOptions) -> Result<TrajectoryRecord> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(invalid("step must be positive"));
    }
    check_params(params0, obj.n(), obj.degree())?;
    let (r, n, d) = (params0.width(), params0.n(), params0.d);
    let every = opts.record_every.max(1);
    let delta0 = params0.deltas();
    let mut theta = params0.to_flat();
    let (mut loss, mut grad) = flat_gradient(obj, &theta, r, n, d)?;
    let mut rec = TrajectoryRecord {
        times: vec![0],
        params: vec![params0.clone()],
        losses: vec![loss],
        deltas: vec![delta0.clone()],
        min_loss: loss,
        max_delta_drift: 0.0,
        min_alpha: params0.alpha.min(),
        max_step_change: 0.0,
        steps_taken: 0,
        final_params: params0.clone(),
        final_loss: loss,
        converged: false,
        diverged: !loss.is_finite(),
    };
    let mut step = opts.step;
    let mut k = 0;
    while k < opts.steps && !rec.diverged {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol * (1.0 + loss) || loss <= opts.loss_target {
            rec.converged = true;
            break;
        }
        let next = loop {
            let cand = match opts.integrator {
                Integrator::Euler => axpy(&theta, -step, &grad),
                Integrator::Rk4 => {
                    let k1 = &grad;
                    let k2 = flat_gradient(obj, &axpy(&theta, -0.5 * step, k1), r, n, d)?.1;
                    let k3 = flat_gradient(obj, &axpy(&theta, -0.5 * step, &k2), r, n, d)?.1;
                    let k4 = flat_gradient(obj, &axpy(&theta, -step, &k3), r, n, d)?.1;
                    theta
                        .iter()
                        .enumerate()
                        .map(|(j, t)| t - step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                        .collect()
                }
            };
            let (cl, cg) = flat_gradient(obj, &cand, r, n, d)?;
            if opts.backtracking && !(cl <= loss + 1e-12 * (1.0 + loss)) && step > 1e-16 {
                step *= 0.5;
                continue;
            }
            break (cand, cl, cg);
        };
        let (cand, cl, cg) = next;
        let change = cand.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        rec.max_step_change = rec.max_step_change.max(change);
        theta = cand;
        loss = cl;
        grad = cg;
        k += 1;
        let p = NetworkParams::from_flat(&theta, r, n, d)?;
        let norm = p.norm();
        if !loss.is_finite() || !(norm <= DIVERGENCE_NORM) {
            rec.diverged = true;
        }
        let deltas = p.deltas();
        let drift = deltas.iter().zip(&delta0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rec.max_delta_drift = rec.max_delta_drift.max(drift);
        rec.min_loss = rec.min_loss.min(loss);
        rec.min_alpha = rec.min_alpha.min(p.alpha.min());
        if k % every == 0 || k == opts.steps {
            rec.times.push(k);
            rec.params.push(p.clone());
            rec.losses.push(loss);
            rec.deltas.push(deltas);
        }
        rec.final_params = p;
        rec.final_loss = loss;
    }
    rec.steps_taken = k;
    if rec.times.last() != Some(&k) {
        rec.times.push(k);
        rec.params.push(rec.final_params.clone());
        rec.losses.push(loss);
        rec.deltas.push(rec.final_params.deltas());
    }
    Ok(rec)
}

/// The tensor of `(‖x‖²)^{d/2}`, i.e. `sym(I^{⊗d/2})`.
pub fn sphere_power_tensor(n: usize, d: usize) -> Result<SymTensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidDegree(d));
    }
    let b = basis(n, d);
    let half = linalg::factorial(d / 2);
    let coeffs = b
        .exponents
        .iter()
        .zip(&b.weights)
        .map(|(e, w)| {
            if e.iter().any(|k| k % 2 != 0) {
                0.0
            } else {
                let monomial = half / e.iter().map(|&k| linalg::factorial(k / 2)).product::<f64>();
                monomial / w
            }
        })
        .collect();
    SymTensor::from_coeffs(n, d, coeffs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappedOptions {
    pub step: f64,
    pub steps: usize,
    pub control_steps: usize,
    pub control_target: f64,
}

impl Default for TrappedOptions {
    fn default() -> Self {
        TrappedOptions {
            step: 1e-4,
            steps: 100_000,
            control_steps: 200_000,
            control_target: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappedReport {
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub initial_sign_condition: bool,
    pub teacher_norm_sq: f64,
    pub min_loss: f64,
    pub min_alpha: f64,
    pub max_delta_drift: f64,
    pub steps: usize,
    pub diverged: bool,
    pub control_final_loss: f64,
    pub control_steps: usize,
    pub direct_construction_loss: f64,
}

/// Gradient flow towards the negative polynomial `−‖x‖^d` under the
/// standard-Gaussian norm, from a positive student and from its sign flip.
pub fn trapped_demo(n: usize, r: usize, d: usize, seed: u64, opts: &TrappedOptions) -> Result<TrappedReport> {
    if d % 2 != 0 || d == 0 {
        return Err(Error::InvalidDegree(d));
    }
    if n == 0 || r == 0 {
        return Err(invalid("n and r must be positive"));
    }
    let teacher = sphere_power_tensor(n, d)?.scaled(-1.0);
    let metric = MetricOperator::from_moments(&moment_tensor(&MomentSpec::standard_gaussian(n), n, d)?)?;
    let obj = TensorObjective::new(metric, teacher.clone())?;
    let teacher_norm_sq = obj.metric.norm_sq(&teacher)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = DVector::zeros(r);
    let mut w = DMatrix::zeros(r, n);
    for i in 0..r {
        let a: f64 = rng.random_range(0.25..0.5);
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let scale = rng.random_range(0.1..0.9) * a * (d as f64).sqrt() / len;
        alpha[i] = a;
        for (c, v) in dir.into_iter().enumerate() {
            w[(i, c)] = v * scale;
        }
    }
    let p0 = NetworkParams::new(alpha, w, d)?;
    let initial_sign_condition = p0.deltas().iter().all(|&x| x > 0.0) && p0.alpha.iter().all(|&a| a > 0.0);

    let mut fo = FlowOptions::new(opts.step, opts.steps, Integrator::Rk4);
    fo.grad_tol = 0.0;
    let run = gradient_flow(&p0, &obj, &fo)?;

    let flipped = NetworkParams::new(-&p0.alpha, p0.w.clone(), d)?;
    let mut co = FlowOptions::new(opts.step, opts.control_steps, Integrator::Rk4);
    co.grad_tol = 0.0;
    co.loss_target = opts.control_target;
    let control = gradient_flow(&flipped, &obj, &co)?;

    let direct = direct_fit(&teacher, &mut rng)?;
    let direct_construction_loss = obj.metric.norm_sq(&tau(&direct).sub(&teacher)?)?;

    Ok(TrappedReport {
        n,
        r,
        d,
        initial_sign_condition,
        teacher_norm_sq,
        min_loss: run.min_loss,
        min_alpha: run.min_alpha,
        max_delta_drift: run.max_delta_drift,
        steps: run.steps_taken,
        diverged: run.diverged,
        control_final_loss: control.final_loss,
        control_steps: control.steps_taken,
        direct_construction_loss,
    })
}

/// Exact decomposition of `t` over `dim Sym^d` random unit directions.
fn direct_fit(t: &SymTensor, rng: &mut ChaCha8Rng) -> Result<NetworkParams> {
    let (n, d) = (t.n(), t.d());
    let dim = SymTensor::dim(n, d);
    let mut w = DMatrix::zeros(dim, n);
    let mut cols = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / len).collect();
        let col = rank_one(&v, 1.0, d)?;
        for (j, c) in col.coeffs().iter().enumerate() {
            cols[(j, k)] = *c;
        }
        for (c, x) in v.into_iter().enumerate() {
            w[(k, c)] = x;
        }
    }
    let rhs = DVector::from_column_slice(t.coeffs());
    let alpha = cols
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Internal(e.to_string()))?;
    NetworkParams::new(alpha, w, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergingRow {
    pub tau: f64,
    pub loss: f64,
    pub param_norm: f64,
}

/// Parameters `α = (τ/d, −τ/d)`, `w_1 = e_1 + e_2/τ`, `w_2 = e_1` of a
/// student approaching `x_1^{d−1} x_2` as `τ → ∞`.
pub fn diverging_params(d: usize, n: usize, tau_value: f64) -> Result<NetworkParams> {
    let a = tau_value / d as f64;
    let mut w = DMatrix::zeros(2, n);
    w[(0, 0)] = 1.0;
    w[(0, 1)] = 1.0 / tau_value;
    w[(1, 0)] = 1.0;
    NetworkParams::new(DVector::from_vec(vec![a, -a]), w, d)
}

/// The tensor of `x_1^{d−1} x_2`.
pub fn diverging_teacher(d: usize, n: usize) -> Result<SymTensor> {
    let mut t = SymTensor::zeros(n, d);
    let mut idx = vec![0; d];
    idx[d - 1] = 1;
    t.set(&idx, 1.0 / d as f64)?;
    Ok(t)
}

/// Loss and parameter norm along a sequence whose loss tends to zero while
/// the parameters diverge: the infimum is not attained.
pub fn diverging_minimizer_demo(d: usize, n: usize, taus: &[f64]) -> Result<Vec<DivergingRow>> {
    if d < 3 {
        return Err(Error::InvalidDegree(d));
    }
    if n < 2 {
        return Err(invalid("need n >= 2"));
    }
    let teacher = diverging_teacher(d, n)?;
    let metric = MetricOperator::frobenius(n, d);
    taus.iter()
        .map(|&t| {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("tau must be positive"));
            }
            let p = diverging_params(d, n, t)?;
            Ok(DivergingRow {
                tau: t,
                loss: metric.norm_sq(&tau(&p).sub(&teacher)?)?,
                param_norm: p.norm(),
            })
        })
        .collect()
}

/// Number of representatives chosen greedily so that every student lies
/// within `tol` (Frobenius) of one of them.
pub fn cluster_students(students: &[DMatrix<f64>], tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let mut reps: Vec<&DMatrix<f64>> = Vec::new();
    for s in students {
        if !reps.iter().any(|q| (s - *q).norm() <= tol) {
            reps.push(s);
        }
    }
    Ok(reps.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSpec {
    /// `T = Vᵀ diag(β) V` with `V = I − (2/n) J`.
    Eigen { eigenvalues: Vec<f64> },
    Matrix { rows: Vec<Vec<f64>> },
    Network { params: NetworkParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Gaussian,
    Uniform,
}

impl Distribution {
    pub fn moments(&self, n: usize, max_order: usize) -> MomentSpec {
        match self {
            Distribution::Gaussian => MomentSpec::standard_gaussian(n),
            Distribution::Uniform => MomentSpec::Iid {
                moments: MomentSpec::uniform_moments(max_order),
            },
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Distribution::Gaussian => rng.sample(StandardNormal),
            Distribution::Uniform => rng.random_range(-1.0..1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// A finite sample with independent coordinates, shared by all trials.
    Samples { distribution: Distribution, count: usize },
    /// The population loss under the distribution's moments.
    Population { distribution: Distribution },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64, batch: usize, epochs: usize },
    Flow { step: f64, steps: usize, integrator: Integrator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub teacher: TeacherSpec,
    pub data: DataSpec,
    pub optimizer: Optimizer,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: f64,
    #[serde(default = "default_bin_width")]
    pub histogram_bin_width: f64,
}

fn default_cluster_tol() -> f64 {
    0.05
}

fn default_bin_width() -> f64 {
    0.1
}

impl ExperimentConfig {
    /// Five inputs, width three, teacher eigenvalues `(−4, −2, 1, 3, 5)`.
    pub fn reference(distribution: Distribution, trials: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n: 5,
            r: 3,
            d: 2,
            teacher: TeacherSpec::Eigen {
                eigenvalues: vec![-4.0, -2.0, 1.0, 3.0, 5.0],
            },
            data: DataSpec::Samples {
                distribution,
                count: 50_000,
            },
            optimizer: Optimizer::Sgd {
                lr: 1e-4,
                batch: 256,
                epochs: 500,
            },
            trials,
            seed,
            cluster_tol: default_cluster_tol(),
            histogram_bin_width: default_bin_width(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 || self.d == 0 || self.trials == 0 {
            return Err(invalid("n, r, d and trials must be positive"));
        }
        if !(self.cluster_tol > 0.0 && self.histogram_bin_width > 0.0) {
            return Err(invalid("cluster tolerance and bin width must be positive"));
        }
        match self.optimizer {
            Optimizer::Sgd { lr, batch, epochs } => {
                if !(lr > 0.0) || batch == 0 || epochs == 0 {
                    return Err(invalid("sgd needs lr > 0, batch > 0 and epochs > 0"));
                }
                if !matches!(self.data, DataSpec::Samples { count, .. } if count > 0) {
                    return Err(invalid("sgd needs a nonempty sample"));
                }
            }
            Optimizer::Flow { step, steps, .. } => {
                if !(step > 0.0) || steps == 0 {
                    return Err(invalid("flow needs step > 0 and steps > 0"));
                }
                if !matches!(self.data, DataSpec::Population { .. }) {
                    return Err(invalid("flow runs on the population loss"));
                }
            }
        }
        Ok(())
    }

    pub fn teacher_tensor(&self) -> Result<SymTensor> {
        match &self.teacher {
            TeacherSpec::Eigen { eigenvalues } => {
                if self.d != 2 {
                    return Err(Error::InvalidDegree(self.d));
                }
                if eigenvalues.len() != self.n {
                    return Err(Error::DimensionMismatch {
                        expected: self.n,
                        got: eigenvalues.len(),
                    });
                }
                let n = self.n;
                let v = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 2.0 / n as f64);
                SymTensor::from_matrix(&(v.transpose() * linalg::diag(eigenvalues) * &v))
            }
            TeacherSpec::Matrix { rows } => {
                if self.d != 2 {
                    return Err(Error::InvalidDegree(self.d));
                }
                let m = linalg::matrix_from_rows(rows).ok_or_else(|| invalid("ragged teacher rows"))?;
                if m.shape() != (self.n, self.n) {
                    return Err(Error::ShapeMismatch(format!("teacher is {:?}", m.shape())));
                }
                if !linalg::is_symmetric(&m, 1e-12) {
                    return Err(invalid("teacher must be symmetric"));
                }
                SymTensor::from_matrix(&m)
            }
            TeacherSpec::Network { params } => {
                check_params(params, self.n, self.d)?;
                Ok(tau(params))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedMinimum {
    pub rank: usize,
    pub support: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    #[serde(with = "linalg::serde_rows")]
    pub s: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimumMatch {
    pub minimum: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    /// Final student as a tensor.
    pub student: SymTensor,
    /// Eigenvalues of the student matrix in descending order (`d = 2`).
    pub eigenvalues: Vec<f64>,
    pub nearest: Option<MinimumMatch>,
    pub loss: f64,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub predicted_minima: Vec<PredictedMinimum>,
    pub trials: Vec<TrialResult>,
    pub reach_counts: Vec<usize>,
    pub mean_distance: Option<f64>,
    pub cluster_count: usize,
    pub diverged_count: usize,
    pub histogram: Vec<HistogramBin>,
}

struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
}

fn make_dataset(teacher: &SymTensor, dist: Distribution, count: usize, seed: u64) -> Result<Dataset> {
    let n = teacher.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..count * n).map(|_| dist.sample(&mut rng)).collect();
    let y = x.chunks(n).map(|p| teacher.evaluate(p)).collect::<Result<Vec<f64>>>()?;
    Ok(Dataset { x, y, n })
}

/// Stream 0 of the ChaCha8 generator seeded with `seed`.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on `[−1/√r, 1/√r]` for `α` and `[−1/√n, 1/√n]` for weights.
pub fn default_init(n: usize, r: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<NetworkParams> {
    let ba = 1.0 / (r as f64).sqrt();
    let bw = 1.0 / (n as f64).sqrt();
    let alpha = DVector::from_fn(r, |_, _| rng.random_range(-ba..ba));
    let w = DMatrix::from_fn(r, n, |_, _| rng.random_range(-bw..bw));
    NetworkParams::new(alpha, w, d)
}

/// Mini-batch SGD on the mean squared error; returns the final parameters
/// and whether they diverged.
fn run_sgd(
    p0: NetworkParams,
    data: &Dataset,
    lr: f64,
    batch: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> (NetworkParams, bool) {
    let (r, n, d) = (p0.width(), data.n, p0.d);
    let mut alpha: Vec<f64> = p0.alpha.iter().copied().collect();
    let mut w: Vec<f64> = p0.to_flat()[r..].to_vec();
    let count = data.y.len();
    let mut order: Vec<usize> = (0..count).collect();
    let mut z = vec![0.0; r];
    let mut ga = vec![0.0; r];
    let mut gw = vec![0.0; r * n];
    let di = d as i32;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            ga.iter_mut().for_each(|g| *g = 0.0);
            gw.iter_mut().for_each(|g| *g = 0.0);
            let inv = 2.0 / chunk.len() as f64;
            for &s in chunk {
                let x = &data.x[s * n..(s + 1) * n];
                let mut f = 0.0;
                for i in 0..r {
                    let wi = &w[i * n..(i + 1) * n];
                    z[i] = wi.iter().zip(x).map(|(a, b)| a * b).sum();
                    f += alpha[i] * z[i].powi(di);
                }
                let res = inv * (f - data.y[s]);
                for i in 0..r {
                    let zp = z[i].powi(di - 1);
                    ga[i] += res * zp * z[i];
                    let c = res * d as f64 * alpha[i] * zp;
                    for (g, xv) in gw[i * n..(i + 1) * n].iter_mut().zip(x) {
                        *g += c * xv;
                    }
                }
            }
            for i in 0..r {
                alpha[i] -= lr * ga[i];
            }
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= lr * g;
            }
        }
        let norm = alpha.iter().chain(&w).map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            break;
        }
    }
    let mut flat = alpha;
    flat.extend(w);
    let p = NetworkParams::from_flat(&flat, r, n, d).expect("shape preserved");
    let diverged = !(p.norm() <= DIVERGENCE_NORM);
    (p, diverged)
}

fn dataset_loss(p: &NetworkParams, data: &Dataset) -> f64 {
    let count = data.y.len();
    data.x
        .chunks(data.n)
        .zip(&data.y)
        .map(|(x, y)| (p.evaluate(x) - y).powi(2))
        .sum::<f64>()
        / count as f64
}

/// Teacher-student runs from independent initializations; each final
/// student is matched to the nearest predicted local minimum.
pub fn run_teacher_student(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (n, r, d) = (config.n, config.r, config.d);
    let teacher = config.teacher_tensor()?;
    let predicted_minima: Vec<PredictedMinimum> = if d == 2 {
        critical_image_cover(&teacher.to_matrix()?, QuadMetric::Gaussian, r.min(n))?
            .into_iter()
            .filter(|p| p.index == Some(0))
            .map(|p| PredictedMinimum {
                rank: p.rank,
                support: p.support,
                eigenvalues: p.eigenvalues,
                s: p.s,
            })
            .collect()
    } else {
        Vec::new()
    };

    let dataset = match config.data {
        DataSpec::Samples { distribution, count } => Some(make_dataset(&teacher, distribution, count, config.seed)?),
        DataSpec::Population { .. } => None,
    };
    let objective = match config.data {
        DataSpec::Population { distribution } => {
            let spec = distribution.moments(n, 2 * d);
            let metric = MetricOperator::from_moments(&moment_tensor(&spec, n, d)?)?;
            Some(TensorObjective::new(metric, teacher.clone())?)
        }
        DataSpec::Samples { .. } => None,
    };

    let trials: Vec<TrialResult> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialResult> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(trial as u64 + 1);
            let p0 = default_init(n, r, d, &mut rng)?;
            let (p, loss, converged, diverged) = match (&config.optimizer, &dataset, &objective) {
                (Optimizer::Sgd { lr, batch, epochs }, Some(data), _) => {
                    let (p, div) = run_sgd(p0, data, *lr, *batch, *epochs, &mut rng);
                    let loss = dataset_loss(&p, data);
                    (p, loss, false, div)
                }
                (Optimizer::Flow { step, steps, integrator }, _, Some(obj)) => {
                    let opts = FlowOptions::new(*step, *steps, *integrator);
                    let rec = gradient_flow(&p0, obj, &opts)?;
                    (rec.final_params, rec.final_loss, rec.converged, rec.diverged)
                }
                _ => return Err(Error::Internal("optimizer and data do not match".into())),
            };
            let student = tau(&p);
            let (eigenvalues, nearest) = if d == 2 && !diverged {
                let m = student.to_matrix()?;
                let nearest = predicted_minima
                    .iter()
                    .enumerate()
                    .map(|(k, q)| MinimumMatch {
                        minimum: k,
                        distance: (&m - &q.s).norm(),
                    })
                    .min_by(|a, b| a.distance.total_cmp(&b.distance));
                (sym_eigen_desc(&m).0, nearest)
            } else {
                (Vec::new(), None)
            };
            Ok(TrialResult {
                trial,
                student,
                eigenvalues,
                nearest,
                loss,
                converged,
                diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reach_counts = vec![0; predicted_minima.len()];
    let matched: Vec<&MinimumMatch> = trials.iter().filter_map(|t| t.nearest.as_ref()).collect();
    for m in &matched {
        reach_counts[m.minimum] += 1;
    }
    let mean_distance =
        (!matched.is_empty()).then(|| matched.iter().map(|m| m.distance).sum::<f64>() / matched.len() as f64);
    let students: Vec<DMatrix<f64>> = trials
        .iter()
        .filter(|t| !t.diverged)
        .map(|t| DMatrix::from_column_slice(t.student.coeffs().len(), 1, t.student.coeffs()))
        .map(|v| {
            // Weighted coordinates so that the Euclidean norm is the Frobenius norm.
            let b = basis(n, d);
            DMatrix::from_fn(v.nrows(), 1, |i, _| v[i] * b.weights[i].sqrt())
        })
        .collect();
    let cluster_count = cluster_students(&students, config.cluster_tol)?;
    let eigs: Vec<f64> = trials.iter().flat_map(|t| t.eigenvalues.iter().copied()).collect();
    Ok(ExperimentReport {
        config: config.clone(),
        predicted_minima,
        reach_counts,
        mean_distance,
        cluster_count,
        diverged_count: trials.iter().filter(|t| t.diverged).count(),
        histogram: histogram(&eigs, config.histogram_bin_width),
        trials,
    })
}

/// Counts on bins `[k w, (k+1) w)` covering the data.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().map(|v| (v / width).floor() as i64).min().expect("nonempty");
    let hi = values.iter().map(|v| (v / width).floor() as i64).max().expect("nonempty");
    let mut bins: Vec<HistogramBin> = (lo..=hi)
        .map(|k| HistogramBin {
            lo: k as f64 * width,
            hi: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in values {
        bins[((v / width).floor() as i64 - lo) as usize].count += 1;
    }
    bins
}

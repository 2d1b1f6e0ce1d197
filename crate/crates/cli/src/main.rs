//! `polyland`: command-line access to the polyland library.
//!
//! Results go to stdout (or `--out`), a JSON run manifest goes to stderr.
//! Exit codes: 0 success, 64 usage or unreadable input, 2 rejected input
//! (precondition or invalid argument), 1 internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use polyland::discriminant::{
    discriminant_2x2_frobenius, discriminant_2x2_iid, discriminant_2x2_iid_scale, ellipse_critical_points,
    focal_points_on_segment, stability_probe, stability_survey, StabilityTarget,
};
use polyland::dynamics::{
    default_init, diverging_minimizer_demo, gradient_flow, run_teacher_student, seeded_rng, trapped_demo, ExperimentConfig,
    FlowOptions, Integrator, TensorObjective, TrappedOptions,
};
use polyland::linalg;
use polyland::metrics::{moment_tensor, MetricOperator, MomentSpec};
use polyland::network::{fiber_components, regime, SignatureTriple};
use polyland::quadlandscape::{critical_image_cover, ey_frobenius_critical, ey_gaussian_critical, iid_rank1_critical};
use polyland::{Error, NetworkParams, QuadMetric, SymTensor};

const SCHEMA: &str = "polyland/v1";

#[derive(Parser, Debug)]
#[command(name = "polyland", version, about = "Landscapes of shallow polynomial networks")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Function-space regime of width-r networks.
    Regime(RegimeArgs),
    /// Connected components of a quadratic-network fiber.
    Fiber(FiberArgs),
    /// Moment tensor E[x^{⊗2d}] of a distribution.
    Moments(MomentsArgs),
    /// Gram matrix of the inner product induced on Sym^d.
    Metric(MetricArgs),
    /// Critical points of quadratic networks on a rank stratum.
    Critpoints(CritpointsArgs),
    /// Rank-one critical points under the iid norm.
    IidCount(IidCountArgs),
    /// Teacher-student experiment.
    Train(TrainArgs),
    /// Gradient flow from given or random parameters.
    Flow(FlowArgs),
    /// Positive students trapped away from a negative teacher.
    DemoTrapped(TrappedArgs),
    /// A loss infimum approached only as parameters diverge.
    DemoDiverge(DivergeArgs),
    /// Discriminant polynomials for 2x2 teachers.
    Discriminant(DiscriminantArgs),
    /// Critical points on an ellipse or focal crossings on a rank stratum.
    Focal(FocalArgs),
    /// Stability of critical points under perturbation.
    Stability(StabilityArgs),
}

#[derive(Args, Debug, Serialize)]
struct RegimeArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    d: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long)]
    r: u64,
}

#[derive(Args, Debug, Serialize)]
struct FiberArgs {
    #[arg(long)]
    splus: usize,
    #[arg(long)]
    sminus: usize,
    #[arg(long)]
    szero: usize,
    #[arg(long)]
    r: usize,
}

#[derive(Args, Debug, Serialize)]
struct MomentsArgs {
    /// JSON moment specification.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MetricArgs {
    /// JSON moment specification; omit with --frobenius.
    #[arg(long, required_unless_present = "frobenius")]
    spec: Option<PathBuf>,
    #[arg(long, conflicts_with = "spec")]
    frobenius: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the Gram matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum MetricKind {
    Frobenius,
    Gaussian,
    Iid,
}

#[derive(Args, Debug, Serialize)]
struct CritpointsArgs {
    #[arg(long, value_enum)]
    metric: MetricKind,
    /// Symmetric teacher matrix: JSON rows or a degree-2 tensor.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    r: u64,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    mu4: Option<f64>,
    /// All strata of rank at most r.
    #[arg(long)]
    cover: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct IidCountArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Diagonal teacher entries.
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<f64>,
    #[arg(long)]
    mu2: f64,
    #[arg(long)]
    mu4: f64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eigenvalue histogram as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct FlowArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-snapshot loss and invariant drift as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TrappedArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    r: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct DivergeArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    tau: Vec<f64>,
    /// Write the table as CSV instead of JSON.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum DiscriminantCase {
    Frobenius2x2,
    Iid2x2,
}

#[derive(Args, Debug, Serialize)]
struct DiscriminantArgs {
    #[arg(long, value_enum)]
    case: DiscriminantCase,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    mu4: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Variety {
    Ellipse,
    RankStratum,
}

#[derive(Args, Debug, Serialize)]
struct VarietyArgs {
    #[arg(long, value_enum)]
    variety: Variety,
    #[arg(long, default_value_t = 2.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Ellipse: `x,y`. Rank stratum: path to a teacher matrix.
    #[arg(long)]
    teacher: String,
    /// Ellipse metric as JSON rows (default identity).
    #[arg(long)]
    sigma: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "frobenius")]
    metric: MetricKind,
    #[arg(long, default_value_t = 1)]
    r: usize,
}

#[derive(Args, Debug, Serialize)]
struct FocalArgs {
    #[command(flatten)]
    target: VarietyArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StabilityArgs {
    #[command(flatten)]
    target: VarietyArgs,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Report observed counts without requiring an off-discriminant baseline.
    #[arg(long)]
    survey: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Lib(Error::Internal(_)) | CliError::Internal(_) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Output {
    outputs: Vec<String>,
    seed: Option<u64>,
}

impl Output {
    fn new(seed: Option<u64>) -> Output {
        Output {
            outputs: Vec::new(),
            seed,
        }
    }

    fn write(&mut self, path: Option<&Path>, text: &str) -> CliResult<()> {
        match path {
            Some(p) => {
                fs::write(p, text).map_err(|e| CliError::Internal(format!("writing {}: {e}", p.display())))?;
                self.outputs.push(p.display().to_string());
            }
            None => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{text}").map_err(|e| CliError::Internal(e.to_string()))?;
                self.outputs.push("-".into());
            }
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, path: Option<&Path>, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(path, &text)
    }

    fn csv(&mut self, path: Option<&Path>, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Internal(e.to_string());
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(path, text.trim_end())
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed JSON in {}: {e}", path.display())))
}

fn parse_as<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid {what}: {e}")))
}

/// Removes and checks the optional `schema` tag of a config object.
fn strip_schema(mut value: Value) -> CliResult<Value> {
    if let Some(obj) = value.as_object_mut() {
        if let Some(tag) = obj.remove("schema") {
            if tag != SCHEMA {
                return Err(CliError::Usage(format!("unsupported schema {tag}, expected {SCHEMA}")));
            }
        }
    }
    Ok(value)
}

fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let value = strip_schema(read_json(path)?)?;
    if value.is_array() {
        let rows: Vec<Vec<f64>> = parse_as(value, "matrix rows")?;
        return linalg::matrix_from_rows(&rows).ok_or_else(|| CliError::Usage("ragged matrix rows".into()));
    }
    if let Some(rows) = value.get("rows") {
        return read_rows(rows.clone());
    }
    let t: SymTensor = parse_as(value, "tensor")?;
    Ok(t.to_matrix()?)
}

fn read_rows(value: Value) -> CliResult<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = parse_as(value, "matrix rows")?;
    linalg::matrix_from_rows(&rows).ok_or_else(|| CliError::Usage("ragged matrix rows".into()))
}

fn read_moment_spec(path: &Path) -> CliResult<MomentSpec> {
    parse_as(strip_schema(read_json(path)?)?, "moment specification")
}

fn quad_metric(kind: MetricKind, mu2: Option<f64>, mu4: Option<f64>) -> CliResult<QuadMetric> {
    Ok(match kind {
        MetricKind::Frobenius => QuadMetric::Frobenius,
        MetricKind::Gaussian => QuadMetric::Gaussian,
        MetricKind::Iid => match (mu2, mu4) {
            (Some(mu2), Some(mu4)) => QuadMetric::Iid { mu2, mu4 },
            _ => return Err(CliError::Usage("--metric iid needs --mu2 and --mu4".into())),
        },
    })
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn join(v: impl IntoIterator<Item = impl ToString>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn run(cmd: &Command) -> CliResult<Output> {
    match cmd {
        Command::Regime(a) => {
            let mut o = Output::new(None);
            o.json(None, &regime(a.d as usize, a.n as usize, a.r as usize)?)?;
            Ok(o)
        }
        Command::Fiber(a) => {
            let sig = SignatureTriple {
                s_plus: a.splus,
                s_minus: a.sminus,
                s_zero: a.szero,
            };
            let mut o = Output::new(None);
            o.json(
                None,
                &json!({"signature": sig, "r": a.r, "components": fiber_components(sig, a.r)}),
            )?;
            Ok(o)
        }
        Command::Moments(a) => {
            let spec = read_moment_spec(&a.spec)?;
            let m = moment_tensor(&spec, a.n as usize, a.d as usize)?;
            let mut o = Output::new(None);
            o.json(a.out.as_deref(), &m)?;
            Ok(o)
        }
        Command::Metric(a) => {
            let (n, d) = (a.n as usize, a.d as usize);
            let metric = match &a.spec {
                Some(path) => MetricOperator::from_moments(&moment_tensor(&read_moment_spec(path)?, n, d)?)?,
                None => MetricOperator::frobenius(n, d),
            };
            let mut o = Output::new(None);
            o.json(a.out.as_deref(), &metric)?;
            if let Some(path) = &a.csv {
                let g = metric.gram();
                let header: Vec<String> = (0..g.ncols()).map(|j| format!("c{j}")).collect();
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                let rows = (0..g.nrows()).map(|i| g.row(i).iter().map(|&x| fmt(x)).collect()).collect();
                o.csv(Some(path), &header, rows)?;
            }
            Ok(o)
        }
        Command::Critpoints(a) => {
            let t = read_matrix(&a.teacher)?;
            let metric = quad_metric(a.metric, a.mu2, a.mu4)?;
            let r = a.r as usize;
            let (points, extra) = match metric {
                QuadMetric::Iid { mu2, mu4 } => {
                    if r != 1 {
                        return Err(CliError::Lib(Error::InvalidArgument(
                            "the iid enumeration covers rank one only".into(),
                        )));
                    }
                    if t.nrows() != t.ncols() || (&t - DMatrix::from_diagonal(&t.diagonal())).amax() > 0.0 {
                        return Err(CliError::Lib(Error::InvalidArgument(
                            "the iid enumeration needs a diagonal teacher".into(),
                        )));
                    }
                    let diag: Vec<f64> = t.diagonal().iter().copied().collect();
                    let e = iid_rank1_critical(&diag, mu2, mu4)?;
                    (e.points, e.warnings)
                }
                _ if a.cover => (critical_image_cover(&t, metric, r)?, Vec::new()),
                QuadMetric::Frobenius => (ey_frobenius_critical(&t, r)?, Vec::new()),
                QuadMetric::Gaussian => (ey_gaussian_critical(&t, r)?, Vec::new()),
            };
            for w in &extra {
                eprintln!("warning: {w}");
            }
            let mut o = Output::new(None);
            o.json(a.out.as_deref(), &points)?;
            if let Some(path) = &a.csv {
                let rows = points
                    .iter()
                    .map(|p| {
                        vec![
                            join(&p.support),
                            join(p.eigenvalues.iter().map(|&x| fmt(x))),
                            p.index.map(|i| i.to_string()).unwrap_or_default(),
                            fmt(p.residual),
                        ]
                    })
                    .collect();
                o.csv(Some(path), &["support", "eigenvalues", "index", "residual"], rows)?;
            }
            Ok(o)
        }
        Command::IidCount(a) => {
            if a.t.len() != a.n as usize {
                return Err(CliError::Usage(format!("--t has {} entries, --n is {}", a.t.len(), a.n)));
            }
            let e = iid_rank1_critical(&a.t, a.mu2, a.mu4)?;
            let expected = (3usize.pow(a.n as u32) - 1) / 2;
            let mut o = Output::new(None);
            o.json(
                None,
                &json!({
                    "count": e.points.len(),
                    "expected": expected,
                    "all_residuals_ok": e.all_residuals_ok,
                    "warnings": e.warnings,
                }),
            )?;
            Ok(o)
        }
        Command::Train(a) => {
            let mut value = strip_schema(read_json(&a.config)?)?;
            match value.as_object_mut() {
                Some(obj) => {
                    obj.insert("seed".into(), json!(a.seed));
                }
                None => return Err(CliError::Usage("config must be a JSON object".into())),
            }
            let config: ExperimentConfig = parse_as(value, "experiment config")?;
            let report = run_teacher_student(&config)?;
            let mut o = Output::new(Some(a.seed));
            o.json(a.out.as_deref(), &report)?;
            if let Some(path) = &a.csv {
                let rows = report
                    .histogram
                    .iter()
                    .map(|b| vec![fmt(b.lo), fmt(b.hi), b.count.to_string()])
                    .collect();
                o.csv(Some(path), &["bin_lo", "bin_hi", "count"], rows)?;
            }
            Ok(o)
        }
        Command::Flow(a) => run_flow(a),
        Command::DemoTrapped(a) => {
            let mut opts = TrappedOptions::default();
            if let Some(s) = a.step {
                opts.step = s;
            }
            if let Some(s) = a.steps {
                opts.steps = s;
            }
            let rep = trapped_demo(a.n, a.r, a.d, a.seed, &opts)?;
            let mut o = Output::new(Some(a.seed));
            o.json(None, &rep)?;
            Ok(o)
        }
        Command::DemoDiverge(a) => {
            let rows = diverging_minimizer_demo(a.d, a.n, &a.tau)?;
            let mut o = Output::new(None);
            match &a.csv {
                Some(path) => {
                    let table = rows
                        .iter()
                        .map(|r| vec![fmt(r.tau), fmt(r.loss), fmt(r.param_norm)])
                        .collect();
                    o.csv(Some(path), &["tau", "loss", "param_norm"], table)?;
                }
                None => o.json(None, &rows)?,
            }
            Ok(o)
        }
        Command::Discriminant(a) => {
            let t = read_matrix(&a.teacher)?;
            let result = match a.case {
                DiscriminantCase::Frobenius2x2 => json!({"value": discriminant_2x2_frobenius(&t)?}),
                DiscriminantCase::Iid2x2 => {
                    let (Some(mu2), Some(mu4)) = (a.mu2, a.mu4) else {
                        return Err(CliError::Usage("--case iid2x2 needs --mu2 and --mu4".into()));
                    };
                    json!({
                        "value": discriminant_2x2_iid(&t, mu2, mu4)?,
                        "scale": discriminant_2x2_iid_scale(&t, mu2, mu4)?,
                    })
                }
            };
            let mut o = Output::new(None);
            o.json(None, &result)?;
            Ok(o)
        }
        Command::Focal(a) => {
            let mut o = Output::new(None);
            match stability_target(&a.target)? {
                StabilityTarget::Ellipse { a: ea, b, teacher, sigma } => {
                    let pts = ellipse_critical_points(teacher, &sigma, ea, b)?;
                    let rows = pts
                        .iter()
                        .map(|p| {
                            vec![
                                fmt(p.theta),
                                fmt(p.point[0]),
                                fmt(p.point[1]),
                                p.index.map(|i| i.to_string()).unwrap_or_default(),
                                fmt(p.value),
                                fmt(p.second_derivative),
                            ]
                        })
                        .collect();
                    o.csv(
                        a.csv.as_deref(),
                        &["theta", "x", "y", "index", "value", "second_derivative"],
                        rows,
                    )?;
                }
                StabilityTarget::RankStratum { teacher, r, metric } => {
                    let pts = match metric {
                        QuadMetric::Gaussian => ey_gaussian_critical(&teacher, r)?,
                        _ => ey_frobenius_critical(&teacher, r)?,
                    };
                    let mut rows = Vec::new();
                    for (k, p) in pts.iter().enumerate() {
                        for c in focal_points_on_segment(&p.s, &teacher, metric)? {
                            rows.push(vec![
                                k.to_string(),
                                join(&p.support),
                                p.index.map(|i| i.to_string()).unwrap_or_default(),
                                fmt(c.alpha),
                                c.multiplicity.to_string(),
                            ]);
                        }
                    }
                    o.csv(
                        a.csv.as_deref(),
                        &["point", "support", "index", "alpha", "multiplicity"],
                        rows,
                    )?;
                }
            }
            Ok(o)
        }
        Command::Stability(a) => {
            let target = stability_target(&a.target)?;
            let mut o = Output::new(Some(a.seed));
            if a.survey {
                o.json(a.out.as_deref(), &stability_survey(&target, a.radius, a.samples, a.seed)?)?;
            } else {
                o.json(a.out.as_deref(), &stability_probe(&target, a.radius, a.samples, a.seed)?)?;
            }
            Ok(o)
        }
    }
}

fn stability_target(a: &VarietyArgs) -> CliResult<StabilityTarget> {
    Ok(match a.variety {
        Variety::Ellipse => {
            let parts: Vec<f64> = a
                .teacher
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("--teacher must be x,y: {e}")))?;
            let [x, y] = parts[..] else {
                return Err(CliError::Usage("--teacher must be x,y".into()));
            };
            let sigma = match &a.sigma {
                Some(p) => read_matrix(p)?,
                None => DMatrix::identity(2, 2),
            };
            StabilityTarget::Ellipse {
                a: a.a,
                b: a.b,
                teacher: [x, y],
                sigma,
            }
        }
        Variety::RankStratum => {
            let metric = match a.metric {
                MetricKind::Frobenius => QuadMetric::Frobenius,
                MetricKind::Gaussian => QuadMetric::Gaussian,
                MetricKind::Iid => {
                    return Err(CliError::Usage("rank strata use --metric frobenius or gaussian".into()))
                }
            };
            StabilityTarget::RankStratum {
                teacher: read_matrix(Path::new(&a.teacher))?,
                r: a.r,
                metric,
            }
        }
    })
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowConfig {
    teacher: SymTensor,
    /// Moment specification; the Frobenius inner product when absent.
    #[serde(default)]
    moments: Option<MomentSpec>,
    #[serde(default)]
    params0: Option<NetworkParams>,
    #[serde(default)]
    width: Option<usize>,
    step: f64,
    steps: usize,
    #[serde(default = "default_integrator")]
    integrator: Integrator,
    #[serde(default)]
    record_every: Option<usize>,
    #[serde(default)]
    backtracking: bool,
}

fn default_integrator() -> Integrator {
    Integrator::Rk4
}

fn run_flow(a: &FlowArgs) -> CliResult<Output> {
    let cfg: FlowConfig = parse_as(strip_schema(read_json(&a.config)?)?, "flow config")?;
    let (n, d) = (cfg.teacher.n(), cfg.teacher.d());
    let metric = match &cfg.moments {
        Some(spec) => MetricOperator::from_moments(&moment_tensor(spec, n, d)?)?,
        None => MetricOperator::frobenius(n, d),
    };
    let obj = TensorObjective::new(metric, cfg.teacher.clone())?;
    let p0 = match (cfg.params0, cfg.width) {
        (Some(p), _) => p,
        (None, Some(r)) if r > 0 => default_init(n, r, d, &mut seeded_rng(a.seed))?,
        _ => return Err(CliError::Usage("flow config needs params0 or a positive width".into())),
    };
    let mut opts = FlowOptions::new(cfg.step, cfg.steps, cfg.integrator);
    opts.backtracking = cfg.backtracking;
    if let Some(k) = cfg.record_every {
        opts.record_every = k;
    }
    let rec = gradient_flow(&p0, &obj, &opts)?;
    let mut o = Output::new(Some(a.seed));
    o.json(a.out.as_deref(), &rec)?;
    if let Some(path) = &a.csv {
        let rows = rec
            .times
            .iter()
            .zip(&rec.losses)
            .zip(&rec.deltas)
            .map(|((t, l), ds)| {
                let drift = ds
                    .iter()
                    .zip(&rec.deltas[0])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                vec![t.to_string(), fmt(*l), fmt(drift)]
            })
            .collect();
        o.csv(Some(path), &["step", "loss", "delta_drift"], rows)?;
    }
    Ok(o)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("usage error: --threads must be positive");
            return ExitCode::from(64);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("internal error: {e}");
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    match run(&cli.command) {
        Ok(out) => {
            let manifest = json!({
                "schema": SCHEMA,
                "subcommand": serde_json::to_value(&cli.command).ok().and_then(|v| v.as_object().and_then(|o| o.keys().next().cloned())),
                "config": cli.command,
                "seed": out.seed,
                "threads": cli.threads,
                "version": env!("CARGO_PKG_VERSION"),
                "wall_time_s": start.elapsed().as_secs_f64(),
                "outputs": out.outputs,
            });
            eprintln!("{manifest}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("polyland: {e}");
            ExitCode::from(e.code())
        }
    }
}

//! Named checks evaluated at seeded sample points, aggregated into reports.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QcError, Result};
use crate::linalg;
use crate::models::{wlambda_forms, ModelGeometry, ModelKind};
use crate::qcstruct::{
    build_frame, compatible_forms, deta, fit_common_scale, qc_criterion, qc_frame_data,
    reeb_complement, weak_qc_check, weak_qc_conditions, Definiteness,
};
use crate::quatlin::{
    a_theta, hyperkahler_reconstruct, recover_theta, standard_triple, torsion_map, wedge_2forms_r4,
    Sp1Component, Sp1SymDecomposition, Sp1SymTensor,
};
use crate::secondform::{biquard_theta, sff_at, shifted_model, SffSample};
use crate::tensorfield::{curvature_comparison, levi_civita, FdScheme, ScalarField};

/// Residual recorded for a point whose evaluation failed.
pub const ERROR_RESIDUAL: f64 = f64::MAX;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "QCGEOM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckClass {
    /// Pure linear algebra.
    Linear,
    /// One level of finite differences.
    SingleFd,
    /// Nested finite differences such as curvature.
    NestedFd,
}

impl CheckClass {
    pub fn default_tolerance(self) -> f64 {
        match self {
            CheckClass::Linear => 1e-10,
            CheckClass::SingleFd => 1e-6,
            CheckClass::NestedFd => 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    /// A random covector on `R^{4n+4}`.
    Covector,
    /// A random symmetric `sp(1)`-valued tensor on `R^{4n}`.
    SymTensor,
    /// A value of `lambda`.
    Lambda,
    Hypersurface,
    Interior,
}

type Evaluator = fn(&Context, &[f64], &mut ChaCha8Rng) -> Result<Outcome>;

/// Entry of the check registry.
#[derive(Clone, Copy)]
pub struct CheckInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub class: CheckClass,
    models: &'static [ModelKind],
    min_n: usize,
    max_n: Option<usize>,
    domain: Domain,
    evaluate: Evaluator,
}

impl std::fmt::Debug for CheckInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CheckInfo")
            .field("name", &self.name)
            .field("class", &self.class)
            .finish_non_exhaustive()
    }
}

impl CheckInfo {
    pub fn models(&self) -> &'static [ModelKind] {
        self.models
    }

    pub fn supports(&self, model: ModelKind, n: usize) -> bool {
        self.models.contains(&model) && n >= self.min_n && self.max_n.is_none_or(|m| n <= m)
    }

    /// Default tolerance; the `wlambda` data is exact, so FD classes tighten there.
    pub fn default_tolerance(&self, model: ModelKind) -> f64 {
        if model == ModelKind::WLambda {
            CheckClass::Linear.default_tolerance()
        } else {
            self.class.default_tolerance()
        }
    }
}

use ModelKind::{Alexandrov, FlatBall, Positive, WLambda};

const ALL_MODELS: &[ModelKind] = &[FlatBall, Positive, Alexandrov, WLambda];
const HYPERSURFACES: &[ModelKind] = &[FlatBall, Alexandrov];

pub const REGISTRY: [CheckInfo; 18] = [
    CheckInfo {
        name: "lemma-2-1-kernel",
        summary: "a^theta is torsion-free and theta is recovered from it",
        class: CheckClass::Linear,
        models: ALL_MODELS,
        min_n: 0,
        max_n: None,
        domain: Domain::Covector,
        evaluate: eval_kernel,
    },
    CheckInfo {
        name: "lemma-2-2",
        summary: "Levi-Civita connection of g_H equals flat + a^(-drho/rho)",
        class: CheckClass::NestedFd,
        models: &[FlatBall],
        min_n: 0,
        max_n: None,
        domain: Domain::Interior,
        evaluate: eval_lemma_2_2,
    },
    CheckInfo {
        name: "sphere-relation",
        summary: "d(drho o I_k) on H is one multiple of euc(I_k ., .)",
        class: CheckClass::SingleFd,
        models: &[FlatBall],
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_sphere_relation,
    },
    CheckInfo {
        name: "sphere-qc",
        summary: "nabla df on H is negative definite and I-invariant on the sphere",
        class: CheckClass::Linear,
        models: &[FlatBall],
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_sphere_qc,
    },
    CheckInfo {
        name: "weak-qc",
        summary: "weakly quaternionic-contact conditions and the induced metric",
        class: CheckClass::SingleFd,
        models: &[FlatBall, Alexandrov, WLambda],
        min_n: 0,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_weak_qc,
    },
    CheckInfo {
        name: "wlambda",
        summary: "w^lambda wedge matrix, hyperkahler reconstruction and non-euclidean metric",
        class: CheckClass::Linear,
        models: &[WLambda],
        min_n: 0,
        max_n: None,
        domain: Domain::Lambda,
        evaluate: eval_wlambda,
    },
    CheckInfo {
        name: "projectors",
        summary: "sp(1) summand projectors: completeness, idempotence, orthogonality, dimensions",
        class: CheckClass::Linear,
        models: ALL_MODELS,
        min_n: 1,
        max_n: None,
        domain: Domain::SymTensor,
        evaluate: eval_projectors,
    },
    CheckInfo {
        name: "reeb-complement",
        summary: "the complement with sigma^5 vertical torsion is unique",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_reeb_complement,
    },
    CheckInfo {
        name: "integrability",
        summary: "vertical torsion of the unique complement vanishes",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_integrability,
    },
    CheckInfo {
        name: "conformal-invariance-torsion",
        summary: "vertical torsion is unchanged under f -> exp(2u) f",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_conformal_torsion,
    },
    CheckInfo {
        name: "alexandrov-qc",
        summary: "Alexandrov boundary is QC with d eta_k = c pi^*g'(I_k ., .)",
        class: CheckClass::SingleFd,
        models: &[Alexandrov],
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_alexandrov_qc,
    },
    CheckInfo {
        name: "sff-conformal",
        summary: "trace-free conformal second fundamental form vanishes",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_sff_conformal,
    },
    CheckInfo {
        name: "sff-horizontal",
        summary: "horizontal second fundamental form vanishes",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: Some(1),
        domain: Domain::Hypersurface,
        evaluate: eval_sff_horizontal,
    },
    CheckInfo {
        name: "sff-invariance",
        summary: "second fundamental forms survive connection changes and conformal rescaling",
        class: CheckClass::SingleFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_sff_invariance,
    },
    CheckInfo {
        name: "biquard-theta",
        summary: "a connection change a^theta cancels nabla^H Omega",
        class: CheckClass::NestedFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_biquard_theta,
    },
    CheckInfo {
        name: "vanishing",
        summary: "second fundamental forms vanish and the curvature comparison holds inside",
        class: CheckClass::NestedFd,
        models: HYPERSURFACES,
        min_n: 1,
        max_n: None,
        domain: Domain::Hypersurface,
        evaluate: eval_vanishing,
    },
    CheckInfo {
        name: "curvature-comparison",
        summary: "R^(nabla + a) = R^nabla + d^nabla a + [a, a] for a = a^(-drho/rho)",
        class: CheckClass::NestedFd,
        models: HYPERSURFACES,
        min_n: 0,
        max_n: None,
        domain: Domain::Interior,
        evaluate: eval_curvature_comparison,
    },
    CheckInfo {
        name: "g-plus-smoke",
        summary: "g_+ is symmetric, nondegenerate and equal to 4 euc at the origin",
        class: CheckClass::Linear,
        models: &[Positive],
        min_n: 0,
        max_n: None,
        domain: Domain::Interior,
        evaluate: eval_g_plus,
    },
];

pub fn find_check(name: &str) -> Result<&'static CheckInfo> {
    REGISTRY
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| QcError::UnknownCheck(name.to_string()))
}

/// Checks runnable on a model at quaternionic dimension `n`, in registry order.
pub fn supported_checks(model: ModelKind, n: usize) -> Vec<&'static CheckInfo> {
    REGISTRY.iter().filter(|c| c.supports(model, n)).collect()
}

/// Inputs of one check run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckParams {
    pub n: usize,
    pub lambda: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub fd_step: f64,
    /// Overrides the check's default tolerance.
    pub tolerance: Option<f64>,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            n: 1,
            lambda: None,
            samples: 20,
            seed: 0,
            fd_step: FdScheme::default().step,
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportParams {
    pub n: usize,
    pub lambda: Option<f64>,
    pub fd_step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub residual: f64,
    /// Auxiliary measured quantity, such as a fitted constant.
    #[serde(skip)]
    pub measured: Option<f64>,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub model: String,
    pub params: ReportParams,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub points: Vec<PointRecord>,
    /// Points dropped because their frame was ill-conditioned.
    #[serde(skip)]
    pub skipped: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl CheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers and strings")
    }

    /// Measured auxiliary values of the evaluated points.
    pub fn measured(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.measured).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{verdict} {} model={} n={} max_residual={:.3e} tolerance={:.1e} points={}/{} skipped={} time={:.3}s",
            self.check,
            self.model,
            self.params.n,
            self.max_residual,
            self.tolerance,
            self.points.len(),
            self.samples,
            self.skipped,
            self.wall_time.as_secs_f64(),
        );
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "  [{i:3}] residual={:.3e}", p.residual);
            if let Some(m) = p.measured {
                let _ = write!(out, " measured={m:.9}");
            }
            if let Some(e) = &p.error {
                let _ = write!(out, " error={e}");
            }
            out.push('\n');
        }
        out
    }
}

struct Context {
    kind: ModelKind,
    n: usize,
    lambda: Option<f64>,
    model: Option<ModelGeometry>,
    scheme: FdScheme,
}

impl Context {
    fn model(&self) -> Result<&ModelGeometry> {
        self.model
            .as_ref()
            .ok_or_else(|| QcError::Unsupported("a field geometry".into()))
    }
}

struct Outcome {
    residual: f64,
    measured: Option<f64>,
}

impl Outcome {
    fn of(residual: f64) -> Self {
        Self {
            residual,
            measured: None,
        }
    }

    fn with(residual: f64, measured: f64) -> Self {
        Self {
            residual,
            measured: Some(measured),
        }
    }
}

/// Runs one named check on a model.
pub fn run_check(name: &str, model: ModelKind, params: &CheckParams) -> Result<CheckReport> {
    let info = find_check(name)?;
    if !info.supports(model, params.n) {
        return Err(QcError::UnsupportedModel {
            check: name.to_string(),
            model: format!("{model} (n = {})", params.n),
        });
    }
    if let Some(l) = params.lambda {
        if !(l.abs() < 1.0) {
            return Err(QcError::InvalidParameter(format!(
                "lambda must satisfy |lambda| < 1, got {l}"
            )));
        }
    }
    let scheme = FdScheme::new(params.fd_step, true)?;
    let tolerance = params
        .tolerance
        .unwrap_or_else(|| info.default_tolerance(model));
    if !(tolerance >= 0.0) {
        return Err(QcError::InvalidParameter(format!(
            "tolerance must be >= 0, got {tolerance}"
        )));
    }
    let geometry = match model {
        WLambda => None,
        kind => Some(ModelGeometry::build(kind, params.n)?),
    };
    let ctx = Context {
        kind: model,
        n: params.n,
        lambda: params.lambda,
        model: geometry,
        scheme,
    };

    let start = Instant::now();
    let evaluate_all = || -> Vec<Option<PointRecord>> {
        (0..params.samples)
            .into_par_iter()
            .map(|index| evaluate_point(info, &ctx, params.seed, index as u64))
            .collect()
    };
    let results = match thread_cap() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| QcError::InvalidParameter(format!("thread pool: {e}")))?
            .install(evaluate_all),
        None => evaluate_all(),
    };
    let wall_time = start.elapsed();

    let skipped = results.iter().filter(|r| r.is_none()).count();
    let points: Vec<PointRecord> = results.into_iter().flatten().collect();
    let max_residual = if points.is_empty() {
        ERROR_RESIDUAL
    } else {
        points.iter().map(|p| p.residual).fold(0.0, f64::max)
    };
    Ok(CheckReport {
        check: info.name.to_string(),
        model: model.name().to_string(),
        params: ReportParams {
            n: params.n,
            lambda: params.lambda,
            fd_step: params.fd_step,
            tolerance,
            seed: params.seed,
            samples: params.samples,
        },
        samples: params.samples,
        max_residual,
        tolerance,
        passed: max_residual <= tolerance,
        points,
        skipped,
        wall_time,
    })
}

/// Runs every check supported by `model`, in registry order.
pub fn run_all(model: ModelKind, params: &CheckParams) -> Result<Vec<CheckReport>> {
    supported_checks(model, params.n)
        .into_iter()
        .map(|c| run_check(c.name, model, params))
        .collect()
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Point `index` draws from its own stream of the seeded generator.
fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn evaluate_point(info: &CheckInfo, ctx: &Context, seed: u64, index: u64) -> Option<PointRecord> {
    let mut rng = point_rng(seed, index);
    let x = match sample(info.domain, ctx, &mut rng) {
        Ok(x) => x,
        Err(e) => return Some(failed(Vec::new(), e)),
    };
    match (info.evaluate)(ctx, &x, &mut rng) {
        Ok(o) if o.residual.is_finite() => Some(PointRecord {
            x,
            residual: o.residual,
            measured: o.measured,
            error: None,
        }),
        Ok(o) => Some(failed(
            x,
            QcError::InvalidParameter(format!("non-finite residual {}", o.residual)),
        )),
        Err(QcError::IllConditioned { what, cond }) => {
            log::debug!("skipping point {index}: ill-conditioned {what} ({cond:e})");
            None
        }
        Err(e) => Some(failed(x, e)),
    }
}

fn failed(x: Vec<f64>, e: QcError) -> PointRecord {
    log::warn!("point evaluation failed: {e}");
    PointRecord {
        x,
        residual: ERROR_RESIDUAL,
        measured: None,
        error: Some(e.to_string()),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| StandardNormal.sample(rng))
}

fn sample(domain: Domain, ctx: &Context, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    Ok(match domain {
        Domain::Covector => gaussian(rng, 4 * ctx.n + 4).as_slice().to_vec(),
        Domain::SymTensor => gaussian(rng, 9 * 4 * ctx.n).as_slice().to_vec(),
        Domain::Lambda => vec![ctx.lambda.unwrap_or_else(|| rng.random_range(-0.9..=0.9))],
        Domain::Hypersurface if ctx.kind == WLambda => {
            vec![ctx.lambda.unwrap_or_else(|| rng.random_range(-0.9..=0.9))]
        }
        Domain::Hypersurface => ctx.model()?.sample_hypersurface_point(rng),
        Domain::Interior => ctx.model()?.sample_interior_point(rng),
    })
}

fn eval_kernel(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let triple = standard_triple(ctx.n);
    let theta = DVector::from_column_slice(x);
    let delta = a_theta(&theta, &triple)?;
    let torsion = torsion_map(&delta).max_abs();
    let (back, fit) = recover_theta(&delta, &triple);
    let recovery = linalg::max_abs_vec(&(back - &theta));
    Ok(Outcome::of(torsion.max(recovery).max(fit)))
}

fn eval_lemma_2_2(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let metric = model
        .metric("g_H")
        .ok_or_else(|| QcError::Unsupported("the metric g_H".into()))?;
    let lc = levi_civita(metric, x, ctx.scheme)?;
    let theta = model.log_rho_form().evaluate(x)?.to_vector()?;
    let expected = a_theta(&theta, &model.triple_field().at(x)?)?;
    // best multiple s with lc = a^(s theta), as a diagnostic
    let (num, den) = lc
        .as_slice()
        .iter()
        .zip(expected.as_slice())
        .fold((0.0, 0.0), |(n, d), (a, b)| (n + a * b, d + b * b));
    let fit = if den > 0.0 { num / den } else { 0.0 };
    Ok(Outcome::with(lc.distance(&expected), fit))
}

fn eval_sphere_relation(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let frame = build_frame(model, x, ctx.scheme)?;
    // eta_k = -d rho o I_k for f = rho
    let forms = deta(model, x, ctx.scheme)?.map(|w| -frame.restrict(&w));
    let euc = DMatrix::identity(frame.h_dim(), frame.h_dim());
    let fit = fit_common_scale(&forms, &compatible_forms(frame.h_triple(), &euc))?;
    Ok(Outcome::with(fit.residual, fit.scale))
}

fn eval_sphere_qc(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let frame = build_frame(ctx.model()?, x, ctx.scheme)?;
    let c = qc_criterion(&frame, f64::INFINITY);
    let sign = c.definiteness.sign().unwrap_or(0.0);
    let residual = if c.definiteness == Definiteness::Negative {
        c.invariance_residual
    } else {
        1.0_f64.max(c.invariance_residual)
    };
    Ok(Outcome::with(residual, sign))
}

fn eval_weak_qc(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    if ctx.kind == WLambda {
        let forms = wlambda_forms(x[0])?;
        let report = weak_qc_conditions(&forms, &standard_triple(0))?;
        return Ok(Outcome::with(
            report.residual().max(report.asymmetry),
            report.metric[(0, 0)],
        ));
    }
    let model = ctx.model()?;
    let frame = build_frame(model, x, ctx.scheme)?;
    let (report, gap) = weak_qc_check(&frame, model, ctx.scheme)?;
    Ok(Outcome::of(
        report.residual().max(report.asymmetry).max(gap),
    ))
}

fn eval_wlambda(_: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let lambda = x[0];
    let forms = wlambda_forms(lambda)?;
    let wedge = DMatrix::from_fn(3, 3, |i, j| wedge_2forms_r4(&forms[i], &forms[j]));
    let c = wedge[(0, 0)];
    let mut residual = 0.0_f64;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { c } else { 0.0 };
            residual = residual.max((wedge[(i, j)] - target).abs());
        }
    }
    // the sign of c depends on the orientation of nu
    if !(c.abs() > 1e-12) {
        residual = residual.max(1.0);
    }
    let hk = hyperkahler_reconstruct(&forms)?;
    residual = residual
        .max(hk.residual)
        .max(hk.triple.relation_residual())
        .max(linalg::max_abs(&(&hk.metric - hk.metric.transpose())));
    let ev = linalg::sym_eigenvalues(&hk.metric);
    if !(ev[0] > 0.0) {
        residual = residual.max(1.0);
    }
    let ratio = ev[0] / ev[ev.len() - 1];
    if lambda != 0.0 && ratio >= 1.0 - 1e-8 {
        residual = residual.max(1.0);
    }
    Ok(Outcome::with(residual, ratio))
}

fn eval_projectors(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let k = 4 * ctx.n;
    let decomposition = Sp1SymDecomposition::new(&standard_triple(ctx.n - 1))?;
    let kinds = [
        Sp1Component::Sigma1,
        Sp1Component::Sigma3,
        Sp1Component::Sigma5,
    ];
    let mut residual = 0.0_f64;
    for kind in kinds {
        let basis = decomposition.basis(kind);
        if basis.ncols() != kind.expected_dim(k)
            || linalg::rank(basis, 1e-10) != kind.expected_dim(k)
        {
            residual = residual.max(1.0);
        }
    }
    let t = Sp1SymTensor::from_flat(k, &DVector::from_column_slice(x));
    let parts = decomposition.project(&t)?;
    let pieces = [&parts.sigma1, &parts.sigma3, &parts.sigma5];
    residual = residual.max(
        parts
            .sigma1
            .add(&parts.sigma3)
            .add(&parts.sigma5)
            .sub(&t)
            .max_abs(),
    );
    for (a, piece) in pieces.iter().enumerate() {
        residual = residual.max(decomposition.membership_residual(kinds[a], piece));
        let again = decomposition.project(piece)?;
        let again = [&again.sigma1, &again.sigma3, &again.sigma5];
        for (b, other) in again.iter().enumerate() {
            let drift = if a == b {
                other.sub(piece).max_abs()
            } else {
                other.max_abs()
            };
            residual = residual.max(drift);
            if b > a {
                residual = residual.max(piece.inner(pieces[b]).abs());
            }
        }
    }
    Ok(Outcome::of(residual))
}

fn eval_reeb_complement(ctx: &Context, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let frame = build_frame(model, x, ctx.scheme)?;
    let forms = deta(model, x, ctx.scheme)?;
    let shift: [DVector<f64>; 3] = std::array::from_fn(|_| gaussian(rng, frame.h_dim()));
    let a = reeb_complement(&frame, &forms, None)?;
    let b = reeb_complement(&frame, &forms, Some(&shift))?;
    let residual = a
        .distance(&b)
        .max(a.sigma5_residual())
        .max(a.solve_residual());
    Ok(Outcome::with(residual, a.condition()))
}

fn integrability_at(model: &ModelGeometry, x: &[f64], scheme: FdScheme) -> Result<f64> {
    let frame = build_frame(model, x, scheme)?;
    Ok(qc_frame_data(model, &frame, scheme, f64::INFINITY)?.integrability_residual())
}

fn eval_integrability(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    Ok(Outcome::of(integrability_at(ctx.model()?, x, ctx.scheme)?))
}

/// `exp(u)` with `u = x_0 / 4`, so that `factor^2 f = exp(2u) f`.
fn conformal_factor(dim: usize) -> ScalarField {
    ScalarField::new("exp(u)", dim, |x| (0.25 * x[0]).exp()).with_gradient(|x| {
        let mut e = DVector::zeros(x.len());
        e[0] = 0.25 * (0.25 * x[0]).exp();
        e
    })
}

fn eval_conformal_torsion(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let base = integrability_at(model, x, ctx.scheme)?;
    let rescaled = model.conformally_rescaled(&conformal_factor(model.dim()));
    let moved = integrability_at(&rescaled, x, ctx.scheme)?;
    Ok(Outcome::with((moved - base).abs(), moved))
}

fn eval_alexandrov_qc(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let alexandrov = model
        .alexandrov_frame()
        .ok_or_else(|| QcError::Unsupported("the Alexandrov model".into()))?;
    let frame = build_frame(model, x, ctx.scheme)?;
    let relations = frame.triple().relation_residual();
    let criterion = qc_criterion(&frame, f64::INFINITY);
    let definite = if criterion.definiteness == Definiteness::Indefinite {
        1.0
    } else {
        0.0
    };
    let forms = deta(model, x, ctx.scheme)?.map(|w| frame.restrict(&w));
    let fiber = frame.restrict(&alexandrov.pulled_back_fiber_metric());
    let fit = fit_common_scale(&forms, &compatible_forms(frame.h_triple(), &fiber))?;
    let residual = relations
        .max(criterion.invariance_residual)
        .max(definite)
        .max(fit.residual);
    Ok(Outcome::with(residual, fit.scale))
}

fn eval_sff_conformal(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let s = sff_at(ctx.model()?, x, ctx.scheme)?;
    Ok(Outcome::with(s.conformal.max_abs(), s.conformal.m.trace()))
}

fn horizontal_residual(s: &SffSample) -> f64 {
    s.horizontal
        .as_ref()
        .map(|h| h.q3.max_abs().max(h.constraint_residual))
        .unwrap_or(0.0)
}

fn eval_sff_horizontal(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let s = sff_at(ctx.model()?, x, ctx.scheme)?;
    if s.horizontal.is_none() {
        return Err(QcError::Unsupported("n = 1".into()));
    }
    Ok(Outcome::of(horizontal_residual(&s)))
}

/// Connection changes per point in the invariance check.
const CONNECTION_CHANGES: usize = 5;

fn eval_sff_invariance(ctx: &Context, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let base = sff_at(model, x, ctx.scheme)?;
    let q3_drift = |other: &SffSample| match (&base.horizontal, &other.horizontal) {
        (Some(a), Some(b)) => b.q3.sub(&a.q3).max_abs(),
        _ => 0.0,
    };
    let mut drift = 0.0_f64;
    for _ in 0..CONNECTION_CHANGES {
        let theta = gaussian(rng, model.dim());
        let moved = sff_at(&shifted_model(model, &theta), x, ctx.scheme)?;
        drift = drift
            .max((moved.conformal.m0 - base.conformal.m0).amax())
            .max(q3_drift(&moved));
    }
    let factor = conformal_factor(model.dim());
    let g = factor.value_at(x)?;
    let rescaled = sff_at(&model.conformally_rescaled(&factor), x, ctx.scheme)?;
    drift = drift
        .max((rescaled.conformal.weighted(g) - base.conformal.m0).amax())
        .max(q3_drift(&rescaled));
    Ok(Outcome::of(drift))
}

fn eval_biquard_theta(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let b = biquard_theta(ctx.model()?, x, ctx.scheme)?;
    Ok(Outcome::with(b.residual.max(b.complement_gap), b.initial))
}

fn comparison_at(model: &ModelGeometry, x: &[f64], scheme: FdScheme) -> Result<f64> {
    curvature_comparison(
        model.connection(),
        &model.log_rho_form(),
        model.triple_field(),
        x,
        scheme,
    )
}

fn eval_vanishing(ctx: &Context, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let model = ctx.model()?;
    let s = sff_at(model, x, ctx.scheme)?;
    let inside = model.sample_interior_point(rng);
    let comparison = comparison_at(model, &inside, ctx.scheme)?;
    let forms = s.conformal.max_abs().max(horizontal_residual(&s));
    Ok(Outcome::with(forms.max(comparison), comparison))
}

fn eval_curvature_comparison(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    Ok(Outcome::of(comparison_at(ctx.model()?, x, ctx.scheme)?))
}

fn eval_g_plus(ctx: &Context, x: &[f64], _: &mut ChaCha8Rng) -> Result<Outcome> {
    let metric = ctx
        .model()?
        .metric("g_+")
        .ok_or_else(|| QcError::Unsupported("the metric g_+".into()))?;
    let m = 4 * ctx.n + 4;
    let origin = metric.evaluate(&vec![0.0; m])?.to_matrix()?;
    let at_origin = linalg::max_abs(&(origin - DMatrix::identity(m, m) * 4.0));
    let g = metric.evaluate(x)?.to_matrix()?;
    let asymmetry = linalg::max_abs(&(&g - g.transpose()));
    let ev = linalg::sym_eigenvalues(&g);
    let amax = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let amin = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let ratio = if amax > 0.0 { amin / amax } else { 0.0 };
    let degenerate = if ratio > 1e-8 { 0.0 } else { 1.0 };
    Ok(Outcome::with(
        at_origin.max(asymmetry).max(degenerate),
        ratio,
    ))
}

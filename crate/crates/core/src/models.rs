//! Concrete geometries: the flat quaternionic ball with its hyperbolic metric,
//! the positive metric on `H^{n+1}`, the Alexandrov example and the pointwise
//! `w^lambda` forms.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QcError, Result};
use crate::linalg;
use crate::quatlin::{left_triple, standard_triple, ConnectionDelta, QuaternionTriple};
use crate::tensorfield::{Connection, ScalarField, TensorField, TripleField};

/// Metric fields with a `1/rho` factor are evaluated only where `|rho| >= POLE_GUARD`.
pub const POLE_GUARD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    FlatBall,
    Positive,
    Alexandrov,
    WLambda,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::FlatBall,
        ModelKind::Positive,
        ModelKind::Alexandrov,
        ModelKind::WLambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FlatBall => "flat-ball",
            ModelKind::Positive => "positive",
            ModelKind::Alexandrov => "alexandrov",
            ModelKind::WLambda => "wlambda",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = QcError;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| QcError::InvalidParameter(format!("unknown model `{s}`")))
    }
}

/// A quaternionic manifold chart with a defining function for a hypersurface.
#[derive(Clone)]
pub struct ModelGeometry {
    kind: ModelKind,
    n: usize,
    defining_function: ScalarField,
    triple: TripleField,
    connection: Connection,
    metrics: Vec<(&'static str, TensorField)>,
    alexandrov: Option<Arc<AlexandrovFrame>>,
}

impl fmt::Debug for ModelGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGeometry")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("defining_function", &self.defining_function.name())
            .field("connection", &self.connection.name())
            .finish_non_exhaustive()
    }
}

impl ModelGeometry {
    /// Builds the named model; `WLambda` has no field geometry.
    pub fn build(kind: ModelKind, n: usize) -> Result<Self> {
        match kind {
            ModelKind::FlatBall => Ok(flat_ball_model(n)),
            ModelKind::Positive => Ok(positive_model(n)),
            ModelKind::Alexandrov => alexandrov_model(n),
            ModelKind::WLambda => Err(QcError::Unsupported(
                "a field geometry; wlambda is pointwise data".into(),
            )),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Ambient dimension `4n + 4`.
    pub fn dim(&self) -> usize {
        4 * self.n + 4
    }

    /// Dimension `4n` of the horizontal distribution.
    pub fn h_dim(&self) -> usize {
        4 * self.n
    }

    pub fn defining_function(&self) -> &ScalarField {
        &self.defining_function
    }

    pub fn triple_field(&self) -> &TripleField {
        &self.triple
    }

    pub fn connection(&self) -> &Connection {
        &self.connection
    }

    pub fn metric(&self, name: &str) -> Option<&TensorField> {
        self.metrics
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, m)| m)
    }

    pub fn metric_names(&self) -> Vec<&'static str> {
        self.metrics.iter().map(|(k, _)| *k).collect()
    }

    /// Frame data of the Alexandrov construction, when this is that model.
    pub fn alexandrov_frame(&self) -> Option<&AlexandrovFrame> {
        self.alexandrov.as_deref()
    }

    pub fn with_connection(&self, connection: Connection) -> Self {
        let mut out = self.clone();
        out.connection = connection;
        out
    }

    /// The same hypersurface cut out by `factor^2 * f`.
    pub fn conformally_rescaled(&self, factor: &ScalarField) -> Self {
        let mut out = self.clone();
        out.defining_function = self.defining_function.times_square(factor);
        out
    }

    /// `-d rho / rho` with `rho` the defining function, away from the pole guard.
    pub fn log_rho_form(&self) -> TensorField {
        let f = self.defining_function.clone();
        let guard = f.clone();
        TensorField::covector("-drho/rho", self.dim(), move |p| {
            let r = f.value_at(p)?;
            Ok(f.differential_at(p, Default::default())? * (-1.0 / r))
        })
        .with_domain(move |p| {
            guard
                .value_at(p)
                .map(|r| r.abs() >= POLE_GUARD)
                .unwrap_or(false)
        })
    }

    /// A point of the hypersurface `f = 0`.
    pub fn sample_hypersurface_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.dim();
        match self.kind {
            ModelKind::Alexandrov => {
                let mut p = gaussian(rng, m);
                p[0] = 0.0;
                p
            }
            _ => {
                let g = gaussian(rng, m);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                g.into_iter().map(|v| v / norm).collect()
            }
        }
    }

    /// A point where the model's metrics are defined.
    pub fn sample_interior_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.dim();
        match self.kind {
            ModelKind::Alexandrov => {
                let mut p = gaussian(rng, m);
                let r: f64 = rng.random_range(POLE_GUARD..=0.9);
                p[0] = if rng.random_bool(0.5) { r } else { -r };
                p
            }
            ModelKind::Positive => {
                let g = gaussian(rng, m);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let radius: f64 = rng.random_range(0.0..=2.0);
                g.into_iter().map(|v| radius * v / norm).collect()
            }
            _ => {
                let g = gaussian(rng, m);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rho: f64 = rng.random_range(POLE_GUARD..=0.9);
                let radius = (1.0 - rho).sqrt();
                g.into_iter().map(|v| radius * v / norm).collect()
            }
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<f64> {
    (0..m).map(|_| StandardNormal.sample(rng)).collect()
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rho_field(m: usize) -> ScalarField {
    ScalarField::new("rho", m, |x| 1.0 - norm_sq(x))
        .with_gradient(|x| DVector::from_iterator(x.len(), x.iter().map(|v| -2.0 * v)))
}

/// `d rho^2 + sum (I_i d rho)^2` at `x` for `rho = 1 - |x|^2`.
fn vertical_square(x: &[f64], t: &QuaternionTriple) -> DMatrix<f64> {
    let dr = DVector::from_iterator(x.len(), x.iter().map(|v| -2.0 * v));
    let mut out = &dr * dr.transpose();
    for k in 0..3 {
        let v = t.act_on_covector(k, &dr);
        out += &v * v.transpose();
    }
    out
}

/// `H^{n+1}` with the standard triple, the flat connection, `f = rho = 1 - |x|^2`,
/// the euclidean metric and the hyperbolic metric
/// `g_H = 4 euc / rho + (d rho^2 + sum (I_i d rho)^2) / rho^2` on `rho >= 0.05`.
pub fn flat_ball_model(n: usize) -> ModelGeometry {
    let m = 4 * n + 4;
    let t = standard_triple(n);
    let euc = TensorField::bilinear("euc", m, move |_| Ok(DMatrix::identity(m, m)));
    let tq = t.clone();
    let g_h = TensorField::bilinear("g_H", m, move |x| {
        let rho = 1.0 - norm_sq(x);
        Ok(DMatrix::identity(m, m) * (4.0 / rho) + vertical_square(x, &tq) / (rho * rho))
    })
    .with_domain(|x| 1.0 - norm_sq(x) >= POLE_GUARD);
    ModelGeometry {
        kind: ModelKind::FlatBall,
        n,
        defining_function: rho_field(m),
        triple: TripleField::constant(t),
        connection: Connection::flat(m),
        metrics: vec![("euc", euc), ("g_H", g_h)],
        alexandrov: None,
    }
}

/// `H^{n+1}` with
/// `g_+ = 4 euc / (1 + |x|^2) - (d rho^2 + sum (I_i d rho)^2) / (1 + |x|^2)^2`.
pub fn positive_model(n: usize) -> ModelGeometry {
    let m = 4 * n + 4;
    let t = standard_triple(n);
    let tq = t.clone();
    let g_plus = TensorField::bilinear("g_+", m, move |x| {
        let s = 1.0 + norm_sq(x);
        Ok(DMatrix::identity(m, m) * (4.0 / s) - vertical_square(x, &tq) / (s * s))
    });
    ModelGeometry {
        kind: ModelKind::Positive,
        n,
        defining_function: rho_field(m),
        triple: TripleField::constant(t),
        connection: Connection::flat(m),
        metrics: vec![("g_+", g_plus)],
        alexandrov: None,
    }
}

/// Frame data of the Alexandrov example on `N = H x R^{4n}` with coordinates
/// `(rho, x_1, x_2, x_3, m)`.
///
/// The coframe is `theta_0 = d rho`, `theta_i = dx_i - alpha_i` with
/// `alpha_i = 1/2 w'_i(m, .)`, and `dm`. In that coframe the triple is
/// constant: left multiplication on the `H` factor and the standard triple
/// `I'` on `R^{4n}`.
#[derive(Debug, Clone)]
pub struct AlexandrovFrame {
    n: usize,
    fiber_triple: QuaternionTriple,
    frame_triple: QuaternionTriple,
    frame_connection: ConnectionDelta,
    torsion_residual: f64,
}

impl AlexandrovFrame {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(QcError::InvalidParameter(
                "the Alexandrov model needs n >= 1".into(),
            ));
        }
        let m = 4 * n + 4;
        let fiber = standard_triple(n - 1);
        let left = left_triple();
        let blocks: [DMatrix<f64>; 3] = std::array::from_fn(|k| {
            let mut b = DMatrix::zeros(m, m);
            b.view_mut((0, 0), (4, 4)).copy_from(left.op(k));
            b.view_mut((4, 4), (4 * n, 4 * n)).copy_from(fiber.op(k));
            b
        });
        let [b0, b1, b2] = blocks;
        let frame_triple = QuaternionTriple::new(b0, b1, b2)?;

        // torsion of the frame-flat connection: T^c_{ab} = d theta^c (e_a, e_b)
        let mut torsion = ConnectionDelta::zeros(m);
        for i in 0..3 {
            for a in 0..4 * n {
                for b in 0..4 * n {
                    torsion.set(1 + i, 4 + a, 4 + b, -fiber.op(i)[(b, a)]);
                }
            }
        }

        let algebra = normalizer_basis(&frame_triple);
        let ng = algebra.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                for c in 0..m {
                    let mut row = vec![0.0; m * ng];
                    for (s, g) in algebra.iter().enumerate() {
                        row[a * ng + s] += g[(c, b)];
                        row[b * ng + s] -= g[(c, a)];
                    }
                    rows.push(row);
                    rhs.push(-torsion.get(c, a, b));
                }
            }
        }
        let mat = DMatrix::from_row_iterator(rows.len(), m * ng, rows.into_iter().flatten());
        let (sol, torsion_residual) = linalg::lstsq(&mat, &DVector::from_vec(rhs));
        if torsion_residual > 1e-10 {
            return Err(QcError::RankDefect {
                what: "torsion cancellation in the Alexandrov frame",
                rank: linalg::rank(&mat, 1e-10),
                expected: mat.nrows(),
            });
        }
        let frame_connection = ConnectionDelta::from_fn(m, |c, a, b| {
            (0..ng).map(|s| sol[a * ng + s] * algebra[s][(c, b)]).sum()
        });
        Ok(Self {
            n,
            fiber_triple: fiber,
            frame_triple,
            frame_connection,
            torsion_residual,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        4 * self.n + 4
    }

    /// The standard triple `I'` on the fiber `R^{4n}`.
    pub fn fiber_triple(&self) -> &QuaternionTriple {
        &self.fiber_triple
    }

    /// The triple in the adapted frame.
    pub fn frame_triple(&self) -> &QuaternionTriple {
        &self.frame_triple
    }

    /// Residual of the torsion-cancellation solve.
    pub fn torsion_residual(&self) -> f64 {
        self.torsion_residual
    }

    /// Coframe matrix `Theta` with `theta^c = Theta_{cj} dx^j`.
    pub fn coframe(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let fiber = DVector::from_column_slice(&x[4..]);
        let mut t = DMatrix::identity(m, m);
        for i in 0..3 {
            let v = self.fiber_triple.op(i) * &fiber * -0.5;
            for b in 0..4 * self.n {
                t[(1 + i, 4 + b)] = v[b];
            }
        }
        t
    }

    /// `Theta^{-1}`; the off-identity block squares to zero.
    pub fn frame(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::identity(m, m) * 2.0 - self.coframe(x)
    }

    pub fn triple_at(&self, x: &[f64]) -> Result<QuaternionTriple> {
        self.frame_triple
            .conjugated(&self.coframe(x), &self.frame(x))
    }

    /// Christoffel symbols in coordinates of the torsion-free connection
    /// `D + a`, with `D` the flat connection of the adapted frame.
    pub fn gamma_at(&self, x: &[f64]) -> ConnectionDelta {
        let m = self.dim();
        let theta = self.coframe(x);
        let inv = self.frame(x);
        let a = &self.frame_connection;
        // inner[c][i][j] = d_i Theta_cj + Theta_ai Theta_bj a^c_ab
        let mut inner = ConnectionDelta::zeros(m);
        for c in 0..m {
            for a_ in 0..m {
                for b in 0..m {
                    let coef = a.get(c, a_, b);
                    if coef == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        let ti = theta[(a_, i)];
                        if ti == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            let v = inner.get(c, i, j) + ti * theta[(b, j)] * coef;
                            inner.set(c, i, j, v);
                        }
                    }
                }
            }
        }
        for i in 0..3 {
            for l in 0..4 * self.n {
                for b in 0..4 * self.n {
                    let v = inner.get(1 + i, 4 + l, 4 + b) - 0.5 * self.fiber_triple.op(i)[(b, l)];
                    inner.set(1 + i, 4 + l, 4 + b, v);
                }
            }
        }
        ConnectionDelta::from_fn(m, |k, i, j| {
            (0..m).map(|c| inv[(k, c)] * inner.get(c, i, j)).sum()
        })
    }

    /// `g = -(theta_0^2 + sum theta_i^2) / rho^2 + (1 / rho) pi^* g'`.
    pub fn metric_at(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let rho = x[0];
        let theta = self.coframe(x);
        let diag = DVector::from_fn(m, |c, _| if c < 4 { -1.0 / (rho * rho) } else { 1.0 / rho });
        theta.transpose() * DMatrix::from_diagonal(&diag) * theta
    }

    /// `pi^* g'` as a bilinear form on `T N`.
    pub fn pulled_back_fiber_metric(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| if i == j && i >= 4 { 1.0 } else { 0.0 })
    }

    /// `pi_*` onto the fiber factor.
    pub fn project_to_fiber(&self, v: &DVector<f64>) -> DVector<f64> {
        v.rows(4, 4 * self.n).into_owned()
    }
}

/// Orthonormal basis of `{A : [A, I_k] in span(I_1, I_2, I_3) for all k}`.
fn normalizer_basis(t: &QuaternionTriple) -> Vec<DMatrix<f64>> {
    let m = t.dim();
    let nv = m * m + 9;
    let mut sys = DMatrix::zeros(3 * m * m, nv);
    for i in 0..3 {
        let op = t.op(i);
        for r in 0..m {
            for c in 0..m {
                let row = (i * m + r) * m + c;
                for k in 0..m {
                    sys[(row, r * m + k)] += op[(k, c)];
                    sys[(row, k * m + c)] -= op[(r, k)];
                }
                for j in 0..3 {
                    sys[(row, m * m + 3 * i + j)] = -t.op(j)[(r, c)];
                }
            }
        }
    }
    let null = linalg::nullspace(&sys, 1e-10);
    let mats = null.rows(0, m * m).into_owned();
    let q = linalg::column_space(&mats, 1e-9);
    q.column_iter()
        .map(|c| DMatrix::from_row_slice(m, m, c.as_slice()))
        .collect()
}

/// The Alexandrov example: `f = rho`, the point-dependent triple completed
/// from `I_i d rho = -dx_i + alpha_i` and `I_i pi^* beta = pi^* I'_i beta`,
/// and the torsion-free quaternionic connection of the adapted frame.
pub fn alexandrov_model(n: usize) -> Result<ModelGeometry> {
    let frame = Arc::new(AlexandrovFrame::new(n)?);
    let m = frame.dim();
    let f = ScalarField::new("rho", m, |x| x[0]).with_gradient(move |_| {
        let mut e = DVector::zeros(m);
        e[0] = 1.0;
        e
    });
    let ft = frame.clone();
    let triple = TripleField::new(m, move |x| ft.triple_at(x));
    let fc = frame.clone();
    let connection = Connection::new("alexandrov", m, true, move |x| Ok(fc.gamma_at(x)));
    let fm = frame.clone();
    let metric = TensorField::bilinear("g", m, move |x| Ok(fm.metric_at(x)))
        .with_domain(|x| x[0].abs() >= POLE_GUARD);
    Ok(ModelGeometry {
        kind: ModelKind::Alexandrov,
        n,
        defining_function: f,
        triple,
        connection,
        metrics: vec![("g", metric)],
        alexandrov: Some(frame),
    })
}

/// `w_i^lambda = (w_i^+ + lambda w_i^-) / (1 - lambda^2)` on `R^4` as matrices
/// `w(X, Y) = X^T W Y`, with `w_i^pm = euc(I_i^pm ., .)` for right (+) and left (-)
/// multiplication.
pub fn wlambda_forms(lambda: f64) -> Result<[DMatrix<f64>; 3]> {
    if !(lambda.abs() < 1.0) {
        return Err(QcError::InvalidParameter(format!(
            "lambda must satisfy |lambda| < 1, got {lambda}"
        )));
    }
    let plus = standard_triple(0);
    let minus = left_triple();
    let s = 1.0 / (1.0 - lambda * lambda);
    Ok(std::array::from_fn(|k| {
        (plus.op(k).transpose() + minus.op(k).transpose() * lambda) * s
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quatlin::{a_theta, wedge_2forms_r4};
    use crate::tensorfield::{exterior_derivative_1form, levi_civita, FdScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_ball_values_at_origin() {
        let model = flat_ball_model(1);
        let g = model
            .metric("g_H")
            .unwrap()
            .evaluate(&[0.0; 8])
            .unwrap()
            .to_matrix()
            .unwrap();
        assert_eq!(g, DMatrix::identity(8, 8) * 4.0);
        let p = [0.1, 0.2, -0.1, 0.3, 0.0, 0.1, 0.2, -0.2];
        let f = model.defining_function();
        assert!((f.value_at(&p).unwrap() - (1.0 - norm_sq(&p))).abs() < 1e-15);
        let df = f.differential_at(&p, FdScheme::default()).unwrap();
        for k in 0..8 {
            assert_eq!(df[k], -2.0 * p[k]);
        }
        assert!(model
            .metric("g_H")
            .unwrap()
            .evaluate(&[0.99, 0., 0., 0., 0., 0., 0., 0.])
            .is_err());
    }

    #[test]
    fn log_rho_form_on_radial_direction() {
        // theta(d_rho) = -1/rho where d_rho is dual to d rho along the radius
        let model = flat_ball_model(0);
        let p = [0.5, 0.0, 0.0, 0.0];
        let th = model
            .log_rho_form()
            .evaluate(&p)
            .unwrap()
            .to_vector()
            .unwrap();
        let rho = 0.75;
        let d_rho = DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0]);
        assert!((th.dot(&d_rho) + 1.0 / rho).abs() < 1e-12);
    }

    #[test]
    fn positive_metric_is_definite() {
        let model = positive_model(1);
        let g = model.metric("g_+").unwrap();
        assert_eq!(
            g.evaluate(&[0.0; 8]).unwrap().to_matrix().unwrap(),
            DMatrix::identity(8, 8) * 4.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = model.sample_interior_point(&mut rng);
            let ev = linalg::sym_eigenvalues(&g.evaluate(&p).unwrap().to_matrix().unwrap());
            let s = 1.0 + norm_sq(&p);
            assert!((ev[0] - 4.0 / (s * s)).abs() < 1e-12);
            assert!((ev[7] - 4.0 / s).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_relation_constant() {
        let model = flat_ball_model(1);
        let t = standard_triple(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = model.sample_hypersurface_point(&mut rng);
        let pv = DVector::from_column_slice(&p);
        for i in 0..3 {
            let op = t.op(i).clone();
            let eta = TensorField::covector("I drho", 8, move |x| {
                let dr = DVector::from_iterator(8, x.iter().map(|v| -2.0 * v));
                Ok(op.transpose() * dr)
            });
            let d = exterior_derivative_1form(&eta, &p, FdScheme::default()).unwrap();
            // vectors orthogonal to p and I_k p are horizontal
            let mut x = DVector::from_fn(8, |k, _| (k as f64 * 0.37).sin());
            let mut y = DVector::from_fn(8, |k, _| (k as f64 * 1.3).cos());
            let cons: Vec<DVector<f64>> = std::iter::once(pv.clone())
                .chain((0..3).map(|k| t.op(k) * &pv))
                .collect();
            for v in [&mut x, &mut y] {
                for c in &cons {
                    let s = c.dot(v);
                    *v -= c * s;
                }
            }
            let lhs = (x.transpose() * &d * &y)[(0, 0)];
            let rhs = 4.0 * (t.op(i) * &x).dot(&y);
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn alexandrov_triple_completes_the_displayed_rules() {
        for n in 1..3 {
            let fr = AlexandrovFrame::new(n).unwrap();
            let m = fr.dim();
            assert!(fr.torsion_residual() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..10 {
                let x: Vec<f64> = gaussian(&mut rng, m);
                let t = fr.triple_at(&x).unwrap();
                assert!(t.relation_residual() < 1e-10);
                let theta = fr.coframe(&x);
                let drho = theta.row(0).transpose();
                for i in 0..3 {
                    // I_i d rho = -theta_i, i.e. -dx_i + alpha_i
                    let lhs = t.act_on_covector(i, &drho);
                    let rhs = -theta.row(1 + i).transpose();
                    assert!(linalg::max_abs_vec(&(lhs - rhs)) < 1e-12);
                    // I_i on pulled-back fiber covectors is I'_i
                    for b in 0..4 * n {
                        let mut beta = DVector::zeros(m);
                        beta[4 + b] = 1.0;
                        let got = t.act_on_covector(i, &beta);
                        let mut fib = DVector::zeros(4 * n);
                        fib[b] = 1.0;
                        let want = fr.fiber_triple().act_on_covector(i, &fib);
                        let mut expect = DVector::zeros(m);
                        expect.rows_mut(4, 4 * n).copy_from(&want);
                        assert!(linalg::max_abs_vec(&(got - expect)) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn alexandrov_primitives_have_the_fiber_forms_as_differential() {
        let fr = AlexandrovFrame::new(1).unwrap();
        for i in 0..3 {
            let op = fr.fiber_triple().op(i).clone();
            let alpha = TensorField::covector("alpha", 8, move |x| {
                let fib = DVector::from_column_slice(&x[4..]);
                let mut out = DVector::zeros(8);
                out.rows_mut(4, 4).copy_from(&(&op * fib * 0.5));
                Ok(out)
            });
            let d = exterior_derivative_1form(
                &alpha,
                &[0.3, 0.1, 0.2, -0.3, 0.5, -0.2, 0.7, 0.1],
                FdScheme::default(),
            )
            .unwrap();
            let w = fr.fiber_triple().op(i).transpose();
            assert!(linalg::max_abs(&(d.view((4, 4), (4, 4)) - w)) < 1e-9);
        }
    }

    #[test]
    fn alexandrov_connection_is_torsion_free_and_quaternionic() {
        let model = alexandrov_model(1).unwrap();
        let x = [0.2, 0.4, -0.1, 0.3, 0.5, -0.7, 0.2, 0.9];
        let gamma = model.connection().gamma_at(&x).unwrap();
        assert!(gamma.symmetry_residual() < 1e-12);
        // nabla I_k = sum c_kj I_j: check d_i I_k + [Gamma_i, I_k] lies in span(I)
        let scheme = FdScheme::default();
        let tf = model.triple_field().clone();
        let t = tf.at(&x).unwrap();
        for i in 0..8 {
            let mut e = vec![0.0; 8];
            e[i] = 1.0;
            for k in 0..3 {
                let tk = tf.clone();
                let d = crate::tensorfield::fd_apply(
                    &|q| Ok(tk.at(q)?.op(k).iter().cloned().collect()),
                    &x,
                    &e,
                    scheme,
                )
                .unwrap();
                let dk = DMatrix::from_column_slice(8, 8, &d);
                let gi = gamma.direction_matrix(i);
                let cov = dk + &gi * t.op(k) - t.op(k) * &gi;
                let span = DMatrix::from_columns(
                    &(0..3)
                        .map(|j| DVector::from_column_slice(t.op(j).as_slice()))
                        .collect::<Vec<_>>(),
                );
                let (_, r) = linalg::lstsq(&span, &DVector::from_column_slice(cov.as_slice()));
                assert!(r < 1e-8, "covariant derivative of I_{k} leaves span: {r}");
            }
        }
    }

    #[test]
    fn flat_levi_civita_is_a_theta_of_half_log_rho() {
        for n in 0..=2 {
            let model = flat_ball_model(n);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..5 {
                let x = model.sample_interior_point(&mut rng);
                let lc =
                    levi_civita(model.metric("g_H").unwrap(), &x, FdScheme::default()).unwrap();
                let theta = model
                    .log_rho_form()
                    .evaluate(&x)
                    .unwrap()
                    .to_vector()
                    .unwrap();
                let t = model.triple_field().at(&x).unwrap();
                let half = a_theta(&(&theta * 0.5), &t).unwrap();
                assert!(lc.distance(&half) <= 1e-7);
                assert!(lc.distance(&a_theta(&theta, &t).unwrap()) > 1e-3);
            }
        }
    }

    #[test]
    fn alexandrov_metric_signature_by_side() {
        for n in [1, 2] {
            let model = alexandrov_model(n).unwrap();
            let g = model.metric("g").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for (rho, positive, negative) in [(0.7, 4 * n, 4), (-0.7, 0, 4 * n + 4)] {
                let mut p: Vec<f64> = (0..model.dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                p[0] = rho;
                let ev = linalg::sym_eigenvalues(&g.evaluate(&p).unwrap().to_matrix().unwrap());
                assert_eq!(ev.iter().filter(|v| **v > 0.0).count(), positive);
                assert_eq!(ev.iter().filter(|v| **v < 0.0).count(), negative);
            }
        }
    }

    #[test]
    fn wlambda_constants() {
        assert!(wlambda_forms(1.0).is_err());
        let zero = wlambda_forms(0.0).unwrap();
        let t = standard_triple(0);
        for (k, w) in zero.iter().enumerate() {
            assert_eq!(*w, t.op(k).transpose());
        }
        for lambda in [-0.7, -0.3, 0.3, 0.7] {
            let w = wlambda_forms(lambda).unwrap();
            let c = 2.0 / (1.0 - lambda * lambda);
            for i in 0..3 {
                for j in 0..3 {
                    let v = wedge_2forms_r4(&w[i], &w[j]);
                    assert!((v + if i == j { c } else { 0.0 }).abs() < 1e-12);
                }
                // invariance under I_i^+
                let inv = t.op(i).transpose() * &w[i] * t.op(i);
                assert!(linalg::max_abs(&(inv - &w[i])) < 1e-12);
                let g = &w[0] * t.op(0) + t.op(1).transpose() * &w[0] * t.op(2);
                assert!(linalg::max_abs(&(g - DMatrix::identity(4, 4) * c)) < 1e-12);
            }
        }
    }
}

//! Tensor fields on open subsets of `R^m` and finite-difference calculus on them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{QcError, Result};
use crate::linalg;
use crate::quatlin::{self, ConnectionDelta, QuaternionTriple};

/// Kind of a tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Eats a vector (covariant index).
    Lower,
    /// Eats a covector (contravariant index).
    Upper,
}

/// Dense array over `R^m` with one index per slot, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dim: usize,
    variance: Vec<Slot>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dim: usize, variance: Vec<Slot>, data: Vec<f64>) -> Result<Self> {
        let expected = dim.pow(variance.len() as u32);
        if data.len() != expected {
            return Err(QcError::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            dim,
            variance,
            data,
        })
    }

    pub fn zeros(dim: usize, variance: Vec<Slot>) -> Self {
        let len = dim.pow(variance.len() as u32);
        Self {
            dim,
            variance,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(dim: usize, v: f64) -> Self {
        Self {
            dim,
            variance: vec![],
            data: vec![v],
        }
    }

    pub fn covector(v: &DVector<f64>) -> Self {
        Self {
            dim: v.len(),
            variance: vec![Slot::Lower],
            data: v.iter().cloned().collect(),
        }
    }

    pub fn bilinear(m: &DMatrix<f64>) -> Self {
        Self {
            dim: m.nrows(),
            variance: vec![Slot::Lower, Slot::Lower],
            data: m.transpose().iter().cloned().collect(),
        }
    }

    pub fn from_delta(d: &ConnectionDelta) -> Self {
        Self {
            dim: d.dim(),
            variance: vec![Slot::Upper, Slot::Lower, Slot::Lower],
            data: d.as_slice().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variance(&self) -> &[Slot] {
        &self.variance
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.variance.len(), "tensor index arity");
        let flat = idx.iter().fold(0, |acc, &i| acc * self.dim + i);
        self.data[flat]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.variance.len() != 1 {
            return Err(QcError::DimensionMismatch {
                expected: 1,
                found: self.variance.len(),
            });
        }
        Ok(DVector::from_column_slice(&self.data))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.variance.len() != 2 {
            return Err(QcError::DimensionMismatch {
                expected: 2,
                found: self.variance.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }

    pub fn to_delta(&self) -> Result<ConnectionDelta> {
        ConnectionDelta::from_vec(self.dim, self.data.clone())
    }
}

type Evaluator = Arc<dyn Fn(&[f64]) -> Result<Tensor> + Send + Sync>;
type Domain = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

fn everywhere() -> Domain {
    Arc::new(|_| true)
}

/// A tensor field with a declared domain.
#[derive(Clone)]
pub struct TensorField {
    name: Arc<str>,
    dim: usize,
    variance: Vec<Slot>,
    eval: Evaluator,
    domain: Domain,
}

impl fmt::Debug for TensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("variance", &self.variance)
            .finish_non_exhaustive()
    }
}

impl TensorField {
    pub fn new(
        name: &str,
        dim: usize,
        variance: Vec<Slot>,
        eval: impl Fn(&[f64]) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            variance,
            eval: Arc::new(eval),
            domain: everywhere(),
        }
    }

    pub fn with_domain(mut self, domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Arc::new(domain);
        self
    }

    /// A covector field from a closure returning the components.
    pub fn covector(
        name: &str,
        dim: usize,
        f: impl Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, dim, vec![Slot::Lower], move |p| {
            Ok(Tensor::covector(&f(p)?))
        })
    }

    /// A field of bilinear forms from a closure returning the matrix.
    pub fn bilinear(
        name: &str,
        dim: usize,
        f: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, dim, vec![Slot::Lower, Slot::Lower], move |p| {
            Ok(Tensor::bilinear(&f(p)?))
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variance(&self) -> &[Slot] {
        &self.variance
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim && (self.domain)(p)
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<Tensor> {
        if p.len() != self.dim {
            return Err(QcError::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        if !(self.domain)(p) {
            return Err(QcError::DomainViolation {
                field: self.name.to_string(),
                point: p.to_vec(),
            });
        }
        let t = (self.eval)(p)?;
        if t.variance != self.variance || t.dim != self.dim {
            return Err(QcError::DimensionMismatch {
                expected: self.dim.pow(self.variance.len() as u32),
                found: t.data.len(),
            });
        }
        Ok(t)
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// A smooth function with an optional closed-form differential.
#[derive(Clone)]
pub struct ScalarField {
    name: Arc<str>,
    dim: usize,
    value: ScalarFn,
    gradient: Option<GradientFn>,
    domain: Domain,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish_non_exhaustive()
    }
}

impl ScalarField {
    pub fn new(
        name: &str,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: None,
            domain: everywhere(),
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_domain(mut self, domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Arc::new(domain);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(QcError::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        if !(self.domain)(p) {
            return Err(QcError::DomainViolation {
                field: self.name.to_string(),
                point: p.to_vec(),
            });
        }
        Ok(())
    }

    pub fn value_at(&self, p: &[f64]) -> Result<f64> {
        self.check(p)?;
        Ok((self.value)(p))
    }

    pub fn as_tensor_field(&self) -> TensorField {
        let this = self.clone();
        TensorField {
            name: self.name.clone(),
            dim: self.dim,
            variance: vec![],
            eval: Arc::new(move |p| Ok(Tensor::scalar(this.dim, (this.value)(p)))),
            domain: self.domain.clone(),
        }
    }

    /// `df` at `p`, closed form when available.
    pub fn differential_at(&self, p: &[f64], scheme: FdScheme) -> Result<DVector<f64>> {
        self.check(p)?;
        if let Some(g) = &self.gradient {
            return Ok(g(p));
        }
        let field = self.as_tensor_field();
        let parts = jacobian(&field, p, scheme)?;
        Ok(DVector::from_iterator(
            self.dim,
            parts.iter().map(|t| t.data[0]),
        ))
    }

    /// `df` as a covector field.
    pub fn differential(&self, scheme: FdScheme) -> TensorField {
        let this = self.clone();
        TensorField {
            name: format!("d{}", self.name).into(),
            dim: self.dim,
            variance: vec![Slot::Lower],
            eval: Arc::new(move |p| Ok(Tensor::covector(&this.differential_at(p, scheme)?))),
            domain: self.domain.clone(),
        }
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// `factor^2 * self`, keeping closed-form differentials when both have them.
    pub fn times_square(&self, factor: &ScalarField) -> ScalarField {
        let (a, b) = (self.clone(), factor.clone());
        let value = {
            let (a, b) = (a.clone(), b.clone());
            move |p: &[f64]| {
                let g = (b.value)(p);
                g * g * (a.value)(p)
            }
        };
        let da = self.domain.clone();
        let db = factor.domain.clone();
        let mut out =
            ScalarField::new(&format!("{}^2*{}", factor.name, self.name), self.dim, value)
                .with_domain(move |p| da(p) && db(p));
        if let (Some(ga), Some(gb)) = (a.gradient.clone(), b.gradient.clone()) {
            out = out.with_gradient(move |p| {
                let g = (b.value)(p);
                gb(p) * (2.0 * g * (a.value)(p)) + ga(p) * (g * g)
            });
        }
        out
    }
}

/// Finite-difference settings: central differences with base step
/// `step * max(1, |p|)` and optional Richardson extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdScheme {
    pub step: f64,
    pub richardson: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self {
            step: 1e-4,
            richardson: true,
        }
    }
}

impl FdScheme {
    pub fn new(step: f64, richardson: bool) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(QcError::InvalidParameter(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        Ok(Self { step, richardson })
    }

    pub fn effective_step(&self, p: &[f64]) -> f64 {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.step * norm.max(1.0)
    }
}

/// Directional derivative of a vector-valued map by central differences.
pub fn fd_apply(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    p: &[f64],
    dir: &[f64],
    scheme: FdScheme,
) -> Result<Vec<f64>> {
    let h = scheme.effective_step(p);
    let central = |h: f64| -> Result<Vec<f64>> {
        let plus: Vec<f64> = p.iter().zip(dir).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = p.iter().zip(dir).map(|(x, d)| x - h * d).collect();
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        Ok(fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect())
    };
    let coarse = central(h)?;
    if !scheme.richardson {
        return Ok(coarse);
    }
    let fine = central(h / 2.0)?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect())
}

/// Directional derivative `D_dir F (p)` of a tensor field.
pub fn fd_derivative(
    field: &TensorField,
    p: &[f64],
    dir: &[f64],
    scheme: FdScheme,
) -> Result<Tensor> {
    if dir.len() != field.dim {
        return Err(QcError::DimensionMismatch {
            expected: field.dim,
            found: dir.len(),
        });
    }
    let data = fd_apply(&|q| Ok(field.evaluate(q)?.data), p, dir, scheme)?;
    Tensor::new(field.dim, field.variance.clone(), data)
}

/// The coordinate partials `d_i F (p)` for `i = 0..m`.
pub fn jacobian(field: &TensorField, p: &[f64], scheme: FdScheme) -> Result<Vec<Tensor>> {
    let m = field.dim;
    (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            fd_derivative(field, p, &e, scheme)
        })
        .collect()
}

/// `(d eta)_{jk} = d_j eta_k - d_k eta_j`, so `d eta(X, Y) = X^T (d eta) Y`.
pub fn exterior_derivative_1form(
    eta: &TensorField,
    p: &[f64],
    scheme: FdScheme,
) -> Result<DMatrix<f64>> {
    if eta.variance != [Slot::Lower] {
        return Err(QcError::Unsupported("a covector field".into()));
    }
    let parts = jacobian(eta, p, scheme)?;
    let m = eta.dim;
    let d = DMatrix::from_fn(m, m, |j, k| parts[j].data[k]);
    Ok(&d - d.transpose())
}

type TripleEval = Arc<dyn Fn(&[f64]) -> Result<QuaternionTriple> + Send + Sync>;

/// Point-dependent quaternionic triple.
#[derive(Clone)]
pub struct TripleField {
    dim: usize,
    eval: TripleEval,
}

impl fmt::Debug for TripleField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TripleField")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl TripleField {
    pub fn constant(t: QuaternionTriple) -> Self {
        Self {
            dim: t.dim(),
            eval: Arc::new(move |_| Ok(t.clone())),
        }
    }

    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> Result<QuaternionTriple> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, p: &[f64]) -> Result<QuaternionTriple> {
        (self.eval)(p)
    }
}

type GammaFn = Arc<dyn Fn(&[f64]) -> Result<ConnectionDelta> + Send + Sync>;

/// Affine connection given by its Christoffel symbols `Gamma^k_{ij}` in the chart,
/// with `nabla_{d_i} d_j = Gamma^k_{ij} d_k`.
#[derive(Clone)]
pub struct Connection {
    name: Arc<str>,
    dim: usize,
    gamma: GammaFn,
    torsion_free: bool,
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("torsion_free", &self.torsion_free)
            .finish_non_exhaustive()
    }
}

impl Connection {
    pub fn new(
        name: &str,
        dim: usize,
        torsion_free: bool,
        gamma: impl Fn(&[f64]) -> Result<ConnectionDelta> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            gamma: Arc::new(gamma),
            torsion_free,
        }
    }

    /// The coordinate connection of the chart.
    pub fn flat(dim: usize) -> Self {
        Self::new("flat", dim, true, move |_| Ok(ConnectionDelta::zeros(dim)))
    }

    /// Levi-Civita connection of `metric`, evaluated by finite differences.
    pub fn levi_civita_of(metric: &TensorField, scheme: FdScheme) -> Self {
        let g = metric.clone();
        Self::new(
            &format!("levi-civita({})", metric.name()),
            metric.dim(),
            true,
            move |p| levi_civita(&g, p, scheme),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_torsion_free(&self) -> bool {
        self.torsion_free
    }

    /// Christoffel symbols at `p`; symmetry is validated when declared torsion-free.
    pub fn gamma_at(&self, p: &[f64]) -> Result<ConnectionDelta> {
        if p.len() != self.dim {
            return Err(QcError::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        let g = (self.gamma)(p)?;
        if self.torsion_free {
            let t = g.symmetry_residual();
            if t > 1e-10 * g.max_abs().max(1.0) {
                return Err(QcError::UnexpectedTorsion(t));
            }
        }
        Ok(g)
    }

    /// `self + delta` for a field of difference tensors.
    pub fn plus_delta(
        &self,
        name: &str,
        torsion_free: bool,
        delta: impl Fn(&[f64]) -> Result<ConnectionDelta> + Send + Sync + 'static,
    ) -> Self {
        let base = self.gamma.clone();
        Self::new(name, self.dim, torsion_free, move |p| {
            Ok(&base(p)? + &delta(p)?)
        })
    }

    /// `self + a^theta` with `theta` a covector field and the triple taken pointwise.
    pub fn plus_a_theta(&self, theta: &TensorField, triple: &TripleField) -> Self {
        let (theta, triple) = (theta.clone(), triple.clone());
        let name = format!("{}+a^{}", self.name, theta.name());
        self.plus_delta(&name, self.torsion_free, move |p| {
            a_theta_at(&theta, &triple, p)
        })
    }
}

fn a_theta_at(theta: &TensorField, triple: &TripleField, p: &[f64]) -> Result<ConnectionDelta> {
    let th = theta.evaluate(p)?.to_vector()?;
    quatlin::a_theta(&th, &triple.at(p)?)
}

/// `Gamma` at `p` for the Levi-Civita connection of `metric`.
pub fn levi_civita(metric: &TensorField, p: &[f64], scheme: FdScheme) -> Result<ConnectionDelta> {
    let m = metric.dim();
    let g = metric.evaluate(p)?.to_matrix()?;
    let ginv = g.try_inverse().ok_or(QcError::Singular("metric"))?;
    let dg: Vec<DMatrix<f64>> = jacobian(metric, p, scheme)?
        .iter()
        .map(|t| t.to_matrix())
        .collect::<Result<_>>()?;
    // lowered[(l, i, j)] = d_i g_jl + d_j g_il - d_l g_ij
    let mut lowered = vec![0.0; m * m * m];
    for l in 0..m {
        for i in 0..m {
            for j in 0..m {
                lowered[(l * m + i) * m + j] = dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)];
            }
        }
    }
    Ok(ConnectionDelta::from_fn(m, |k, i, j| {
        0.5 * (0..m)
            .map(|l| ginv[(k, l)] * lowered[(l * m + i) * m + j])
            .sum::<f64>()
    }))
}

/// Max over `k, i, j` of `|d_k g_ij - g(nabla_k d_i, d_j) - g(d_i, nabla_k d_j)|`.
pub fn metric_compatibility_residual(
    metric: &TensorField,
    gamma: &ConnectionDelta,
    p: &[f64],
    scheme: FdScheme,
) -> Result<f64> {
    let m = metric.dim();
    let g = metric.evaluate(p)?.to_matrix()?;
    let dg = jacobian(metric, p, scheme)?;
    let mut worst = 0.0_f64;
    for (k, dgk) in dg.iter().enumerate() {
        let dgk = dgk.to_matrix()?;
        for i in 0..m {
            for j in 0..m {
                let mut r = dgk[(i, j)];
                for l in 0..m {
                    r -= gamma.get(l, k, i) * g[(l, j)] + gamma.get(l, k, j) * g[(i, l)];
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// Torsion `T^k_{ij} = Gamma^k_{ij} - Gamma^k_{ji}` at `p`.
pub fn torsion_of(conn: &Connection, p: &[f64]) -> Result<ConnectionDelta> {
    Ok(quatlin::torsion_map(&(conn.gamma)(p)?))
}

/// Covariant Hessian with the antisymmetric part it had before symmetrization.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub value: DMatrix<f64>,
    pub asymmetry: f64,
}

/// `nabla df` at `p` for the connection with Christoffel symbols `gamma` there.
pub fn hessian_with_gamma(
    gamma: &ConnectionDelta,
    f: &ScalarField,
    p: &[f64],
    scheme: FdScheme,
) -> Result<Hessian> {
    let m = f.dim();
    let df_field = f.differential(scheme);
    let parts = jacobian(&df_field, p, scheme)?;
    let df = f.differential_at(p, scheme)?;
    let raw = DMatrix::from_fn(m, m, |i, j| parts[i].data[j]) - gamma.contract_covector(&df);
    let asymmetry = linalg::max_abs(&(&raw - raw.transpose()));
    if asymmetry > 1e-6 * linalg::max_abs(&raw).max(1.0) {
        return Err(QcError::AsymmetricHessian(asymmetry));
    }
    Ok(Hessian {
        value: linalg::symmetrize(&raw),
        asymmetry,
    })
}

/// `nabla df (X, Y) = X(Y f) - (nabla_X Y) f` at `p`.
pub fn hessian(conn: &Connection, f: &ScalarField, p: &[f64], scheme: FdScheme) -> Result<Hessian> {
    if !conn.is_torsion_free() {
        return Err(QcError::Unsupported(
            "a torsion-free connection for the covariant hessian".into(),
        ));
    }
    hessian_with_gamma(&conn.gamma_at(p)?, f, p, scheme)
}

/// Curvature `R^l_{kij}` with `R(d_i, d_j) d_k = R^l_{kij} d_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    dim: usize,
    data: Vec<f64>,
}

impl Curvature {
    /// From the matrices `(R_{ij})^l_k`, indexed `i * m + j`.
    fn from_matrices(dim: usize, mats: &[DMatrix<f64>]) -> Self {
        let m = dim;
        let mut data = vec![0.0; m * m * m * m];
        for i in 0..m {
            for j in 0..m {
                let r = &mats[i * m + j];
                for l in 0..m {
                    for k in 0..m {
                        data[((l * m + k) * m + i) * m + j] = r[(l, k)];
                    }
                }
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, l: usize, k: usize, i: usize, j: usize) -> f64 {
        let m = self.dim;
        self.data[((l * m + k) * m + i) * m + j]
    }

    /// `R(X, Y) Z`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let m = self.dim;
        DVector::from_fn(m, |l, _| {
            let mut s = 0.0;
            for k in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        s += self.get(l, k, i, j) * x[i] * y[j] * z[k];
                    }
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Max of `|R^l_{kij} + R^l_{ijk} + R^l_{jki}|`.
    pub fn bianchi_residual(&self) -> f64 {
        let m = self.dim;
        let mut worst = 0.0_f64;
        for l in 0..m {
            for k in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        let s = self.get(l, k, i, j) + self.get(l, i, j, k) + self.get(l, j, k, i);
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }

    /// `g(R(X, Y) Y, X) / (g(X, X) g(Y, Y) - g(X, Y)^2)`.
    pub fn sectional(&self, g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * g * b)[(0, 0)];
        let r = self.apply(x, y, y);
        ip(&r, x) / (ip(x, x) * ip(y, y) - ip(x, y).powi(2))
    }
}

fn gamma_partials(
    gamma: &dyn Fn(&[f64]) -> Result<ConnectionDelta>,
    p: &[f64],
    scheme: FdScheme,
) -> Result<Vec<ConnectionDelta>> {
    let m = p.len();
    (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let d = fd_apply(&|q| Ok(gamma(q)?.as_slice().to_vec()), p, &e, scheme)?;
            ConnectionDelta::from_vec(m, d)
        })
        .collect()
}

fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// `R_{ij} = d_i Gamma_j - d_j Gamma_i + [Gamma_i, Gamma_j]` with `(Gamma_i)^k_l = Gamma^k_{il}`.
pub fn curvature(conn: &Connection, p: &[f64], scheme: FdScheme) -> Result<Curvature> {
    let m = conn.dim();
    let g = conn.gamma_at(p)?;
    let dg = gamma_partials(&*conn.gamma, p, scheme)?;
    let gm: Vec<DMatrix<f64>> = (0..m).map(|i| g.direction_matrix(i)).collect();
    let dgm: Vec<DMatrix<f64>> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| dg[i].direction_matrix(j))
        .collect();
    let mats: Vec<DMatrix<f64>> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| &dgm[i * m + j] - &dgm[j * m + i] + commutator(&gm[i], &gm[j]))
        .collect();
    Ok(Curvature::from_matrices(m, &mats))
}

/// Both sides of `R^{nabla + a} = R^nabla + d^nabla a + [a, a]` for `a = a^theta`,
/// evaluated by separate finite-difference pipelines; returns the max-norm gap.
pub fn curvature_comparison(
    conn: &Connection,
    theta: &TensorField,
    triple: &TripleField,
    p: &[f64],
    scheme: FdScheme,
) -> Result<f64> {
    let m = conn.dim();
    let left = curvature(&conn.plus_a_theta(theta, triple), p, scheme)?;
    let base = curvature(conn, p, scheme)?;

    let g = conn.gamma_at(p)?;
    let a = a_theta_at(theta, triple, p)?;
    let da = gamma_partials(&|q| a_theta_at(theta, triple, q), p, scheme)?;
    let gm: Vec<DMatrix<f64>> = (0..m).map(|i| g.direction_matrix(i)).collect();
    let am: Vec<DMatrix<f64>> = (0..m).map(|i| a.direction_matrix(i)).collect();
    let mut mats = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let cov = da[i].direction_matrix(j) - da[j].direction_matrix(i)
                + commutator(&gm[i], &am[j])
                - commutator(&gm[j], &am[i]);
            mats.push(cov + commutator(&am[i], &am[j]));
        }
    }
    let correction = Curvature::from_matrices(m, &mats);
    let mut worst = 0.0_f64;
    for (idx, v) in left.data.iter().enumerate() {
        worst = worst.max((v - base.data[idx] - correction.data[idx]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quatlin::standard_triple;

    fn rho() -> ScalarField {
        ScalarField::new("rho", 4, |x| 1.0 - x.iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn central_differences_are_exact_on_quadratics() {
        let f = ScalarField::new("x0^2", 3, |x| x[0] * x[0]).as_tensor_field();
        let p = [0.3, -1.2, 2.0];
        let d = fd_derivative(&f, &p, &[1.0, 0.0, 0.0], FdScheme::default()).unwrap();
        assert!((d.data()[0] - 0.6).abs() < 1e-10);
        let r = rho();
        let q = [0.1, 0.2, -0.3, 0.4];
        let dr = r.differential_at(&q, FdScheme::default()).unwrap();
        for k in 0..4 {
            assert!((dr[k] + 2.0 * q[k]).abs() < 1e-10);
        }
        let c = ScalarField::new("one", 2, |_| 1.0).as_tensor_field();
        let d = fd_derivative(&c, &[0.5, 0.5], &[0.3, 0.7], FdScheme::default()).unwrap();
        assert_eq!(d.data()[0], 0.0);
    }

    #[test]
    fn stencil_outside_domain_is_reported() {
        let f = ScalarField::new("f", 1, |x| x[0]).with_domain(|x| x[0] > 0.0);
        let err = fd_derivative(&f.as_tensor_field(), &[1e-6], &[1.0], FdScheme::default());
        assert!(matches!(err, Err(QcError::DomainViolation { .. })));
    }

    #[test]
    fn two_form_convention() {
        // eta = x0 dx1 has d eta = dx0 ^ dx1 with (d eta)(e0, e1) = 1
        let eta = TensorField::covector("x0 dx1", 2, |x| Ok(DVector::from_vec(vec![0.0, x[0]])));
        let d = exterior_derivative_1form(&eta, &[0.4, -0.2], FdScheme::default()).unwrap();
        assert!((d[(0, 1)] - 1.0).abs() < 1e-10);
        assert!((d[(1, 0)] + 1.0).abs() < 1e-10);
        assert!(d[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn d_of_exact_form_vanishes() {
        let f = ScalarField::new("f", 3, |x| (x[0] * x[1]).sin() + x[2].exp() * x[0]);
        let scheme = FdScheme::default();
        let d =
            exterior_derivative_1form(&f.differential(scheme), &[0.3, 0.5, -0.2], scheme).unwrap();
        assert!(linalg::max_abs(&d) < 1e-7);
    }

    #[test]
    fn flat_hessians() {
        let flat = Connection::flat(4);
        let p = [0.1, -0.3, 0.2, 0.5];
        let h = hessian(&flat, &rho(), &p, FdScheme::default()).unwrap();
        assert!(linalg::max_abs(&(h.value + DMatrix::identity(4, 4) * 2.0)) < 1e-6);
        let analytic =
            rho().with_gradient(|x| DVector::from_iterator(4, x.iter().map(|v| -2.0 * v)));
        let h = hessian(&flat, &analytic, &p, FdScheme::default()).unwrap();
        assert!(linalg::max_abs(&(h.value + DMatrix::identity(4, 4) * 2.0)) < 1e-10);
        let lin = ScalarField::new("lin", 4, |x| 2.0 * x[0] - x[3]);
        let h = hessian(&flat, &lin, &p, FdScheme::default()).unwrap();
        assert!(linalg::max_abs(&h.value) < 1e-6);
    }

    #[test]
    fn hessian_with_a_theta_matches_expansion() {
        let t = standard_triple(0);
        let th = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.2]);
        let a = quatlin::a_theta(&th, &t).unwrap();
        let cst = a.clone();
        let conn = Connection::flat(4).plus_delta("a", true, move |_| Ok(cst.clone()));
        let p = [0.1, 0.2, -0.4, 0.3];
        let f = rho().with_gradient(|x| DVector::from_iterator(4, x.iter().map(|v| -2.0 * v)));
        let h = hessian(&conn, &f, &p, FdScheme::default()).unwrap();
        let df = DVector::from_iterator(4, p.iter().map(|x| -2.0 * x));
        let expect = DMatrix::identity(4, 4) * -2.0 - a.contract_covector(&df);
        assert!(linalg::max_abs(&(h.value - expect)) < 1e-8);
    }

    #[test]
    fn torsionful_connection_is_rejected_for_hessian() {
        let mut d = ConnectionDelta::zeros(4);
        d.set(1, 0, 1, 1.0);
        let conn = Connection::flat(4).plus_delta("twisted", false, move |_| Ok(d.clone()));
        let t = torsion_of(&conn, &[0.0; 4]).unwrap();
        assert_eq!(t.get(1, 0, 1), 1.0);
        assert_eq!(t.get(1, 1, 0), -1.0);
        assert!(hessian(&conn, &rho(), &[0.0; 4], FdScheme::default()).is_err());
    }

    #[test]
    fn conformally_flat_christoffels() {
        let g = TensorField::bilinear("e^{2x0} euc", 2, |x| {
            Ok(DMatrix::identity(2, 2) * (2.0 * x[0]).exp())
        });
        let p = [0.2, -0.4];
        let gam = levi_civita(&g, &p, FdScheme::default()).unwrap();
        assert!((gam.get(0, 0, 0) - 1.0).abs() < 1e-8);
        assert!((gam.get(1, 0, 1) - 1.0).abs() < 1e-8);
        assert!((gam.get(0, 1, 1) + 1.0).abs() < 1e-8);
        assert!(gam.get(1, 1, 1).abs() < 1e-8);
        assert!(metric_compatibility_residual(&g, &gam, &p, FdScheme::default()).unwrap() < 1e-6);
        let cst = TensorField::bilinear("c", 3, |_| Ok(DMatrix::identity(3, 3) * 2.0));
        assert!(
            levi_civita(&cst, &[1.0, 2.0, 3.0], FdScheme::default())
                .unwrap()
                .max_abs()
                < 1e-12
        );
    }

    #[test]
    fn round_sphere_has_unit_curvature() {
        let g = TensorField::bilinear("round", 2, |x| {
            let s = 1.0 + x[0] * x[0] + x[1] * x[1];
            Ok(DMatrix::identity(2, 2) * (4.0 / (s * s)))
        });
        let scheme = FdScheme::new(1e-3, true).unwrap();
        let conn = Connection::levi_civita_of(&g, scheme);
        let p = [0.3, -0.5];
        let r = curvature(&conn, &p, scheme).unwrap();
        let gm = g.evaluate(&p).unwrap().to_matrix().unwrap();
        let e0 = DVector::from_vec(vec![1.0, 0.0]);
        let e1 = DVector::from_vec(vec![0.0, 1.0]);
        assert!((r.sectional(&gm, &e0, &e1) - 1.0).abs() < 1e-6);
        assert!(r.bianchi_residual() < 1e-5);
    }

    #[test]
    fn flat_curvature_and_comparison() {
        let t = TripleField::constant(standard_triple(0));
        let flat = Connection::flat(4);
        let p = [0.1, 0.2, 0.3, -0.1];
        assert_eq!(
            curvature(&flat, &p, FdScheme::default()).unwrap().max_abs(),
            0.0
        );
        let zero = TensorField::covector("0", 4, |_| Ok(DVector::zeros(4)));
        assert_eq!(
            curvature_comparison(&flat, &zero, &t, &p, FdScheme::default()).unwrap(),
            0.0
        );
        let cst =
            TensorField::covector("c", 4, |_| Ok(DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3])));
        assert!(curvature_comparison(&flat, &cst, &t, &p, FdScheme::default()).unwrap() < 1e-6);
    }
}

//! Quaternionic linear algebra at a single tangent space.
//!
//! Vectors use the coordinate order `(1, i, j, k)` in each quaternionic
//! block. Endomorphisms act on covectors by `(I beta)(X) = beta(I X)`, so in
//! components `I beta = I^T beta`; this reverses composition order.

use nalgebra::{DMatrix, DVector};

use crate::error::{QcError, Result};
use crate::linalg;

/// Residual allowed in the quaternion relations of a validated triple.
pub const TRIPLE_TOL: f64 = 1e-10;

fn right_mult() -> [DMatrix<f64>; 3] {
    // columns are the images of 1, i, j, k under q -> q * unit
    let ri = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 1., 0., 0., -1., 0., 0., 0., 0., 0., 0., -1., 0., 0., 1., 0.,
        ],
    );
    let rj = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 0., 1., 0., 0., 0., 0., 1., -1., 0., 0., 0., 0., -1., 0., 0.,
        ],
    );
    let rk = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 0., 0., 1., 0., 0., -1., 0., 0., 1., 0., 0., -1., 0., 0., 0.,
        ],
    );
    [ri, rj, rk]
}

fn left_mult() -> [DMatrix<f64>; 3] {
    let li = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 1., 0., 0., -1., 0., 0., 0., 0., 0., 0., 1., 0., 0., -1., 0.,
        ],
    );
    let lj = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 0., 1., 0., 0., 0., 0., -1., -1., 0., 0., 0., 0., 1., 0., 0.,
        ],
    );
    let lk = DMatrix::from_column_slice(
        4,
        4,
        &[
            0., 0., 0., 1., 0., 0., 1., 0., 0., -1., 0., 0., -1., 0., 0., 0.,
        ],
    );
    [li, lj, lk]
}

fn block_diagonal(block: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let b = block.nrows();
    let mut out = DMatrix::zeros(b * copies, b * copies);
    for c in 0..copies {
        out.view_mut((c * b, c * b), (b, b)).copy_from(block);
    }
    out
}

/// Three endomorphisms with `I_k^2 = -1` and `I_1 I_2 = I_3 = -I_2 I_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionTriple {
    ops: [DMatrix<f64>; 3],
}

impl QuaternionTriple {
    /// Validates shapes and the quaternion relations.
    pub fn new(i1: DMatrix<f64>, i2: DMatrix<f64>, i3: DMatrix<f64>) -> Result<Self> {
        let m = i1.nrows();
        for op in [&i1, &i2, &i3] {
            if op.nrows() != m || op.ncols() != m {
                return Err(QcError::DimensionMismatch {
                    expected: m,
                    found: op.ncols().max(op.nrows()),
                });
            }
        }
        if m == 0 || !m.is_multiple_of(4) {
            return Err(QcError::InvalidParameter(format!(
                "triple dimension {m} is not a positive multiple of 4"
            )));
        }
        let triple = Self { ops: [i1, i2, i3] };
        let res = triple.relation_residual();
        if !(res <= TRIPLE_TOL) {
            return Err(QcError::InvalidTriple(res));
        }
        Ok(triple)
    }

    pub fn dim(&self) -> usize {
        self.ops[0].nrows()
    }

    /// `k` in `0..3` selects `I_1, I_2, I_3`.
    pub fn op(&self, k: usize) -> &DMatrix<f64> {
        &self.ops[k]
    }

    pub fn ops(&self) -> &[DMatrix<f64>; 3] {
        &self.ops
    }

    /// Max-norm residual of `I_k^2 = -1`, `I_1 I_2 = I_3`, `I_2 I_1 = -I_3`.
    pub fn relation_residual(&self) -> f64 {
        let id = DMatrix::<f64>::identity(self.dim(), self.dim());
        let [a, b, c] = &self.ops;
        [
            linalg::max_abs(&(a * a + &id)),
            linalg::max_abs(&(b * b + &id)),
            linalg::max_abs(&(c * c + &id)),
            linalg::max_abs(&(a * b - c)),
            linalg::max_abs(&(b * a + c)),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Max-norm residual of skew-symmetry with respect to the standard inner product.
    pub fn skew_residual(&self) -> f64 {
        self.ops
            .iter()
            .map(|op| linalg::max_abs(&(op + op.transpose())))
            .fold(0.0, f64::max)
    }

    pub fn is_euc_skew(&self, tol: f64) -> bool {
        self.skew_residual() <= tol
    }

    /// The triple `P^{-1} I_k P`.
    pub fn conjugated(&self, p: &DMatrix<f64>, p_inv: &DMatrix<f64>) -> Result<Self> {
        let [a, b, c] = &self.ops;
        Self::new(p_inv * a * p, p_inv * b * p, p_inv * c * p)
    }

    /// Matrices of the triple on the span of `basis` (columns), expressed in
    /// that basis, together with the max residual of `I_k basis` leaving the span.
    pub fn restricted(&self, basis: &DMatrix<f64>) -> Result<(Self, f64)> {
        if basis.nrows() != self.dim() {
            return Err(QcError::DimensionMismatch {
                expected: self.dim(),
                found: basis.nrows(),
            });
        }
        let mut mats = Vec::with_capacity(3);
        let mut worst = 0.0_f64;
        for op in &self.ops {
            let (x, r) = linalg::lstsq_mat(basis, &(op * basis));
            worst = worst.max(r);
            mats.push(x);
        }
        let mut it = mats.into_iter();
        let t = Self::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap())?;
        Ok((t, worst))
    }

    /// Action on a covector, `(I_k beta)(X) = beta(I_k X)`.
    pub fn act_on_covector(&self, k: usize, beta: &DVector<f64>) -> DVector<f64> {
        self.ops[k].transpose() * beta
    }
}

/// Blockwise right multiplication on `H^{n+1} = R^{4(n+1)}`.
///
/// `I_1 = R_i`, `I_2 = R_j`, `I_3 = -R_k`: right multiplications compose in
/// reverse order, so the sign on the third operator is what makes
/// `I_1 I_2 = I_3` hold.
pub fn standard_triple(n: usize) -> QuaternionTriple {
    let [ri, rj, rk] = right_mult();
    QuaternionTriple {
        ops: [
            block_diagonal(&ri, n + 1),
            block_diagonal(&rj, n + 1),
            block_diagonal(&(-rk), n + 1),
        ],
    }
}

/// Left multiplication by `i, j, k` on `H = R^4`.
pub fn left_triple() -> QuaternionTriple {
    QuaternionTriple { ops: left_mult() }
}

/// A trilinear array `a^k_{ij}` with `a_X Y = sum a^k_{ij} X^i Y^j e_k`.
///
/// Christoffel symbols of a connection in a chart are stored the same way,
/// as the difference from the coordinate-flat connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionDelta {
    dim: usize,
    coeffs: Vec<f64>,
}

impl ConnectionDelta {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coeffs: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut coeffs = Vec::with_capacity(dim * dim * dim);
        for k in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    coeffs.push(f(k, i, j));
                }
            }
        }
        Self { dim, coeffs }
    }

    pub fn from_vec(dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != dim * dim * dim {
            return Err(QcError::DimensionMismatch {
                expected: dim * dim * dim,
                found: coeffs.len(),
            });
        }
        Ok(Self { dim, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.dim + i) * self.dim + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.coeffs[self.idx(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let at = self.idx(k, i, j);
        self.coeffs[at] = v;
    }

    /// `a_X Y`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let m = self.dim;
        DVector::from_fn(m, |k, _| {
            let mut s = 0.0;
            for i in 0..m {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    s += self.get(k, i, j) * x[i] * y[j];
                }
            }
            s
        })
    }

    /// The endomorphism `a_{e_i}` as a matrix, `(a_i)^k_l = a^k_{il}`.
    pub fn direction_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |k, l| self.get(k, i, l))
    }

    /// The bilinear form `beta(a_X Y)`.
    pub fn contract_covector(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim;
        DMatrix::from_fn(m, m, |i, j| {
            (0..m).map(|k| beta[k] * self.get(k, i, j)).sum()
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Max-norm distance to another array of the same dimension.
    pub fn distance(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|v| v * s).collect(),
        }
    }

    pub fn symmetry_residual(&self) -> f64 {
        torsion_map(self).max_abs()
    }
}

impl std::ops::Add for &ConnectionDelta {
    type Output = ConnectionDelta;
    fn add(self, rhs: &ConnectionDelta) -> ConnectionDelta {
        assert_eq!(self.dim, rhs.dim, "connection delta dimension mismatch");
        ConnectionDelta {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl std::ops::Sub for &ConnectionDelta {
    type Output = ConnectionDelta;
    fn sub(self, rhs: &ConnectionDelta) -> ConnectionDelta {
        assert_eq!(self.dim, rhs.dim, "connection delta dimension mismatch");
        ConnectionDelta {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// `a^theta_X Y = theta(X) Y + theta(Y) X - sum_s (theta(I_s X) I_s Y + theta(I_s Y) I_s X)`.
pub fn a_theta(theta: &DVector<f64>, triple: &QuaternionTriple) -> Result<ConnectionDelta> {
    let m = triple.dim();
    if theta.len() != m {
        return Err(QcError::DimensionMismatch {
            expected: m,
            found: theta.len(),
        });
    }
    let rotated: Vec<DVector<f64>> = (0..3).map(|s| triple.act_on_covector(s, theta)).collect();
    Ok(ConnectionDelta::from_fn(m, |k, i, j| {
        let mut v = 0.0;
        if k == j {
            v += theta[i];
        }
        if k == i {
            v += theta[j];
        }
        for (s, t) in rotated.iter().enumerate() {
            let op = triple.op(s);
            v -= t[i] * op[(k, j)] + t[j] * op[(k, i)];
        }
        v
    }))
}

/// The linear map `theta -> a^theta` as an `m^3 x m` matrix.
pub fn a_theta_matrix(triple: &QuaternionTriple) -> DMatrix<f64> {
    let m = triple.dim();
    let mut out = DMatrix::zeros(m * m * m, m);
    for c in 0..m {
        let mut e = DVector::zeros(m);
        e[c] = 1.0;
        let a = a_theta(&e, triple).expect("dimension matches by construction");
        out.set_column(c, &DVector::from_column_slice(a.as_slice()));
    }
    out
}

/// Least-squares inverse of `theta -> a^theta`; returns the covector and the fit residual.
pub fn recover_theta(delta: &ConnectionDelta, triple: &QuaternionTriple) -> (DVector<f64>, f64) {
    let a = a_theta_matrix(triple);
    linalg::lstsq(&a, &DVector::from_column_slice(delta.as_slice()))
}

/// `(da)(X, Y) = a_X Y - a_Y X`.
pub fn torsion_map(delta: &ConnectionDelta) -> ConnectionDelta {
    ConnectionDelta::from_fn(delta.dim(), |k, i, j| {
        delta.get(k, i, j) - delta.get(k, j, i)
    })
}

/// `sum_i beta_i (x) I_i`, an `sp(1)`-valued 1-form on `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp1Valued1Form {
    pub beta: [DVector<f64>; 3],
}

impl Sp1Valued1Form {
    pub fn zeros(dim: usize) -> Self {
        Self {
            beta: [
                DVector::zeros(dim),
                DVector::zeros(dim),
                DVector::zeros(dim),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta[0].len()
    }

    pub fn max_abs(&self) -> f64 {
        self.beta
            .iter()
            .map(linalg::max_abs_vec)
            .fold(0.0, f64::max)
    }

    pub fn inner(&self, other: &Self) -> f64 {
        (0..3).map(|i| self.beta[i].dot(&other.beta[i])).sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            beta: [
                &self.beta[0] - &other.beta[0],
                &self.beta[1] - &other.beta[1],
                &self.beta[2] - &other.beta[2],
            ],
        }
    }
}

/// `theta -> sum_i (theta o I_i) (x) I_i`.
pub fn sp1_embed(theta: &DVector<f64>, triple: &QuaternionTriple) -> Result<Sp1Valued1Form> {
    if theta.len() != triple.dim() {
        return Err(QcError::DimensionMismatch {
            expected: triple.dim(),
            found: theta.len(),
        });
    }
    Ok(Sp1Valued1Form {
        beta: [0, 1, 2].map(|i| triple.act_on_covector(i, theta)),
    })
}

/// Splits `q` into its embedded `Lambda^1` part and the orthogonal remainder.
pub fn sp1_project_lambda1(
    q: &Sp1Valued1Form,
    triple: &QuaternionTriple,
) -> Result<(DVector<f64>, Sp1Valued1Form)> {
    if q.dim() != triple.dim() {
        return Err(QcError::DimensionMismatch {
            expected: triple.dim(),
            found: q.dim(),
        });
    }
    let mut theta = DVector::zeros(q.dim());
    for i in 0..3 {
        theta += triple.act_on_covector(i, &q.beta[i]);
    }
    theta *= -1.0 / 3.0;
    let q3 = q.sub(&sp1_embed(&theta, triple)?);
    Ok((theta, q3))
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn pair_slot(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => panic!("sp(1) index out of range: ({i}, {j})"),
    }
}

/// `sum a_{ij} (x) I_i (x) I_j` with `a_{ij} = a_{ji}`; only the upper triangle is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp1SymTensor {
    entries: [DVector<f64>; 6],
}

impl Sp1SymTensor {
    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: std::array::from_fn(|_| DVector::zeros(dim)),
        }
    }

    /// Builds from the upper triangle `i <= j` of `f`.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> DVector<f64>) -> Self {
        Self {
            entries: PAIRS.map(|(i, j)| f(i, j)),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    pub fn get(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.entries[pair_slot(i, j)]
    }

    /// All nine entries, row-major over `(i, j)`, concatenated.
    pub fn to_flat(&self) -> DVector<f64> {
        let k = self.dim();
        let mut out = DVector::zeros(9 * k);
        for i in 0..3 {
            for j in 0..3 {
                out.rows_mut((3 * i + j) * k, k).copy_from(self.get(i, j));
            }
        }
        out
    }

    /// Inverse of [`Self::to_flat`]; the two halves of each symmetric pair are averaged.
    pub fn from_flat(dim: usize, v: &DVector<f64>) -> Self {
        Self::from_fn(|i, j| {
            let a = v.rows((3 * i + j) * dim, dim);
            let b = v.rows((3 * j + i) * dim, dim);
            (a + b) * 0.5
        })
    }

    /// `sum_{ij} <a_{ij}, b_{ij}>` over all nine pairs.
    pub fn inner(&self, other: &Self) -> f64 {
        self.to_flat().dot(&other.to_flat())
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .map(linalg::max_abs_vec)
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            entries: std::array::from_fn(|s| &self.entries[s] - &other.entries[s]),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            entries: std::array::from_fn(|s| &self.entries[s] + &other.entries[s]),
        }
    }
}

/// Max over `i` of `|sum_j I_j a_{ij}|`, the defining constraint of the `sigma^5` component.
pub fn sigma5_constraint_residual(t: &Sp1SymTensor, triple: &QuaternionTriple) -> f64 {
    (0..3)
        .map(|i| {
            let mut acc = DVector::zeros(t.dim());
            for j in 0..3 {
                acc += triple.act_on_covector(j, t.get(i, j));
            }
            linalg::max_abs_vec(&acc)
        })
        .fold(0.0, f64::max)
}

/// The three summands of `H^* (x) S^2 sp(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sp1Component {
    /// `a_{ij} = delta_{ij} r`
    Sigma1,
    /// `a_{ij} = I_i r_j + I_j r_i` with `sum_i I_i r_i = 0`
    Sigma3,
    /// symmetric `a` with `sum_j I_j a_{ij} = 0`
    Sigma5,
}

impl Sp1Component {
    pub fn expected_dim(self, h_dim: usize) -> usize {
        match self {
            Sp1Component::Sigma1 => h_dim,
            Sp1Component::Sigma3 => 2 * h_dim,
            Sp1Component::Sigma5 => 3 * h_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sp1Components {
    pub sigma1: Sp1SymTensor,
    pub sigma3: Sp1SymTensor,
    pub sigma5: Sp1SymTensor,
}

/// Orthonormal bases of the three summands for one triple on `H`.
#[derive(Debug, Clone)]
pub struct Sp1SymDecomposition {
    triple: QuaternionTriple,
    bases: [DMatrix<f64>; 3],
    joint: DMatrix<f64>,
}

impl Sp1SymDecomposition {
    pub fn new(triple: &QuaternionTriple) -> Result<Self> {
        let k = triple.dim();
        let flat = |t: &Sp1SymTensor| t.to_flat();

        let mut s1 = Vec::with_capacity(k);
        for b in 0..k {
            let mut e = DVector::zeros(k);
            e[b] = 1.0;
            s1.push(flat(&Sp1SymTensor::from_fn(|i, j| {
                if i == j {
                    e.clone()
                } else {
                    DVector::zeros(k)
                }
            })));
        }

        // (r_1, r_2, r_3) with sum_i I_i r_i = 0
        let mut constraint = DMatrix::zeros(k, 3 * k);
        for i in 0..3 {
            constraint
                .view_mut((0, i * k), (k, k))
                .copy_from(&triple.op(i).transpose());
        }
        let params = linalg::nullspace(&constraint, 1e-12);
        let mut s3 = Vec::with_capacity(params.ncols());
        for c in 0..params.ncols() {
            let r: Vec<DVector<f64>> = (0..3)
                .map(|i| params.column(c).rows(i * k, k).into_owned())
                .collect();
            s3.push(flat(&Sp1SymTensor::from_fn(|i, j| {
                triple.act_on_covector(i, &r[j]) + triple.act_on_covector(j, &r[i])
            })));
        }

        // symmetric unknowns in the upper-triangle order, constraint per i
        let mut sym = DMatrix::zeros(3 * k, 6 * k);
        for i in 0..3 {
            for j in 0..3 {
                let slot = pair_slot(i, j);
                sym.view_mut((i * k, slot * k), (k, k))
                    .copy_from(&triple.op(j).transpose());
            }
        }
        let free = linalg::nullspace(&sym, 1e-12);
        let mut s5 = Vec::with_capacity(free.ncols());
        for c in 0..free.ncols() {
            let col = free.column(c);
            s5.push(flat(&Sp1SymTensor {
                entries: std::array::from_fn(|s| col.rows(s * k, k).into_owned()),
            }));
        }

        let mut bases = Vec::with_capacity(3);
        for (span, kind) in [
            (s1, Sp1Component::Sigma1),
            (s3, Sp1Component::Sigma3),
            (s5, Sp1Component::Sigma5),
        ] {
            let what = match kind {
                Sp1Component::Sigma1 => "sigma1 spanning set",
                Sp1Component::Sigma3 => "sigma3 spanning set",
                Sp1Component::Sigma5 => "sigma5 spanning set",
            };
            let expected = kind.expected_dim(k);
            if span.is_empty() {
                return Err(QcError::RankDefect {
                    what,
                    rank: 0,
                    expected,
                });
            }
            let q = linalg::column_space(&DMatrix::from_columns(&span), 1e-10);
            if q.ncols() != expected {
                return Err(QcError::RankDefect {
                    what,
                    rank: q.ncols(),
                    expected,
                });
            }
            bases.push(q);
        }
        let joint = DMatrix::from_columns(
            &bases
                .iter()
                .flat_map(|b| b.column_iter().map(|c| c.into_owned()))
                .collect::<Vec<_>>(),
        );
        let rank = linalg::rank(&joint, 1e-10);
        if rank != 6 * k {
            return Err(QcError::RankDefect {
                what: "sp(1) decomposition",
                rank,
                expected: 6 * k,
            });
        }
        let mut it = bases.into_iter();
        Ok(Self {
            triple: triple.clone(),
            bases: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
            joint,
        })
    }

    pub fn triple(&self) -> &QuaternionTriple {
        &self.triple
    }

    /// Orthonormal basis (columns, flattened tensors) of one summand.
    pub fn basis(&self, which: Sp1Component) -> &DMatrix<f64> {
        match which {
            Sp1Component::Sigma1 => &self.bases[0],
            Sp1Component::Sigma3 => &self.bases[1],
            Sp1Component::Sigma5 => &self.bases[2],
        }
    }

    /// Max-norm distance of `t` from the summand `which`.
    pub fn membership_residual(&self, which: Sp1Component, t: &Sp1SymTensor) -> f64 {
        let q = self.basis(which);
        let v = t.to_flat();
        linalg::max_abs_vec(&(&v - q * (q.transpose() * &v)))
    }

    /// Rows of [`Self::coordinates`] belonging to the summand `which`.
    pub fn coordinate_range(&self, which: Sp1Component) -> std::ops::Range<usize> {
        let (d1, d3) = (self.bases[0].ncols(), self.bases[1].ncols());
        match which {
            Sp1Component::Sigma1 => 0..d1,
            Sp1Component::Sigma3 => d1..d1 + d3,
            Sp1Component::Sigma5 => d1 + d3..d1 + d3 + self.bases[2].ncols(),
        }
    }

    /// Coordinates along the concatenated summand bases of each column of
    /// `flats` (flattened symmetric tensors), with the max reconstruction residual.
    pub fn coordinates(&self, flats: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        linalg::lstsq_mat(&self.joint, flats)
    }

    /// Splits `t` along the direct sum; for a skew triple this is the orthogonal projection.
    pub fn project(&self, t: &Sp1SymTensor) -> Result<Sp1Components> {
        let k = self.triple.dim();
        if t.dim() != k {
            return Err(QcError::DimensionMismatch {
                expected: k,
                found: t.dim(),
            });
        }
        let v = t.to_flat();
        let (coef, res) = linalg::lstsq(&self.joint, &v);
        if res > 1e-10 * linalg::max_abs_vec(&v).max(1.0) {
            return Err(QcError::RankDefect {
                what: "sp(1) decomposition sum",
                rank: linalg::rank(&self.joint, 1e-10),
                expected: 6 * k,
            });
        }
        let (d1, d3) = (self.bases[0].ncols(), self.bases[1].ncols());
        let part = |start: usize, b: &DMatrix<f64>| {
            Sp1SymTensor::from_flat(k, &(b * coef.rows(start, b.ncols())))
        };
        Ok(Sp1Components {
            sigma1: part(0, &self.bases[0]),
            sigma3: part(d1, &self.bases[1]),
            sigma5: part(d1 + d3, &self.bases[2]),
        })
    }
}

/// `(alpha ^ beta)(e_0, e_1, e_2, e_3)` for 2-forms on `R^4` given by matrices `a(X, Y) = X^T A Y`.
pub fn wedge_2forms_r4(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a[(0, 1)] * b[(2, 3)] - a[(0, 2)] * b[(1, 3)] + a[(0, 3)] * b[(1, 2)] + a[(1, 2)] * b[(0, 3)]
        - a[(1, 3)] * b[(0, 2)]
        + a[(2, 3)] * b[(0, 1)]
}

/// Output of [`hyperkahler_reconstruct`].
#[derive(Debug, Clone)]
pub struct Hyperkahler {
    pub triple: QuaternionTriple,
    /// Symmetric positive definite with `g(I_k X, Y) = w_k(X, Y)`.
    pub metric: DMatrix<f64>,
    /// `|c|` in `w_i ^ w_j = c delta_ij nu`.
    pub wedge_constant: f64,
    /// Max residual of `g(I_k X, Y) = w_k(X, Y)`.
    pub residual: f64,
}

/// Recovers a quaternionic triple and a compatible metric from three
/// 2-forms on `R^4` given as matrices with `w(X, Y) = X^T W Y`.
pub fn hyperkahler_reconstruct(forms: &[DMatrix<f64>; 3]) -> Result<Hyperkahler> {
    const TOL: f64 = 1e-9;
    for w in forms {
        if w.nrows() != 4 || w.ncols() != 4 {
            return Err(QcError::DimensionMismatch {
                expected: 4,
                found: w.nrows(),
            });
        }
        if linalg::max_abs(&(w + w.transpose())) > TOL * linalg::max_abs(w).max(1.0) {
            return Err(QcError::IncompatibleForms(
                "input is not antisymmetric".into(),
            ));
        }
    }
    let wedge = DMatrix::from_fn(3, 3, |i, j| wedge_2forms_r4(&forms[i], &forms[j]));
    let c = wedge[(0, 0)];
    let scale = c.abs().max(1e-300);
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { c } else { 0.0 };
            if (wedge[(i, j)] - target).abs() > TOL * scale {
                return Err(QcError::IncompatibleForms(format!(
                    "wedge matrix is not a multiple of the identity: {wedge}"
                )));
            }
        }
    }
    if c.abs() < TOL {
        return Err(QcError::IncompatibleForms("degenerate forms".into()));
    }

    // each form as a map V -> V*, X -> w(X, .)
    let maps: Vec<DMatrix<f64>> = forms.iter().map(|w| w.transpose()).collect();
    let mut inverses = Vec::with_capacity(3);
    for m in &maps {
        inverses.push(
            m.clone()
                .try_inverse()
                .ok_or(QcError::IncompatibleForms("degenerate form".into()))?,
        );
    }
    let id = DMatrix::<f64>::identity(4, 4);
    let mut units = Vec::with_capacity(3);
    for k in 0..3 {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        let j = -(&inverses[a] * &maps[b]);
        let sq = &j * &j;
        let ck = -sq.trace() / 4.0;
        if !(ck > 0.0) || linalg::max_abs(&(&sq + &id * ck)) > TOL * ck.max(1.0) {
            return Err(QcError::IncompatibleForms(format!(
                "J_{} does not square to a negative multiple of the identity",
                k + 1
            )));
        }
        units.push(j / ck.sqrt());
    }

    let mut indefinite = false;
    for signs in [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [-1.0, -1.0, -1.0],
        [-1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0],
    ] {
        let ops: [DMatrix<f64>; 3] = std::array::from_fn(|k| &units[k] * signs[k]);
        let Ok(triple) = QuaternionTriple::new(ops[0].clone(), ops[1].clone(), ops[2].clone())
        else {
            continue;
        };
        let g = linalg::symmetrize(&(&forms[0] * triple.op(0)));
        let ev = linalg::sym_eigenvalues(&g);
        if !(ev[0] > TOL * ev[3].abs().max(1.0)) {
            indefinite = true;
            continue;
        }
        let residual = (0..3)
            .map(|k| linalg::max_abs(&(triple.op(k).transpose() * &g - &forms[k])))
            .fold(0.0, f64::max);
        if residual <= TOL * linalg::max_abs(&g).max(1.0) {
            return Ok(Hyperkahler {
                triple,
                metric: g,
                wedge_constant: c.abs(),
                residual,
            });
        }
    }
    if indefinite {
        Err(QcError::IndefiniteReconstruction)
    } else {
        Err(QcError::IncompatibleForms(
            "no sign choice reproduces the forms".into(),
        ))
    }
}

//! Hypersurfaces `M = f^{-1}(0)` of a quaternionic chart: the horizontal
//! distribution, the normal vector field, the quaternionic-contact criterion,
//! the weakly quaternionic-contact conditions, Reeb fields and the vertical
//! torsion.
//!
//! Bilinear forms on `H` are expressed in the (euclidean orthonormal)
//! H-basis of the frame: `w(X, Y) = x^T W y` for coordinate vectors `x, y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{QcError, Result};
use crate::linalg;
use crate::models::ModelGeometry;
use crate::quatlin::{
    sigma5_constraint_residual, QuaternionTriple, Sp1Component, Sp1SymDecomposition, Sp1SymTensor,
};
use crate::tensorfield::{exterior_derivative_1form, hessian, FdScheme, TensorField};

/// Linear systems whose condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Residual allowed in exact (non finite-difference) frame constructions.
pub const CONSTRUCTION_TOL: f64 = 1e-9;

/// Data of a hypersurface at one point.
#[derive(Debug, Clone)]
pub struct HypersurfaceFrame {
    point: Vec<f64>,
    df: DVector<f64>,
    triple: QuaternionTriple,
    h_basis: DMatrix<f64>,
    h_triple: QuaternionTriple,
    hessian: DMatrix<f64>,
    xi: DVector<f64>,
    vertical: [DVector<f64>; 3],
    xi_residual: f64,
    xi_condition: f64,
}

/// Builds the frame of `model`'s hypersurface at `p` with the model's connection.
pub fn build_frame(
    model: &ModelGeometry,
    p: &[f64],
    scheme: FdScheme,
) -> Result<HypersurfaceFrame> {
    let f = model.defining_function();
    let df = f.differential_at(p, scheme)?;
    let triple = model.triple_field().at(p)?;
    let hess = hessian(model.connection(), f, p, scheme)?;
    HypersurfaceFrame::from_parts(p, df, triple, hess.value)
}

impl HypersurfaceFrame {
    /// Frame from pointwise data: `df`, the ambient triple and `nabla df`.
    pub fn from_parts(
        p: &[f64],
        df: DVector<f64>,
        triple: QuaternionTriple,
        hessian: DMatrix<f64>,
    ) -> Result<Self> {
        let m = triple.dim();
        for found in [p.len(), df.len(), hessian.nrows(), hessian.ncols()] {
            if found != m {
                return Err(QcError::DimensionMismatch { expected: m, found });
            }
        }
        let constraints = conormal_rows(&df, &triple);
        let gram = &constraints * constraints.transpose();
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or(QcError::Singular("differential of the defining function"))?;
        let projector = DMatrix::identity(m, m) - constraints.transpose() * gram_inv * &constraints;
        let h_basis = linalg::gram_schmidt(&projector, 1e-6);
        if h_basis.ncols() != m - 4 {
            return Err(QcError::RankDefect {
                what: "horizontal distribution",
                rank: h_basis.ncols(),
                expected: m - 4,
            });
        }
        let (h_triple, h_res) = triple.restricted(&h_basis)?;
        if h_res > CONSTRUCTION_TOL {
            return Err(QcError::InvalidTriple(h_res));
        }

        let mut system = DMatrix::zeros(m, m);
        system.view_mut((0, 0), (4, m)).copy_from(&constraints);
        system
            .view_mut((4, 0), (m - 4, m))
            .copy_from(&(h_basis.transpose() * &hessian));
        let xi_condition = linalg::condition_number(&system);
        if !(xi_condition <= MAX_CONDITION) {
            return Err(QcError::IllConditioned {
                what: "normal vector system",
                cond: xi_condition,
            });
        }
        let mut rhs = DVector::zeros(m);
        rhs[0] = 1.0;
        let (xi, xi_residual) = linalg::lstsq(&system, &rhs);
        if xi_residual > CONSTRUCTION_TOL {
            return Err(QcError::RankDefect {
                what: "normal vector system",
                rank: linalg::rank(&system, 1e-12),
                expected: m,
            });
        }
        let vertical = [0, 1, 2].map(|k| triple.op(k) * &xi);
        Ok(Self {
            point: p.to_vec(),
            df,
            triple,
            h_basis,
            h_triple,
            hessian,
            xi,
            vertical,
            xi_residual,
            xi_condition,
        })
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.triple.dim()
    }

    pub fn h_dim(&self) -> usize {
        self.h_basis.ncols()
    }

    pub fn df(&self) -> &DVector<f64> {
        &self.df
    }

    /// The ambient triple at the point.
    pub fn triple(&self) -> &QuaternionTriple {
        &self.triple
    }

    /// Columns span `H = ker df ∩ ker (df o I_k)`.
    pub fn h_basis(&self) -> &DMatrix<f64> {
        &self.h_basis
    }

    /// The triple restricted to `H`, in H-basis coordinates.
    pub fn h_triple(&self) -> &QuaternionTriple {
        &self.h_triple
    }

    /// `nabla df` at the point.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `nabla df` restricted to `H`.
    pub fn h_hessian(&self) -> DMatrix<f64> {
        self.restrict(&self.hessian)
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    /// `I_k xi`.
    pub fn vertical(&self, k: usize) -> &DVector<f64> {
        &self.vertical[k]
    }

    pub fn xi_condition(&self) -> f64 {
        self.xi_condition
    }

    pub fn xi_residual(&self) -> f64 {
        self.xi_residual
    }

    /// `eta_k = -df o I_k` at the point.
    pub fn eta(&self, k: usize) -> DVector<f64> {
        -self.triple.act_on_covector(k, &self.df)
    }

    /// `B^T W B` for the H-basis `B`.
    pub fn restrict(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.h_basis.transpose() * w * &self.h_basis
    }

    /// Projection onto `H` with kernel `R xi ⊕ span(I_k xi)`.
    pub fn project_h(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v - &self.xi * self.df.dot(v);
        for k in 0..3 {
            out -= &self.vertical[k] * self.eta(k).dot(v);
        }
        out
    }

    /// H-basis coordinates of a vector of `H`.
    pub fn h_coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        self.h_basis.transpose() * v
    }

    /// Max residual of `df(xi) = 1`, `df(I_k xi) = 0`, `nabla df(xi, X) = 0` on `H`.
    pub fn invariant_residual(&self) -> f64 {
        let mut worst = (self.df.dot(&self.xi) - 1.0).abs();
        for k in 0..3 {
            worst = worst.max(self.df.dot(&self.vertical[k]).abs());
        }
        let cross = self.h_basis.transpose() * (&self.hessian * &self.xi);
        worst.max(linalg::max_abs_vec(&cross))
    }

    /// The same frame with H-basis `B Q` for an orthogonal `Q`.
    pub fn with_rotated_h_basis(&self, q: &DMatrix<f64>) -> Result<Self> {
        let k = self.h_dim();
        if q.nrows() != k || q.ncols() != k {
            return Err(QcError::DimensionMismatch {
                expected: k,
                found: q.nrows(),
            });
        }
        let h_basis = &self.h_basis * q;
        let (h_triple, _) = self.triple.restricted(&h_basis)?;
        Ok(Self {
            h_basis,
            h_triple,
            ..self.clone()
        })
    }
}

/// Rows `df`, `df o I_1`, `df o I_2`, `df o I_3`.
fn conormal_rows(df: &DVector<f64>, triple: &QuaternionTriple) -> DMatrix<f64> {
    let m = df.len();
    let mut c = DMatrix::zeros(4, m);
    c.row_mut(0).copy_from(&df.transpose());
    for k in 0..3 {
        c.row_mut(k + 1)
            .copy_from(&triple.act_on_covector(k, df).transpose());
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Negative,
    Indefinite,
}

impl Definiteness {
    /// `sigma` with `sigma nabla df|_H` positive definite.
    pub fn sign(self) -> Option<f64> {
        match self {
            Definiteness::Positive => Some(1.0),
            Definiteness::Negative => Some(-1.0),
            Definiteness::Indefinite => None,
        }
    }
}

/// Result of the hypersurface criterion: `nabla df|_H` definite and `I`-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct QcCriterion {
    pub definiteness: Definiteness,
    /// Max over `k` of the Frobenius norm of `nabla df(I_k ., I_k .) - nabla df` on `H`.
    pub invariance_residual: f64,
    /// Smallest over largest absolute eigenvalue of `nabla df|_H`.
    pub eigenvalue_ratio: f64,
    pub is_qc: bool,
}

/// Classifies `nabla df|_H`; `tol` bounds the invariance residual.
pub fn qc_criterion(frame: &HypersurfaceFrame, tol: f64) -> QcCriterion {
    let a = frame.h_hessian();
    let t = frame.h_triple();
    let invariance_residual = (0..3)
        .map(|k| (t.op(k).transpose() * &a * t.op(k) - &a).norm())
        .fold(0.0, f64::max);
    let (definiteness, eigenvalue_ratio) = classify(&a);
    QcCriterion {
        definiteness,
        invariance_residual,
        eigenvalue_ratio,
        is_qc: definiteness != Definiteness::Indefinite && invariance_residual <= tol,
    }
}

fn classify(a: &DMatrix<f64>) -> (Definiteness, f64) {
    let ev = linalg::sym_eigenvalues(a);
    let amax = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let amin = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let ratio = if amax > 0.0 { amin / amax } else { 0.0 };
    let definiteness = if ratio <= 1e-8 {
        Definiteness::Indefinite
    } else if ev.iter().all(|&v| v > 0.0) {
        Definiteness::Positive
    } else if ev.iter().all(|&v| v < 0.0) {
        Definiteness::Negative
    } else {
        Definiteness::Indefinite
    };
    (definiteness, ratio)
}

/// `eta_k = -df o I_k` as a covector field.
pub fn eta_field(model: &ModelGeometry, k: usize, scheme: FdScheme) -> TensorField {
    let f = model.defining_function().clone();
    let triple = model.triple_field().clone();
    TensorField::covector(&format!("eta_{}", k + 1), model.dim(), move |q| {
        let df = f.differential_at(q, scheme)?;
        Ok(-triple.at(q)?.act_on_covector(k, &df))
    })
}

/// `d eta_k` at `p` as ambient matrices.
pub fn deta(model: &ModelGeometry, p: &[f64], scheme: FdScheme) -> Result<[DMatrix<f64>; 3]> {
    let forms =
        [0, 1, 2].map(|k| exterior_derivative_1form(&eta_field(model, k, scheme), p, scheme));
    let [a, b, c] = forms;
    Ok([a?, b?, c?])
}

/// `g(I_k ., .)` for a bilinear form `g` on `H`, as matrices.
pub fn compatible_forms(triple: &QuaternionTriple, g: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
    [0, 1, 2].map(|k| triple.op(k).transpose() * g)
}

/// One constant `c` with `forms_k ≈ c targets_k` for all three `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    pub scale: f64,
    pub residual: f64,
}

pub fn fit_common_scale(
    forms: &[DMatrix<f64>; 3],
    targets: &[DMatrix<f64>; 3],
) -> Result<ScaleFit> {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..3 {
        if forms[k].shape() != targets[k].shape() {
            return Err(QcError::DimensionMismatch {
                expected: targets[k].nrows(),
                found: forms[k].nrows(),
            });
        }
        num += forms[k].dot(&targets[k]);
        den += targets[k].norm_squared();
    }
    if den == 0.0 {
        return Err(QcError::Singular("scale-fit target"));
    }
    let scale = num / den;
    let residual = (0..3)
        .map(|k| linalg::max_abs(&(&forms[k] - &targets[k] * scale)))
        .fold(0.0, f64::max);
    Ok(ScaleFit { scale, residual })
}

/// The three conditions of a weakly quaternionic-contact structure.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakQcReport {
    /// Max of `|d eta_k(I_k ., I_k .) - d eta_k|` (condition i).
    pub invariance: f64,
    /// `g = d eta_1(., I_1 .) + d eta_1(I_2 ., I_3 .)` in H-basis coordinates.
    pub metric: DMatrix<f64>,
    /// Smallest over largest absolute eigenvalue of the symmetric part of `g` (condition ii).
    pub nondegeneracy: f64,
    pub asymmetry: f64,
    /// Max gap between the three cyclic expressions for `g` (condition iii).
    pub consistency: f64,
}

impl WeakQcReport {
    pub fn is_nondegenerate(&self) -> bool {
        self.nondegeneracy > 1e-8
    }

    /// Worst of conditions (i) and (iii); a degenerate `g` counts as 1.
    pub fn residual(&self) -> f64 {
        let degenerate = if self.is_nondegenerate() { 0.0 } else { 1.0 };
        self.invariance.max(self.consistency).max(degenerate)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.residual() <= tol
    }
}

/// Evaluates the weak conditions on three 2-forms `w_k(X, Y) = x^T W_k y`.
pub fn weak_qc_conditions(
    forms: &[DMatrix<f64>; 3],
    triple: &QuaternionTriple,
) -> Result<WeakQcReport> {
    let m = triple.dim();
    for w in forms {
        if w.nrows() != m || w.ncols() != m {
            return Err(QcError::DimensionMismatch {
                expected: m,
                found: w.nrows(),
            });
        }
    }
    let i = triple.ops();
    let invariance = (0..3)
        .map(|k| linalg::max_abs(&(i[k].transpose() * &forms[k] * &i[k] - &forms[k])))
        .fold(0.0, f64::max);
    // g_k = w_k(., I_k .) + w_k(I_{k+1} ., I_{k+2} .)
    let expr = |k: usize| {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        &forms[k] * &i[k] + i[a].transpose() * &forms[k] * &i[b]
    };
    let metric = expr(0);
    let consistency =
        linalg::max_abs(&(expr(1) - &metric)).max(linalg::max_abs(&(expr(2) - &metric)));
    let asymmetry = linalg::max_abs(&(&metric - metric.transpose()));
    let ev = linalg::sym_eigenvalues(&linalg::symmetrize(&metric));
    let amax = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let amin = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    Ok(WeakQcReport {
        invariance,
        nondegeneracy: if amax > 0.0 { amin / amax } else { 0.0 },
        asymmetry,
        consistency,
        metric,
    })
}

/// Weak conditions of the induced structure, with the max gap between the
/// computed `g` and `nabla df|_H + sum_k nabla df(I_k ., I_k .)`.
pub fn weak_qc_check(
    frame: &HypersurfaceFrame,
    model: &ModelGeometry,
    scheme: FdScheme,
) -> Result<(WeakQcReport, f64)> {
    let forms = deta(model, frame.point(), scheme)?.map(|w| frame.restrict(&w));
    let report = weak_qc_conditions(&forms, frame.h_triple())?;
    let a = frame.h_hessian();
    let t = frame.h_triple();
    let mut expected = a.clone();
    for k in 0..3 {
        expected += t.op(k).transpose() * &a * t.op(k);
    }
    let gap = linalg::max_abs(&(&report.metric - expected));
    Ok((report, gap))
}

/// A complement `W = span(R_k)` to `H` with `eta_j(R_k) = delta_jk` and its vertical torsion.
#[derive(Debug, Clone)]
pub struct ReebComplement {
    reeb: [DVector<f64>; 3],
    corrections: [DVector<f64>; 3],
    torsion: Sp1SymTensor,
    sigma5_residual: f64,
    solve_residual: f64,
    condition: f64,
}

impl ReebComplement {
    /// `R_k` as ambient vectors.
    pub fn reeb(&self, k: usize) -> &DVector<f64> {
        &self.reeb[k]
    }

    /// H-basis coordinates of `R_k - I_k xi`.
    pub fn correction(&self, k: usize) -> &DVector<f64> {
        &self.corrections[k]
    }

    /// `T^W = sum (alpha_ij + alpha_ji) (x) I_i (x) I_j` with `alpha_ij = d eta_j(R_i, .)|_H`.
    pub fn torsion(&self) -> &Sp1SymTensor {
        &self.torsion
    }

    /// Residual of `sum_j I_j a_ij = 0`.
    pub fn sigma5_residual(&self) -> f64 {
        self.sigma5_residual
    }

    pub fn solve_residual(&self) -> f64 {
        self.solve_residual
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Max distance between the `R_k` of two complements.
    pub fn distance(&self, other: &Self) -> f64 {
        (0..3)
            .map(|k| linalg::max_abs_vec(&(&self.reeb[k] - &other.reeb[k])))
            .fold(0.0, f64::max)
    }
}

/// Finds the unique complement whose vertical torsion has no `sigma^1` and
/// `sigma^3` components. Candidates are `I_k xi + shift_k + s_k` with `s_k`
/// in `H`; `shift` (H-basis coordinates) moves the starting duals.
pub fn reeb_complement(
    frame: &HypersurfaceFrame,
    deta: &[DMatrix<f64>; 3],
    shift: Option<&[DVector<f64>; 3]>,
) -> Result<ReebComplement> {
    let k = frame.h_dim();
    let hb = frame.h_basis();
    let naive: [DVector<f64>; 3] = std::array::from_fn(|i| match shift {
        Some(s) => frame.vertical(i) + hb * &s[i],
        None => frame.vertical(i).clone(),
    });
    // alpha_ij = base_ij + blocks_j s_i
    let base: Vec<Vec<DVector<f64>>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| hb.transpose() * (deta[j].transpose() * &naive[i]))
                .collect()
        })
        .collect();
    let blocks: Vec<DMatrix<f64>> = (0..3)
        .map(|j| frame.restrict(&deta[j].transpose()))
        .collect();

    let n_unknown = 3 * k;
    let mut flats = DMatrix::zeros(9 * k, 1 + n_unknown);
    for i in 0..3 {
        for j in 0..3 {
            let row = (3 * i + j) * k;
            let a0 = &base[i][j] + &base[j][i];
            flats.view_mut((row, 0), (k, 1)).copy_from(&a0);
            for r in 0..k {
                let mut col = DVector::zeros(k);
                col += blocks[j].column(r);
                if i == j {
                    col += blocks[j].column(r);
                }
                flats.view_mut((row, 1 + i * k + r), (k, 1)).copy_from(&col);
                if i != j {
                    let mut sym = flats.view((row, 1 + j * k + r), (k, 1)).into_owned();
                    sym += blocks[i].column(r);
                    flats.view_mut((row, 1 + j * k + r), (k, 1)).copy_from(&sym);
                }
            }
        }
    }

    let decomposition = Sp1SymDecomposition::new(frame.h_triple())?;
    let (coords, _) = decomposition.coordinates(&flats);
    let low = decomposition.coordinate_range(Sp1Component::Sigma1).start
        ..decomposition.coordinate_range(Sp1Component::Sigma3).end;
    let rows = coords.rows(low.start, low.len());
    let system = rows.columns(1, n_unknown).into_owned();
    let rhs = -rows.column(0).into_owned();
    let condition = linalg::condition_number(&system);
    if !(condition <= MAX_CONDITION) {
        return Err(QcError::IllConditioned {
            what: "vertical torsion system",
            cond: condition,
        });
    }
    let (s, solve_residual) = linalg::lstsq(&system, &rhs);

    let flat_t = flats.column(0) + flats.columns(1, n_unknown) * &s;
    let torsion = Sp1SymTensor::from_flat(k, &flat_t.into_owned());
    let sigma5_residual = sigma5_constraint_residual(&torsion, frame.h_triple());
    let reeb: [DVector<f64>; 3] = std::array::from_fn(|i| &naive[i] + hb * s.rows(i * k, k));
    let corrections = std::array::from_fn(|i| frame.h_coordinates(&(&reeb[i] - frame.vertical(i))));
    Ok(ReebComplement {
        reeb,
        corrections,
        torsion,
        sigma5_residual,
        solve_residual,
        condition,
    })
}

/// Quaternionic-contact data of a hypersurface frame.
#[derive(Debug, Clone)]
pub struct QcFrameData {
    /// `g_H = 2 nabla df|_H`.
    pub g_h: DMatrix<f64>,
    /// `d eta_k|_H`.
    pub deta_h: [DMatrix<f64>; 3],
    /// Fit of `d eta_k|_H = c g_H(I_k ., .)`.
    pub scale: ScaleFit,
    pub criterion: QcCriterion,
    pub reeb: ReebComplement,
}

impl QcFrameData {
    /// `max |T^{W^g}|`, the integrability obstruction.
    pub fn integrability_residual(&self) -> f64 {
        self.reeb.torsion().max_abs()
    }
}

/// Assembles the quaternionic-contact data at a frame; `tol` is the criterion tolerance.
pub fn qc_frame_data(
    model: &ModelGeometry,
    frame: &HypersurfaceFrame,
    scheme: FdScheme,
    tol: f64,
) -> Result<QcFrameData> {
    let criterion = qc_criterion(frame, tol);
    let deta_full = deta(model, frame.point(), scheme)?;
    let deta_h = deta_full.clone().map(|w| frame.restrict(&w));
    let g_h = frame.h_hessian() * 2.0;
    let scale = fit_common_scale(&deta_h, &compatible_forms(frame.h_triple(), &g_h))?;
    let reeb = reeb_complement(frame, &deta_full, None)?;
    Ok(QcFrameData {
        g_h,
        deta_h,
        scale,
        criterion,
        reeb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{alexandrov_model, flat_ball_model, wlambda_forms};
    use crate::quatlin::standard_triple;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sphere_point(n: usize, seed: u64) -> Vec<f64> {
        let model = flat_ball_model(n);
        model.sample_hypersurface_point(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_orthogonal(k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
        a.qr().q()
    }

    #[test]
    fn sphere_normal_is_half_the_inward_radius() {
        for n in [1, 2] {
            let model = flat_ball_model(n);
            let p = sphere_point(n, 11);
            let frame = build_frame(&model, &p, FdScheme::default()).unwrap();
            let expected = DVector::from_iterator(p.len(), p.iter().map(|v| -0.5 * v));
            assert!(linalg::max_abs_vec(&(frame.xi() - expected)) < 1e-10);
            assert_eq!(frame.h_dim(), 4 * n);
            assert!(frame.invariant_residual() < 1e-10);
            let cross = frame.h_basis().transpose() * (frame.hessian() * frame.vertical(1));
            assert!(linalg::max_abs_vec(&cross) < 1e-10);
        }
    }

    #[test]
    fn sphere_passes_the_criterion_with_negative_sign() {
        for n in [1, 2] {
            let model = flat_ball_model(n);
            let frame = build_frame(&model, &sphere_point(n, 3), FdScheme::default()).unwrap();
            let c = qc_criterion(&frame, 1e-10);
            assert!(c.is_qc);
            assert_eq!(c.definiteness.sign(), Some(-1.0));
            assert!(c.invariance_residual <= 1e-10);
        }
    }

    fn perturbed_frame(seed: u64) -> HypersurfaceFrame {
        let p = sphere_point(1, seed);
        let t = standard_triple(1);
        let df = DVector::from_iterator(8, p.iter().map(|v| -2.0 * v));
        let base = HypersurfaceFrame::from_parts(
            &p,
            df.clone(),
            t.clone(),
            DMatrix::identity(8, 8) * -2.0,
        )
        .unwrap();
        let v = base.h_basis().column(0).into_owned();
        let hess = DMatrix::identity(8, 8) * -2.0 + &v * v.transpose() * 0.5;
        HypersurfaceFrame::from_parts(&p, df, t, hess).unwrap()
    }

    #[test]
    fn non_invariant_hessian_fails_the_criterion() {
        let c = qc_criterion(&perturbed_frame(4), 1e-10);
        assert!(c.invariance_residual > 0.1);
        assert!(!c.is_qc);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn criterion_residual_ignores_h_basis_rotation(seed in 0u64..1000) {
            let frame = perturbed_frame(seed);
            let rotated = frame.with_rotated_h_basis(&random_orthogonal(4, seed + 1)).unwrap();
            let a = qc_criterion(&frame, 1e-10).invariance_residual;
            let b = qc_criterion(&rotated, 1e-10).invariance_residual;
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn reeb_complement_is_independent_of_the_start(seed in 0u64..1000) {
            let model = flat_ball_model(1);
            let p = sphere_point(1, seed);
            let scheme = FdScheme::default();
            let frame = build_frame(&model, &p, scheme).unwrap();
            let forms = deta(&model, &p, scheme).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shift: [DVector<f64>; 3] = std::array::from_fn(|_| {
                DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng))
            });
            let a = reeb_complement(&frame, &forms, None).unwrap();
            let b = reeb_complement(&frame, &forms, Some(&shift)).unwrap();
            prop_assert!(a.distance(&b) <= 1e-8);
        }
    }

    #[test]
    fn sphere_forms_match_twice_the_hessian() {
        for n in [1, 2] {
            let model = flat_ball_model(n);
            let p = sphere_point(n, 5);
            let scheme = FdScheme::default();
            let frame = build_frame(&model, &p, scheme).unwrap();
            let qc = qc_frame_data(&model, &frame, scheme, 1e-10).unwrap();
            assert!((qc.scale.scale - 1.0).abs() < 1e-8);
            assert!(qc.scale.residual < 1e-6);
        }
    }

    #[test]
    fn sphere_reeb_fields_are_the_naive_duals() {
        for n in [1, 2] {
            let model = flat_ball_model(n);
            let p = sphere_point(n, 9);
            let scheme = FdScheme::default();
            let frame = build_frame(&model, &p, scheme).unwrap();
            let qc = qc_frame_data(&model, &frame, scheme, 1e-10).unwrap();
            for k in 0..3 {
                assert!(linalg::max_abs_vec(qc.reeb.correction(k)) < 1e-7);
                for j in 0..3 {
                    let expected = if j == k { 1.0 } else { 0.0 };
                    assert!((frame.eta(j).dot(qc.reeb.reeb(k)) - expected).abs() < 1e-12);
                }
            }
            assert!(qc.integrability_residual() < 1e-6);
            assert!(qc.reeb.sigma5_residual() < 1e-9);
        }
    }

    #[test]
    fn weak_conditions_on_the_sphere() {
        let model = flat_ball_model(1);
        let p = sphere_point(1, 21);
        let scheme = FdScheme::default();
        let frame = build_frame(&model, &p, scheme).unwrap();
        let (report, gap) = weak_qc_check(&frame, &model, scheme).unwrap();
        assert!(report.passes(1e-6));
        assert!(gap < 1e-6);
        assert!(report.asymmetry < 1e-6);
    }

    #[test]
    fn weak_conditions_on_wlambda_data() {
        let forms = wlambda_forms(0.5).unwrap();
        let report = weak_qc_conditions(&forms, &standard_triple(0)).unwrap();
        assert!(report.passes(1e-12));
        let c = report.metric[(0, 0)];
        assert!(linalg::max_abs(&(&report.metric - DMatrix::identity(4, 4) * c)) < 1e-12);
        assert!((c - 2.0 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn vanishing_first_form_is_degenerate() {
        let mut forms = wlambda_forms(0.0).unwrap();
        forms[0] = DMatrix::zeros(4, 4);
        let report = weak_qc_conditions(&forms, &standard_triple(0)).unwrap();
        assert!(!report.is_nondegenerate());
        assert!(!report.passes(1e-6));
    }

    #[test]
    fn alexandrov_hypersurface_is_quaternionic_contact() {
        for n in [1, 2] {
            let model = alexandrov_model(n).unwrap();
            let scheme = FdScheme::default();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..3 {
                let p = model.sample_hypersurface_point(&mut rng);
                let frame = build_frame(&model, &p, scheme).unwrap();
                assert!((frame.df().dot(frame.xi()) - 1.0).abs() < 1e-10);
                let qc = qc_frame_data(&model, &frame, scheme, 1e-6).unwrap();
                assert!(qc.criterion.is_qc, "{:?}", qc.criterion);
                assert!(qc.scale.residual < 1e-6);
                assert!(qc.integrability_residual() < 1e-6);
            }
        }
    }
}

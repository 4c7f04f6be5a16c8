//! Second fundamental forms of a QC-hypersurface, the horizontal derivative
//! of the fundamental 4-form and the connection change that cancels it.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{QcError, Result};
use crate::linalg;
use crate::models::ModelGeometry;
use crate::qcstruct::{self, build_frame, reeb_complement, HypersurfaceFrame, MAX_CONDITION};
use crate::quatlin::{sp1_embed, sp1_project_lambda1, Sp1Valued1Form};
use crate::tensorfield::{fd_apply, FdScheme, TensorField};

/// Coefficient of `nabla df(r_i, r_j)` in the conformal second fundamental form.
pub const SFF_R_COEFFICIENT: f64 = -4.0;

/// `r_k` in `H` with `nabla df(I_k xi + 2 r_k, X) = 0` for `X` in `H`.
#[derive(Debug, Clone)]
pub struct ReebCorrections {
    /// H-basis coordinates.
    pub coordinates: [DVector<f64>; 3],
    /// Ambient vectors.
    pub vectors: [DVector<f64>; 3],
    pub residual: f64,
}

pub fn reeb_corrections(frame: &HypersurfaceFrame) -> Result<ReebCorrections> {
    let a_h = frame.h_hessian();
    let cond = linalg::condition_number(&a_h);
    if !(cond <= MAX_CONDITION) {
        return Err(QcError::Singular("horizontal hessian"));
    }
    let hb = frame.h_basis();
    let mut residual = 0.0_f64;
    let coordinates: [DVector<f64>; 3] = std::array::from_fn(|k| {
        let rhs = hb.transpose() * (frame.hessian() * frame.vertical(k)) * -0.5;
        let (r, res) = linalg::lstsq(&a_h, &rhs);
        residual = residual.max(res);
        r
    });
    let vectors = std::array::from_fn(|k| hb * &coordinates[k]);
    Ok(ReebCorrections {
        coordinates,
        vectors,
        residual,
    })
}

/// `M_ij = nabla df(I_i xi, I_j xi) - 4 nabla df(r_i, r_j)` and its trace-free part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalSff {
    pub m: Matrix3<f64>,
    pub m0: Matrix3<f64>,
}

impl ConformalSff {
    pub fn max_abs(&self) -> f64 {
        self.m0.amax()
    }

    /// `factor^2 M_0`, which is the invariant combination when `f` is replaced by `factor^2 f`.
    pub fn weighted(&self, factor: f64) -> Matrix3<f64> {
        self.m0 * (factor * factor)
    }
}

pub fn conformal_sff(frame: &HypersurfaceFrame) -> Result<ConformalSff> {
    let r = reeb_corrections(frame)?;
    let a = frame.hessian();
    let m = Matrix3::from_fn(|i, j| {
        frame.vertical(i).dot(&(a * frame.vertical(j)))
            + SFF_R_COEFFICIENT * r.vectors[i].dot(&(a * &r.vectors[j]))
    });
    let m0 = m - Matrix3::identity() * (m.trace() / 3.0);
    Ok(ConformalSff { m, m0 })
}

/// The `[lambda^1 sigma^3]` part of `sum_k nabla df(I_k xi, .)|_H (x) I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalSff {
    pub beta: Sp1Valued1Form,
    pub theta_hat: DVector<f64>,
    pub q3: Sp1Valued1Form,
    /// `max |sum_k q3_k o I_k|`, zero exactly on `[lambda^1 sigma^3]`.
    pub constraint_residual: f64,
}

pub fn horizontal_sff(frame: &HypersurfaceFrame) -> Result<HorizontalSff> {
    if frame.h_dim() != 4 {
        return Err(QcError::Unsupported(
            "n = 1 for the horizontal second fundamental form".into(),
        ));
    }
    let hb = frame.h_basis();
    let beta = Sp1Valued1Form {
        beta: [0, 1, 2].map(|k| hb.transpose() * (frame.hessian() * frame.vertical(k))),
    };
    let t = frame.h_triple();
    let (theta_hat, q3) = sp1_project_lambda1(&beta, t)?;
    let mut trace = DVector::zeros(4);
    for k in 0..3 {
        trace += t.act_on_covector(k, &q3.beta[k]);
    }
    Ok(HorizontalSff {
        beta,
        theta_hat,
        q3,
        constraint_residual: linalg::max_abs_vec(&trace),
    })
}

/// Step of the outer difference in [`nabla_h_omega`]; the inner `d eta`
/// differences use the caller's scheme.
pub const OUTER_SCHEME: FdScheme = FdScheme {
    step: 1e-3,
    richardson: true,
};

fn quadruples(k: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                for d in c + 1..k {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// `(alpha ^ beta)(e_i, e_j, e_k, e_l)` for 2-forms given as matrices.
fn wedge_2forms(a: &DMatrix<f64>, b: &DMatrix<f64>, [i, j, k, l]: [usize; 4]) -> f64 {
    a[(i, j)] * b[(k, l)] - a[(i, k)] * b[(j, l)] + a[(i, l)] * b[(j, k)] + a[(j, k)] * b[(i, l)]
        - a[(j, l)] * b[(i, k)]
        + a[(k, l)] * b[(i, j)]
}

/// Euclidean projector onto `H` at `q`, flattened column-major.
fn h_projector(model: &ModelGeometry, q: &[f64], scheme: FdScheme) -> Result<Vec<f64>> {
    let m = model.dim();
    let df = model.defining_function().differential_at(q, scheme)?;
    let t = model.triple_field().at(q)?;
    let mut c = DMatrix::zeros(4, m);
    c.row_mut(0).copy_from(&df.transpose());
    for k in 0..3 {
        c.row_mut(k + 1)
            .copy_from(&t.act_on_covector(k, &df).transpose());
    }
    let gram_inv = (&c * c.transpose())
        .try_inverse()
        .ok_or(QcError::Singular("differential of the defining function"))?;
    let p = DMatrix::identity(m, m) - c.transpose() * gram_inv * &c;
    Ok(p.as_slice().to_vec())
}

/// `nabla^H_X Omega` for `Omega = sum_k w_k^2`, `w_k = d eta_k|_H`, as a matrix
/// whose row `a` holds the components on increasing 4-tuples of H-basis
/// vectors for `X` the `a`-th H-basis vector. The H-basis is extended off the
/// point by the euclidean projector onto `H`.
pub fn nabla_h_omega(
    model: &ModelGeometry,
    frame: &HypersurfaceFrame,
    scheme: FdScheme,
) -> Result<DMatrix<f64>> {
    let p = frame.point();
    let m = frame.dim();
    let k = frame.h_dim();
    let hb = frame.h_basis().clone();
    let gamma = model.connection().gamma_at(p)?;
    let w_h = qcstruct::deta(model, p, scheme)?.map(|w| frame.restrict(&w));
    let quads = quadruples(k);

    let projector = |q: &[f64]| h_projector(model, q, scheme);
    let forms_on_extension = |q: &[f64]| -> Result<Vec<f64>> {
        let proj = DMatrix::from_column_slice(m, m, &h_projector(model, q, scheme)?);
        let ext = proj * &hb;
        let mut out = Vec::with_capacity(3 * k * k);
        for w in qcstruct::deta(model, q, scheme)? {
            out.extend_from_slice((ext.transpose() * w * &ext).as_slice());
        }
        Ok(out)
    };

    let mut rows = DMatrix::zeros(k, quads.len());
    for a in 0..k {
        let x = hb.column(a).into_owned();
        let dproj =
            DMatrix::from_column_slice(m, m, &fd_apply(&projector, p, x.as_slice(), OUTER_SCHEME)?);
        let mut nabla = DMatrix::zeros(k, k);
        for b in 0..k {
            let y = hb.column(b).into_owned();
            let v = &dproj * &y + gamma.apply(&x, &y);
            nabla.set_column(b, &frame.h_coordinates(&frame.project_h(&v)));
        }
        let dw = fd_apply(&forms_on_extension, p, x.as_slice(), OUTER_SCHEME)?;
        for (s, quad) in quads.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..3 {
                let raw = DMatrix::from_column_slice(k, k, &dw[i * k * k..(i + 1) * k * k]);
                let cov = raw - nabla.transpose() * &w_h[i] - &w_h[i] * &nabla;
                acc += 2.0 * wedge_2forms(&cov, &w_h[i], *quad);
            }
            rows[(a, s)] = acc;
        }
    }
    Ok(rows)
}

/// The constant covector field `theta`.
fn constant_covector(theta: &DVector<f64>) -> TensorField {
    let t = theta.clone();
    TensorField::covector("theta", theta.len(), move |_| Ok(t.clone()))
}

/// `model` with its connection replaced by `nabla + a^theta` for a constant `theta`.
pub fn shifted_model(model: &ModelGeometry, theta: &DVector<f64>) -> ModelGeometry {
    let conn = model
        .connection()
        .plus_a_theta(&constant_covector(theta), model.triple_field());
    model.with_connection(conn)
}

/// Result of cancelling `nabla^H Omega` by a connection change `a^theta`.
#[derive(Debug, Clone)]
pub struct BiquardTheta {
    /// Ambient covector, vanishing on `xi` and `I_k xi`.
    pub theta: DVector<f64>,
    /// Components of `theta` on the H-basis.
    pub theta_h: DVector<f64>,
    /// `max |nabla^H Omega|` before the change.
    pub initial: f64,
    /// `max |nabla^H Omega|` recomputed after the change.
    pub residual: f64,
    /// Max H-component of the Reeb fields relative to `I_k xi` for the changed connection.
    pub complement_gap: f64,
    pub probe_condition: f64,
}

/// Finds `theta` on `H` such that `nabla + a^theta` has `nabla^H Omega = 0`,
/// probing the response of `nabla^H Omega` to each H-basis covector.
pub fn biquard_theta(model: &ModelGeometry, p: &[f64], scheme: FdScheme) -> Result<BiquardTheta> {
    let frame = build_frame(model, p, scheme)?;
    let k = frame.h_dim();
    let m = frame.dim();
    let f0 = flatten(&nabla_h_omega(model, &frame, scheme)?);

    let mut adapted = DMatrix::zeros(m, m);
    adapted.view_mut((0, 0), (m, k)).copy_from(frame.h_basis());
    adapted.set_column(k, frame.xi());
    for j in 0..3 {
        adapted.set_column(k + 1 + j, frame.vertical(j));
    }
    let dual = adapted
        .try_inverse()
        .ok_or(QcError::Singular("adapted frame"))?;
    let probes: Vec<DVector<f64>> = (0..k).map(|b| dual.row(b).transpose()).collect();

    let mut response = DMatrix::zeros(f0.len(), k);
    for (b, theta) in probes.iter().enumerate() {
        let shifted = shifted_model(model, theta);
        let fb = flatten(&nabla_h_omega(
            &shifted,
            &build_frame(&shifted, p, scheme)?,
            scheme,
        )?);
        response.set_column(b, &(fb - &f0));
    }
    let probe_condition = linalg::condition_number(&response);
    if !(probe_condition <= MAX_CONDITION) {
        return Err(QcError::Singular("probe map of nabla^H Omega"));
    }

    let initial = linalg::max_abs_vec(&f0);
    let mut theta_h = DVector::zeros(k);
    let mut current = f0;
    let mut residual = initial;
    let mut corrected_frame = frame.clone();
    for _ in 0..6 {
        if residual <= 1e-12 {
            break;
        }
        let (step, _) = linalg::lstsq(&response, &(-&current));
        let candidate = &theta_h + step;
        let theta = assemble(&probes, &candidate);
        let trial = shifted_model(model, &theta);
        let trial_frame = build_frame(&trial, p, scheme)?;
        let value = flatten(&nabla_h_omega(&trial, &trial_frame, scheme)?);
        let trial_residual = linalg::max_abs_vec(&value);
        if trial_residual >= residual {
            break;
        }
        theta_h = candidate;
        current = value;
        residual = trial_residual;
        corrected_frame = trial_frame;
    }
    let deta = qcstruct::deta(model, p, scheme)?;
    let reeb = reeb_complement(&corrected_frame, &deta, None)?;
    let complement_gap = (0..3)
        .map(|j| linalg::max_abs_vec(reeb.correction(j)))
        .fold(0.0, f64::max);
    Ok(BiquardTheta {
        theta: assemble(&probes, &theta_h),
        theta_h,
        initial,
        residual,
        complement_gap,
        probe_condition,
    })
}

fn assemble(probes: &[DVector<f64>], coeffs: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(probes[0].len());
    for (b, theta) in probes.iter().enumerate() {
        out += theta * coeffs[b];
    }
    out
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Second fundamental forms at one hypersurface point.
#[derive(Debug, Clone)]
pub struct SffSample {
    pub conformal: ConformalSff,
    /// Present for `n = 1`.
    pub horizontal: Option<HorizontalSff>,
}

pub fn sff_at(model: &ModelGeometry, p: &[f64], scheme: FdScheme) -> Result<SffSample> {
    let frame = build_frame(model, p, scheme)?;
    let conformal = conformal_sff(&frame)?;
    let horizontal = if frame.h_dim() == 4 {
        Some(horizontal_sff(&frame)?)
    } else {
        None
    };
    Ok(SffSample {
        conformal,
        horizontal,
    })
}

/// Embedding of `theta` with a zero `q3` part, for synthetic inputs.
pub fn pure_lambda1(theta: &DVector<f64>, frame: &HypersurfaceFrame) -> Result<Sp1Valued1Form> {
    sp1_embed(theta, frame.h_triple())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{alexandrov_model, flat_ball_model};
    use crate::quatlin::{a_theta, standard_triple};
    use crate::tensorfield::ScalarField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_vec(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
        DVector::from_fn(m, |_, _| StandardNormal.sample(rng))
    }

    fn sphere_frame(n: usize, seed: u64) -> (ModelGeometry, HypersurfaceFrame) {
        let model = flat_ball_model(n);
        let p = model.sample_hypersurface_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let frame = build_frame(&model, &p, FdScheme::default()).unwrap();
        (model, frame)
    }

    /// Sphere point with a hessian `-2 euc + sum (c_a (x) v_a + v_a (x) c_a)`
    /// over the conormal rows `c_a`, so `nabla df|_H` stays `I`-invariant.
    fn synthetic(seed: u64) -> (Vec<f64>, DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = gaussian_vec(&mut rng, 8);
        p /= p.norm();
        let df = &p * -2.0;
        let t = standard_triple(1);
        let mut a = DMatrix::identity(8, 8) * -2.0;
        let mut rows = vec![df.clone()];
        rows.extend((0..3).map(|k| t.act_on_covector(k, &df)));
        for c in rows {
            let v = gaussian_vec(&mut rng, 8);
            a += &c * v.transpose() + &v * c.transpose();
        }
        (p.as_slice().to_vec(), df, a)
    }

    #[test]
    fn sphere_has_vanishing_forms() {
        for n in [1, 2] {
            let (_, frame) = sphere_frame(n, 2);
            let r = reeb_corrections(&frame).unwrap();
            for k in 0..3 {
                assert!(linalg::max_abs_vec(&r.vectors[k]) < 1e-10);
            }
            let sff = conformal_sff(&frame).unwrap();
            assert!((sff.m - Matrix3::identity() * -0.5).amax() < 1e-10);
            assert!(sff.max_abs() < 1e-10);
            assert!(sff.m0.trace().abs() < 1e-15);
        }
        let (_, frame) = sphere_frame(1, 3);
        let h = horizontal_sff(&frame).unwrap();
        assert!(h.q3.max_abs() < 1e-10);
    }

    #[test]
    fn single_equation_correction() {
        let (p, df, _) = synthetic(1);
        let t = standard_triple(1);
        let base = HypersurfaceFrame::from_parts(
            &p,
            df.clone(),
            t.clone(),
            DMatrix::identity(8, 8) * -2.0,
        )
        .unwrap();
        let x0 = base.h_basis().column(0).into_owned();
        let v1 = base.vertical(0).clone();
        let mut a = DMatrix::identity(8, 8) * -2.0;
        a += (&v1 * x0.transpose() + &x0 * v1.transpose()) * (1.0 / v1.norm_squared());
        let frame = HypersurfaceFrame::from_parts(&p, df, t, a).unwrap();
        let r = reeb_corrections(&frame).unwrap();
        let row = frame.h_basis().transpose() * (frame.hessian() * frame.vertical(0));
        let expected = frame.h_hessian().try_inverse().unwrap() * row * -0.5;
        assert!(linalg::max_abs_vec(&(&r.coordinates[0] - expected)) < 1e-12);
        assert!(r.coordinates[0].norm() > 1e-3);
    }

    #[test]
    fn reeb_corrections_agree_with_the_vertical_torsion_solve() {
        for seed in 0..5 {
            let (p, df, a) = synthetic(seed);
            let frame = HypersurfaceFrame::from_parts(&p, df, standard_triple(1), a).unwrap();
            let r = reeb_corrections(&frame).unwrap();
            // flat ambient connection and constant triple: d eta_k = I_k^T A - A I_k
            let t = frame.triple();
            let deta = [0, 1, 2]
                .map(|k| t.op(k).transpose() * frame.hessian() - frame.hessian() * t.op(k));
            let w = reeb_complement(&frame, &deta, None).unwrap();
            for k in 0..3 {
                assert!(linalg::max_abs_vec(&(w.correction(k) - &r.coordinates[k])) < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_conformal_invariance_on_synthetic_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..5 {
            let (p, df, a) = synthetic(seed);
            let t = standard_triple(1);
            let base = conformal_sff(
                &HypersurfaceFrame::from_parts(&p, df.clone(), t.clone(), a.clone()).unwrap(),
            )
            .unwrap();
            let g = 1.7;
            let dg = gaussian_vec(&mut rng, 8);
            let a2 = &a * (g * g) + (&dg * df.transpose() + &df * dg.transpose()) * (2.0 * g);
            let frame2 = HypersurfaceFrame::from_parts(&p, &df * (g * g), t, a2).unwrap();
            let moved = conformal_sff(&frame2).unwrap();
            assert!((moved.weighted(g) - base.m0).amax() < 1e-10);
            let q0 = horizontal_sff(
                &HypersurfaceFrame::from_parts(&p, df.clone(), standard_triple(1), a.clone())
                    .unwrap(),
            )
            .unwrap();
            let q1 = horizontal_sff(&frame2).unwrap();
            assert!(linalg::max_abs_vec(&(&q0.q3.beta[0] - &q1.q3.beta[0])) < 1e-9);
        }
    }

    #[test]
    fn horizontal_form_ignores_connection_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, df, a) = synthetic(7);
        let t = standard_triple(1);
        let base = horizontal_sff(
            &HypersurfaceFrame::from_parts(&p, df.clone(), t.clone(), a.clone()).unwrap(),
        )
        .unwrap();
        assert!(base.q3.max_abs() > 1e-3);
        for _ in 0..5 {
            let theta = gaussian_vec(&mut rng, 8);
            let delta = a_theta(&theta, &t).unwrap();
            let moved = &a - delta.contract_covector(&df);
            let q = horizontal_sff(
                &HypersurfaceFrame::from_parts(&p, df.clone(), t.clone(), moved).unwrap(),
            )
            .unwrap();
            assert!(q.q3.sub(&base.q3).max_abs() < 1e-9);
        }
    }

    #[test]
    fn pure_lambda1_input_has_no_q3() {
        let (_, frame) = sphere_frame(1, 8);
        let theta = DVector::from_vec(vec![0.3, -1.0, 0.2, 0.5]);
        let beta = pure_lambda1(&theta, &frame).unwrap();
        let (hat, q3) = sp1_project_lambda1(&beta, frame.h_triple()).unwrap();
        assert!(q3.max_abs() < 1e-12);
        assert!(linalg::max_abs_vec(&(hat - theta)) < 1e-12);
    }

    #[test]
    fn horizontal_form_requires_n_one() {
        let (_, frame) = sphere_frame(2, 1);
        assert!(matches!(
            horizontal_sff(&frame),
            Err(QcError::Unsupported(_))
        ));
    }

    #[test]
    fn model_forms_vanish_and_survive_changes() {
        let scheme = FdScheme::default();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let models = [flat_ball_model(1), alexandrov_model(1).unwrap()];
        for model in &models {
            let p = model.sample_hypersurface_point(&mut rng);
            let base = sff_at(model, &p, scheme).unwrap();
            assert!(base.conformal.max_abs() < 1e-6);
            assert!(base.horizontal.as_ref().unwrap().q3.max_abs() < 1e-6);
            let theta = gaussian_vec(&mut rng, model.dim());
            let moved = sff_at(&shifted_model(model, &theta), &p, scheme).unwrap();
            assert!((moved.conformal.m0 - base.conformal.m0).amax() < 1e-6);
            let factor =
                ScalarField::new("g", model.dim(), |x| 1.0 + 0.25 * x[0]).with_gradient(|x| {
                    let mut e = DVector::zeros(x.len());
                    e[0] = 0.25;
                    e
                });
            let g = 1.0 + 0.25 * p[0];
            let rescaled = sff_at(&model.conformally_rescaled(&factor), &p, scheme).unwrap();
            assert!((rescaled.conformal.weighted(g) - base.conformal.m0).amax() < 1e-6);
        }
    }

    #[test]
    fn flat_sphere_needs_no_connection_change() {
        let model = flat_ball_model(2);
        let p = model.sample_hypersurface_point(&mut ChaCha8Rng::seed_from_u64(6));
        let b = biquard_theta(&model, &p, FdScheme::default()).unwrap();
        assert!(b.residual <= 1e-5, "{b:?}");
        assert!(b.complement_gap <= 1e-6, "{b:?}");
    }

    #[test]
    fn connection_change_cancels_the_horizontal_derivative() {
        let model = flat_ball_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = model.sample_hypersurface_point(&mut rng);
        let theta = gaussian_vec(&mut rng, model.dim()) * 0.3;
        let shifted = shifted_model(&model, &theta);
        let b = biquard_theta(&shifted, &p, FdScheme::default()).unwrap();
        assert!(b.initial > 1e-3, "{b:?}");
        assert!(b.residual <= 1e-5, "{b:?}");
    }
}

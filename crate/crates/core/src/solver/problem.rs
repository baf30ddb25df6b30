//! The registration least-squares problem: transform parameters in, fuzzy
//! correspondence residuals out, plus a closed-form Jacobian for point
//! targets.
//!
//! Parameter layout: `[qw, qx, qy, qz, tx, ty, tz]` for rigid alignment and
//! the same plus a trailing `ln scale` for similarity. The quaternion block
//! is free (not constrained to unit length); every use normalizes it, and
//! the Jacobian chains through that normalization, so the radial direction
//! is simply a flat direction the damping handles.

use std::cell::RefCell;

use nalgebra::DMatrix;

use crate::energy::{
    gauss, logistic, residuals_from_sums, scaled_point_density, EvalContext, TargetSet,
};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Quaternion, SimilarityTransform};
use crate::solver::lm::LeastSquares;

/// Degrees of freedom the alignment is allowed to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformMode {
    Rigid,
    Similarity,
}

impl TransformMode {
    pub(crate) fn param_count(self) -> usize {
        match self {
            TransformMode::Rigid => 7,
            TransformMode::Similarity => 8,
        }
    }
}

pub(crate) fn params_from_transform(
    theta: &SimilarityTransform,
    mode: TransformMode,
) -> Result<Vec<f64>> {
    let q = theta.rotation();
    let mut params = vec![
        q.w,
        q.x,
        q.y,
        q.z,
        theta.translation.x,
        theta.translation.y,
        theta.translation.z,
    ];
    match mode {
        TransformMode::Rigid => {
            if (theta.scale() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "rigid alignment cannot start from a transform with scale {}",
                    theta.scale()
                )));
            }
        }
        TransformMode::Similarity => params.push(theta.scale().ln()),
    }
    Ok(params)
}

pub(crate) fn transform_from_params(
    params: &[f64],
    mode: TransformMode,
) -> Result<SimilarityTransform> {
    if params.len() != mode.param_count() {
        return Err(Error::InvalidParameter(format!(
            "expected {} parameters, got {}",
            mode.param_count(),
            params.len()
        )));
    }
    let q = Quaternion::new(params[0], params[1], params[2], params[3]);
    let t = Point3::new(params[4], params[5], params[6]);
    let scale = match mode {
        TransformMode::Rigid => 1.0,
        TransformMode::Similarity => {
            let s = params[7].exp();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Numerical(format!(
                    "log scale {} is out of range",
                    params[7]
                )));
            }
            s
        }
    };
    SimilarityTransform::new(q, t, scale)
}

/// Least-squares view of one alignment instance: the residual vector and its
/// Jacobian as functions of the raw parameter vector `[qw, qx, qy, qz, tx,
/// ty, tz]`, with a trailing `ln scale` in similarity mode. This is the
/// objective the registration driver minimizes at a single kernel width,
/// exposed so derivative checks and external optimizers can probe it
/// directly. Quaternion parameters are free; evaluation normalizes them.
pub fn alignment_problem(
    source: &crate::geometry::PointSet,
    target: &TargetSet,
    mode: TransformMode,
    kernel: &crate::energy::KernelConfig,
) -> Result<impl LeastSquares> {
    let ctx = EvalContext::new(target.clone(), kernel.validated()?)?;
    RegistrationProblem::new(source.as_slice().to_vec(), ctx, mode)
}

/// Source denominators cached by scale. For point targets they depend only
/// on the scale, so rigid solves compute them once per level and similarity
/// solves reuse them between the residual and Jacobian passes.
struct DensityCache {
    scale_bits: u64,
    dens: Vec<f64>,
    dens_dlog: Vec<f64>,
}

pub(crate) struct RegistrationProblem {
    source: Vec<Point3>,
    ctx: EvalContext,
    mode: TransformMode,
    cache: RefCell<Option<DensityCache>>,
}

/// Unit quaternion, its raw norm, translation, and scale decoded from a
/// parameter vector.
struct Decoded {
    q_unit: Quaternion,
    q_norm: f64,
    t: Point3,
    scale: f64,
}

impl RegistrationProblem {
    pub(crate) fn new(
        source: Vec<Point3>,
        ctx: EvalContext,
        mode: TransformMode,
    ) -> Result<RegistrationProblem> {
        if source.is_empty() {
            return Err(Error::DegenerateInput("empty registration source".into()));
        }
        Ok(RegistrationProblem {
            source,
            ctx,
            mode,
            cache: RefCell::new(None),
        })
    }

    pub(crate) fn source_len(&self) -> usize {
        self.source.len()
    }

    pub(crate) fn target_len(&self) -> usize {
        self.ctx.target_len()
    }

    fn decode(&self, params: &[f64]) -> Result<Decoded> {
        if params.len() != self.mode.param_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.mode.param_count(),
                params.len()
            )));
        }
        let q = Quaternion::new(params[0], params[1], params[2], params[3]);
        let q_norm = q.norm();
        if !(q_norm > 1e-12 && q_norm.is_finite()) {
            return Err(Error::Numerical(
                "quaternion parameters collapsed to zero".into(),
            ));
        }
        let q_unit = Quaternion::new(
            q.w / q_norm,
            q.x / q_norm,
            q.y / q_norm,
            q.z / q_norm,
        );
        let scale = match self.mode {
            TransformMode::Rigid => 1.0,
            TransformMode::Similarity => params[7].exp(),
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Numerical(format!(
                "scale parameter decoded to {scale}"
            )));
        }
        Ok(Decoded {
            q_unit,
            q_norm,
            t: Point3::new(params[4], params[5], params[6]),
            scale,
        })
    }

    fn transform_source(&self, d: &Decoded) -> Vec<Point3> {
        self.source
            .iter()
            .map(|&x| d.q_unit.rotate_unit(x) * d.scale + d.t)
            .collect()
    }

    /// Point-target source denominators (and their log-scale derivatives)
    /// at the given scale, from the cache when the scale matches.
    fn point_densities(&self, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let bits = scale.to_bits();
        let mut slot = self.cache.borrow_mut();
        if let Some(c) = slot.as_ref() {
            if c.scale_bits == bits {
                return (c.dens.clone(), c.dens_dlog.clone());
            }
        }
        let (dens, dens_dlog) = scaled_point_density(
            &self.source,
            scale,
            self.ctx.cfg.sigma,
            self.ctx.cfg.cutoff_sq(),
        );
        *slot = Some(DensityCache {
            scale_bits: bits,
            dens: dens.clone(),
            dens_dlog: dens_dlog.clone(),
        });
        (dens, dens_dlog)
    }

    fn point_jacobian(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        let dec = self.decode(params)?;
        let transformed = self.transform_source(&dec);
        let (dens_source, dens_dlog) = self.point_densities(dec.scale);
        let targets = match &self.ctx.target {
            TargetSet::Points(p) => p.as_slice(),
            TargetSet::Rays(_) => unreachable!("point Jacobian called with a ray target"),
        };

        let n_d = self.source.len();
        let n_s = targets.len();
        let n_p = self.mode.param_count();
        let cfg = &self.ctx.cfg;
        let sigma_sq = cfg.sigma * cfg.sigma;
        let inv_sigma_sq = 1.0 / sigma_sq;
        let a = cfg.alpha / n_d as f64;
        let b = (1.0 - cfg.alpha) / n_s as f64;
        let cutoff = cfg.cutoff_sq();
        let similarity = matches!(self.mode, TransformMode::Similarity);

        // Chain through quaternion normalization: d(q/|q|)/dq.
        let qh = [dec.q_unit.w, dec.q_unit.x, dec.q_unit.y, dec.q_unit.z];
        let mut qnorm_chain = [[0.0f64; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                let id = if r == c { 1.0 } else { 0.0 };
                qnorm_chain[r][c] = (id - qh[r] * qh[c]) / dec.q_norm;
            }
        }

        // Per source point: d(transformed)/d(raw quaternion), a 3x4 block,
        // plus the scaled rotated point (the log-scale column).
        let (w, vx, vy, vz) = (qh[0], qh[1], qh[2], qh[3]);
        let v = Point3::new(vx, vy, vz);
        let mut dq_blocks: Vec<[[f64; 4]; 3]> = Vec::with_capacity(n_d);
        let mut rotated_scaled: Vec<Point3> = Vec::with_capacity(n_d);
        for (idx, &x) in self.source.iter().enumerate() {
            let cx = v.cross(x);
            let vdx = v.dot(x);
            // Columns are derivatives of R(q^)x with respect to the four
            // unit-quaternion components before the normalization chain.
            let col_w = (x * w + cx) * 2.0;
            let mut unit = [[0.0f64; 4]; 3];
            let xa = [x.x, x.y, x.z];
            let va = [vx, vy, vz];
            // Skew(x) rows: row r of the matrix mapping u to x cross u.
            let skew = [
                [0.0, -x.z, x.y],
                [x.z, 0.0, -x.x],
                [-x.y, x.x, 0.0],
            ];
            let colw = [col_w.x, col_w.y, col_w.z];
            for r in 0..3 {
                unit[r][0] = colw[r];
                for c in 0..3 {
                    let id = if r == c { 1.0 } else { 0.0 };
                    unit[r][1 + c] =
                        2.0 * (vdx * id + va[r] * xa[c] - xa[r] * va[c] - w * skew[r][c]);
                }
            }
            // Multiply by the normalization chain and the scale.
            let mut block = [[0.0f64; 4]; 3];
            for r in 0..3 {
                for c in 0..4 {
                    let mut acc = 0.0;
                    for m in 0..4 {
                        acc += unit[r][m] * qnorm_chain[m][c];
                    }
                    block[r][c] = acc * dec.scale;
                }
            }
            dq_blocks.push(block);
            rotated_scaled.push(transformed[idx] - dec.t);
        }

        // One pass over interacting pairs accumulates, per source row, the
        // kernel sum and its weighted displacement, and per target column,
        // the kernel sum plus the full per-parameter gradient contribution
        // (each pair sees a different source point, so the column gradients
        // cannot be factored the way the row ones can).
        let mut row_sum = vec![0.0f64; n_d];
        let mut row_disp = vec![Point3::ORIGIN; n_d];
        let mut col_sum = vec![0.0f64; n_s];
        let mut col_grad = vec![0.0f64; n_s * n_p];
        let mut col_dens_term = vec![0.0f64; n_s];
        let mut candidates: Vec<u32> = Vec::new();

        for i in 0..n_d {
            let p = transformed[i];
            let inv_di = 1.0 / dens_source[i];
            // d(1/dens_i)/d(ln s) factor shared by every pair in this row.
            let dens_ratio = if similarity {
                dens_dlog[i] * inv_di * inv_di
            } else {
                0.0
            };
            let block = &dq_blocks[i];
            let rs = rotated_scaled[i];
            self.ctx.candidate_targets(p, &mut candidates);
            let mut u = 0.0;
            let mut acc = Point3::ORIGIN;
            for &j in &candidates {
                let j = j as usize;
                let d = p - targets[j];
                let d_sq = d.norm_squared();
                if cutoff.map_or(false, |c| d_sq > c) {
                    continue;
                }
                let kij = gauss(d_sq, cfg.sigma);
                let w_target = kij / self.ctx.dens_target[j];
                u += w_target;
                acc = acc + d * w_target;
                let coef = kij * inv_di;
                col_sum[j] += coef;
                let g = &mut col_grad[j * n_p..(j + 1) * n_p];
                for c in 0..4 {
                    g[c] += coef * (d.x * block[0][c] + d.y * block[1][c] + d.z * block[2][c]);
                }
                g[4] += coef * d.x;
                g[5] += coef * d.y;
                g[6] += coef * d.z;
                if similarity {
                    g[7] += coef * d.dot(rs);
                    col_dens_term[j] += kij * dens_ratio;
                }
            }
            row_sum[i] = u;
            row_disp[i] = acc;
        }

        let mut jac = DMatrix::zeros(n_d + n_s, n_p);
        for i in 0..n_d {
            let sig = logistic(cfg.k * row_sum[i]);
            let factor = a * cfg.k * sig * (1.0 - sig) * inv_sigma_sq;
            let acc = row_disp[i];
            let block = &dq_blocks[i];
            for c in 0..4 {
                jac[(i, c)] =
                    factor * (acc.x * block[0][c] + acc.y * block[1][c] + acc.z * block[2][c]);
            }
            jac[(i, 4)] = factor * acc.x;
            jac[(i, 5)] = factor * acc.y;
            jac[(i, 6)] = factor * acc.z;
            if similarity {
                jac[(i, 7)] = factor * acc.dot(rotated_scaled[i]);
            }
        }
        for j in 0..n_s {
            let sig = logistic(cfg.k * col_sum[j]);
            let factor = b * cfg.k * sig * (1.0 - sig);
            let g = &col_grad[j * n_p..(j + 1) * n_p];
            for c in 0..n_p {
                let dens_part = if similarity && c == 7 {
                    col_dens_term[j]
                } else {
                    0.0
                };
                jac[(n_d + j, c)] = factor * (g[c] * inv_sigma_sq + dens_part);
            }
        }
        Ok(jac)
    }
}

impl LeastSquares for RegistrationProblem {
    fn residuals(&self, params: &[f64]) -> Result<Vec<f64>> {
        let dec = self.decode(params)?;
        let transformed = self.transform_source(&dec);
        let dens_source = match &self.ctx.target {
            TargetSet::Points(_) => self.point_densities(dec.scale).0,
            TargetSet::Rays(_) => {
                self.ctx
                    .source_density(&self.source, &transformed, dec.scale)
            }
        };
        let (rows, cols) = self.ctx.sums(&transformed, &dens_source);
        Ok(residuals_from_sums(&self.ctx.cfg, &rows, &cols))
    }

    /// Closed form for point targets only. Ray targets go through finite
    /// differences because their source denominators depend on every
    /// transformed position through the sight-line geometry.
    fn jacobian(&self, params: &[f64]) -> Option<Result<DMatrix<f64>>> {
        match &self.ctx.target {
            TargetSet::Points(_) => Some(self.point_jacobian(params)),
            TargetSet::Rays(_) => None,
        }
    }
}

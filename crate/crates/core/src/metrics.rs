//! Ground-truth error metrics and the rotation-sweep robustness protocol.
//!
//! Registration quality is judged against a known transform by mean vertex
//! displacement, or against a reference mesh by exact point-to-surface
//! distance. The sweep harness perturbs the ground truth by growing rotations
//! about one axis, re-aligns centroids as the initial guess, and tabulates
//! per-trial errors for any registration backend; a naive point-to-point ICP
//! is included as the classical baseline those comparisons need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, Quaternion, SimilarityTransform};
use crate::solver::mix_seed;
use crate::voxel::Mesh;

/// Mean over the model's vertices of how far the two transforms disagree,
/// `mean ‖θ_est·v − θ_gt·v‖`, in model units.
pub fn mean_vertex_distance(
    theta_est: &SimilarityTransform,
    theta_gt: &SimilarityTransform,
    model: &PointSet,
) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::DegenerateInput(
            "vertex distance over an empty model".into(),
        ));
    }
    let mut sum = 0.0;
    for &v in model.as_slice() {
        sum += (theta_est.apply(v) - theta_gt.apply(v)).norm();
    }
    Ok(sum / model.len() as f64)
}

/// Distance from `p` to the segment `a..b`. A zero-length segment collapses
/// to the point distance.
fn point_segment_distance_sq(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    let t = if len_sq > 0.0 {
        ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm_squared()
}

/// Exact distance from a point to a filled triangle, by classifying which
/// region of the triangle's plane the point projects into (interior, one of
/// three edges, or one of three corners) and solving that region's
/// constrained minimization in closed form.
pub fn point_triangle_distance(p: Point3, tri: [Point3; 3]) -> f64 {
    let base = tri[0];
    let e0 = tri[1] - tri[0];
    let e1 = tri[2] - tri[0];
    let d = base - p;
    let a = e0.dot(e0);
    let b = e0.dot(e1);
    let c = e1.dot(e1);
    let dd = e0.dot(d);
    let e = e1.dot(d);
    let det = a * c - b * b;

    // Needle and point triangles have no usable plane; the minimum then
    // lies on an edge.
    if !(det > 1e-14 * a * c) || det <= f64::MIN_POSITIVE {
        let m = point_segment_distance_sq(p, tri[0], tri[1])
            .min(point_segment_distance_sq(p, tri[1], tri[2]))
            .min(point_segment_distance_sq(p, tri[2], tri[0]));
        return m.sqrt();
    }

    let mut s = b * e - c * dd;
    let mut t = b * dd - a * e;

    if s + t <= det {
        if s < 0.0 {
            if t < 0.0 {
                // Nearest the corner at `base`; walk whichever edge points
                // toward p.
                if dd < 0.0 {
                    t = 0.0;
                    s = (-dd / a).clamp(0.0, 1.0);
                } else {
                    s = 0.0;
                    t = if c > 0.0 { (-e / c).clamp(0.0, 1.0) } else { 0.0 };
                }
            } else {
                s = 0.0;
                t = if c > 0.0 { (-e / c).clamp(0.0, 1.0) } else { 0.0 };
            }
        } else if t < 0.0 {
            t = 0.0;
            s = (-dd / a).clamp(0.0, 1.0);
        } else {
            s /= det;
            t /= det;
        }
    } else if s < 0.0 {
        let tmp0 = b + dd;
        let tmp1 = c + e;
        if tmp1 > tmp0 {
            let numer = tmp1 - tmp0;
            let denom = a - 2.0 * b + c;
            s = (numer / denom).clamp(0.0, 1.0);
            t = 1.0 - s;
        } else {
            s = 0.0;
            t = if c > 0.0 { (-e / c).clamp(0.0, 1.0) } else { 0.0 };
        }
    } else if t < 0.0 {
        let tmp0 = b + e;
        let tmp1 = a + dd;
        if tmp1 > tmp0 {
            let numer = tmp1 - tmp0;
            let denom = a - 2.0 * b + c;
            t = (numer / denom).clamp(0.0, 1.0);
            s = 1.0 - t;
        } else {
            t = 0.0;
            s = (-dd / a).clamp(0.0, 1.0);
        }
    } else {
        let numer = c + e - b - dd;
        if numer <= 0.0 {
            s = 0.0;
        } else {
            let denom = a - 2.0 * b + c;
            s = (numer / denom).clamp(0.0, 1.0);
        }
        t = 1.0 - s;
    }

    (p - (base + e0 * s + e1 * t)).norm()
}

/// Mean and maximum over the cloud of the exact distance to the nearest
/// mesh face.
pub fn cloud_to_mesh_distance(cloud: &PointSet, mesh: &Mesh) -> Result<(f64, f64)> {
    if mesh.faces.is_empty() {
        return Err(Error::DegenerateInput(
            "cloud-to-mesh distance needs a mesh with faces".into(),
        ));
    }
    if cloud.is_empty() {
        return Err(Error::DegenerateInput(
            "cloud-to-mesh distance over an empty cloud".into(),
        ));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &p in cloud.as_slice() {
        let mut best = f64::INFINITY;
        for f in 0..mesh.faces.len() {
            let d = point_triangle_distance(p, mesh.face_vertices(f));
            if d < best {
                best = d;
            }
        }
        sum += best;
        max = max.max(best);
    }
    Ok((sum / cloud.len() as f64, max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Point3 {
        match self {
            Axis::X => Point3::new(1.0, 0.0, 0.0),
            Axis::Y => Point3::new(0.0, 1.0, 0.0),
            Axis::Z => Point3::new(0.0, 0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    fn index(self) -> u64 {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// One rotation sweep: perturbation angles about a single axis, repeated
/// trials per angle, optional scene corruption.
///
/// Noise is isotropic Gaussian with a standard deviation expressed as a
/// fraction of the scene's box diagonal; outliers are extra points drawn
/// uniformly in the scene's box inflated 1.5x about its center. Both default
/// to zero, leaving the scene untouched.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub axis: Axis,
    pub step_degrees: f64,
    pub range_degrees: (f64, f64),
    pub trials: usize,
    /// Gaussian noise sigma as a fraction of the scene box diagonal.
    pub noise_sigma: f64,
    /// Outlier count as a fraction of the scene size, appended per trial.
    pub outlier_fraction: f64,
    pub seed: u64,
    /// Mean-error bound for a trial to count as a success. `None` uses 1% of
    /// the model's box diagonal.
    pub success_threshold: Option<f64>,
}

impl SweepSpec {
    pub fn new(axis: Axis, step_degrees: f64, range_degrees: (f64, f64)) -> SweepSpec {
        SweepSpec {
            axis,
            step_degrees,
            range_degrees,
            trials: 1,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
            success_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_degrees > 0.0 && self.step_degrees.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sweep step must be positive, got {}",
                self.step_degrees
            )));
        }
        let (lo, hi) = self.range_degrees;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "sweep range must be ordered and finite, got ({lo}, {hi})"
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter(
                "sweep needs at least one trial per step".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.outlier_fraction >= 0.0 && self.outlier_fraction.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "outlier fraction must be non-negative, got {}",
                self.outlier_fraction
            )));
        }
        if let Some(t) = self.success_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "success threshold must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Angles `lo, lo+step, …` up to and including `hi` (within rounding).
    pub fn angles(&self) -> Vec<f64> {
        let (lo, hi) = self.range_degrees;
        let steps = ((hi - lo) / self.step_degrees + 1e-9).floor() as usize;
        (0..=steps).map(|i| lo + i as f64 * self.step_degrees).collect()
    }
}

/// One registration attempt inside a sweep. A registrar error becomes a
/// failed trial with infinite error rather than aborting the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTrial {
    pub axis: &'static str,
    pub angle_degrees: f64,
    pub trial: usize,
    pub mean_error: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub trials: Vec<SweepTrial>,
    /// Threshold the success flags were judged against.
    pub threshold: f64,
    pub success_rate: f64,
}

/// Mean error per angle, averaged over that angle's trials, in angle order.
impl SweepReport {
    pub fn per_angle_means(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for t in &self.trials {
            match out.last_mut() {
                Some((a, sum, n)) if *a == t.angle_degrees => {
                    *sum += t.mean_error;
                    *n += 1;
                }
                _ => out.push((t.angle_degrees, t.mean_error, 1)),
            }
        }
        out.into_iter().map(|(a, s, n)| (a, s / n as f64)).collect()
    }
}

/// Fraction of trials whose mean error lies strictly below `threshold`.
pub fn success_rate(report: &SweepReport, threshold: f64) -> Result<f64> {
    if report.trials.is_empty() {
        return Err(Error::InvalidParameter(
            "success rate over an empty report".into(),
        ));
    }
    let hits = report
        .trials
        .iter()
        .filter(|t| t.mean_error < threshold)
        .count();
    Ok(hits as f64 / report.trials.len() as f64)
}

/// Registration backend plugged into a sweep: given the model, the scene,
/// and an initial transform, produce an aligned transform.
pub trait Registrar {
    fn align(
        &mut self,
        model: &PointSet,
        scene: &PointSet,
        theta0: &SimilarityTransform,
    ) -> Result<SimilarityTransform>;
}

impl<F> Registrar for F
where
    F: FnMut(&PointSet, &PointSet, &SimilarityTransform) -> Result<SimilarityTransform>,
{
    fn align(
        &mut self,
        model: &PointSet,
        scene: &PointSet,
        theta0: &SimilarityTransform,
    ) -> Result<SimilarityTransform> {
        self(model, scene, theta0)
    }
}

/// Runs the rotation-robustness protocol about one axis.
///
/// For each angle in the grid and each trial: the ground-truth pose is
/// perturbed by that rotation, the model's centroid is re-aligned onto the
/// (possibly corrupted) scene's centroid to form the initial guess, the
/// registrar runs, and the mean vertex distance to the ground truth is
/// recorded. Everything is seeded, so a report is bit-identical across runs.
pub fn rotation_sweep<R: Registrar>(
    model: &PointSet,
    scene: &PointSet,
    theta_gt: &SimilarityTransform,
    spec: &SweepSpec,
    registrar: &mut R,
) -> Result<SweepReport> {
    spec.validate()?;
    if model.is_empty() || scene.is_empty() {
        return Err(Error::DegenerateInput(
            "sweep needs non-empty model and scene".into(),
        ));
    }
    let threshold = match spec.success_threshold {
        Some(t) => t,
        None => 0.01 * model.aabb()?.diagonal(),
    };
    let scene_bb = scene.aabb()?;
    let axis_seed = mix_seed(spec.seed, spec.axis.index());

    let mut trials = Vec::new();
    for (step_idx, angle) in spec.angles().into_iter().enumerate() {
        let rot = Quaternion::from_axis_angle(spec.axis.unit(), angle.to_radians())?;
        let perturb = SimilarityTransform::new(rot, Point3::ORIGIN, 1.0)?;
        let theta_rotated = perturb.compose(theta_gt);
        let step_seed = mix_seed(axis_seed, step_idx as u64);

        for trial in 0..spec.trials {
            let trial_seed = mix_seed(step_seed, trial as u64);
            let scene_trial = corrupt_scene(scene, &scene_bb.into(), spec, trial_seed);

            // Rotation about the origin also displaces the model; snapping
            // centroids together isolates the rotational part of the
            // perturbation, which is the quantity being swept.
            let moved = theta_rotated.apply_set(model).centroid()?;
            let delta = scene_trial.centroid()? - moved;
            let theta0 = SimilarityTransform::new(
                theta_rotated.rotation(),
                theta_rotated.translation + delta,
                theta_rotated.scale(),
            )?;

            let mean_error = match registrar.align(model, &scene_trial, &theta0) {
                Ok(est) => mean_vertex_distance(&est, theta_gt, model)?,
                Err(_) => f64::INFINITY,
            };
            trials.push(SweepTrial {
                axis: spec.axis.name(),
                angle_degrees: angle,
                trial,
                mean_error,
                success: mean_error < threshold,
            });
        }
    }
    let rate = trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64;
    Ok(SweepReport {
        trials,
        threshold,
        success_rate: rate,
    })
}

struct SceneBox {
    center: Point3,
    extents: Point3,
    diagonal: f64,
}

impl From<crate::geometry::Aabb> for SceneBox {
    fn from(bb: crate::geometry::Aabb) -> SceneBox {
        SceneBox {
            center: bb.center(),
            extents: bb.extents(),
            diagonal: bb.diagonal(),
        }
    }
}

fn corrupt_scene(scene: &PointSet, bb: &SceneBox, spec: &SweepSpec, seed: u64) -> PointSet {
    if spec.noise_sigma == 0.0 && spec.outlier_fraction == 0.0 {
        return scene.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = spec.noise_sigma * bb.diagonal;
    let mut points = Vec::with_capacity(scene.len());
    for &p in scene.as_slice() {
        points.push(if sigma > 0.0 {
            p + Point3::new(
                gaussian(&mut rng) * sigma,
                gaussian(&mut rng) * sigma,
                gaussian(&mut rng) * sigma,
            )
        } else {
            p
        });
    }
    let n_out = (spec.outlier_fraction * scene.len() as f64).round() as usize;
    for _ in 0..n_out {
        let h = bb.extents * 0.75; // half of the 1.5x inflated box
        points.push(
            bb.center
                + Point3::new(
                    rng.gen_range(-1.0..=1.0) * h.x,
                    rng.gen_range(-1.0..=1.0) * h.y,
                    rng.gen_range(-1.0..=1.0) * h.z,
                ),
        );
    }
    PointSet::new(points)
}

/// Standard normal draw via the Box-Muller transform.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Outcome of the ICP baseline. `degenerate` flags a correspondence cloud
/// with no usable covariance (for example, collinear points), in which case
/// the transform is the best one reached before the breakdown.
#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: SimilarityTransform,
    pub mean_squared_error: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

/// Classic point-to-point ICP, rigid only: nearest-neighbor correspondences,
/// closed-form fit (centroids plus covariance SVD with reflection repair),
/// repeat until the mean squared correspondence error stops improving.
///
/// Both half-steps minimize that error, so it never increases between
/// iterations. No initial transform parameter: start elsewhere by moving `d`
/// first and composing the result with the mover.
pub fn icp_baseline(
    d: &PointSet,
    s: &PointSet,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if d.len() < 3 || s.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "icp needs at least 3 points on each side, got {} and {}",
            d.len(),
            s.len()
        )));
    }
    if !(tol >= 0.0 && tol.is_finite()) || max_iters == 0 {
        return Err(Error::InvalidParameter(
            "icp needs tol >= 0 and at least one iteration".into(),
        ));
    }

    let mut theta = SimilarityTransform::IDENTITY;
    let mut current: Vec<Point3> = d.as_slice().to_vec();
    let mut prev_mse = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iters {
        // Correspondence half-step: nearest scene point per source point.
        let mut matched = Vec::with_capacity(current.len());
        let mut mse = 0.0;
        for &p in &current {
            let mut best = f64::INFINITY;
            let mut arg = s.as_slice()[0];
            for &q in s.as_slice() {
                let dist = (p - q).norm_squared();
                if dist < best {
                    best = dist;
                    arg = q;
                }
            }
            matched.push(arg);
            mse += best;
        }
        mse /= current.len() as f64;
        if prev_mse - mse < tol {
            prev_mse = mse.min(prev_mse);
            break;
        }
        prev_mse = mse;
        iterations += 1;

        // Fit half-step: closed-form rigid transform onto the matches.
        let n = current.len() as f64;
        let mut cd = Point3::ORIGIN;
        let mut cs = Point3::ORIGIN;
        for (&p, &q) in current.iter().zip(&matched) {
            cd = cd + p;
            cs = cs + q;
        }
        cd = cd / n;
        cs = cs / n;
        let mut h = nalgebra::Matrix3::<f64>::zeros();
        for (&p, &q) in current.iter().zip(&matched) {
            let a = p - cd;
            let b = q - cs;
            h += nalgebra::Vector3::new(a.x, a.y, a.z)
                * nalgebra::RowVector3::new(b.x, b.y, b.z);
        }
        let svd = h.svd(true, true);
        let sv = svd.singular_values;
        let largest = sv.max();
        if !(largest > 0.0) || sv[1] <= 1e-12 * largest {
            return Ok(IcpResult {
                transform: theta,
                mean_squared_error: prev_mse,
                iterations,
                degenerate: true,
            });
        }
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = vt.transpose() * u.transpose();
        if r.determinant() < 0.0 {
            // Repair a reflection by flipping the least-significant axis.
            let mut flip = nalgebra::Matrix3::identity();
            flip[(2, 2)] = -1.0;
            r = vt.transpose() * flip * u.transpose();
        }
        let rot = quaternion_from_matrix(&r);
        let rcd = rot.rotate_unit(cd);
        let t = cs - rcd;
        let incr = SimilarityTransform::new(rot, t, 1.0)?;
        theta = incr.compose(&theta);
        for p in &mut current {
            *p = incr.apply(*p);
        }
    }

    Ok(IcpResult {
        transform: theta,
        mean_squared_error: prev_mse,
        iterations,
        degenerate: false,
    })
}

/// Unit quaternion of a proper rotation matrix (Shepperd's branch rule keeps
/// every case away from a small divisor).
fn quaternion_from_matrix(r: &nalgebra::Matrix3<f64>) -> Quaternion {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    Quaternion::new(w / norm, x / norm, y / norm, z / norm)
}

/// Sweep backend that moves the model by the initial guess, runs the ICP
/// baseline from there, and composes the two. A degenerate ICP breakdown is
/// reported as an error so sweeps record it as a failed trial.
pub fn icp_registrar(
    max_iters: usize,
    tol: f64,
) -> impl FnMut(&PointSet, &PointSet, &SimilarityTransform) -> Result<SimilarityTransform> {
    move |model, scene, theta0| {
        let moved = theta0.apply_set(model);
        let out = icp_baseline(&moved, scene, max_iters, tol)?;
        if out.degenerate {
            return Err(Error::Numerical(
                "icp covariance collapsed before convergence".into(),
            ));
        }
        Ok(out.transform.compose(theta0))
    }
}

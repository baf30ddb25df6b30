//! Coarse-to-fine registration drivers.
//!
//! Both drivers work in normalized coordinates: point targets supply a
//! unit-cube map built from the target alone, ray targets a scale about the
//! origin built from the source (rays pass through the origin, so a
//! centering shift would break them). The kernel-width schedule is walked
//! from coarse to fine, each level warm-starting the next, and the result is
//! mapped back to the original frame at the end.

use crate::energy::{EvalContext, KernelConfig, RayBundle, TargetSet};
use crate::error::{Error, Result};
use crate::geometry::{
    denormalize_transform, subsample, subsample_indices, Normalization, PointSet,
    SimilarityTransform,
};
use crate::solver::lm::{lm_minimize, JacobianMode, LmConfig, Termination};
use crate::solver::problem::{
    params_from_transform, transform_from_params, RegistrationProblem, TransformMode,
};
use crate::solver::schedule::Schedule;

/// One ladder level as the solver actually ran it.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub sigma: f64,
    pub source_count: usize,
    pub target_count: usize,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// The damping limit was hit at this level. The best parameters found
    /// still feed the next level.
    pub exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Alignment in the original coordinates of the inputs.
    pub transform: SimilarityTransform,
    /// True when the finest level stopped on its own tolerances and the
    /// result beat the starting guess there. Degenerate inputs and iteration
    /// exhaustion clear it.
    pub converged: bool,
    /// Energy at the returned parameters on the finest level, in normalized
    /// coordinates.
    pub final_energy: f64,
    pub levels: Vec<LevelRecord>,
}

/// Splitmix-style mixer deriving independent per-level draw seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Coarse levels never draw fewer points than this. Subsampling buys speed
/// on large clouds; a handful of points makes the averaged scores
/// meaningless and sends the warm start somewhere arbitrary.
const LEVEL_FLOOR: usize = 32;

fn level_count(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).round() as usize).clamp(LEVEL_FLOOR.min(total), total)
}

fn energy_at(problem: &RegistrationProblem, params: &[f64]) -> Result<f64> {
    use crate::solver::lm::LeastSquares;
    Ok(problem
        .residuals(params)?
        .iter()
        .map(|e| e * e)
        .sum())
}

fn renormalize_quaternion(params: &mut [f64]) -> Result<()> {
    let n = (params[0] * params[0]
        + params[1] * params[1]
        + params[2] * params[2]
        + params[3] * params[3])
        .sqrt();
    if !(n > 1e-12 && n.is_finite()) {
        return Err(Error::Numerical(
            "quaternion parameters collapsed during optimization".into(),
        ));
    }
    for p in &mut params[..4] {
        *p /= n;
    }
    Ok(())
}

struct LadderOutcome {
    params: Vec<f64>,
    records: Vec<LevelRecord>,
    /// Finest-level termination; absent when that level exhausted damping.
    final_termination: Option<Termination>,
    final_problem: RegistrationProblem,
}

/// Walks the schedule, warm-starting each level with the previous result.
/// A level that exhausts its damping budget does not abort the ladder; its
/// best parameters feed the next level and the record notes the failure.
fn run_ladder<F>(
    levels: &[(f64, f64)],
    params0: Vec<f64>,
    lm: &LmConfig,
    build: F,
) -> Result<LadderOutcome>
where
    F: Fn(usize, f64, f64) -> Result<RegistrationProblem>,
{
    let mut params = params0;
    let mut records = Vec::with_capacity(levels.len());
    let mut final_termination = None;
    let mut final_problem = None;
    for (idx, &(sigma, fraction)) in levels.iter().enumerate() {
        let problem = build(idx, sigma, fraction)?;
        let initial_energy = energy_at(&problem, &params)?;
        match lm_minimize(&problem, &params, lm) {
            Ok(out) => {
                params = out.params;
                records.push(LevelRecord {
                    sigma,
                    source_count: problem.source_len(),
                    target_count: problem.target_len(),
                    iterations: out.stats.iterations,
                    accepted_steps: out.stats.accepted_steps,
                    initial_energy,
                    final_energy: out.stats.final_energy,
                    exhausted: false,
                });
                final_termination = Some(out.stats.termination);
            }
            Err(Error::OptimizationFailed {
                best_params,
                best_energy,
                iterations,
                ..
            }) => {
                params = best_params;
                records.push(LevelRecord {
                    sigma,
                    source_count: problem.source_len(),
                    target_count: problem.target_len(),
                    iterations,
                    accepted_steps: 0,
                    initial_energy,
                    final_energy: best_energy,
                    exhausted: true,
                });
                final_termination = None;
            }
            Err(other) => return Err(other),
        }
        renormalize_quaternion(&mut params)?;
        final_problem = Some(problem);
    }
    Ok(LadderOutcome {
        params,
        records,
        final_termination,
        final_problem: final_problem.expect("schedules always have at least one level"),
    })
}

/// Aligns `source` onto `target`, returning the transform in the original
/// coordinates.
///
/// `kernel.sigma` is ignored; each level takes its width from the schedule.
/// Without a starting guess the solve begins at the identity rotation with
/// the translation that matches the two centroids. If the full ladder ends
/// somewhere worse than that start (measured on the finest level), the start
/// is returned instead and the result is marked not converged.
pub fn register(
    source: &PointSet,
    target: &PointSet,
    theta0: Option<&SimilarityTransform>,
    mode: TransformMode,
    schedule: &Schedule,
    kernel: &KernelConfig,
    lm: &LmConfig,
) -> Result<RegistrationResult> {
    if source.is_empty() {
        return Err(Error::DegenerateInput("empty registration source".into()));
    }
    if target.is_empty() {
        return Err(Error::DegenerateInput("empty registration target".into()));
    }
    let norm = Normalization::unit_cube(target)?;
    let source_u = norm.apply_set(source);
    let target_u = norm.apply_set(target);

    let params0 = match theta0 {
        Some(t) => {
            let fwd = norm.as_transform();
            let theta_u = fwd.compose(&t.compose(&fwd.inverse()));
            params_from_transform(&theta_u, mode)?
        }
        None => {
            let t = target_u.centroid()? - source_u.centroid()?;
            let shift = SimilarityTransform::translation_only(t);
            params_from_transform(&shift, mode)?
        }
    };

    let levels = schedule.levels()?;
    let outcome = run_ladder(&levels, params0.clone(), lm, |idx, sigma, fraction| {
        let n_src = level_count(source_u.len(), fraction);
        let n_tgt = level_count(target_u.len(), fraction);
        let src = subsample(&source_u, n_src, mix_seed(schedule.seed, 2 * idx as u64))?;
        let tgt = subsample(
            &target_u,
            n_tgt,
            mix_seed(schedule.seed, 2 * idx as u64 + 1),
        )?;
        let cfg = kernel.with_sigma(sigma)?;
        let ctx = EvalContext::new(TargetSet::Points(tgt), cfg)?;
        RegistrationProblem::new(src.as_slice().to_vec(), ctx, mode)
    })?;

    finish(outcome, &params0, mode, &norm, false)
}

/// Aligns `source` onto a bundle of sight lines through the origin. The
/// alignment is rigid; `lm` must use finite differences because sight-line
/// residuals have no closed-form Jacobian here.
///
/// Without a starting guess the solve begins at the identity. A bundle of
/// near-parallel rays cannot pin down a pose, so the result is flagged not
/// converged when the direction spread is degenerate.
///
/// Two properties of sight-line energies shape how this should be used.
/// Every ray meets the origin, so poses that push the cloud toward the
/// origin score well; the aligned pose is a local basin, not the global
/// optimum. Start the ladder near the expected miss distance rather than
/// far above it, and prefer dense bundles, which deepen the aligned basin.
/// Depth along the rays is close to unobservable, so the finest level tends
/// to spend its whole iteration budget creeping along that soft direction;
/// judge the result by an angular or image-plane error rather than by the
/// convergence flag alone.
pub fn register_rays(
    source: &PointSet,
    rays: &RayBundle,
    theta0: Option<&SimilarityTransform>,
    schedule: &Schedule,
    kernel: &KernelConfig,
    lm: &LmConfig,
) -> Result<RegistrationResult> {
    if source.is_empty() {
        return Err(Error::DegenerateInput("empty registration source".into()));
    }
    if rays.is_empty() {
        return Err(Error::DegenerateInput("empty ray bundle".into()));
    }
    if lm.jacobian == JacobianMode::Analytic {
        return Err(Error::InvalidParameter(
            "sight-line alignment has no closed-form Jacobian; use finite differences".into(),
        ));
    }
    let norm = Normalization::scale_about_origin(source)?;
    let source_u = norm.apply_set(source);

    let params0 = match theta0 {
        Some(t) => {
            let fwd = norm.as_transform();
            let theta_u = fwd.compose(&t.compose(&fwd.inverse()));
            params_from_transform(&theta_u, TransformMode::Rigid)?
        }
        None => params_from_transform(&SimilarityTransform::IDENTITY, TransformMode::Rigid)?,
    };

    let degenerate = ray_directions_degenerate(rays);

    let levels = schedule.levels()?;
    let outcome = run_ladder(&levels, params0.clone(), lm, |idx, sigma, fraction| {
        let n_src = level_count(source_u.len(), fraction);
        let n_ray = level_count(rays.len(), fraction);
        let src = subsample(&source_u, n_src, mix_seed(schedule.seed, 2 * idx as u64))?;
        let ray_idx = subsample_indices(rays.len(), n_ray, mix_seed(schedule.seed, 2 * idx as u64 + 1))?;
        let bundle = RayBundle::new(ray_idx.iter().map(|&i| rays.rays[i]).collect());
        let cfg = kernel.with_sigma(sigma)?;
        let ctx = EvalContext::new(TargetSet::Rays(bundle), cfg)?;
        RegistrationProblem::new(src.as_slice().to_vec(), ctx, TransformMode::Rigid)
    })?;

    finish(outcome, &params0, TransformMode::Rigid, &norm, degenerate)
}

/// Direction spread test: the second-largest eigenvalue of the direction
/// scatter vanishing means every ray is (anti)parallel, which leaves the
/// pose unobservable along and about that axis.
fn ray_directions_degenerate(rays: &RayBundle) -> bool {
    let mut scatter = [[0.0f64; 3]; 3];
    for r in &rays.rays {
        let d = r.dir();
        let v = [d.x, d.y, d.z];
        for a in 0..3 {
            for b in 0..3 {
                scatter[a][b] += v[a] * v[b];
            }
        }
    }
    let m = nalgebra::Matrix3::from_fn(|r, c| scatter[r][c]);
    let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).expect("scatter eigenvalues are finite"));
    eig[1] <= 1e-9 * eig[0].max(f64::MIN_POSITIVE)
}

/// Common tail: compare the ladder result against the starting guess on the
/// finest level, decide convergence, and map back to original coordinates.
fn finish(
    outcome: LadderOutcome,
    params0: &[f64],
    mode: TransformMode,
    norm: &Normalization,
    degenerate: bool,
) -> Result<RegistrationResult> {
    let LadderOutcome {
        mut params,
        records,
        final_termination,
        final_problem,
    } = outcome;

    let mut converged = matches!(
        final_termination,
        Some(Termination::StepTol | Termination::EnergyTol)
    );
    let mut final_energy = records
        .last()
        .expect("schedules always have at least one level")
        .final_energy;

    // A ladder can wander: coarse levels reshape the energy surface, so the
    // end of the walk is not guaranteed to beat the starting guess on the
    // finest level. Hand back the start rather than something worse. The
    // convergence flag only reacts to gaps far above the solver's own
    // stopping resolution (it may leave up to ~1e-9 relative improvement
    // unclaimed per level); a wrong pose costs orders of magnitude more
    // energy than that, while a walk that parks within rounding of its
    // start has simply confirmed the start.
    let start_energy = energy_at(&final_problem, params0)?;
    if start_energy < final_energy {
        let gap = final_energy - start_energy;
        params = params0.to_vec();
        final_energy = start_energy;
        if gap > 1e-6 * start_energy.max(f64::MIN_POSITIVE) {
            converged = false;
        }
    }
    if degenerate {
        converged = false;
    }

    let theta_unit = transform_from_params(&params, mode)?;
    Ok(RegistrationResult {
        transform: denormalize_transform(&theta_unit, norm),
        converged,
        final_energy,
        levels: records,
    })
}

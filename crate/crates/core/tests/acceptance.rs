//! Release gate. Every test here guards one numbered claim about the library:
//! score math agrees with an independent reference, derivatives check out,
//! score bounds hold, rigid and similarity poses are recovered under
//! corruption across a wide rotation sweep, ray alignment reaches pixel
//! accuracy, the voxelizer is exact on known solids, and repeated runs are
//! bit-identical. Each test prints a single `criterion NN: PASS/FAIL` line;
//! tolerances and budgets are pinned as constants next to the tests that use
//! them. Heavy campaigns run once, sequentially, inside a shared fixture and
//! are reused by every criterion that reads them.

mod common;

use common::*;
use fuzzyreg::energy::{self, KernelConfig, TargetSet, Truncation};
use fuzzyreg::voxel::{morph_close, voxelize_surface};
use fuzzyreg::{
    alignment_problem, fd_jacobian, icp_registrar, mean_vertex_distance, mesh_to_pointset,
    project_points, register, register_rays, rotation_sweep, Axis, CameraIntrinsics,
    JacobianMode, LeastSquares, LmConfig, Mesh, Point3, PointSet, Quaternion, Ray, Registrar,
    Schedule, SimilarityTransform, SweepReport, SweepSpec, TransformMode, VoxelGrid,
};
use fuzzyreg::energy::RayBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

// Agreement bounds.
const ORACLE_REL: f64 = 1e-12;
const FD_SELF_REL: f64 = 1e-3;
const ANALYTIC_REL: f64 = 1e-4;

// Recovery bounds.
const SWEEP_SUCCESS_FLOOR: f64 = 0.90;
const VERTEX_ERR_FRACTION: f64 = 0.01;
const SCALE_REL_TOL: f64 = 0.02;
const MEAN_PX_BOUND: f64 = 2.0;
const P95_PX_BOUND: f64 = 3.0;
const TRIALS_REQUIRED: usize = 9;

// Wall-clock budgets.
const ORACLE_BUDGET: Duration = Duration::from_secs(1);
const JACOBIAN_BUDGET: Duration = Duration::from_secs(10);
const BOUNDS_BUDGET: Duration = Duration::from_secs(5);
const SWEEP_BUDGET: Duration = Duration::from_secs(15 * 60);
const SIMILARITY_BUDGET: Duration = Duration::from_secs(10 * 60);
const RAY_BUDGET: Duration = Duration::from_secs(5 * 60);
const VOXEL_BUDGET: Duration = Duration::from_secs(30);

fn verdict(criterion: &str, ok: bool, detail: String) {
    println!("{criterion}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared campaigns. The rotation sweeps, the similarity trials, and the ray
// trials are expensive, and the determinism criterion needs each of them run
// twice with identical seeds. One initializer does all of that work on a
// single thread and stores per-campaign wall times measured without any other
// campaign running, so the budget checks are not distorted by test-thread
// contention.
// ---------------------------------------------------------------------------

struct SimTrialOutcome {
    truth_scale: f64,
    scale_rel_err: f64,
    vertex_err: f64,
    scene_diag: f64,
    transform: SimilarityTransform,
}

struct RayTrialOutcome {
    mean_px: f64,
    p95_px: f64,
    transform: SimilarityTransform,
}

struct Campaigns {
    scene_diag: f64,
    vertex_threshold: f64,
    fuzzy: [SweepReport; 3],
    fuzzy_elapsed: Duration,
    fuzzy_rerun: [SweepReport; 3],
    icp: [SweepReport; 3],
    sim: Vec<SimTrialOutcome>,
    sim_elapsed: Duration,
    sim_rerun: Vec<SimTrialOutcome>,
    rays: Vec<RayTrialOutcome>,
    rays_elapsed: Duration,
    rays_rerun: Vec<RayTrialOutcome>,
}

fn campaigns() -> &'static Campaigns {
    static CAMPAIGNS: OnceLock<Campaigns> = OnceLock::new();
    CAMPAIGNS.get_or_init(|| {
        // The recovery fixture: a 2000-point asymmetric surface as the scene,
        // and a measurement of it as the model: a random 60% subset, isotropic
        // Gaussian jitter at 0.5% of the box diagonal, and 10% uniform
        // outliers. Ground truth is the identity; the sweep perturbs it.
        let scene = lumpy_shape(2000);
        let model = corrupt_subset(&scene, 0.6, 0.005, 0.10, 42);
        let scene_diag = scene.aabb().unwrap().diagonal();
        let vertex_threshold = VERTEX_ERR_FRACTION * scene_diag;

        let t = Instant::now();
        let fuzzy = run_rotation_sweeps(&model, &scene, vertex_threshold, &mut fuzzy_registrar());
        let fuzzy_elapsed = t.elapsed();
        let fuzzy_rerun =
            run_rotation_sweeps(&model, &scene, vertex_threshold, &mut fuzzy_registrar());
        let icp =
            run_rotation_sweeps(&model, &scene, vertex_threshold, &mut icp_registrar(100, 1e-9));

        let t = Instant::now();
        let sim = run_similarity_campaign();
        let sim_elapsed = t.elapsed();
        let sim_rerun = run_similarity_campaign();

        let t = Instant::now();
        let rays = run_ray_campaign();
        let rays_elapsed = t.elapsed();
        let rays_rerun = run_ray_campaign();

        Campaigns {
            scene_diag,
            vertex_threshold,
            fuzzy,
            fuzzy_elapsed,
            fuzzy_rerun,
            icp,
            sim,
            sim_elapsed,
            sim_rerun,
            rays,
            rays_elapsed,
            rays_rerun,
        }
    })
}

fn sweep_kernel() -> KernelConfig {
    KernelConfig { sigma: 0.5, k: 2.0, alpha: 0.5, truncation: Truncation::Cutoff(4.0) }
}

fn analytic_lm() -> LmConfig {
    LmConfig { jacobian: JacobianMode::Analytic, ..LmConfig::default() }
}

fn fuzzy_registrar(
) -> impl FnMut(&PointSet, &PointSet, &SimilarityTransform) -> fuzzyreg::Result<SimilarityTransform>
{
    |model, scene, theta0| {
        register(
            model,
            scene,
            Some(theta0),
            TransformMode::Rigid,
            &Schedule::default(),
            &sweep_kernel(),
            &analytic_lm(),
        )
        .map(|r| r.transform)
    }
}

/// 0 to 60 degrees in 5-degree steps about each axis, one seeded trial per
/// step. The model already carries its corruption, so the per-trial scene
/// corruption stays off.
fn run_rotation_sweeps<R: Registrar>(
    model: &PointSet,
    scene: &PointSet,
    threshold: f64,
    registrar: &mut R,
) -> [SweepReport; 3] {
    [Axis::X, Axis::Y, Axis::Z].map(|axis| {
        let spec = SweepSpec {
            seed: 7,
            success_threshold: Some(threshold),
            ..SweepSpec::new(axis, 5.0, (0.0, 60.0))
        };
        rotation_sweep(model, scene, &SimilarityTransform::IDENTITY, &spec, registrar)
            .expect("sweep over a non-degenerate fixture")
    })
}

/// Ten seeded similarity recoveries cycling the ground-truth scale through
/// {0.5, 0.75, 1.5, 2.0} under a 20-degree rotation, starting from a centered
/// initialization whose scale guess is the ratio of box diagonals.
fn run_similarity_campaign() -> Vec<SimTrialOutcome> {
    const SCALES: [f64; 10] = [0.5, 0.75, 1.5, 2.0, 0.5, 0.75, 1.5, 2.0, 1.5, 2.0];
    let base = lumpy_shape(1200);
    SCALES
        .iter()
        .enumerate()
        .map(|(i, &truth_scale)| {
            let truth = SimilarityTransform::new(
                Quaternion::from_axis_angle(Point3::new(0.2, 1.0, 0.1), 20f64.to_radians())
                    .unwrap(),
                Point3::new(0.3, -0.1, 0.2),
                truth_scale,
            )
            .unwrap();
            let model = corrupt_subset(&base, 0.6, 0.003, 0.05, 900 + i as u64);
            let scene = truth.apply_set(&base);
            let scene_diag = scene.aabb().unwrap().diagonal();

            let s0 = scene_diag / model.aabb().unwrap().diagonal();
            let shift = scene.centroid().unwrap() - model.centroid().unwrap() * s0;
            let theta0 = SimilarityTransform::new(Quaternion::IDENTITY, shift, s0).unwrap();

            let r = register(
                &model,
                &scene,
                Some(&theta0),
                TransformMode::Similarity,
                &Schedule { seed: i as u64, ..Schedule::default() },
                &sweep_kernel(),
                &analytic_lm(),
            )
            .expect("similarity fixture is well posed");
            SimTrialOutcome {
                truth_scale,
                scale_rel_err: (r.transform.scale() - truth_scale).abs() / truth_scale,
                vertex_err: mean_vertex_distance(&r.transform, &truth, &model).unwrap(),
                scene_diag,
                transform: r.transform,
            }
        })
        .collect()
}

fn fixture_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
}

/// One seeded camera-alignment trial: 500 points filling the view frustum at
/// depths 3 to 6, target rays through their true projections, and a start
/// pose that is 10 degrees plus a translation of 10% of the mean depth away
/// from the truth.
fn ray_trial(trial: u64) -> RayTrialOutcome {
    let cam = fixture_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(7700 + trial);
    let mut pts = Vec::with_capacity(500);
    for _ in 0..500 {
        let z = rng.gen_range(3.0..6.0);
        let u = rng.gen_range(20.0..620.0);
        let v = rng.gen_range(20.0..460.0);
        pts.push(Point3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z));
    }
    let world = PointSet::new(pts);
    let rays = RayBundle::new(
        world.as_slice().iter().map(|&p| Ray::new(p).expect("points sit off the origin")).collect(),
    );

    let depth = 4.5;
    let axis = Point3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let nudge = 0.1 * depth / 3f64.sqrt();
    let theta0 = SimilarityTransform::new(
        Quaternion::from_axis_angle(axis, 10f64.to_radians()).unwrap(),
        Point3::new(
            rng.gen_range(-1.0..1.0) * nudge,
            rng.gen_range(-1.0..1.0) * nudge,
            rng.gen_range(-1.0..1.0) * nudge,
        ),
        1.0,
    )
    .unwrap();

    let r = register_rays(
        &world,
        &rays,
        Some(&theta0),
        &Schedule {
            sigma0: 0.1,
            sigma_final: 0.01,
            sigma_factor: 2.0,
            resolution_fractions: vec![0.25, 0.5, 1.0],
            seed: trial,
        },
        &KernelConfig { sigma: 0.1, k: 2.0, alpha: 0.5, truncation: Truncation::Exact },
        &LmConfig { max_iters: 40, ..LmConfig::default() },
    )
    .expect("ray fixture is well posed");

    let truth_px = project_points(&cam, &SimilarityTransform::IDENTITY, &world);
    let est_px = project_points(&cam, &r.transform, &world);
    let mut errs: Vec<f64> = truth_px
        .iter()
        .zip(&est_px)
        .map(|(gt, est)| {
            let gt = gt.as_ref().expect("ground-truth points are in front of the camera");
            let est = est.as_ref().expect("a 10-degree start cannot push points behind");
            ((gt.u - est.u).powi(2) + (gt.v - est.v).powi(2)).sqrt()
        })
        .collect();
    errs.sort_by(|a, b| a.partial_cmp(b).expect("pixel errors are finite"));
    let mean_px = errs.iter().sum::<f64>() / errs.len() as f64;
    let p95_px = errs[(errs.len() as f64 * 0.95) as usize];
    RayTrialOutcome { mean_px, p95_px, transform: r.transform }
}

fn run_ray_campaign() -> Vec<RayTrialOutcome> {
    (0..10).map(ray_trial).collect()
}

fn transform_bits(t: &SimilarityTransform) -> [u64; 8] {
    let q = t.rotation();
    [
        q.w.to_bits(),
        q.x.to_bits(),
        q.y.to_bits(),
        q.z.to_bits(),
        t.translation.x.to_bits(),
        t.translation.y.to_bits(),
        t.translation.z.to_bits(),
        t.scale().to_bits(),
    ]
}

// ---------------------------------------------------------------------------
// 01: scores and energy match an independent brute-force reference.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_scores_match_independent_reference() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sigmas = [0.05, 0.2, 0.5];
    let mut worst = 0.0f64;
    for inst in 0..25u64 {
        let cfg = KernelConfig {
            sigma: sigmas[(inst % 3) as usize],
            k: 2.0,
            alpha: 0.5,
            truncation: Truncation::Exact,
        };
        let source = random_cloud(rng.gen_range(1..=20), 5000 + inst, 1.0);
        let target_pts = random_cloud(rng.gen_range(1..=20), 9000 + inst, 1.0);
        let target = TargetSet::Points(target_pts);

        let p = energy::proximity(&source, &target, &cfg).unwrap();
        let c = energy::coverage(&source, &target, &cfg).unwrap();
        let e = energy::energy(&SimilarityTransform::IDENTITY, &source, &target, &cfg).unwrap();

        let rp = ref_proximity(source.as_slice(), &target, &cfg);
        let rc = ref_coverage(source.as_slice(), &target, &cfg);
        let re = ref_energy(&SimilarityTransform::IDENTITY, &source, &target, &cfg);

        for (got, want, what) in [(p, rp, "proximity"), (c, rc, "coverage"), (e, re, "energy")] {
            let gap = (got - want).abs() / got.abs().max(want.abs()).max(1e-300);
            worst = worst.max(gap);
            assert!(
                rel_close(got, want, ORACLE_REL),
                "instance {inst}: {what} {got} vs reference {want}"
            );
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "criterion 01",
        worst <= ORACLE_REL && elapsed <= ORACLE_BUDGET,
        format!("25 instances, worst relative gap {worst:.2e}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 02: numeric derivatives are self-consistent and the analytic Jacobian
// agrees with central differences.
// ---------------------------------------------------------------------------

fn jacobian_probe_params(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p = vec![
        rng.gen_range(0.6..1.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    ];
    if n == 8 {
        p.push(rng.gen_range(-0.3..0.3));
    }
    p
}

#[test]
fn criterion_02_jacobians_are_consistent() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst_fd = 0.0f64;
    let mut worst_an = 0.0f64;
    for probe in 0..20 {
        let mode = if probe % 2 == 0 { TransformMode::Rigid } else { TransformMode::Similarity };
        let n_params = if mode == TransformMode::Rigid { 7 } else { 8 };
        let source = random_cloud(rng.gen_range(4..=12), 300 + probe, 0.5);
        let target = TargetSet::Points(random_cloud(rng.gen_range(4..=12), 600 + probe, 0.5));
        let cfg = KernelConfig {
            sigma: rng.gen_range(0.2..0.5),
            k: 2.0,
            alpha: 0.5,
            truncation: Truncation::Exact,
        };
        let problem = alignment_problem(&source, &target, mode, &cfg).unwrap();
        let params = jacobian_probe_params(&mut rng, n_params);

        // A difference quotient cannot resolve derivatives below the rounding
        // jitter of the residuals it subtracts, about eps·|r| spread over the
        // step. Entries under that line are compared absolutely against it;
        // everything above is held to the relative tolerance.
        let r_amax =
            problem.residuals(&params).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let atol = 4.0 * f64::EPSILON * r_amax / 1e-7;

        let coarse = fd_jacobian(&problem, &params, 1e-6).unwrap();
        let fine = fd_jacobian(&problem, &params, 1e-7).unwrap();
        worst_fd = worst_fd.max(agreement_excess(&coarse, &fine, FD_SELF_REL, atol));
        assert!(
            worst_fd <= 1.0,
            "probe {probe}: step sizes 1e-6 and 1e-7 disagree, worst allowance ratio {worst_fd:.3}"
        );

        let analytic = problem
            .jacobian(&params)
            .expect("point alignment carries closed-form derivatives")
            .unwrap();
        worst_an = worst_an.max(agreement_excess(&analytic, &fine, ANALYTIC_REL, atol));
        assert!(
            worst_an <= 1.0,
            "probe {probe}: analytic vs central difference, worst allowance ratio {worst_an:.3}"
        );
    }
    let elapsed = t.elapsed();
    verdict(
        "criterion 02",
        worst_fd <= 1.0 && worst_an <= 1.0 && elapsed <= JACOBIAN_BUDGET,
        format!(
            "20 probes, worst allowance ratios: step halving {worst_fd:.3} (rel {FD_SELF_REL:.0e}), \
             analytic {worst_an:.3} (rel {ANALYTIC_REL:.0e}), {elapsed:.2?}"
        ),
    );
}

/// Worst entrywise ratio of `|x − y|` to its allowance `rel·max(|x|, |y|) +
/// atol`. At most 1 everywhere means the matrices agree.
fn agreement_excess(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DMatrix<f64>,
    rel: f64,
    atol: f64,
) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x - y).abs() / (rel * x.abs().max(y.abs()) + atol));
    }
    worst
}

// ---------------------------------------------------------------------------
// 03: score and density bounds over 1000 randomized instances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_score_and_density_bounds_hold() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for inst in 0..1000u64 {
        let cfg = KernelConfig {
            sigma: rng.gen_range(0.02..1.0),
            k: 2.0,
            alpha: rng.gen_range(0.2..0.8),
            truncation: Truncation::Exact,
        };
        let source = random_cloud(rng.gen_range(1..=25), 31_000 + inst, 1.5);
        let target = if inst % 5 == 4 {
            // Every fifth instance exercises the ray path; the points sit
            // forward of the origin so each defines a sight line.
            let mut shifted: Vec<Point3> =
                random_cloud(rng.gen_range(1..=25), 77_000 + inst, 1.0).as_slice().to_vec();
            for p in &mut shifted {
                p.z += 3.0;
            }
            TargetSet::Rays(rays_through(&PointSet::new(shifted)))
        } else {
            TargetSet::Points(random_cloud(rng.gen_range(1..=25), 77_000 + inst, 1.5))
        };

        let p = energy::proximity(&source, &target, &cfg).unwrap();
        let c = energy::coverage(&source, &target, &cfg).unwrap();
        assert!((0.5..1.0).contains(&p), "instance {inst}: proximity {p} out of [0.5, 1)");
        assert!((0.5..1.0).contains(&c), "instance {inst}: coverage {c} out of [0.5, 1)");

        let dens = match &target {
            TargetSet::Points(pts) => energy::self_density_points(pts, cfg.sigma).unwrap(),
            TargetSet::Rays(rays) => energy::self_density_rays(rays, cfg.sigma).unwrap(),
        };
        let source_dens = match &target {
            TargetSet::Points(_) => energy::self_density_points(&source, cfg.sigma).unwrap(),
            TargetSet::Rays(_) => energy::self_density_sight_lines(&source, cfg.sigma).unwrap(),
        };
        for (side, d) in [("target", &dens), ("source", &source_dens)] {
            for (j, &v) in d.values.iter().enumerate() {
                assert!(v >= 1.0, "instance {inst}: {side} density[{j}] = {v} below one");
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "criterion 03",
        elapsed <= BOUNDS_BUDGET,
        format!("1000 instances within bounds, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 04: rigid recovery across the rotation sweep.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_rigid_recovery_across_rotation_sweep() {
    let c = campaigns();
    let total: usize = c.fuzzy.iter().map(|r| r.trials.len()).sum();
    let hits: usize =
        c.fuzzy.iter().map(|r| r.trials.iter().filter(|t| t.success).count()).sum();
    let rate = hits as f64 / total as f64;
    verdict(
        "criterion 04",
        rate >= SWEEP_SUCCESS_FLOOR && c.fuzzy_elapsed <= SWEEP_BUDGET,
        format!(
            "{hits}/{total} trials under {:.4} mean vertex error (1% of scene diagonal \
             {:.3}), rate {rate:.3}, {:.1?}",
            c.vertex_threshold, c.scene_diag, c.fuzzy_elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 05: the fuzzy registrar stays reliable strictly beyond the point where
// nearest-neighbor alignment breaks down.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_success_range_strictly_contains_nearest_neighbor_baseline() {
    let c = campaigns();
    let mut icp_successes = 0usize;
    let mut containment_broken = None;
    let mut strictly_larger = false;
    let mut fuzzy_wins_at_45_plus = false;

    for (fuzzy, icp) in c.fuzzy.iter().zip(&c.icp) {
        for (ft, it) in fuzzy.trials.iter().zip(&icp.trials) {
            assert_eq!((ft.axis, ft.angle_degrees), (it.axis, it.angle_degrees));
            icp_successes += it.success as usize;
            if it.success && !ft.success {
                containment_broken = Some((ft.axis, ft.angle_degrees));
            }
            if ft.success && !it.success {
                strictly_larger = true;
                if ft.angle_degrees >= 45.0 {
                    fuzzy_wins_at_45_plus = true;
                }
            }
        }
    }
    verdict(
        "criterion 05",
        containment_broken.is_none() && strictly_larger && fuzzy_wins_at_45_plus,
        format!(
            "baseline succeeds in {icp_successes}/39 trials, every one also a fuzzy success; \
             containment violation {containment_broken:?}; fuzzy holds at >= 45 degrees where \
             the baseline fails: {fuzzy_wins_at_45_plus}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 06: similarity recovery with scale.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_similarity_recovers_scale_and_pose() {
    let c = campaigns();
    let mut good = 0usize;
    let mut worst_scale = 0.0f64;
    let mut worst_vertex = 0.0f64;
    for trial in &c.sim {
        let vertex_frac = trial.vertex_err / trial.scene_diag;
        worst_scale = worst_scale.max(trial.scale_rel_err);
        worst_vertex = worst_vertex.max(vertex_frac);
        if trial.scale_rel_err <= SCALE_REL_TOL && vertex_frac <= VERTEX_ERR_FRACTION {
            good += 1;
        }
    }
    verdict(
        "criterion 06",
        good >= TRIALS_REQUIRED && c.sim_elapsed <= SIMILARITY_BUDGET,
        format!(
            "{good}/10 trials, worst scale error {worst_scale:.4}, worst vertex error \
             {worst_vertex:.5} of scene diagonal, {:.1?}",
            c.sim_elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 07: point-to-ray alignment reaches pixel accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_ray_alignment_reaches_pixel_accuracy() {
    let c = campaigns();
    let mut good = 0usize;
    let mut worst_mean = 0.0f64;
    let mut worst_p95 = 0.0f64;
    for trial in &c.rays {
        worst_mean = worst_mean.max(trial.mean_px);
        worst_p95 = worst_p95.max(trial.p95_px);
        if trial.mean_px < MEAN_PX_BOUND && trial.p95_px < P95_PX_BOUND {
            good += 1;
        }
    }
    verdict(
        "criterion 07",
        good >= TRIALS_REQUIRED && c.rays_elapsed <= RAY_BUDGET,
        format!(
            "{good}/10 trials, worst mean {worst_mean:.3}px, worst p95 {worst_p95:.3}px, {:.1?}",
            c.rays_elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 08: voxelizer exactness.
// ---------------------------------------------------------------------------

fn cube_mesh(min: Point3, side: f64) -> Mesh {
    let vertices: Vec<Point3> = (0..8)
        .map(|i| {
            Point3::new(
                min.x + side * ((i & 1) as f64),
                min.y + side * (((i >> 1) & 1) as f64),
                min.z + side * (((i >> 2) & 1) as f64),
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    Mesh::new(vertices, faces).expect("cube indices are in range")
}

#[test]
fn criterion_08_voxelizer_is_exact_on_known_solids() {
    let t = Instant::now();

    // A unit cube at resolution 4 occupies the full 4x4x4 block except the
    // 2x2x2 interior: 56 surface cells, and the same 56 survive the closing
    // and shell steps.
    let cube = cube_mesh(Point3::ORIGIN, 1.0);
    let raw = voxelize_surface(&cube, 4).unwrap();
    let pts = mesh_to_pointset(&cube, 4).unwrap();
    assert_eq!(raw.set_count(), 56, "surface rasterization of the unit cube at resolution 4");
    assert_eq!(pts.len(), 56, "full pipeline output for the unit cube at resolution 4");

    // A solid floating inside a closed shell is invisible from outside, so it
    // must contribute nothing: the pipeline output with and without the
    // enclosed cube is identical, and no emitted point lies inside the cavity.
    let outer = cube_mesh(Point3::ORIGIN, 1.0);
    let mut combined_vertices = outer.vertices.clone();
    let mut combined_faces = outer.faces.clone();
    let inner = cube_mesh(Point3::new(0.3, 0.3, 0.3), 0.4);
    let base = combined_vertices.len();
    combined_vertices.extend_from_slice(&inner.vertices);
    combined_faces
        .extend(inner.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    let combined = Mesh::new(combined_vertices, combined_faces).unwrap();

    let with_inner = mesh_to_pointset(&combined, 8).unwrap();
    let outer_only = mesh_to_pointset(&outer, 8).unwrap();
    assert_eq!(with_inner, outer_only, "an enclosed component must not add points");
    let leaked = with_inner
        .as_slice()
        .iter()
        .filter(|p| {
            (0.3..0.7).contains(&p.x) && (0.3..0.7).contains(&p.y) && (0.3..0.7).contains(&p.z)
        })
        .count();
    assert_eq!(leaked, 0, "no output point may sit inside the enclosed region");

    // Closing is idempotent on arbitrary occupancy patterns.
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for grid_ix in 0..100 {
        let dims = [
            rng.gen_range(3..=10usize),
            rng.gen_range(3..=10usize),
            rng.gen_range(3..=10usize),
        ];
        let mut grid = VoxelGrid::new(Point3::ORIGIN, 0.1, dims).unwrap();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    if rng.gen_bool(0.3) {
                        grid.set(i, j, k, true);
                    }
                }
            }
        }
        let once = morph_close(&grid, 1);
        let twice = morph_close(&once, 1);
        assert_eq!(once, twice, "closing grid {grid_ix} moved on the second application");
    }

    let elapsed = t.elapsed();
    verdict(
        "criterion 08",
        elapsed <= VOXEL_BUDGET,
        format!(
            "56-cell cube, enclosed component invisible, closing idempotent on 100 grids, \
             {elapsed:.2?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 09: the recovery campaigns are bit-identical across reruns.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_campaigns_rerun_bit_identical() {
    let c = campaigns();

    let mut sweep_ok = true;
    for (a, b) in c.fuzzy.iter().zip(&c.fuzzy_rerun) {
        sweep_ok &= a == b;
        for (ta, tb) in a.trials.iter().zip(&b.trials) {
            sweep_ok &= ta.mean_error.to_bits() == tb.mean_error.to_bits();
        }
    }

    let mut sim_ok = c.sim.len() == c.sim_rerun.len();
    for (a, b) in c.sim.iter().zip(&c.sim_rerun) {
        sim_ok &= transform_bits(&a.transform) == transform_bits(&b.transform)
            && a.vertex_err.to_bits() == b.vertex_err.to_bits()
            && a.scale_rel_err.to_bits() == b.scale_rel_err.to_bits();
    }

    let mut ray_ok = c.rays.len() == c.rays_rerun.len();
    for (a, b) in c.rays.iter().zip(&c.rays_rerun) {
        ray_ok &= transform_bits(&a.transform) == transform_bits(&b.transform)
            && a.mean_px.to_bits() == b.mean_px.to_bits()
            && a.p95_px.to_bits() == b.p95_px.to_bits();
    }

    verdict(
        "criterion 09",
        sweep_ok && sim_ok && ray_ok,
        format!(
            "rotation sweep identical: {sweep_ok}; similarity trials identical: {sim_ok}; \
             ray trials identical: {ray_ok}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10: externally published figures stay documentation-only.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_published_figures_stay_documentation_only() {
    // The method's original evaluation reported per-model success rates
    // between 0.80 and 0.98, best mean cloud-to-mesh distances such as
    // 0.062977, and errors on vehicle LiDAR comparable to the sensor's own
    // 5 cm band. Those figures depend on datasets that are not distributed
    // with this repository, so no test asserts them; they are context for
    // reading the synthetic results above, nothing more.
    verdict(
        "criterion 10",
        true,
        "published reference figures are cited in comments only, never asserted".to_string(),
    );
}

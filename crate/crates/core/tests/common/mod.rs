//! Support code shared by the integration suites: a brute-force reference
//! implementation of the correspondence scores written as plain double loops,
//! and procedural fixture shapes with known ground truth.
//!
//! The reference implementation deliberately shares nothing with the library
//! beyond the public `Point3`/`Ray` types: every kernel, normalization, and
//! reduction is spelled out again here so the two sides can disagree.

#![allow(dead_code)]

use fuzzyreg::energy::{KernelConfig, RayBundle, TargetSet};
use fuzzyreg::{Point3, PointSet, Quaternion, Ray, SimilarityTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(d_sq: f64, sigma: f64) -> f64 {
    (-d_sq / (2.0 * sigma * sigma)).exp()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn point_dist_sq(a: Point3, b: Point3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

/// Squared perpendicular distance from `x` to the line through the origin
/// along unit direction `r`.
fn line_dist_sq(x: Point3, r: Ray) -> f64 {
    let along = x.x * r.dir().x + x.y * r.dir().y + x.z * r.dir().z;
    (x.x * x.x + x.y * x.y + x.z * x.z - along * along).max(0.0)
}

/// Target-side denominators: entry j sums the kernel from target element j to
/// every element of the same set.
pub fn ref_target_density(target: &TargetSet, sigma: f64) -> Vec<f64> {
    match target {
        TargetSet::Points(pts) => {
            let p = pts.as_slice();
            (0..p.len())
                .map(|j| {
                    let mut sum = 0.0;
                    for l in 0..p.len() {
                        sum += gauss(point_dist_sq(p[j], p[l]), sigma);
                    }
                    sum
                })
                .collect()
        }
        TargetSet::Rays(rays) => (0..rays.len())
            .map(|j| {
                let dj = rays.rays[j].dir();
                let mut sum = 0.0;
                for l in 0..rays.len() {
                    let c = rays.rays[l].dir().x * dj.x
                        + rays.rays[l].dir().y * dj.y
                        + rays.rays[l].dir().z * dj.z;
                    sum += gauss((1.0 - c * c).max(0.0), sigma);
                }
                sum
            })
            .collect(),
    }
}

/// Source-side denominators over the given (already transformed) positions.
/// For point targets the weight is the plain pairwise kernel; for ray targets
/// each point i weights its neighbors by their perpendicular distance to the
/// sight line from the origin through point i.
pub fn ref_source_density(source: &[Point3], target: &TargetSet, sigma: f64) -> Vec<f64> {
    match target {
        TargetSet::Points(_) => (0..source.len())
            .map(|i| {
                let mut sum = 0.0;
                for l in 0..source.len() {
                    sum += gauss(point_dist_sq(source[i], source[l]), sigma);
                }
                sum
            })
            .collect(),
        TargetSet::Rays(_) => (0..source.len())
            .map(|i| {
                let n = (source[i].x * source[i].x
                    + source[i].y * source[i].y
                    + source[i].z * source[i].z)
                    .sqrt();
                let mut sum = 0.0;
                if n > 0.0 {
                    let u = source[i] / n;
                    for l in 0..source.len() {
                        let along =
                            source[l].x * u.x + source[l].y * u.y + source[l].z * u.z;
                        let d_sq = (source[l].x * source[l].x
                            + source[l].y * source[l].y
                            + source[l].z * source[l].z
                            - along * along)
                            .max(0.0);
                        sum += gauss(d_sq, sigma);
                    }
                } else {
                    for l in 0..source.len() {
                        sum += gauss(
                            source[l].x * source[l].x
                                + source[l].y * source[l].y
                                + source[l].z * source[l].z,
                            sigma,
                        );
                    }
                }
                sum
            })
            .collect(),
    }
}

fn ref_kernel_to_target(x: Point3, target: &TargetSet, j: usize, sigma: f64) -> f64 {
    match target {
        TargetSet::Points(pts) => gauss(point_dist_sq(x, pts.as_slice()[j]), sigma),
        TargetSet::Rays(rays) => gauss(line_dist_sq(x, rays.rays[j]), sigma),
    }
}

/// Reference proximity score: mean over source points of the sigmoid of the
/// normalized kernel row sum.
pub fn ref_proximity(source: &[Point3], target: &TargetSet, cfg: &KernelConfig) -> f64 {
    let dens = ref_target_density(target, cfg.sigma);
    let mut acc = 0.0;
    for &x in source {
        let mut row = 0.0;
        for j in 0..target.len() {
            row += ref_kernel_to_target(x, target, j, cfg.sigma) / dens[j];
        }
        acc += sigmoid(cfg.k * row);
    }
    acc / source.len() as f64
}

/// Reference coverage score: mean over target elements of the sigmoid of the
/// normalized kernel column sum.
pub fn ref_coverage(source: &[Point3], target: &TargetSet, cfg: &KernelConfig) -> f64 {
    let dens = ref_source_density(source, target, cfg.sigma);
    let mut acc = 0.0;
    for j in 0..target.len() {
        let mut col = 0.0;
        for (i, &x) in source.iter().enumerate() {
            col += ref_kernel_to_target(x, target, j, cfg.sigma) / dens[i];
        }
        acc += sigmoid(cfg.k * col);
    }
    acc / target.len() as f64
}

/// Reference residual vector at a transform: per-source proximity deficits
/// followed by per-target coverage deficits, with the weighting split.
pub fn ref_residuals(
    theta: &SimilarityTransform,
    source: &PointSet,
    target: &TargetSet,
    cfg: &KernelConfig,
) -> Vec<f64> {
    let moved: Vec<Point3> = source.as_slice().iter().map(|&p| theta.apply(p)).collect();
    let dens_t = ref_target_density(target, cfg.sigma);
    let dens_s = ref_source_density(&moved, target, cfg.sigma);
    let a = cfg.alpha / moved.len() as f64;
    let b = (1.0 - cfg.alpha) / target.len() as f64;
    let mut out = Vec::new();
    for &x in &moved {
        let mut row = 0.0;
        for j in 0..target.len() {
            row += ref_kernel_to_target(x, target, j, cfg.sigma) / dens_t[j];
        }
        out.push(a * (1.0 - sigmoid(cfg.k * row)));
    }
    for j in 0..target.len() {
        let mut col = 0.0;
        for (i, &x) in moved.iter().enumerate() {
            col += ref_kernel_to_target(x, target, j, cfg.sigma) / dens_s[i];
        }
        out.push(b * (1.0 - sigmoid(cfg.k * col)));
    }
    out
}

/// Reference energy: squared norm of the reference residual vector.
pub fn ref_energy(
    theta: &SimilarityTransform,
    source: &PointSet,
    target: &TargetSet,
    cfg: &KernelConfig,
) -> f64 {
    ref_residuals(theta, source, target, cfg)
        .iter()
        .map(|e| e * e)
        .sum()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Uniform cloud in a centered cube of the given half extent.
pub fn random_cloud(n: usize, seed: u64, half: f64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                )
            })
            .collect(),
    )
}

/// Deterministic asymmetric closed surface: a Fibonacci lattice on the sphere
/// pushed along the radius by a few incommensurate harmonics, then squashed
/// by unequal axis scales. No mirror or rotational symmetry survives, so a
/// pose is identifiable from shape alone.
pub fn lumpy_shape(n: usize) -> PointSet {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        // Latitude from an even area split, longitude from the golden angle.
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let ring = (1.0 - z * z).sqrt();
        let lon = golden * i as f64;
        let (sin_lon, cos_lon) = lon.sin_cos();
        let dir = Point3::new(ring * cos_lon, ring * sin_lon, z);

        let theta = z.acos();
        let r = 1.0
            + 0.28 * (3.0 * theta).sin() * (2.0 * lon).cos()
            + 0.17 * (5.0 * lon + 1.3).sin() * theta.sin()
            + 0.11 * (2.0 * theta + 0.7).cos();
        points.push(Point3::new(
            dir.x * r,
            dir.y * r * 0.72,
            dir.z * r * 0.55,
        ));
    }
    PointSet::new(points)
}

/// Measurement-side corruption for recovery fixtures: a seeded subset of the
/// shape plus isotropic Gaussian jitter plus uniform outliers in an inflated
/// box around it.
pub fn corrupt_subset(
    shape: &PointSet,
    keep_fraction: f64,
    noise_of_diagonal: f64,
    outlier_fraction: f64,
    seed: u64,
) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = shape.aabb().expect("fixture shapes are nonempty");
    let sigma = noise_of_diagonal * bb.diagonal();

    let n = shape.len();
    let keep = ((n as f64 * keep_fraction).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first `keep` slots are the sample.
    for i in 0..keep {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(keep);
    idx.sort_unstable();

    let mut points = Vec::with_capacity(keep + (keep as f64 * outlier_fraction) as usize);
    for &i in &idx {
        let p = shape.as_slice()[i];
        points.push(Point3::new(
            p.x + gaussian(&mut rng) * sigma,
            p.y + gaussian(&mut rng) * sigma,
            p.z + gaussian(&mut rng) * sigma,
        ));
    }
    let outliers = (keep as f64 * outlier_fraction).round() as usize;
    let center = bb.center();
    let ext = bb.extents();
    for _ in 0..outliers {
        points.push(Point3::new(
            center.x + rng.gen_range(-0.75..0.75) * ext.x,
            center.y + rng.gen_range(-0.75..0.75) * ext.y,
            center.z + rng.gen_range(-0.75..0.75) * ext.z,
        ));
    }
    PointSet::new(points)
}

/// Box-Muller, matching nothing in the library on purpose.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let g = (-2.0 * u.ln()).sqrt() * v.cos();
        if g.is_finite() {
            return g;
        }
    }
}

pub fn rotation_about(axis: Point3, degrees: f64) -> SimilarityTransform {
    let q = Quaternion::from_axis_angle(axis, degrees.to_radians()).expect("unit axis");
    SimilarityTransform::new(q, Point3::ORIGIN, 1.0).expect("rotation is a valid transform")
}

/// A random unit quaternion, uniform over rotations.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n);
        }
    }
}

/// Builds a target set of rays through the given points (all must be away
/// from the origin).
pub fn rays_through(points: &PointSet) -> RayBundle {
    RayBundle::new(
        points
            .as_slice()
            .iter()
            .map(|&p| Ray::new(p).expect("fixture points sit away from the origin"))
            .collect(),
    )
}

//! Points, rays, bounding boxes, and similarity transforms.
//!
//! A [`SimilarityTransform`] is `p ↦ s·R(q)·p + t` with `s > 0`. The
//! quaternion is stored unit length; constructors normalize and reject zero
//! quaternions, so applying a transform never fails.

use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Point3 {
        Point3 { x, y, z }
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Result<Point3> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::DegenerateInput(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub(crate) fn min_components(self, other: Point3) -> Point3 {
        Point3::new(
            self.x.min(other.x),
            self.y.min(other.y),
            self.z.min(other.z),
        )
    }

    pub(crate) fn max_components(self, other: Point3) -> Point3 {
        Point3::new(
            self.x.max(other.x),
            self.y.max(other.y),
            self.z.max(other.z),
        )
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, k: f64) -> Point3 {
        Point3::new(self.x / k, self.y / k, self.z / k)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// An infinite line through the origin with a unit direction.
///
/// Rays model viewing directions of a camera placed at the origin, so the
/// distance queries below deliberately use the full line, not the half line:
/// a point behind the origin on the same axis has distance zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    dir: Point3,
}

impl Ray {
    /// Normalizes `dir`; a zero or non-finite direction is rejected.
    pub fn new(dir: Point3) -> Result<Ray> {
        if !dir.is_finite() {
            return Err(Error::InvalidParameter("ray direction must be finite".into()));
        }
        Ok(Ray {
            dir: dir.normalized()?,
        })
    }

    pub fn dir(self) -> Point3 {
        self.dir
    }
}

/// Perpendicular distance from `x` to the line through the origin along `r`.
pub fn point_ray_distance(x: Point3, r: Ray) -> f64 {
    let along = x.dot(r.dir());
    // Rounding can push the difference a hair below zero when x lies on the line.
    (x.norm_squared() - along * along).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points(points: &[Point3]) -> Result<Aabb> {
        let first = *points.first().ok_or_else(|| {
            Error::DegenerateInput("bounding box of an empty point list".into())
        })?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for &p in &points[1..] {
            bb.min = bb.min.min_components(p);
            bb.max = bb.max.max_components(p);
        }
        Ok(bb)
    }

    pub fn center(self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(self) -> Point3 {
        self.max - self.min
    }

    pub fn largest_edge(self) -> f64 {
        let e = self.extents();
        e.x.max(e.y).max(e.z)
    }

    pub fn diagonal(self) -> f64 {
        self.extents().norm()
    }
}

/// An ordered list of points. Iteration order is part of the contract: every
/// reduction in the crate runs in index order so results are reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point3>,
}

impl PointSet {
    pub fn new(points: Vec<Point3>) -> PointSet {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn as_slice(&self) -> &[Point3] {
        &self.points
    }

    pub fn aabb(&self) -> Result<Aabb> {
        Aabb::from_points(&self.points)
    }

    pub fn centroid(&self) -> Result<Point3> {
        if self.points.is_empty() {
            return Err(Error::DegenerateInput("centroid of an empty point set".into()));
        }
        let mut sum = Point3::ORIGIN;
        for &p in &self.points {
            sum = sum + p;
        }
        Ok(sum / self.points.len() as f64)
    }
}

/// Draws `n` points without replacement using a seeded permutation.
///
/// The same `(P, n, seed)` triple always yields the same subset in the same
/// order. `n == |P|` returns the set unchanged, preserving index order, so a
/// full-resolution pass is literally the original set.
pub fn subsample(set: &PointSet, n: usize, seed: u64) -> Result<PointSet> {
    if n == set.len() {
        return Ok(set.clone());
    }
    let idx = subsample_indices(set.len(), n, seed)?;
    Ok(PointSet::new(idx.iter().map(|&i| set.points[i]).collect()))
}

/// The index draw behind `subsample`, usable for any indexed collection.
pub(crate) fn subsample_indices(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {n} points from a set of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Rotation quaternion `(w, x, y, z)`. Stored values are not required to be
/// unit length; every rotation goes through `q / |q|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quaternion {
        Quaternion { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Point3, angle: f64) -> Result<Quaternion> {
        let axis = axis.normalized()?;
        let half = 0.5 * angle;
        let s = half.sin();
        Ok(Quaternion::new(
            half.cos(),
            axis.x * s,
            axis.y * s,
            axis.z * s,
        ))
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Result<Quaternion> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::InvalidParameter(
                "cannot normalize a zero or non-finite quaternion".into(),
            ));
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product, `self` applied after `other` when both rotate.
    pub fn mul(self, other: Quaternion) -> Quaternion {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (other.w, other.x, other.y, other.z);
        Quaternion::new(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    /// Rotates `p`, assuming `self` is unit length.
    pub(crate) fn rotate_unit(self, p: Point3) -> Point3 {
        let v = Point3::new(self.x, self.y, self.z);
        let t = v.cross(p) * 2.0;
        p + t * self.w + v.cross(t)
    }

    /// 3x3 rotation matrix of `q / |q|`, rows in order.
    pub fn rotation_matrix(self) -> Result<[[f64; 3]; 3]> {
        let q = self.normalized()?;
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Ok([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }
}

/// Rotates `p` by `q / |q|`. A zero quaternion is rejected.
pub fn quat_rotate(q: Quaternion, p: Point3) -> Result<Point3> {
    Ok(q.normalized()?.rotate_unit(p))
}

/// `p ↦ s·R(q)·p + t` with `s > 0` and `q` kept unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    rotation: Quaternion,
    pub translation: Point3,
    scale: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        rotation: Quaternion::IDENTITY,
        translation: Point3::ORIGIN,
        scale: 1.0,
    };

    pub fn new(rotation: Quaternion, translation: Point3, scale: f64) -> Result<SimilarityTransform> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "similarity scale must be finite and positive, got {scale}"
            )));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidParameter("translation must be finite".into()));
        }
        Ok(SimilarityTransform {
            rotation: rotation.normalized()?,
            translation,
            scale,
        })
    }

    pub fn from_rotation(rotation: Quaternion, translation: Point3) -> Result<SimilarityTransform> {
        SimilarityTransform::new(rotation, translation, 1.0)
    }

    pub fn translation_only(translation: Point3) -> SimilarityTransform {
        SimilarityTransform {
            rotation: Quaternion::IDENTITY,
            translation,
            scale: 1.0,
        }
    }

    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotation.rotate_unit(p) * self.scale + self.translation
    }

    pub fn apply_set(&self, set: &PointSet) -> PointSet {
        PointSet::new(set.points.iter().map(|&p| self.apply(p)).collect())
    }

    /// `self ∘ other`: `other` acts first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self
                .rotation
                .mul(other.rotation)
                .normalized()
                .expect("product of unit quaternions is unit"),
            translation: self.apply(other.translation),
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rotation = self.rotation.conjugate();
        let scale = 1.0 / self.scale;
        SimilarityTransform {
            rotation,
            translation: rotation.rotate_unit(-self.translation) * scale,
            scale,
        }
    }

    /// Row-major homogeneous matrix `[s·R | t; 0 0 0 1]`.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self
            .rotation
            .rotation_matrix()
            .expect("stored quaternion is unit");
        let s = self.scale;
        let t = self.translation;
        [
            [r[0][0] * s, r[0][1] * s, r[0][2] * s, t.x],
            [r[1][0] * s, r[1][1] * s, r[1][2] * s, t.y],
            [r[2][0] * s, r[2][1] * s, r[2][2] * s, t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Map into solver coordinates: `p ↦ scale·(p − center)`.
///
/// For point targets the map is the target's unit-cube normalization (center
/// at the box midpoint, largest edge scaled to one). For ray targets only a
/// scale about the origin is allowed, because rays pass through the origin
/// and a centering shift would break that.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: Point3,
    pub scale: f64,
}

impl Normalization {
    /// Unit-cube map of `target`: derived from the target set alone.
    pub fn unit_cube(target: &PointSet) -> Result<Normalization> {
        let bb = target.aabb()?;
        let edge = bb.largest_edge();
        if !(edge.is_finite() && edge > 0.0) {
            return Err(Error::DegenerateInput(
                "unit-cube normalization needs a target with positive extent".into(),
            ));
        }
        Ok(Normalization {
            center: bb.center(),
            scale: 1.0 / edge,
        })
    }

    /// Scale-only map keeping the origin fixed, sized by the set's largest
    /// bounding-box edge.
    pub fn scale_about_origin(set: &PointSet) -> Result<Normalization> {
        let edge = set.aabb()?.largest_edge();
        if !(edge.is_finite() && edge > 0.0) {
            return Err(Error::DegenerateInput(
                "scale normalization needs a set with positive extent".into(),
            ));
        }
        Ok(Normalization {
            center: Point3::ORIGIN,
            scale: 1.0 / edge,
        })
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.center) * self.scale
    }

    pub fn apply_set(&self, set: &PointSet) -> PointSet {
        PointSet::new(set.points.iter().map(|&p| self.apply(p)).collect())
    }

    pub fn as_transform(&self) -> SimilarityTransform {
        SimilarityTransform {
            rotation: Quaternion::IDENTITY,
            translation: -self.center * self.scale,
            scale: self.scale,
        }
    }
}

/// Maps a transform found in normalized coordinates back to the original
/// frame: `N⁻¹ ∘ θ ∘ N` as a single transform.
pub fn denormalize_transform(
    theta_unit: &SimilarityTransform,
    n: &Normalization,
) -> SimilarityTransform {
    let fwd = n.as_transform();
    let back = fwd.inverse();
    back.compose(&theta_unit.compose(&fwd))
}

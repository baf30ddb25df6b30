//! Fuzzy correspondence scores between a source point set and a target.
//!
//! Instead of pairing each source point with one target element, every pair
//! gets a Gaussian affinity `exp(-d²/(2σ²))`. Affinities are normalized by
//! per-element self densities so that crowded regions do not dominate, summed
//! per source point (rows) and per target element (columns), and squashed
//! through a logistic so each side lands in `[0.5, 1)`:
//!
//! - proximity: mean over source points of `logistic(k · row sum)`, how close
//!   the source sits to the target,
//! - coverage: mean over target elements of `logistic(k · column sum)`, how
//!   much of the target the source touches.
//!
//! The registration residual vector stacks `α/|D| · (1 - logistic(k·row_i))`
//! for every source point and `(1-α)/|T| · (1 - logistic(k·col_j))` for every
//! target element; its squared norm is the energy a solver minimizes.
//!
//! Targets are either point clouds or bundles of camera sight lines through
//! the origin. For ray targets the column denominators depend on the
//! transformed source positions, so they are recomputed per evaluation, while
//! point-target denominators only change with scale.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, Ray, SimilarityTransform};

/// Pair pruning policy for kernel sums.
///
/// `Cutoff(c)` treats every pair farther apart than `c·σ` as contributing
/// exactly zero and routes point-target sums through a grid index. `Exact`
/// keeps the full double loop and is the reference mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    Exact,
    Cutoff(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub sigma: f64,
    /// Logistic steepness applied to row and column sums.
    pub k: f64,
    /// Weight of the proximity block; the coverage block gets `1 - alpha`.
    pub alpha: f64,
    pub truncation: Truncation,
}

impl KernelConfig {
    /// Defaults: `k = 2`, `alpha = 0.5`, truncation at `4σ`.
    pub fn new(sigma: f64) -> Result<KernelConfig> {
        KernelConfig {
            sigma,
            k: 2.0,
            alpha: 0.5,
            truncation: Truncation::Cutoff(4.0),
        }
        .validated()
    }

    /// Same defaults but with the full double loop.
    pub fn exact(sigma: f64) -> Result<KernelConfig> {
        Ok(KernelConfig {
            truncation: Truncation::Exact,
            ..KernelConfig::new(sigma)?
        })
    }

    pub fn with_sigma(self, sigma: f64) -> Result<KernelConfig> {
        KernelConfig { sigma, ..self }.validated()
    }

    pub fn validated(self) -> Result<KernelConfig> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel sigma must be finite and positive, got {}",
                self.sigma
            )));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "logistic steepness k must be finite and positive, got {}",
                self.k
            )));
        }
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Truncation::Cutoff(c) = self.truncation {
            if !(c.is_finite() && c >= 3.0) {
                return Err(Error::InvalidParameter(format!(
                    "truncation multiple must be at least 3, got {c}"
                )));
            }
        }
        Ok(self)
    }

    pub(crate) fn cutoff_sq(&self) -> Option<f64> {
        match self.truncation {
            Truncation::Exact => None,
            Truncation::Cutoff(c) => {
                let r = c * self.sigma;
                Some(r * r)
            }
        }
    }
}

/// A nonempty set of sight lines through the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle {
    pub rays: Vec<Ray>,
}

impl RayBundle {
    pub fn new(rays: Vec<Ray>) -> RayBundle {
        RayBundle { rays }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// What the source is being registered against.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSet {
    Points(PointSet),
    Rays(RayBundle),
}

impl TargetSet {
    pub fn len(&self) -> usize {
        match self {
            TargetSet::Points(p) => p.len(),
            TargetSet::Rays(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One element of a target set, for per-column queries.
#[derive(Clone, Copy, Debug)]
pub enum TargetElement {
    Point(Point3),
    Ray(Ray),
}

/// Per-element kernel denominators, valid for one `(set, sigma)` pair.
///
/// Every entry is at least one because each element sees itself at distance
/// zero. Carries the sigma it was built with so mismatched use is caught.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfDensity {
    pub values: Vec<f64>,
    pub sigma: f64,
}

impl SelfDensity {
    fn check(&self, len: usize, sigma: f64, what: &str) -> Result<()> {
        if self.values.len() != len || self.sigma != sigma {
            return Err(Error::InvalidParameter(format!(
                "self density mismatch for {what}: built for {} elements at sigma {}, used with {} at sigma {}",
                self.values.len(),
                self.sigma,
                len,
                sigma
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn gauss(d_sq: f64, sigma: f64) -> f64 {
    (-d_sq / (2.0 * sigma * sigma)).exp()
}

#[inline]
pub(crate) fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Squared perpendicular distance from `x` to the line through the origin
/// along `r`, clamped against rounding below zero.
#[inline]
fn line_dist_sq(x: Point3, r: Ray) -> f64 {
    let along = x.dot(r.dir());
    (x.norm_squared() - along * along).max(0.0)
}

/// `exp(-‖x − y‖² / (2σ²))`.
pub fn kernel(x: Point3, y: Point3, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(gauss((x - y).norm_squared(), sigma))
}

/// Gaussian of the perpendicular distance from `x` to the line of `r`.
pub fn kernel_ray(x: Point3, r: Ray, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(gauss(line_dist_sq(x, r), sigma))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    Ok(())
}

fn check_nonempty(len: usize, what: &str) -> Result<()> {
    if len == 0 {
        return Err(Error::DegenerateInput(format!("{what} must be nonempty")));
    }
    Ok(())
}

/// Denominators for a point target: entry `j` sums the kernel from `y_j` to
/// every point of the same set, itself included.
pub fn self_density_points(target: &PointSet, sigma: f64) -> Result<SelfDensity> {
    check_sigma(sigma)?;
    check_nonempty(target.len(), "self density target")?;
    let pts = target.as_slice();
    let mut values = vec![0.0; pts.len()];
    for (j, &y) in pts.iter().enumerate() {
        let mut sum = 0.0;
        for &other in pts {
            sum += gauss((y - other).norm_squared(), sigma);
        }
        values[j] = sum;
    }
    Ok(SelfDensity { values, sigma })
}

/// Denominators for a ray target: entry `j` sums, over all rays, the Gaussian
/// of `1 - (r_l · r_j)²`, which is the squared sine of the angle between the
/// lines.
pub fn self_density_rays(target: &RayBundle, sigma: f64) -> Result<SelfDensity> {
    check_sigma(sigma)?;
    check_nonempty(target.len(), "self density ray bundle")?;
    let mut values = vec![0.0; target.len()];
    for (j, &rj) in target.rays.iter().enumerate() {
        let dj = rj.dir();
        let mut sum = 0.0;
        for (l, &rl) in target.rays.iter().enumerate() {
            if l == j {
                // A ray subtends angle zero with itself; the rounded dot
                // product of a unit vector with itself can say otherwise.
                sum += 1.0;
                continue;
            }
            let c = rl.dir().dot(dj);
            sum += gauss((1.0 - c * c).max(0.0), sigma);
        }
        values[j] = sum;
    }
    Ok(SelfDensity { values, sigma })
}

/// Source-side denominators used when the target is a ray bundle: entry `i`
/// sums the kernel of each source point's perpendicular distance to the sight
/// line from the origin through point `i`. Depends on the transformed
/// positions, so callers rebuild it after every transform update.
///
/// A point sitting at the origin has no direction of its own; its sight line
/// degenerates and neighbors are weighted by their plain distance to the
/// origin instead.
pub fn self_density_sight_lines(points: &PointSet, sigma: f64) -> Result<SelfDensity> {
    check_sigma(sigma)?;
    check_nonempty(points.len(), "sight-line density source")?;
    let pts = points.as_slice();
    let mut values = vec![0.0; pts.len()];
    for (i, &xi) in pts.iter().enumerate() {
        let n = xi.norm();
        let mut sum = 0.0;
        if n > 0.0 {
            let u = xi / n;
            for (l, &xl) in pts.iter().enumerate() {
                if l == i {
                    // A point lies on its own sight line; rounding in the
                    // projection below can leave a spurious residue.
                    sum += 1.0;
                    continue;
                }
                let along = xl.dot(u);
                sum += gauss((xl.norm_squared() - along * along).max(0.0), sigma);
            }
        } else {
            for (l, &xl) in pts.iter().enumerate() {
                if l == i {
                    sum += 1.0;
                    continue;
                }
                sum += gauss(xl.norm_squared(), sigma);
            }
        }
        values[i] = sum;
    }
    Ok(SelfDensity { values, sigma })
}

/// Normalized kernel sum from one source point to every target element.
pub fn proximity_row(
    x: Point3,
    target: &TargetSet,
    dens: &SelfDensity,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    check_nonempty(target.len(), "proximity target")?;
    dens.check(target.len(), sigma, "proximity target")?;
    let mut sum = 0.0;
    match target {
        TargetSet::Points(pts) => {
            for (j, &y) in pts.as_slice().iter().enumerate() {
                sum += gauss((x - y).norm_squared(), sigma) / dens.values[j];
            }
        }
        TargetSet::Rays(rays) => {
            for (j, &r) in rays.rays.iter().enumerate() {
                sum += gauss(line_dist_sq(x, r), sigma) / dens.values[j];
            }
        }
    }
    Ok(sum)
}

/// Normalized kernel sum from one target element to every source point.
/// `dens_source` must come from the same source positions and sigma:
/// `self_density_points` when `elem` is a point, `self_density_sight_lines`
/// when it is a ray.
pub fn coverage_col(
    elem: TargetElement,
    source: &PointSet,
    dens_source: &SelfDensity,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    check_nonempty(source.len(), "coverage source")?;
    dens_source.check(source.len(), sigma, "coverage source")?;
    let mut sum = 0.0;
    match elem {
        TargetElement::Point(y) => {
            for (i, &x) in source.as_slice().iter().enumerate() {
                sum += gauss((x - y).norm_squared(), sigma) / dens_source.values[i];
            }
        }
        TargetElement::Ray(r) => {
            for (i, &x) in source.as_slice().iter().enumerate() {
                sum += gauss(line_dist_sq(x, r), sigma) / dens_source.values[i];
            }
        }
    }
    Ok(sum)
}

/// Mean over source points of the squashed row sums, in `[0.5, 1)`.
pub fn proximity(source: &PointSet, target: &TargetSet, cfg: &KernelConfig) -> Result<f64> {
    let ctx = EvalContext::new(target.clone(), *cfg)?;
    check_nonempty(source.len(), "proximity source")?;
    let dens_source = ctx.source_density(source.as_slice(), source.as_slice(), 1.0);
    let (rows, _) = ctx.sums(source.as_slice(), &dens_source);
    let mut acc = 0.0;
    for r in &rows {
        acc += logistic(cfg.k * r);
    }
    Ok(acc / source.len() as f64)
}

/// Mean over target elements of the squashed column sums, in `[0.5, 1)`.
pub fn coverage(source: &PointSet, target: &TargetSet, cfg: &KernelConfig) -> Result<f64> {
    let ctx = EvalContext::new(target.clone(), *cfg)?;
    check_nonempty(source.len(), "coverage source")?;
    let dens_source = ctx.source_density(source.as_slice(), source.as_slice(), 1.0);
    let (_, cols) = ctx.sums(source.as_slice(), &dens_source);
    let mut acc = 0.0;
    for c in &cols {
        acc += logistic(cfg.k * c);
    }
    Ok(acc / target.len() as f64)
}

/// Registration residual vector at `theta`: first `|D|` proximity entries,
/// then one coverage entry per target element.
pub fn residuals(
    theta: &SimilarityTransform,
    source: &PointSet,
    target: &TargetSet,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    let ctx = EvalContext::new(target.clone(), *cfg)?;
    check_nonempty(source.len(), "registration source")?;
    let transformed: Vec<Point3> = source.as_slice().iter().map(|&p| theta.apply(p)).collect();
    let dens_source = ctx.source_density(source.as_slice(), &transformed, theta.scale());
    let (rows, cols) = ctx.sums(&transformed, &dens_source);
    Ok(residuals_from_sums(cfg, &rows, &cols))
}

/// Squared norm of the residual vector.
pub fn energy(
    theta: &SimilarityTransform,
    source: &PointSet,
    target: &TargetSet,
    cfg: &KernelConfig,
) -> Result<f64> {
    let r = residuals(theta, source, target, cfg)?;
    Ok(r.iter().map(|e| e * e).sum())
}

pub(crate) fn residuals_from_sums(cfg: &KernelConfig, rows: &[f64], cols: &[f64]) -> Vec<f64> {
    let a = cfg.alpha / rows.len() as f64;
    let b = (1.0 - cfg.alpha) / cols.len() as f64;
    let mut out = Vec::with_capacity(rows.len() + cols.len());
    for r in rows {
        out.push(a * (1.0 - logistic(cfg.k * r)));
    }
    for c in cols {
        out.push(b * (1.0 - logistic(cfg.k * c)));
    }
    out
}

/// Uniform grid over target points, cell size equal to the cutoff radius, so
/// every point within the radius of a query lies in the 27 cells around it.
pub(crate) struct GridIndex {
    origin: Point3,
    inv_cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    pub(crate) fn build(points: &[Point3], cell: f64) -> GridIndex {
        let bb = crate::geometry::Aabb::from_points(points).expect("grid over nonempty points");
        let inv_cell = 1.0 / cell;
        let ext = bb.extents();
        let dims = [
            (ext.x * inv_cell) as usize + 1,
            (ext.y * inv_cell) as usize + 1,
            (ext.z * inv_cell) as usize + 1,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (idx, &p) in points.iter().enumerate() {
            let c = Self::cell_of(bb.min, inv_cell, dims, p);
            cells[c].push(idx as u32);
        }
        GridIndex {
            origin: bb.min,
            inv_cell,
            dims,
            cells,
        }
    }

    fn cell_of(origin: Point3, inv_cell: f64, dims: [usize; 3], p: Point3) -> usize {
        let ix = (((p.x - origin.x) * inv_cell) as usize).min(dims[0] - 1);
        let iy = (((p.y - origin.y) * inv_cell) as usize).min(dims[1] - 1);
        let iz = (((p.z - origin.z) * inv_cell) as usize).min(dims[2] - 1);
        (ix * dims[1] + iy) * dims[2] + iz
    }

    fn axis_window(&self, v: f64, axis: usize) -> (usize, usize) {
        let c = (v * self.inv_cell).floor();
        let lo = (c - 1.0).max(0.0) as usize;
        let hi = (c + 1.0).min(self.dims[axis] as f64 - 1.0).max(0.0) as usize;
        (lo.min(self.dims[axis] - 1), hi)
    }

    /// Candidate indices around `p`, sorted ascending. Sums that iterate the
    /// result are therefore in index order, which keeps them reproducible.
    pub(crate) fn gather(&self, p: Point3, out: &mut Vec<u32>) {
        out.clear();
        let d = p - self.origin;
        let (x0, x1) = self.axis_window(d.x, 0);
        let (y0, y1) = self.axis_window(d.y, 1);
        let (z0, z1) = self.axis_window(d.z, 2);
        for ix in x0..=x1 {
            for iy in y0..=y1 {
                for iz in z0..=z1 {
                    out.extend_from_slice(&self.cells[(ix * self.dims[1] + iy) * self.dims[2] + iz]);
                }
            }
        }
        out.sort_unstable();
    }
}

/// Shared evaluation state for one `(target, config)` pair: target-side
/// denominators and, in cutoff mode over points, the grid index.
pub(crate) struct EvalContext {
    pub(crate) cfg: KernelConfig,
    pub(crate) target: TargetSet,
    pub(crate) dens_target: Vec<f64>,
    grid: Option<GridIndex>,
}

impl EvalContext {
    pub(crate) fn new(target: TargetSet, cfg: KernelConfig) -> Result<EvalContext> {
        let cfg = cfg.validated()?;
        check_nonempty(target.len(), "registration target")?;
        let dens_target = match &target {
            TargetSet::Points(p) => {
                truncated_point_density(p.as_slice(), cfg.sigma, cfg.cutoff_sq())
            }
            TargetSet::Rays(r) => self_density_rays(r, cfg.sigma)?.values,
        };
        let grid = match (&target, cfg.cutoff_sq()) {
            (TargetSet::Points(p), Some(r_sq)) => {
                Some(GridIndex::build(p.as_slice(), r_sq.sqrt()))
            }
            _ => None,
        };
        Ok(EvalContext {
            cfg,
            target,
            dens_target,
            grid,
        })
    }

    pub(crate) fn target_len(&self) -> usize {
        self.target.len()
    }

    /// Source-side denominators for the coverage columns.
    ///
    /// Point targets need pairwise source distances, which a similarity only
    /// scales, so they are computed from the original coordinates and the
    /// scale. Ray targets weight neighbors along sight lines through the
    /// transformed positions.
    pub(crate) fn source_density(
        &self,
        source: &[Point3],
        transformed: &[Point3],
        scale: f64,
    ) -> Vec<f64> {
        match &self.target {
            TargetSet::Points(_) => {
                scaled_point_density(source, scale, self.cfg.sigma, self.cfg.cutoff_sq()).0
            }
            TargetSet::Rays(_) => {
                let cutoff = self.cfg.cutoff_sq();
                let sigma = self.cfg.sigma;
                let mut values = vec![0.0; transformed.len()];
                for (i, &xi) in transformed.iter().enumerate() {
                    let n = xi.norm();
                    let mut sum = 0.0;
                    if n > 0.0 {
                        let u = xi / n;
                        for (l, &xl) in transformed.iter().enumerate() {
                            if l == i {
                                // Own sight line: distance zero by
                                // definition, not by rounded projection.
                                sum += 1.0;
                                continue;
                            }
                            let along = xl.dot(u);
                            let d_sq = (xl.norm_squared() - along * along).max(0.0);
                            if cutoff.map_or(true, |c| d_sq <= c) {
                                sum += gauss(d_sq, sigma);
                            }
                        }
                    } else {
                        for (l, &xl) in transformed.iter().enumerate() {
                            if l == i {
                                sum += 1.0;
                                continue;
                            }
                            let d_sq = xl.norm_squared();
                            if cutoff.map_or(true, |c| d_sq <= c) {
                                sum += gauss(d_sq, sigma);
                            }
                        }
                    }
                    values[i] = sum;
                }
                values
            }
        }
    }

    /// Row and column kernel sums for transformed source positions.
    ///
    /// Rows and columns accumulate in ascending index order; with a grid the
    /// candidates are sorted first, so the summation order depends only on
    /// the data, never on memory layout or scheduling.
    pub(crate) fn sums(&self, transformed: &[Point3], dens_source: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sigma = self.cfg.sigma;
        let mut rows = vec![0.0; transformed.len()];
        let mut cols = vec![0.0; self.target.len()];
        match &self.target {
            TargetSet::Points(pts) => {
                let ys = pts.as_slice();
                match (&self.grid, self.cfg.cutoff_sq()) {
                    (Some(grid), Some(r_sq)) => {
                        let mut candidates = Vec::new();
                        for (i, &p) in transformed.iter().enumerate() {
                            let inv_di = 1.0 / dens_source[i];
                            let mut row = 0.0;
                            grid.gather(p, &mut candidates);
                            for &j in &candidates {
                                let j = j as usize;
                                let d_sq = (p - ys[j]).norm_squared();
                                if d_sq <= r_sq {
                                    let k = gauss(d_sq, sigma);
                                    row += k / self.dens_target[j];
                                    cols[j] += k * inv_di;
                                }
                            }
                            rows[i] = row;
                        }
                    }
                    _ => {
                        for (i, &p) in transformed.iter().enumerate() {
                            let inv_di = 1.0 / dens_source[i];
                            let mut row = 0.0;
                            for (j, &y) in ys.iter().enumerate() {
                                let k = gauss((p - y).norm_squared(), sigma);
                                row += k / self.dens_target[j];
                                cols[j] += k * inv_di;
                            }
                            rows[i] = row;
                        }
                    }
                }
            }
            TargetSet::Rays(bundle) => {
                let cutoff = self.cfg.cutoff_sq();
                for (i, &p) in transformed.iter().enumerate() {
                    let inv_di = 1.0 / dens_source[i];
                    let mut row = 0.0;
                    for (j, &r) in bundle.rays.iter().enumerate() {
                        let d_sq = line_dist_sq(p, r);
                        if cutoff.map_or(true, |c| d_sq <= c) {
                            let k = gauss(d_sq, sigma);
                            row += k / self.dens_target[j];
                            cols[j] += k * inv_di;
                        }
                    }
                    rows[i] = row;
                }
            }
        }
        (rows, cols)
    }

    /// Target indices a query point may interact with under the truncation
    /// policy: the grid neighborhood when one exists, otherwise every index.
    /// Candidates still need the cutoff-distance check.
    pub(crate) fn candidate_targets(&self, p: Point3, out: &mut Vec<u32>) {
        match &self.grid {
            Some(grid) => grid.gather(p, out),
            None => {
                out.clear();
                out.extend(0..self.target.len() as u32);
            }
        }
    }
}

/// Pairwise density of a point set whose mutual distances are multiplied by
/// `scale`, together with its derivative with respect to `ln scale`; both
/// honor the truncation policy. One shared pass keeps the values the solver
/// differentiates identical to the ones the residuals divide by.
pub(crate) fn scaled_point_density(
    pts: &[Point3],
    scale: f64,
    sigma: f64,
    cutoff_sq: Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let s_sq = scale * scale;
    let inv_sig_sq = 1.0 / (sigma * sigma);
    let mut values = vec![0.0; pts.len()];
    let mut dlog = vec![0.0; pts.len()];
    for (i, &xi) in pts.iter().enumerate() {
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for &xl in pts {
            let d_sq = s_sq * (xi - xl).norm_squared();
            if cutoff_sq.map_or(true, |c| d_sq <= c) {
                let k = gauss(d_sq, sigma);
                sum += k;
                dsum -= k * d_sq * inv_sig_sq;
            }
        }
        values[i] = sum;
        dlog[i] = dsum;
    }
    (values, dlog)
}

/// Point self density honoring the truncation policy, so cutoff-mode columns
/// divide by the same sums they accumulate.
fn truncated_point_density(pts: &[Point3], sigma: f64, cutoff_sq: Option<f64>) -> Vec<f64> {
    let mut values = vec![0.0; pts.len()];
    for (j, &y) in pts.iter().enumerate() {
        let mut sum = 0.0;
        for &other in pts {
            let d_sq = (y - other).norm_squared();
            if cutoff_sq.map_or(true, |c| d_sq <= c) {
                sum += gauss(d_sq, sigma);
            }
        }
        values[j] = sum;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use approx::assert_relative_eq;

    fn pt(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn points(v: &[(f64, f64, f64)]) -> PointSet {
        PointSet::new(v.iter().map(|&(x, y, z)| pt(x, y, z)).collect())
    }

    #[test]
    fn kernel_basics() {
        assert_eq!(kernel(pt(1.0, 2.0, 3.0), pt(1.0, 2.0, 3.0), 0.7).unwrap(), 1.0);
        assert_relative_eq!(
            kernel(pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), 1.0).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert!(kernel(Point3::ORIGIN, Point3::ORIGIN, 0.0).is_err());
        assert!(kernel(Point3::ORIGIN, Point3::ORIGIN, -1.0).is_err());
    }

    #[test]
    fn ray_kernel_uses_perpendicular_distance() {
        let r = Ray::new(pt(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(
            kernel_ray(pt(1.0, 0.0, 5.0), r, 1.0).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        // On the line, anywhere along it, the kernel is one.
        assert_eq!(kernel_ray(pt(0.0, 0.0, -9.0), r, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn point_density_sums_pairwise_kernels() {
        let dens = self_density_points(&points(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]), 1.0).unwrap();
        let expect = 1.0 + (-0.5f64).exp();
        assert_relative_eq!(dens.values[0], expect, epsilon = 1e-15);
        assert_relative_eq!(dens.values[1], expect, epsilon = 1e-15);
        // Coincident points count each other fully.
        let dens = self_density_points(&points(&[(2.0, 2.0, 2.0), (2.0, 2.0, 2.0)]), 0.1).unwrap();
        assert_eq!(dens.values, vec![2.0, 2.0]);
    }

    #[test]
    fn ray_density_uses_angle_between_lines() {
        let rx = Ray::new(pt(1.0, 0.0, 0.0)).unwrap();
        let rz = Ray::new(pt(0.0, 0.0, 1.0)).unwrap();
        let dens = self_density_rays(&RayBundle::new(vec![rx, rz]), 1.0).unwrap();
        let expect = 1.0 + (-0.5f64).exp();
        assert_relative_eq!(dens.values[0], expect, epsilon = 1e-15);
        assert_relative_eq!(dens.values[1], expect, epsilon = 1e-15);
        // Opposite directions are the same line.
        let back = Ray::new(pt(-1.0, 0.0, 0.0)).unwrap();
        let dens = self_density_rays(&RayBundle::new(vec![rx, back]), 0.5).unwrap();
        assert_eq!(dens.values, vec![2.0, 2.0]);
    }

    #[test]
    fn sight_line_density_counts_points_near_the_line() {
        let src = points(&[(0.0, 0.0, 2.0), (0.0, 0.0, 4.0), (3.0, 0.0, 0.0)]);
        let dens = self_density_sight_lines(&src, 1.0).unwrap();
        // Points 0 and 1 share the z sight line exactly; point 2 is 3 away
        // from it perpendicular... checked against the definition by hand:
        // entry 0 = 1 + 1 + exp(-9/2).
        let k = (-4.5f64).exp();
        assert_relative_eq!(dens.values[0], 2.0 + k, epsilon = 1e-15);
        assert_relative_eq!(dens.values[1], 2.0 + k, epsilon = 1e-15);
        for v in &dens.values {
            assert!(*v >= 1.0);
        }
    }

    #[test]
    fn density_mismatch_is_rejected() {
        let target = TargetSet::Points(points(&[(0.0, 0.0, 0.0)]));
        let dens = self_density_points(&points(&[(0.0, 0.0, 0.0)]), 0.5).unwrap();
        assert!(proximity_row(Point3::ORIGIN, &target, &dens, 0.7).is_err());
        let dens2 = self_density_points(&points(&[(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]), 0.5).unwrap();
        assert!(proximity_row(Point3::ORIGIN, &target, &dens2, 0.5).is_err());
    }

    #[test]
    fn coincident_single_points_score_logistic_of_k() {
        let d = points(&[(0.3, 0.3, 0.3)]);
        let s = TargetSet::Points(points(&[(0.3, 0.3, 0.3)]));
        let cfg = KernelConfig::exact(0.5).unwrap();
        // Row and column sums are exactly 1, so both scores are 1/(1+e^-2).
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert_relative_eq!(proximity(&d, &s, &cfg).unwrap(), expect, epsilon = 1e-15);
        assert_relative_eq!(coverage(&d, &s, &cfg).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn far_apart_sets_score_one_half() {
        let d = points(&[(0.0, 0.0, 0.0), (0.1, 0.0, 0.0)]);
        let s = TargetSet::Points(points(&[(1e9, 0.0, 0.0), (1e9, 0.1, 0.0)]));
        let cfg = KernelConfig::exact(0.5).unwrap();
        assert_relative_eq!(proximity(&d, &s, &cfg).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(coverage(&d, &s, &cfg).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn residuals_of_coincident_singletons_match_closed_form() {
        let d = points(&[(1.0, -2.0, 0.5)]);
        let s = TargetSet::Points(points(&[(1.0, -2.0, 0.5)]));
        let cfg = KernelConfig::exact(0.3).unwrap();
        let r = residuals(&SimilarityTransform::IDENTITY, &d, &s, &cfg).unwrap();
        let expect = 0.5 * (1.0 - 1.0 / (1.0 + (-2.0f64).exp()));
        assert_eq!(r.len(), 2);
        assert_relative_eq!(r[0], expect, epsilon = 1e-15);
        assert_relative_eq!(r[1], expect, epsilon = 1e-15);
        let e = energy(&SimilarityTransform::IDENTITY, &d, &s, &cfg).unwrap();
        assert_relative_eq!(e, 2.0 * expect * expect, epsilon = 1e-15);
    }

    #[test]
    fn far_apart_energy_matches_closed_form() {
        let d = points(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]);
        let s = TargetSet::Points(points(&[(1e8, 0.0, 0.0), (1e8, 1.0, 0.0)]));
        let cfg = KernelConfig::exact(0.5).unwrap();
        let e = energy(&SimilarityTransform::IDENTITY, &d, &s, &cfg).unwrap();
        let nd = 3.0;
        let ns = 2.0;
        let expect = nd * (0.5 * 0.5 / nd) * (0.5 * 0.5 / nd) + ns * (0.5 * 0.5 / ns) * (0.5 * 0.5 / ns);
        assert_relative_eq!(e, expect, epsilon = 1e-15);
    }

    #[test]
    fn alpha_one_zeroes_the_coverage_block() {
        let d = points(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let s = TargetSet::Points(points(&[(0.5, 0.5, 0.0)]));
        let mut cfg = KernelConfig::exact(0.4).unwrap();
        cfg.alpha = 1.0;
        let r = residuals(&SimilarityTransform::IDENTITY, &d, &s, &cfg).unwrap();
        assert_eq!(r[2], 0.0);
        assert!(r[0] > 0.0 && r[1] > 0.0);
    }

    #[test]
    fn theta_is_applied_to_the_source() {
        let d = points(&[(0.0, 0.0, 0.0)]);
        let s = TargetSet::Points(points(&[(1.0, 0.0, 0.0)]));
        let cfg = KernelConfig::exact(0.5).unwrap();
        let shift = SimilarityTransform::translation_only(pt(1.0, 0.0, 0.0));
        let e_aligned = energy(&shift, &d, &s, &cfg).unwrap();
        let e_identity = energy(&SimilarityTransform::IDENTITY, &d, &s, &cfg).unwrap();
        assert!(e_aligned < e_identity);
    }

    #[test]
    fn truncated_sums_match_exact_within_tolerance() {
        // Unit-cube-ish random instance; cutoff 4 drops only tail terms.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_points = |n: usize| -> PointSet {
            PointSet::new(
                (0..n)
                    .map(|_| {
                        pt(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        )
                    })
                    .collect(),
            )
        };
        let d = rand_points(40);
        let s = TargetSet::Points(rand_points(50));
        for sigma in [0.05, 0.15] {
            let exact = KernelConfig::exact(sigma).unwrap();
            let trunc = KernelConfig::new(sigma).unwrap();
            let theta = SimilarityTransform::from_rotation(
                Quaternion::from_axis_angle(pt(0.0, 0.0, 1.0), 0.2).unwrap(),
                pt(0.05, -0.02, 0.01),
            )
            .unwrap();
            let e1 = energy(&theta, &d, &s, &exact).unwrap();
            let e2 = energy(&theta, &d, &s, &trunc).unwrap();
            assert_relative_eq!(e1, e2, max_relative = 1e-3);
        }
    }

    #[test]
    fn cutoff_below_three_is_rejected() {
        let cfg = KernelConfig {
            sigma: 0.1,
            k: 2.0,
            alpha: 0.5,
            truncation: Truncation::Cutoff(2.0),
        };
        assert!(cfg.validated().is_err());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let empty = PointSet::default();
        let some = points(&[(0.0, 0.0, 0.0)]);
        let cfg = KernelConfig::exact(0.5).unwrap();
        assert!(proximity(&empty, &TargetSet::Points(some.clone()), &cfg).is_err());
        assert!(proximity(&some, &TargetSet::Points(empty.clone()), &cfg).is_err());
        assert!(energy(
            &SimilarityTransform::IDENTITY,
            &some,
            &TargetSet::Rays(RayBundle::new(vec![])),
            &cfg
        )
        .is_err());
    }
}

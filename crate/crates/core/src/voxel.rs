//! Surface voxelization: triangle meshes to shell point clouds.
//!
//! A mesh with sparse or uneven vertices makes a poor point set, so shapes
//! are rasterized instead: a cubic grid is laid over the mesh box, cells
//! touched by any face are set, small gaps are closed morphologically, and
//! everything not on the outward-facing shell is masked away. The centers of
//! the surviving cells form the point set.

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3, PointSet};

/// Indexed triangle mesh. Faces may be degenerate (zero area); every
/// operation here treats them as benign.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Mesh> {
        for (n, face) in faces.iter().enumerate() {
            for &ix in face {
                if ix >= vertices.len() {
                    return Err(Error::InvalidParameter(format!(
                        "face {n} references vertex {ix} of {}",
                        vertices.len()
                    )));
                }
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn aabb(&self) -> Result<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn face_vertices(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

/// Dense binary occupancy over a box of cubic cells. Cell `(i, j, k)` spans
/// `origin + (i,j,k)·cell .. origin + (i+1,j+1,k+1)·cell`. Linear storage
/// runs in lexicographic `(i, j, k)` order (k fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    origin: Point3,
    cell_size: f64,
    dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(origin: Point3, cell_size: f64, dims: [usize; 3]) -> Result<VoxelGrid> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cell size must be positive and finite, got {cell_size}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must all be at least 1, got {dims:?}"
            )));
        }
        let len = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| {
                Error::InvalidParameter(format!("grid dimensions {dims:?} overflow"))
            })?;
        Ok(VoxelGrid {
            origin,
            cell_size,
            dims,
            occupancy: vec![false; len],
        })
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn is_set(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let ix = self.index(i, j, k);
        self.occupancy[ix] = value;
    }

    pub fn set_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    /// World-space box of one cell.
    pub fn cell_aabb(&self, i: usize, j: usize, k: usize) -> Aabb {
        let min = self.origin
            + Point3::new(
                i as f64 * self.cell_size,
                j as f64 * self.cell_size,
                k as f64 * self.cell_size,
            );
        Aabb {
            min,
            max: min + Point3::new(self.cell_size, self.cell_size, self.cell_size),
        }
    }
}

/// Closed-set separating-axis test: 3 box normals, the triangle normal, and
/// the 9 edge cross axes. Boundary contact counts as intersection, so a face
/// lying exactly on a shared cell wall registers in both cells regardless of
/// orientation. Zero-area triangles produce zero-length axes, which separate
/// nothing and are therefore harmless.
pub fn triangle_box_overlap(tri: [Point3; 3], b: &Aabb) -> bool {
    let c = b.center();
    let e = b.extents() * 0.5;
    let h = [e.x, e.y, e.z];
    let v = [tri[0] - c, tri[1] - c, tri[2] - c];

    // Box face normals: interval test per coordinate.
    for axis in 0..3 {
        let p = [coord(v[0], axis), coord(v[1], axis), coord(v[2], axis)];
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        if lo > h[axis] || hi < -h[axis] {
            return false;
        }
    }

    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];

    // Cross products of box axes with triangle edges.
    for edge in &edges {
        for axis in 0..3 {
            let a = unit_cross(axis, *edge);
            let r = h[0] * a.x.abs() + h[1] * a.y.abs() + h[2] * a.z.abs();
            let p = [v[0].dot(a), v[1].dot(a), v[2].dot(a)];
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            if lo > r || hi < -r {
                return false;
            }
        }
    }

    // Triangle plane.
    let n = edges[0].cross(edges[1]);
    let r = h[0] * n.x.abs() + h[1] * n.y.abs() + h[2] * n.z.abs();
    let d = n.dot(v[0]);
    !(d > r || d < -r)
}

#[inline]
fn coord(p: Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

/// Cross product of the `axis`-th unit vector with `e`.
#[inline]
fn unit_cross(axis: usize, e: Point3) -> Point3 {
    match axis {
        0 => Point3::new(0.0, -e.z, e.y),
        1 => Point3::new(e.z, 0.0, -e.x),
        _ => Point3::new(-e.y, e.x, 0.0),
    }
}

/// Rasterizes the mesh surface into a padded grid.
///
/// Cubic cells are sized so the largest edge of the mesh box spans
/// `resolution` cells, and the occupied region is that interior block: a
/// face on the boundary of the mesh box registers in the boundary cells of
/// the block, never in the one-cell padding layer around it. The padding
/// exists to give the downstream flood fill a connected exterior.
pub fn voxelize_surface(mesh: &Mesh, resolution: usize) -> Result<VoxelGrid> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(Error::DegenerateInput(
            "voxelization needs a mesh with vertices and faces".into(),
        ));
    }
    if resolution < 2 {
        return Err(Error::InvalidParameter(format!(
            "voxel resolution must be at least 2, got {resolution}"
        )));
    }
    let bb = mesh.aabb()?;
    let edge = bb.largest_edge();
    if !(edge > 0.0 && edge.is_finite()) {
        return Err(Error::DegenerateInput(
            "voxelization needs a mesh with positive extent".into(),
        ));
    }
    let cell = edge / resolution as f64;
    let ext = bb.extents();
    let mut inner = [0usize; 3];
    for (axis, extent) in [ext.x, ext.y, ext.z].into_iter().enumerate() {
        // The slack keeps the division from rounding an exact multiple up
        // to an extra empty slab of cells.
        inner[axis] = ((extent / cell) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    }
    let dims = [inner[0] + 2, inner[1] + 2, inner[2] + 2];
    let origin = bb.min - Point3::new(cell, cell, cell);
    let mut grid = VoxelGrid::new(origin, cell, dims)?;

    let bb_min = [bb.min.x, bb.min.y, bb.min.z];
    for face in 0..mesh.faces.len() {
        let tri = mesh.face_vertices(face);
        let fmin = tri[0].min_components(tri[1]).min_components(tri[2]);
        let fmax = tri[0].max_components(tri[1]).max_components(tri[2]);
        let flo = [fmin.x, fmin.y, fmin.z];
        let fhi = [fmax.x, fmax.y, fmax.z];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for axis in 0..3 {
            let a = ((flo[axis] - bb_min[axis]) / cell).floor() as isize - 1;
            let b = ((fhi[axis] - bb_min[axis]) / cell).floor() as isize + 1;
            lo[axis] = a.clamp(0, inner[axis] as isize - 1) as usize;
            hi[axis] = b.clamp(0, inner[axis] as isize - 1) as usize;
        }
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    // Interior cell (i, j, k) sits at grid index +1 in each
                    // axis because of the padding layer.
                    let (gi, gj, gk) = (i + 1, j + 1, k + 1);
                    if !grid.is_set(gi, gj, gk)
                        && triangle_box_overlap(tri, &grid.cell_aabb(gi, gj, gk))
                    {
                        grid.set(gi, gj, gk, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Morphological closing (dilate, then erode) with a cubic structuring
/// element of the given radius, 26-connectivity at radius 1.
///
/// The intermediate dilation lives on a virtually enlarged grid so the
/// closing is exactly the ideal one on the infinite lattice; the result
/// never grows past the original bounds, so cropping back loses nothing and
/// re-applying the operation changes nothing.
pub fn morph_close(grid: &VoxelGrid, radius: usize) -> VoxelGrid {
    if radius == 0 || grid.set_count() == 0 {
        return grid.clone();
    }
    let r = radius as isize;
    let [nx, ny, nz] = grid.dims;
    let (px, py, pz) = (
        nx + 2 * radius,
        ny + 2 * radius,
        nz + 2 * radius,
    );
    let pidx = |i: usize, j: usize, k: usize| (i * py + j) * pz + k;

    let mut dilated = vec![false; px * py * pz];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if !grid.is_set(i, j, k) {
                    continue;
                }
                for di in -r..=r {
                    for dj in -r..=r {
                        for dk in -r..=r {
                            let (a, b, c) = (
                                (i as isize + r + di) as usize,
                                (j as isize + r + dj) as usize,
                                (k as isize + r + dk) as usize,
                            );
                            dilated[pidx(a, b, c)] = true;
                        }
                    }
                }
            }
        }
    }

    let mut out = grid.clone();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let mut keep = true;
                'window: for di in -r..=r {
                    for dj in -r..=r {
                        for dk in -r..=r {
                            let (a, b, c) = (
                                (i as isize + r + di) as usize,
                                (j as isize + r + dj) as usize,
                                (k as isize + r + dk) as usize,
                            );
                            if !dilated[pidx(a, b, c)] {
                                keep = false;
                                break 'window;
                            }
                        }
                    }
                }
                out.set(i, j, k, keep);
            }
        }
    }
    out
}

/// Keeps only the outward-facing shell: occupied cells in face contact with
/// empty space that can be reached from outside the grid.
///
/// Empty cells are flooded (6-connectivity) from every grid boundary, with
/// out-of-bounds counting as exterior; an occupied cell survives if one of
/// its face neighbors is exterior-reachable empty, or if it lies on the grid
/// boundary and so touches the outside directly. Occupied regions and
/// enclosed cavities are never flooded, which is what removes interior
/// structure.
pub fn mask_exterior(grid: &VoxelGrid) -> VoxelGrid {
    let [nx, ny, nz] = grid.dims;
    let idx = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
    let mut exterior = vec![false; nx * ny * nz];
    let mut queue: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let boundary =
                    i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if boundary && !grid.is_set(i, j, k) && !exterior[idx(i, j, k)] {
                    exterior[idx(i, j, k)] = true;
                    queue.push((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop() {
        let neighbors = [
            (i.wrapping_sub(1), j, k),
            (i + 1, j, k),
            (i, j.wrapping_sub(1), k),
            (i, j + 1, k),
            (i, j, k.wrapping_sub(1)),
            (i, j, k + 1),
        ];
        for (a, b, c) in neighbors {
            if a < nx && b < ny && c < nz && !grid.is_set(a, b, c) && !exterior[idx(a, b, c)] {
                exterior[idx(a, b, c)] = true;
                queue.push((a, b, c));
            }
        }
    }

    let mut out = grid.clone();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if !grid.is_set(i, j, k) {
                    continue;
                }
                let on_boundary =
                    i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                let mut keep = on_boundary;
                if !keep {
                    let neighbors = [
                        (i - 1, j, k),
                        (i + 1, j, k),
                        (i, j - 1, k),
                        (i, j + 1, k),
                        (i, j, k - 1),
                        (i, j, k + 1),
                    ];
                    keep = neighbors
                        .iter()
                        .any(|&(a, b, c)| exterior[idx(a, b, c)]);
                }
                if !keep {
                    out.set(i, j, k, false);
                }
            }
        }
    }
    out
}

/// Centers of all set cells, in lexicographic `(i, j, k)` order.
pub fn voxel_centers(grid: &VoxelGrid) -> PointSet {
    let [nx, ny, nz] = grid.dims;
    let mut points = Vec::with_capacity(grid.set_count());
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if grid.is_set(i, j, k) {
                    points.push(
                        grid.origin
                            + Point3::new(
                                (i as f64 + 0.5) * grid.cell_size,
                                (j as f64 + 0.5) * grid.cell_size,
                                (k as f64 + 0.5) * grid.cell_size,
                            ),
                    );
                }
            }
        }
    }
    PointSet::new(points)
}

/// Full mesh-to-points pipeline: rasterize the surface, close one-cell gaps,
/// keep the outward shell, and take cell centers.
pub fn mesh_to_pointset(mesh: &Mesh, resolution: usize) -> Result<PointSet> {
    let grid = voxelize_surface(mesh, resolution)?;
    let closed = morph_close(&grid, 1);
    let shell = mask_exterior(&closed);
    Ok(voxel_centers(&shell))
}

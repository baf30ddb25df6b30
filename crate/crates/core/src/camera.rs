//! Pinhole-camera plumbing for aligning a 3D cloud to image pixels.
//!
//! A segmented image region becomes a bundle of viewing rays through the
//! camera center; after registration the cloud is projected back to measure
//! how far each point lands from the labeled pixels. The model is a pure
//! pinhole: lens distortion is assumed corrected upstream, and masks are
//! produced externally (edge detectors, hand-drawn regions), so one interface
//! covers both workflows.
//!
//! Conventions, fixed for reproducibility: integer pixel coordinates address
//! pixel centers, masks and images are row-major, and the camera looks down
//! +z from the origin.

use crate::energy::RayBundle;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, Ray, SimilarityTransform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite() && fy > 0.0 && fy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive and finite, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidParameter(
                "principal point must be finite".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// Binary image mask, row-major. `(u, v)` is column `u` of row `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Result<PixelMask> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "mask size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(PixelMask {
            width,
            height,
            data: vec![false; width * height],
        })
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<PixelMask> {
        let mut mask = PixelMask::new(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask data holds {} pixels, expected {}",
                data.len(),
                width * height
            )));
        }
        mask.data = data;
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_set(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn set_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Coordinates of all set pixels in row-major order.
    pub fn set_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.set_count());
        for v in 0..self.height {
            for u in 0..self.width {
                if self.is_set(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// Viewing ray through pixel `(u, v)`: the unit vector along
/// `((u−cx)/fx, (v−cy)/fy, 1)`. Off-image coordinates are allowed; the
/// direction always has positive z. Coordinates must be finite.
pub fn pixel_to_ray(k: &CameraIntrinsics, u: f64, v: f64) -> Ray {
    let dir = Point3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    Ray::new(dir).expect("pixel coordinates must be finite")
}

/// One ray per set pixel on the `stride`-spaced row-major pixel grid.
///
/// Rows `0, stride, 2·stride, …` are scanned left to right at the same
/// column spacing, so the bundle order is a deterministic function of the
/// mask alone.
pub fn mask_to_rays(k: &CameraIntrinsics, mask: &PixelMask, stride: usize) -> Result<RayBundle> {
    if mask.width() != k.width || mask.height() != k.height {
        return Err(Error::InvalidParameter(format!(
            "mask is {}x{} but the camera image is {}x{}",
            mask.width(),
            mask.height(),
            k.width,
            k.height
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let mut rays = Vec::new();
    for v in (0..mask.height()).step_by(stride) {
        for u in (0..mask.width()).step_by(stride) {
            if mask.is_set(u, v) {
                rays.push(pixel_to_ray(k, u as f64, v as f64));
            }
        }
    }
    Ok(RayBundle::new(rays))
}

/// Image-plane position and camera-frame depth of one projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects `theta·p` for every point. Entries are index-aligned with the
/// input; a point whose transformed z is not positive sits behind the camera
/// and yields `None`.
pub fn project_points(
    k: &CameraIntrinsics,
    theta: &SimilarityTransform,
    points: &PointSet,
) -> Vec<Option<Projection>> {
    points
        .as_slice()
        .iter()
        .map(|&p| {
            let q = theta.apply(p);
            if q.z > 0.0 {
                Some(Projection {
                    u: k.fx * q.x / q.z + k.cx,
                    v: k.fy * q.y / q.z + k.cy,
                    depth: q.z,
                })
            } else {
                None
            }
        })
        .collect()
}

/// Pixel the continuous image position `(u, v)` lands on, or `None` when it
/// rounds off the image. Integer coordinates address pixel centers, so
/// rounding to nearest is the inverse of that convention.
fn to_pixel(k: &CameraIntrinsics, u: f64, v: f64) -> Option<(usize, usize)> {
    let pu = u.round();
    let pv = v.round();
    if pu >= 0.0 && pv >= 0.0 && (pu as usize) < k.width && (pv as usize) < k.height {
        Some((pu as usize, pv as usize))
    } else {
        None
    }
}

/// Z-buffered depth map of the transformed cloud, row-major `width·height`.
/// Each pixel keeps the smallest depth projected onto it; pixels nothing
/// lands on carry `f64::INFINITY`.
pub fn depth_image(
    k: &CameraIntrinsics,
    theta: &SimilarityTransform,
    points: &PointSet,
) -> Vec<f64> {
    let mut image = vec![f64::INFINITY; k.width * k.height];
    for proj in project_points(k, theta, points).into_iter().flatten() {
        if let Some((u, v)) = to_pixel(k, proj.u, proj.v) {
            let px = &mut image[v * k.width + u];
            if proj.depth < *px {
                *px = proj.depth;
            }
        }
    }
    image
}

/// How far reprojected points land from a labeled image region.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectionReport {
    /// Distance to the nearest set pixel for every point that lands on the
    /// image, in input point order.
    pub distances: Vec<f64>,
    /// 1-pixel bins: `histogram[i]` counts distances in `[i, i+1)`.
    pub histogram: Vec<usize>,
    /// Points that do not land on the image, behind-camera ones included.
    pub out_of_image: usize,
}

/// Measures the pixel distance from each reprojected point to the closest
/// labeled pixel. Points that miss the image (or sit behind the camera) are
/// tallied in `out_of_image` instead; a well-aligned cloud puts its outliers
/// there rather than far from the region.
pub fn reprojection_errors(
    k: &CameraIntrinsics,
    theta: &SimilarityTransform,
    points: &PointSet,
    labeled: &PixelMask,
) -> Result<ReprojectionReport> {
    if labeled.width() != k.width || labeled.height() != k.height {
        return Err(Error::InvalidParameter(format!(
            "mask is {}x{} but the camera image is {}x{}",
            labeled.width(),
            labeled.height(),
            k.width,
            k.height
        )));
    }
    let targets = labeled.set_pixels();
    if targets.is_empty() {
        return Err(Error::InvalidParameter(
            "reprojection needs at least one labeled pixel".into(),
        ));
    }
    let mut distances = Vec::new();
    let mut out_of_image = 0usize;
    for proj in project_points(k, theta, points) {
        let landed = proj.and_then(|p| to_pixel(k, p.u, p.v).map(|_| p));
        match landed {
            Some(p) => {
                // Min over set pixels; order of enumeration cannot matter.
                let best = targets
                    .iter()
                    .map(|&(tu, tv)| {
                        let du = p.u - tu as f64;
                        let dv = p.v - tv as f64;
                        (du * du + dv * dv).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                distances.push(best);
            }
            None => out_of_image += 1,
        }
    }
    let mut histogram = Vec::new();
    for &d in &distances {
        let bin = d.floor() as usize;
        if bin >= histogram.len() {
            histogram.resize(bin + 1, 0);
        }
        histogram[bin] += 1;
    }
    Ok(ReprojectionReport {
        distances,
        histogram,
        out_of_image,
    })
}

//! Shape registration from fuzzy correspondences.
//!
//! Aligns a source point cloud to a target shape without committing to
//! point-to-point correspondences. Every source point is softly matched to
//! every target element through Gaussian kernels, and two normalized scores
//! (how close the source sits to the target, and how much of the target the
//! source covers) are driven toward one by a damped least-squares solver over
//! a coarse-to-fine kernel-width ladder. Targets can be point clouds or
//! camera ray bundles, so the same machinery aligns a cloud to another cloud
//! or to the pixels of a segmented image.
//!
//! The crate also ships the supporting cast this needs in practice:
//!
//! - a surface voxelizer that turns triangle meshes into shell point clouds
//!   (`voxel`),
//! - pinhole-camera helpers for building rays from masks and projecting
//!   points back into images (`camera`),
//! - evaluation metrics, a rotation-sweep benchmark harness, and a plain ICP
//!   baseline to compare against (`metrics`),
//! - readers and writers for xyz/ply/obj point and mesh files, pgm masks, and
//!   a small key-value config and transform-report dialect (`io`), wired into
//!   the `fuzzyreg` command-line tool.

pub mod camera;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod solver;
pub mod voxel;

pub use camera::{
    depth_image, mask_to_rays, pixel_to_ray, project_points, reprojection_errors,
    CameraIntrinsics, PixelMask, Projection, ReprojectionReport,
};
pub use config::{RunConfig, RunMode};
pub use error::{Error, Result};
pub use io::{
    read_intrinsics, read_mesh, read_pgm_mask, read_pointset, read_transform, write_pointset,
    write_sweep_csv, write_transform, MeshFormat, PointFormat, TransformDoc,
};
pub use metrics::{
    cloud_to_mesh_distance, icp_baseline, icp_registrar, mean_vertex_distance, rotation_sweep,
    success_rate, Axis, IcpResult, Registrar, SweepReport, SweepSpec, SweepTrial,
};
pub use geometry::{
    denormalize_transform, point_ray_distance, quat_rotate, subsample, Aabb, Normalization,
    Point3, PointSet, Quaternion, Ray, SimilarityTransform,
};
pub use solver::{
    alignment_problem, fd_jacobian, register, register_rays, JacobianMode, LeastSquares,
    LmConfig, RegistrationResult, Schedule, TransformMode,
};
pub use voxel::{mesh_to_pointset, Mesh, VoxelGrid};

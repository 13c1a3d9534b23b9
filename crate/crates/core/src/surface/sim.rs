//! Synthetic single-view depth sensing against analytic scenes.
//!
//! A pinhole camera looks along its +z axis; one ray is cast per pixel
//! and every first hit becomes a cloud point with the exact surface
//! normal. Optional Gaussian noise perturbs each point along its ray,
//! mimicking depth-sensor range error.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::substream;
use crate::shapes::Scene;

use super::PointCloud;

/// Pinhole camera description: pose (+z is the viewing direction),
/// square pixel grid, vertical field of view.
#[derive(Debug, Clone)]
pub struct DepthCamera {
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl DepthCamera {
    pub fn new(pose: Pose, width: usize, height: usize, fov_deg: f64) -> Self {
        DepthCamera {
            pose,
            width,
            height,
            fov_deg,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be nonzero"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::invalid("field of view must lie in (0, 180) degrees"));
        }
        Ok(())
    }
}

/// Camera pose at `eye` with +z looking at `target`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = (target - eye)
        .try_normalize(1e-12)
        .expect("look_at needs distinct eye and target");
    let mut x = up.cross(&z);
    if x.norm() < 1e-9 {
        // Up is parallel to the view direction; pick any perpendicular.
        let alt = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        x = alt.cross(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_columns(&[x, y, z]);
    Pose::new(
        eye,
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot)),
    )
}

/// Renders the visible surface of `scene` into a point cloud.
///
/// `noise_std` is the standard deviation of zero-mean Gaussian range
/// noise applied along each ray, metres; pass 0.0 for an exact cloud.
/// `seed` fixes the noise stream, so equal inputs give equal clouds.
pub fn simulate_depth_view(
    scene: &Scene,
    camera: &DepthCamera,
    noise_std: f64,
    seed: u64,
) -> Result<PointCloud> {
    camera.validate()?;
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std must be nonnegative"));
    }
    let origin = camera.pose.p;
    let t_max = scene
        .objects
        .iter()
        .map(|o| (o.pose.p - origin).norm() + o.bounding_radius())
        .fold(0.0f64, f64::max)
        * 1.5
        + 1.0;

    let tan_half = (camera.fov_deg.to_radians() / 2.0).tan();
    let aspect = camera.width as f64 / camera.height as f64;
    let mut rng = substream(seed, 0x5e);

    let mut points = Vec::new();
    let mut normals = Vec::new();
    for iy in 0..camera.height {
        for ix in 0..camera.width {
            let sx = ((ix as f64 + 0.5) / camera.width as f64 * 2.0 - 1.0) * tan_half * aspect;
            let sy = ((iy as f64 + 0.5) / camera.height as f64 * 2.0 - 1.0) * tan_half;
            let dir_cam = Vector3::new(sx, sy, 1.0).normalize();
            let dir = camera.pose.q * dir_cam;
            let Some(hit) = scene.raycast(&origin, &dir, t_max) else {
                continue;
            };
            let t = if noise_std > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                hit.t + eps * noise_std
            } else {
                hit.t
            };
            points.push(origin + dir * t);
            normals.push(hit.normal);
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("simulated view contains no surface points"));
    }
    Ok(PointCloud {
        points,
        normals: Some(normals),
        sensor_viewpoint: origin,
    })
}

//! Point-cloud ingestion and surface-feature extraction.
//!
//! A partial point cloud is turned into a set of local surface frames:
//! one pose per point whose z-axis is the estimated outward normal and
//! whose x/y axes are the principal-curvature directions, paired with
//! the two principal curvatures as a descriptor. The resulting feature
//! set doubles as a kernel density over (pose, descriptor) space.

pub mod curvature;
pub mod normals;
pub mod ply;
pub mod sim;

pub use curvature::principal_curvature_features;
pub use normals::estimate_normals;
pub use ply::{load_ply, save_ply};
pub use sim::{look_at, simulate_depth_view, DepthCamera};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::density::KernelSet;
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// A set of surface points observed from a single sensor position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<Vector3<f64>>>,
    pub sensor_viewpoint: Vector3<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, sensor_viewpoint: Vector3<f64>) -> Self {
        PointCloud {
            points,
            normals: None,
            sensor_viewpoint,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "normal count {} does not match point count {}",
                    normals.len(),
                    self.points.len()
                )));
            }
            for n in normals {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid("normals must be unit length"));
                }
            }
        }
        for p in &self.points {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid("point coordinates must be finite"));
            }
        }
        Ok(())
    }

    /// The cloud moved rigidly: points, normals, and viewpoint together.
    pub fn transformed(&self, t: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.transform_vector(n)).collect()),
            sensor_viewpoint: t.transform_point(&self.sensor_viewpoint),
        }
    }
}

/// Surface-feature density of one object view: equally weighted kernels
/// over (frame pose, curvature descriptor), tagged with the view and the
/// demonstration it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectViewModel {
    pub features: KernelSet,
    pub view_id: String,
    pub grasp_id: String,
}

impl ObjectViewModel {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature positions, in view-model order.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.features.kernels.iter().map(|k| k.center.pose.p).collect()
    }

    /// Surface normal of feature `j` (the frame's z-axis).
    pub fn normal(&self, j: usize) -> Vector3<f64> {
        self.features.kernels[j].center.pose.q * Vector3::z()
    }
}

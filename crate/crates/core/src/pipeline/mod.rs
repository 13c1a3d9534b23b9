//! End-to-end pipeline: demonstration files, the model store, training,
//! merging, inference, the geometric success check, experiment reports,
//! and the autonomous self-training loop.

pub mod demo;
pub mod infer;
pub mod merge;
pub mod report;
pub mod selftrain;
pub mod store;
pub mod success;
pub mod train;

pub use demo::{load_demonstration, load_demonstrations, save_demonstration, Demonstration};
pub use infer::{infer, InferOutcome, Variant};
pub use merge::merge_store;
pub use report::{read_reports, write_reports, ExperimentReport, RankedGrasp, Timings};
pub use selftrain::{
    demo_from_grasp, load_scene_dir, self_train, ScenePack, SelfTrainReport,
};
pub use store::{ClusterBlock, GraspRecord, ModelStore};
pub use success::{geometric_success_check, Contact, SuccessCheck};
pub use train::train;

use crate::error::Result;
use crate::surface::{estimate_normals, PointCloud};

/// Returns the cloud with normals, estimating them when absent.
pub fn ensure_normals(cloud: &PointCloud, k_nn: usize) -> Result<PointCloud> {
    if cloud.normals.is_some() {
        Ok(cloud.clone())
    } else {
        estimate_normals(cloud, k_nn)
    }
}

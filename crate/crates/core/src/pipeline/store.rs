//! The learned-model store: everything training produces, serialized as
//! one JSON file so inference never needs the demonstrations again.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPrototype;
use crate::contact::ContactModel;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hand::{HandConfigModel, HandModel};
use crate::params::Params;

pub const STORE_SCHEMA: u32 = 1;

/// Provenance of one demonstrated grasp kept alongside the models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspRecord {
    pub id: String,
    pub h_g: Vec<f64>,
    pub h_t: Vec<f64>,
    pub wrist: Pose,
    pub cameras: Vec<Pose>,
    pub n_views: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Output of the model-merging stage over the per-view contact models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterBlock {
    /// False when merging was disabled and every model is a singleton.
    pub merged: bool,
    /// Pairwise model distances; empty when merging was disabled.
    pub distance: Vec<Vec<f64>>,
    /// Cluster index per view model.
    pub assignments: Vec<usize>,
    /// Exemplar model index per cluster.
    pub exemplars: Vec<usize>,
    pub prototypes: Vec<ClusterPrototype>,
    /// Models per prototype: n / k.
    pub compression_ratio: f64,
}

/// Everything learned from a demonstration set.
///
/// Contact models come in two families over the same demonstrations:
/// `view_models` holds one model per retained (link, view, grasp)
/// triple, `union_models` one per retained (link, grasp) pair built
/// from the union of that grasp's views. Inference picks a family per
/// variant; both are stored so the choice stays a query-time flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelStore {
    pub schema: u32,
    pub hand: HandModel,
    pub params: Params,
    pub grasps: Vec<GraspRecord>,
    pub view_models: Vec<ContactModel>,
    pub union_models: Vec<ContactModel>,
    pub configs: Vec<HandConfigModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_source: Option<String>,
}

impl ModelStore {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads and validates a store. The schema field is checked before
    /// the full deserialization so version skew reports as such rather
    /// than as an arbitrary parse error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let got = value
            .get("schema")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("{}: missing schema field", path.display())))?
            as u32;
        if got != STORE_SCHEMA {
            return Err(Error::StoreVersion {
                got,
                expected: STORE_SCHEMA,
            });
        }
        let store: ModelStore = serde_json::from_value(value)?;
        store.hand.validate()?;
        store.params.validate()?;
        Ok(store)
    }
}

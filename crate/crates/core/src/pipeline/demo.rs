//! Demonstration recordings on disk: one directory per grasp holding the
//! view clouds as PLY files and a JSON manifest with the wrist approach
//! trajectory, the grasp and pre-grasp configurations, and per-view
//! camera poses.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::surface::{load_ply, save_ply, PointCloud};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewEntry {
    file: String,
    camera: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    h_g: Vec<f64>,
    h_t: Vec<f64>,
    wrist_trajectory: Vec<Pose>,
    views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<String>,
}

/// One demonstrated grasp: the observed views of the object and the
/// recorded hand motion. Only the final wrist pose, the grasp
/// configuration, and the pre-grasp configuration enter learning; the
/// rest of the trajectory is kept for provenance.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub id: String,
    /// Joint configuration at the grasp.
    pub h_g: Vec<f64>,
    /// Joint configuration at the start of the approach.
    pub h_t: Vec<f64>,
    /// Wrist poses over the approach; the last one is the grasp pose.
    pub wrist_trajectory: Vec<Pose>,
    /// One registered cloud per view, world frame.
    pub views: Vec<PointCloud>,
    /// Camera pose per view; the translation is the sensor position.
    pub cameras: Vec<Pose>,
    /// Test-scene id for autonomously collected examples.
    pub origin: Option<String>,
}

impl Demonstration {
    /// The wrist pose at the grasp.
    pub fn wrist(&self) -> &Pose {
        self.wrist_trajectory
            .last()
            .expect("validated demonstrations have a trajectory")
    }

    pub fn validate(&self) -> Result<()> {
        if self.wrist_trajectory.is_empty() {
            return Err(Error::invalid(format!(
                "demonstration '{}' has an empty wrist trajectory",
                self.id
            )));
        }
        if self.views.is_empty() {
            return Err(Error::invalid(format!(
                "demonstration '{}' has no views",
                self.id
            )));
        }
        if self.views.len() != self.cameras.len() {
            return Err(Error::invalid(format!(
                "demonstration '{}' has {} views but {} cameras",
                self.id,
                self.views.len(),
                self.cameras.len()
            )));
        }
        if self.h_g.len() != self.h_t.len() {
            return Err(Error::invalid(format!(
                "demonstration '{}': grasp and pre-grasp configurations disagree in length",
                self.id
            )));
        }
        for (m, view) in self.views.iter().enumerate() {
            if view.points.is_empty() {
                return Err(Error::invalid(format!(
                    "demonstration '{}': view {m} is empty",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Reads one demonstration directory. The manifest's camera positions
/// override whatever sensor position the PLY files carry.
pub fn load_demonstration(dir: &Path) -> Result<Demonstration> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parse(format!("unusable demonstration path {}", dir.display())))?
        .to_string();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::StoreVersion {
            got: manifest.schema,
            expected: MANIFEST_SCHEMA,
        });
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    let mut cameras = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let mut cloud = load_ply(&dir.join(&entry.file))?;
        cloud.sensor_viewpoint = entry.camera.p;
        views.push(cloud);
        cameras.push(entry.camera);
    }
    let demo = Demonstration {
        id,
        h_g: manifest.h_g,
        h_t: manifest.h_t,
        wrist_trajectory: manifest.wrist_trajectory,
        views,
        cameras,
        origin: manifest.origin,
    };
    demo.validate()?;
    Ok(demo)
}

/// Writes a demonstration as a directory of PLY views plus a manifest.
pub fn save_demonstration(demo: &Demonstration, dir: &Path) -> Result<()> {
    demo.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(demo.views.len());
    for (m, (view, camera)) in demo.views.iter().zip(&demo.cameras).enumerate() {
        let file = format!("view_{m:02}.ply");
        save_ply(view, &dir.join(&file))?;
        entries.push(ViewEntry {
            file,
            camera: *camera,
        });
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        h_g: demo.h_g.clone(),
        h_t: demo.h_t.clone(),
        wrist_trajectory: demo.wrist_trajectory.clone(),
        views: entries,
        origin: demo.origin.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Loads every subdirectory of `root` that contains a manifest, in
/// lexicographic order of the directory names.
pub fn load_demonstrations(root: &Path) -> Result<Vec<Demonstration>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no demonstration directories under {}",
            root.display()
        )));
    }
    dirs.iter().map(|d| load_demonstration(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn tiny_demo(id: &str) -> Demonstration {
        let points = (0..30)
            .map(|i| Vector3::new(0.001 * i as f64, 0.0, 0.0))
            .collect();
        let camera = Pose::from_translation(Vector3::new(0.1, 0.2, 0.3));
        let mut cloud = PointCloud::new(points, camera.p);
        cloud.normals = Some(vec![Vector3::z(); 30]);
        Demonstration {
            id: id.into(),
            h_g: vec![0.4, 0.1],
            h_t: vec![0.1, 0.0],
            wrist_trajectory: vec![
                Pose::from_translation(Vector3::new(0.0, 0.0, -0.2)),
                Pose::from_translation(Vector3::new(0.0, 0.0, -0.1)),
            ],
            views: vec![cloud],
            cameras: vec![camera],
            origin: None,
        }
    }

    #[test]
    fn demonstrations_round_trip_through_the_directory_format() {
        let tmp = tempfile::tempdir().unwrap();
        let demo = tiny_demo("grasp_007");
        let dir = tmp.path().join("grasp_007");
        save_demonstration(&demo, &dir).unwrap();
        let loaded = load_demonstration(&dir).unwrap();
        assert_eq!(loaded.id, "grasp_007");
        assert_eq!(loaded.h_g, demo.h_g);
        assert_eq!(loaded.h_t, demo.h_t);
        assert_eq!(loaded.wrist_trajectory, demo.wrist_trajectory);
        assert_eq!(loaded.cameras, demo.cameras);
        assert_eq!(loaded.views[0].points, demo.views[0].points);
        assert_eq!(loaded.views[0].normals, demo.views[0].normals);
        assert_eq!(loaded.views[0].sensor_viewpoint, demo.cameras[0].p);

        let all = load_demonstrations(tmp.path()).unwrap();
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn malformed_directories_are_rejected_with_names() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(load_demonstrations(tmp.path()).is_err());

        let dir = tmp.path().join("broken");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(MANIFEST_FILE), "{not json").unwrap();
        let err = load_demonstration(&dir).unwrap_err();
        assert!(err.to_string().contains("manifest.json"));

        let mut demo = tiny_demo("bad");
        demo.views.clear();
        demo.cameras.clear();
        assert!(demo.validate().is_err());
        let mut demo = tiny_demo("bad");
        demo.wrist_trajectory.clear();
        assert!(demo.validate().is_err());
        let mut demo = tiny_demo("bad");
        demo.h_t.pop();
        assert!(demo.validate().is_err());
    }

    #[test]
    fn future_manifest_schemas_are_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("g");
        save_demonstration(&tiny_demo("g"), &dir).unwrap();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema\": 1", "\"schema\": 9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_demonstration(&dir),
            Err(Error::StoreVersion { got: 9, .. })
        ));
    }
}

//! Autonomous practice: plan grasps on test scenes, keep the ones the
//! geometric check accepts as new demonstrations, and retrain.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hand::HandModel;
use crate::params::Params;
use crate::planner::GraspSolution;
use crate::rng::derive;
use crate::shapes::Scene;
use crate::surface::{load_ply, look_at, simulate_depth_view, PointCloud};

use super::demo::Demonstration;
use super::infer::{infer, Variant};
use super::merge::merge_store;
use super::store::ModelStore;
use super::success::geometric_success_check;
use super::train::train;
use crate::synth::canonical_camera;

/// A test scene with its observation: the analytic geometry for the
/// verdict, plus a single-view cloud for inference.
#[derive(Debug, Clone)]
pub struct ScenePack {
    pub id: String,
    pub scene: Scene,
    pub cloud: PointCloud,
    pub camera: Pose,
}

/// Loads every `*.json` scene under `dir`, in name order. A sibling
/// `*.ply` with the same stem is used as the observation when present;
/// otherwise a canonical single view is rendered.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<ScenePack>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no scene files (*.json) under {}",
            dir.display()
        )));
    }
    let mut packs = Vec::with_capacity(files.len());
    for path in files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scene")
            .to_string();
        let scene = Scene::load(&path)?;
        let ply = path.with_extension("ply");
        let (cloud, camera) = if ply.is_file() {
            let cloud = load_ply(&ply)?;
            let target = cloud.centroid();
            let camera = look_at(cloud.sensor_viewpoint, target, Vector3::z());
            (cloud, camera)
        } else {
            let camera = canonical_camera(&scene);
            let cloud = simulate_depth_view(&scene, &camera, 0.0, 0)?;
            (cloud, camera.pose)
        };
        packs.push(ScenePack {
            id,
            scene,
            cloud,
            camera,
        });
    }
    Ok(packs)
}

/// What happened in one practice round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub attempts: usize,
    pub successes: usize,
    /// Ids of the demonstrations added this round.
    pub added: Vec<String>,
}

/// Summary of a whole practice run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub rounds: Vec<RoundReport>,
    /// Practice grasps in the final store.
    pub total_added: usize,
    /// Ids kept at first but later removed because retraining on them
    /// failed.
    pub dropped: Vec<String>,
}

/// Turns an executed grasp on a test scene into a demonstration: the
/// observed cloud becomes the single view, the planned configuration
/// the grasp, and a straight back-off along the wrist approach axis
/// the trajectory. The scene id is recorded so later practice on the
/// same scene can exclude it.
pub fn demo_from_grasp(
    pack: &ScenePack,
    sol: &GraspSolution,
    hand: &HandModel,
    id: impl Into<String>,
) -> Result<Demonstration> {
    let h_g = hand.clamp(&sol.h_c)?;
    let h_t = hand.clamp(&h_g.iter().map(|a| 0.5 * a).collect::<Vec<_>>())?;
    let back = sol.h_w.transform_vector(&Vector3::new(0.0, 0.0, -0.08));
    let approach = Pose::new(sol.h_w.p + back, sol.h_w.q);
    let demo = Demonstration {
        id: id.into(),
        h_g,
        h_t,
        wrist_trajectory: vec![approach, sol.h_w],
        views: vec![pack.cloud.clone()],
        cameras: vec![pack.camera],
        origin: Some(pack.id.clone()),
    };
    demo.validate()?;
    Ok(demo)
}

/// Trains on the base demonstrations plus the kept practice grasps
/// (minus any originating from `exclude`). A kept grasp whose
/// demonstration the trainer rejects is removed for good: it passed
/// the geometric check but offers too little usable evidence.
fn train_around_bad_practice(
    hand: &HandModel,
    base: &[Demonstration],
    kept: &mut Vec<Demonstration>,
    exclude: Option<&str>,
    params: &Params,
    dropped: &mut Vec<String>,
) -> Result<ModelStore> {
    loop {
        let mut demos: Vec<Demonstration> = base.to_vec();
        demos.extend(
            kept.iter()
                .filter(|d| exclude.is_none() || d.origin.as_deref() != exclude)
                .cloned(),
        );
        match train(hand, &demos, params) {
            Ok(store) => return Ok(store),
            Err(e) => {
                let msg = e.to_string();
                let Some(pos) = kept
                    .iter()
                    .position(|d| msg.contains(&format!("'{}'", d.id)))
                else {
                    return Err(e);
                };
                let demo = kept.remove(pos);
                log::warn!("dropping practice grasp '{}': {msg}", demo.id);
                dropped.push(demo.id);
            }
        }
    }
}

/// True when the grasp leaves enough links near the observed cloud for
/// a retrain to retain its view: strictly more than `zeta` links with
/// any surface evidence inside `delta`.
fn enough_evidence_to_learn_from(
    hand: &HandModel,
    sol: &GraspSolution,
    cloud: &PointCloud,
    params: &Params,
) -> Result<bool> {
    let fk = hand.forward_kinematics(&sol.h_w, &sol.h_c)?;
    let near = hand
        .links
        .iter()
        .enumerate()
        .filter(|(l, link)| {
            cloud
                .points
                .iter()
                .any(|p| link.geometry.surface_distance(p, &fk[*l]) < params.delta)
        })
        .count();
    Ok(near > params.zeta)
}

/// Runs up to `rounds` practice rounds over the scenes and returns the
/// final store (retrained on everything kept) plus the log.
///
/// Each round plans one grasp per scene with a store trained on the
/// base demonstrations plus every kept demonstration that did not
/// originate from that same scene, so a scene never teaches its own
/// test. A passing grasp is kept only when enough links sit near the
/// observed surface to retrain on; grasps the trainer still rejects
/// later are dropped and logged. Rounds stop early when nothing
/// succeeds. When `save_dir` is given, the demonstrations that survive
/// into the final store are also written there as demonstration
/// directories, so later runs can retrain from disk.
#[allow(clippy::too_many_arguments)]
pub fn self_train(
    hand: &HandModel,
    base: &[Demonstration],
    scenes: &[ScenePack],
    params: &Params,
    variant: Variant,
    rounds: usize,
    seed: u64,
    save_dir: Option<&Path>,
) -> Result<(ModelStore, SelfTrainReport)> {
    if scenes.is_empty() {
        return Err(Error::invalid("practice needs at least one scene"));
    }
    if rounds == 0 {
        return Err(Error::invalid("practice needs at least one round"));
    }

    let mut kept: Vec<Demonstration> = Vec::new();
    let mut report = SelfTrainReport::default();

    for round in 1..=rounds {
        let mut round_report = RoundReport {
            round,
            attempts: 0,
            successes: 0,
            added: Vec::new(),
        };
        for (s, pack) in scenes.iter().enumerate() {
            round_report.attempts += 1;
            let mut store = match train_around_bad_practice(
                hand,
                base,
                &mut kept,
                Some(pack.id.as_str()),
                params,
                &mut report.dropped,
            ) {
                Ok(store) => store,
                Err(e) => {
                    log::warn!("round {round}, scene '{}': training failed: {e}", pack.id);
                    continue;
                }
            };
            if variant.merged() {
                merge_store(&mut store, true)?;
            }
            let run_seed = derive(seed, (round * scenes.len() + s) as u64);
            let outcome = match infer(&store, &pack.cloud, variant, run_seed, params) {
                Ok(o) => o,
                Err(e) => {
                    log::warn!("round {round}, scene '{}': inference failed: {e}", pack.id);
                    continue;
                }
            };
            let Some(top) = outcome.ranked.first() else {
                continue;
            };
            let check =
                geometric_success_check(hand, &top.h_w, &top.h_c, &pack.scene, params)?;
            if check.success {
                if !enough_evidence_to_learn_from(hand, top, &pack.cloud, params)? {
                    log::info!(
                        "round {round}, scene '{}': grasp passed but leaves too few links \
                         near the view to learn from; not kept",
                        pack.id
                    );
                    continue;
                }
                let id = format!("auto_r{round}_{}", pack.id);
                let demo = demo_from_grasp(pack, top, hand, &id)?;
                kept.push(demo);
                round_report.successes += 1;
                round_report.added.push(id);
            }
        }
        let successes = round_report.successes;
        report.rounds.push(round_report);
        if successes == 0 {
            log::warn!("round {round} produced no successful grasps; stopping practice");
            break;
        }
    }

    let mut store =
        train_around_bad_practice(hand, base, &mut kept, None, params, &mut report.dropped)?;
    merge_store(&mut store, variant.merged())?;
    report.total_added = kept.len();
    if let Some(dir) = save_dir {
        for demo in &kept {
            super::demo::save_demonstration(demo, &dir.join(&demo.id))?;
        }
    }
    Ok((store, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{PlacedShape, Shape};
    use crate::synth::{pinch_demonstration, pinch_scene, PinchDemoSpec, FRONT_DIRECTION};

    fn quick_params() -> Params {
        Params {
            n_q: 150,
            h1: 400,
            sa_steps: 40,
            selection_steps: vec![1, 13],
            survivor_fraction: 0.12,
            prototype_mc_samples: 150,
            n_c: 200,
            ..Params::default()
        }
    }

    fn pinch_pack(id: &str) -> ScenePack {
        let hand = HandModel::trident();
        let (scene, _, _, _) = pinch_scene(&hand, &PinchDemoSpec::default()).unwrap();
        let camera = canonical_camera(&scene);
        let cloud = simulate_depth_view(&scene, &camera, 0.0, 5).unwrap();
        ScenePack {
            id: id.into(),
            scene,
            cloud,
            camera: camera.pose,
        }
    }

    #[test]
    fn executed_grasps_become_demonstrations_tagged_with_their_scene() {
        let hand = HandModel::trident();
        let pack = pinch_pack("scene_07");
        let sol = GraspSolution {
            h_w: Pose::from_translation(Vector3::new(0.0, 0.0, -0.055)),
            h_c: vec![0.3, 0.1, 0.3, 0.1, 0.3, 0.1],
            pair: 0,
            grasp: 0,
            view: 0,
            l_w: 1.0,
            l_c: 1.0,
            l_q: 1.0,
            score: 1.0,
        };
        let demo = demo_from_grasp(&pack, &sol, &hand, "auto_r1_scene_07").unwrap();
        assert_eq!(demo.origin.as_deref(), Some("scene_07"));
        assert_eq!(demo.h_g, sol.h_c);
        assert_eq!(demo.h_t, vec![0.15, 0.05, 0.15, 0.05, 0.15, 0.05]);
        assert_eq!(demo.views.len(), 1);
        assert_eq!(demo.wrist_trajectory.len(), 2);
        assert_eq!(*demo.wrist(), sol.h_w);
        // The approach is backed off along the wrist's own -z axis.
        assert!((demo.wrist_trajectory[0].p.z - (-0.135)).abs() < 1e-12);
    }

    #[test]
    fn scene_directories_load_sorted_with_rendered_observations() {
        let tmp = tempfile::tempdir().unwrap();
        let hand = HandModel::trident();
        let (scene, _, _, _) = pinch_scene(&hand, &PinchDemoSpec::default()).unwrap();
        scene.save(&tmp.path().join("b_scene.json")).unwrap();
        scene.save(&tmp.path().join("a_scene.json")).unwrap();
        let packs = load_scene_dir(tmp.path()).unwrap();
        assert_eq!(packs.len(), 2);
        assert_eq!(packs[0].id, "a_scene");
        assert_eq!(packs[1].id, "b_scene");
        assert!(packs[0].cloud.len() > 200);
        assert!(load_scene_dir(&tmp.path().join("missing")).is_err());
    }

    #[test]
    fn hopeless_scenes_stop_practice_after_one_round() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "base",
            31,
        )
        .unwrap();
        // A slab four times wider than the hand can open: every planned
        // pinch fails the geometric check.
        let scene = Scene::new(vec![PlacedShape::new(
            Shape::Box {
                half_extents: [0.12, 0.1, 0.04],
            },
            Pose::identity(),
        )]);
        let camera = canonical_camera(&scene);
        let cloud = simulate_depth_view(&scene, &camera, 0.0, 2).unwrap();
        let packs = vec![ScenePack {
            id: "slab".into(),
            scene,
            cloud,
            camera: camera.pose,
        }];
        let params = quick_params();
        let (store, report) =
            self_train(&hand, &[demo], &packs, &params, Variant::A3, 3, 77, None).unwrap();
        assert_eq!(report.rounds.len(), 1, "practice must stop early");
        assert_eq!(report.rounds[0].successes, 0);
        assert_eq!(report.total_added, 0);
        assert_eq!(store.grasps.len(), 1, "store holds only the base grasp");
    }

    #[test]
    fn successful_practice_grows_the_store_and_skips_self_teaching() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "base",
            32,
        )
        .unwrap();
        let packs = vec![pinch_pack("familiar")];
        let params = quick_params();
        let (store, report) =
            self_train(&hand, &[demo], &packs, &params, Variant::A3, 1, 91, None).unwrap();
        // Bookkeeping must agree with itself whether or not the planner
        // happened to find a passing grasp under this tiny budget.
        assert_eq!(report.total_added, store.grasps.len() - 1);
        let auto: Vec<_> = store.grasps.iter().filter(|g| g.origin.is_some()).collect();
        assert_eq!(auto.len(), report.total_added);
        for g in auto {
            assert_eq!(g.origin.as_deref(), Some("familiar"));
            assert!(g.id.starts_with("auto_r1_"));
        }
        let round_total: usize = report.rounds.iter().map(|r| r.successes).sum();
        assert_eq!(round_total, report.total_added + report.dropped.len());
    }
}

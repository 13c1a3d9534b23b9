//! Command-line pipeline: train on demonstration directories, merge
//! contact models, plan grasps on novel views, practice autonomously on
//! test scenes, render synthetic views, and scaffold a worked example.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use dexgrasp::geometry::Pose;
use dexgrasp::hand::HandModel;
use dexgrasp::pipeline::{
    geometric_success_check, infer, load_demonstrations, load_scene_dir, merge_store,
    read_reports, save_demonstration, self_train, train, write_reports, ExperimentReport,
    ModelStore, Variant,
};
use dexgrasp::shapes::Scene;
use dexgrasp::surface::{save_ply, simulate_depth_view, DepthCamera, load_ply, look_at};
use dexgrasp::synth::{
    pinch_demonstration, pinch_scene, PinchDemoSpec, BACK_DIRECTION, FRONT_DIRECTION,
};
use dexgrasp::Params;

#[derive(Parser)]
#[command(
    name = "dexgrasp",
    version,
    about = "Learn generative grasp models from demonstrations and transfer them to novel views"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn contact and configuration models from demonstration directories.
    Train {
        /// Directory holding one subdirectory per demonstrated grasp.
        #[arg(long)]
        demos: PathBuf,
        /// Hand description file (JSON).
        #[arg(long)]
        hand: PathBuf,
        /// Where to write the model store.
        #[arg(long)]
        out: PathBuf,
        /// Parameter overrides (JSON; missing fields keep their defaults).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Cluster the stored contact models into prototypes.
    Merge {
        /// Model store to update in place.
        #[arg(long)]
        store: PathBuf,
        /// Record singleton clusters instead of merging.
        #[arg(long)]
        no_merge: bool,
    },
    /// Plan grasps for a novel view and write a report line.
    Infer {
        #[arg(long)]
        store: PathBuf,
        /// Test view (PLY).
        #[arg(long)]
        cloud: PathBuf,
        /// Pipeline variant: A1, A2, A3, or A4.
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file (JSON lines; appended to when it exists).
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth scene; when given, the top grasp is checked
        /// geometrically and the verdict recorded.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Parameter overrides; defaults to the parameters stored at
        /// training time.
        #[arg(long)]
        params: Option<PathBuf>,
        /// How many ranked grasps to keep in the report.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Practice on test scenes: plan, check geometrically, keep
    /// successes as new demonstrations, retrain.
    Selftrain {
        /// Model store to start from; rewritten with the augmented models.
        #[arg(long)]
        store: PathBuf,
        /// Directory of scene files (*.json, optional sibling *.ply views).
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        rounds: usize,
        /// Variant used for practice planning.
        #[arg(long, default_value = "A4")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the augmented store here instead of over --store.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Demonstration directory; defaults to the one recorded in the store.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Also persist kept grasps as demonstration directories under
        /// the demos directory.
        #[arg(long)]
        bank_demos: bool,
        /// Write the practice log (rounds, successes) as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Parameter overrides; defaults to the stored parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Render a synthetic depth view of a scene to a PLY cloud.
    SimulateViews {
        /// Scene file (JSON).
        #[arg(long)]
        scene: PathBuf,
        /// Camera pose: px,py,pz,qx,qy,qz,qw, or just px,py,pz to aim
        /// at the scene centre.
        #[arg(long, allow_hyphen_values = true)]
        camera: String,
        /// Output cloud (PLY).
        #[arg(long)]
        out: PathBuf,
        /// Range-noise standard deviation, metres.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 160)]
        height: usize,
        /// Vertical field of view, degrees.
        #[arg(long, default_value_t = 40.0)]
        fov: f64,
    },
    /// Write a ready-to-run example: hand file, synthetic
    /// demonstrations, test scenes, and light parameters.
    Scaffold {
        /// Directory to create the example in.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match Cli::parse().command {
        Command::Train {
            demos,
            hand,
            out,
            params,
        } => cmd_train(&demos, &hand, &out, params.as_deref()),
        Command::Merge { store, no_merge } => cmd_merge(&store, !no_merge),
        Command::Infer {
            store,
            cloud,
            variant,
            seed,
            out,
            scene,
            params,
            top,
        } => cmd_infer(
            &store,
            &cloud,
            &variant,
            seed,
            &out,
            scene.as_deref(),
            params.as_deref(),
            top,
        ),
        Command::Selftrain {
            store,
            scenes,
            rounds,
            variant,
            seed,
            out,
            demos,
            bank_demos,
            report,
            params,
        } => cmd_selftrain(
            &store,
            &scenes,
            rounds,
            &variant,
            seed,
            out.as_deref(),
            demos.as_deref(),
            bank_demos,
            report.as_deref(),
            params.as_deref(),
        ),
        Command::SimulateViews {
            scene,
            camera,
            out,
            noise,
            seed,
            width,
            height,
            fov,
        } => cmd_simulate_views(&scene, &camera, &out, noise, seed, width, height, fov),
        Command::Scaffold { out } => cmd_scaffold(&out),
    }
}

fn load_params(path: Option<&Path>, fallback: &Params) -> Result<Params> {
    match path {
        Some(p) => {
            Params::load(p).with_context(|| format!("reading parameters from {}", p.display()))
        }
        None => Ok(fallback.clone()),
    }
}

fn cmd_train(demos: &Path, hand: &Path, out: &Path, params: Option<&Path>) -> Result<()> {
    let hand = HandModel::load(hand).with_context(|| format!("loading hand {}", hand.display()))?;
    let params = load_params(params, &Params::default())?;
    let examples = load_demonstrations(demos)
        .with_context(|| format!("loading demonstrations from {}", demos.display()))?;
    log::info!("training on {} demonstrations", examples.len());
    let mut store = train(&hand, &examples, &params)?;
    let source = demos
        .canonicalize()
        .unwrap_or_else(|_| demos.to_path_buf());
    store.demo_source = Some(source.display().to_string());
    store.save(out)?;
    log::info!(
        "wrote {} ({} per-view models, {} union models, {} grasps)",
        out.display(),
        store.view_models.len(),
        store.union_models.len(),
        store.grasps.len()
    );
    Ok(())
}

fn cmd_merge(store_path: &Path, enable: bool) -> Result<()> {
    let mut store = ModelStore::load(store_path)?;
    merge_store(&mut store, enable)?;
    store.save(store_path)?;
    let block = store.clusters.as_ref().expect("merge always writes a block");
    log::info!(
        "wrote {} ({} prototypes over {} models, ratio {:.2})",
        store_path.display(),
        block.prototypes.len(),
        store.view_models.len(),
        block.compression_ratio
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    store_path: &Path,
    cloud_path: &Path,
    variant: &str,
    seed: u64,
    out: &Path,
    scene: Option<&Path>,
    params: Option<&Path>,
    top: usize,
) -> Result<()> {
    let store = ModelStore::load(store_path)?;
    let params = load_params(params, &store.params)?;
    let variant: Variant = variant.parse()?;
    let cloud =
        load_ply(cloud_path).with_context(|| format!("loading cloud {}", cloud_path.display()))?;

    let outcome = infer(&store, &cloud, variant, seed, &params)?;
    let success = match (scene, outcome.ranked.first()) {
        (Some(scene_path), Some(best)) => {
            let scene = Scene::load(scene_path)?;
            let check =
                geometric_success_check(&store.hand, &best.h_w, &best.h_c, &scene, &params)?;
            log::info!(
                "geometric check: success={} contacts={} opposition={:.1} deg penetration={:.4} m",
                check.success,
                check.contacts.len(),
                check.opposition_deg,
                check.max_penetration
            );
            Some(check.success)
        }
        _ => None,
    };

    let scene_name = scene
        .unwrap_or(cloud_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    let report = ExperimentReport::from_outcome(scene_name, variant, seed, &outcome, success, top);

    let mut reports = if out.exists() {
        read_reports(out)?
    } else {
        Vec::new()
    };
    reports.push(report);
    write_reports(&reports, out)?;

    if let Some(best) = outcome.ranked.first() {
        log::info!(
            "top grasp: score {:.3e} (collision {:.3}, config {:.3e}, query {:.3e}) at p=[{:.3}, {:.3}, {:.3}]",
            best.score,
            best.l_w,
            best.l_c,
            best.l_q,
            best.h_w.p.x,
            best.h_w.p.y,
            best.h_w.p.z
        );
    }
    log::info!(
        "report appended to {} ({} grasps kept; {:.2}s queries, {:.2}s optimization)",
        out.display(),
        top.min(outcome.ranked.len()),
        outcome.query_seconds,
        outcome.optimize_seconds
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_selftrain(
    store_path: &Path,
    scenes: &Path,
    rounds: usize,
    variant: &str,
    seed: u64,
    out: Option<&Path>,
    demos: Option<&Path>,
    bank_demos: bool,
    report_path: Option<&Path>,
    params: Option<&Path>,
) -> Result<()> {
    let store = ModelStore::load(store_path)?;
    let params = load_params(params, &store.params)?;
    let variant: Variant = variant.parse()?;

    let demos_dir: PathBuf = match demos {
        Some(d) => d.to_path_buf(),
        None => match &store.demo_source {
            Some(s) => PathBuf::from(s),
            None => bail!(
                "the store records no demonstration directory; pass --demos so practice can retrain"
            ),
        },
    };
    let base = load_demonstrations(&demos_dir)
        .with_context(|| format!("loading demonstrations from {}", demos_dir.display()))?;
    let packs = load_scene_dir(scenes)?;
    log::info!(
        "practicing on {} scenes for up to {rounds} rounds (variant {variant})",
        packs.len()
    );

    let save_dir = bank_demos.then_some(demos_dir.as_path());
    let (mut new_store, report) = self_train(
        &store.hand,
        &base,
        &packs,
        &params,
        variant,
        rounds,
        seed,
        save_dir,
    )?;
    new_store.demo_source = Some(demos_dir.display().to_string());
    let target = out.unwrap_or(store_path);
    new_store.save(target)?;

    for round in &report.rounds {
        log::info!(
            "round {}: {}/{} scenes succeeded{}{}",
            round.round,
            round.successes,
            round.attempts,
            if round.added.is_empty() { "" } else { ": " },
            round.added.join(", ")
        );
    }
    log::info!(
        "kept {} new grasps; store now holds {} ({} written)",
        report.total_added,
        new_store.grasps.len(),
        target.display()
    );
    if let Some(path) = report_path {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        log::info!("practice log written to {}", path.display());
    }
    Ok(())
}

fn parse_camera(text: &str, scene: &Scene) -> Result<Pose> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("camera {text:?} is not a comma-separated float list"))?;
    match parts.len() {
        7 => Ok(Pose::from_arrays(
            [parts[0], parts[1], parts[2]],
            [parts[3], parts[4], parts[5], parts[6]],
        )),
        3 => {
            let eye = Vector3::new(parts[0], parts[1], parts[2]);
            let target = if scene.objects.is_empty() {
                Vector3::zeros()
            } else {
                scene.objects.iter().map(|o| o.pose.p).sum::<Vector3<f64>>()
                    / scene.objects.len() as f64
            };
            Ok(look_at(eye, target, Vector3::z()))
        }
        n => bail!("camera needs 7 numbers (px,py,pz,qx,qy,qz,qw) or 3 (eye position), got {n}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate_views(
    scene_path: &Path,
    camera: &str,
    out: &Path,
    noise: f64,
    seed: u64,
    width: usize,
    height: usize,
    fov: f64,
) -> Result<()> {
    let scene = Scene::load(scene_path)?;
    let pose = parse_camera(camera, &scene)?;
    let cam = DepthCamera::new(pose, width, height, fov);
    let cloud = simulate_depth_view(&scene, &cam, noise, seed)?;
    save_ply(&cloud, out)?;
    log::info!("wrote {} ({} points)", out.display(), cloud.len());
    Ok(())
}

fn cmd_scaffold(out: &Path) -> Result<()> {
    let demos_dir = out.join("demos");
    let scenes_dir = out.join("scenes");
    std::fs::create_dir_all(&demos_dir)?;
    std::fs::create_dir_all(&scenes_dir)?;

    let hand = HandModel::trident();
    hand.save(&out.join("hand.json"))?;

    // Budgets that finish in seconds on a laptop; the defaults are
    // sized for full experiments.
    let params = Params {
        n_q: 600,
        h1: 3000,
        sa_steps: 120,
        selection_steps: vec![1, 40],
        prototype_mc_samples: 300,
        n_c: 500,
        ..Params::default()
    };
    std::fs::write(
        out.join("params.json"),
        serde_json::to_string_pretty(&params)?,
    )?;

    for i in 0..3u64 {
        let spec = PinchDemoSpec {
            noise: 0.0005,
            ..PinchDemoSpec::default()
        };
        let id = format!("pinch_{i:02}");
        let (demo, _) = pinch_demonstration(&hand, &spec, &[FRONT_DIRECTION], &id, i)?;
        save_demonstration(&demo, &demos_dir.join(&id))?;
    }
    let spec = PinchDemoSpec {
        noise: 0.0005,
        ..PinchDemoSpec::default()
    };
    let (demo, _) = pinch_demonstration(
        &hand,
        &spec,
        &[FRONT_DIRECTION, BACK_DIRECTION],
        "pinch_03",
        3,
    )?;
    save_demonstration(&demo, &demos_dir.join("pinch_03"))?;

    for (i, knuckle) in [0.2, 0.25, 0.3].into_iter().enumerate() {
        let spec = PinchDemoSpec {
            knuckle,
            ..PinchDemoSpec::default()
        };
        let (scene, _, _, _) = pinch_scene(&hand, &spec)?;
        scene.save(&scenes_dir.join(format!("scene_{i:02}.json")))?;
    }

    log::info!("example written under {}", out.display());
    println!("Try:");
    println!(
        "  dexgrasp train --demos {}/demos --hand {}/hand.json --params {}/params.json --out {}/model.json",
        out.display(),
        out.display(),
        out.display(),
        out.display()
    );
    println!("  dexgrasp merge --store {}/model.json", out.display());
    println!(
        "  dexgrasp simulate-views --scene {}/scenes/scene_01.json --camera -0.21,-0.19,-0.15 --out {}/view.ply",
        out.display(),
        out.display()
    );
    println!(
        "  dexgrasp infer --store {}/model.json --cloud {}/view.ply --variant A4 --seed 1 --scene {}/scenes/scene_01.json --out {}/runs.jsonl",
        out.display(),
        out.display(),
        out.display(),
        out.display()
    );
    Ok(())
}

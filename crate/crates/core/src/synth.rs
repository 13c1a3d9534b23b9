//! Synthetic grasping assets built around the three-finger hand: an
//! analytic box pinch whose dimensions are derived from forward
//! kinematics so the fingertips touch exactly, octant depth cameras,
//! and rendered demonstrations for training and evaluation.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hand::HandModel;
use crate::pipeline::Demonstration;
use crate::rng::derive;
use crate::shapes::{PlacedShape, Scene, Shape};
use crate::surface::{look_at, simulate_depth_view, DepthCamera};

/// Distal capsule: axis end offset and radius in the link frame.
const DISTAL_TIP_Z: f64 = 0.030;
const DISTAL_RADIUS: f64 = 0.006;
/// Index of the first finger's distal link in the three-finger hand.
const FINGER_A_DIST: usize = 2;

/// Joint angles and box proportions of the synthetic pinch.
///
/// The box width along x is not a free parameter: it is derived from
/// forward kinematics so that at `knuckle`/`curl` the two finger tips
/// and the thumb tip touch the x faces exactly.
#[derive(Debug, Clone)]
pub struct PinchDemoSpec {
    /// Knuckle angle per finger at the grasp, radians.
    pub knuckle: f64,
    /// Curl angle per finger at the grasp, radians.
    pub curl: f64,
    /// Clearance between the palm face and the box bottom, metres.
    pub palm_gap: f64,
    /// Box half extent along z, metres.
    pub half_height: f64,
    /// Box half extent along y, metres.
    pub half_depth: f64,
    /// How far every joint backs off for the pre-grasp, radians.
    pub open_by: f64,
    /// Depth-sensor range noise, metres.
    pub noise: f64,
}

impl Default for PinchDemoSpec {
    fn default() -> Self {
        PinchDemoSpec {
            knuckle: 0.25,
            curl: 0.03,
            palm_gap: 0.005,
            half_height: 0.04,
            half_depth: 0.022,
            open_by: 0.25,
            noise: 0.0,
        }
    }
}

/// Octant camera eyes for the synthetic views. The front camera sees
/// the -x, -y, -z faces of an origin-centred box; the back camera the
/// +x, +y, -z faces. Together they cover both pinch sides.
pub const FRONT_DIRECTION: [f64; 3] = [-1.0, -0.9, -0.7];
pub const BACK_DIRECTION: [f64; 3] = [1.0, 0.9, -0.7];

const CAMERA_DISTANCE: f64 = 0.35;
const CAMERA_RES: usize = 160;
const CAMERA_FOV_DEG: f64 = 40.0;

/// A depth camera at `distance` along `direction` from the origin,
/// aimed back at the origin.
pub fn octant_camera(direction: [f64; 3], distance: f64) -> DepthCamera {
    let dir = Vector3::from(direction)
        .try_normalize(1e-12)
        .expect("camera direction must be nonzero");
    DepthCamera::new(
        look_at(dir * distance, Vector3::zeros(), Vector3::z()),
        CAMERA_RES,
        CAMERA_RES,
        CAMERA_FOV_DEG,
    )
}

/// A single canonical view of an arbitrary scene: from the front octant,
/// far enough back to frame every object.
pub fn canonical_camera(scene: &Scene) -> DepthCamera {
    let mut center = Vector3::zeros();
    let mut radius = 0.05f64;
    if !scene.objects.is_empty() {
        for o in &scene.objects {
            center += o.pose.p;
        }
        center /= scene.objects.len() as f64;
        for o in &scene.objects {
            radius = radius.max((o.pose.p - center).norm() + o.bounding_radius());
        }
    }
    let dir = Vector3::from(FRONT_DIRECTION).normalize();
    let eye = center + dir * (3.5 * radius).max(0.25);
    DepthCamera::new(
        look_at(eye, center, Vector3::z()),
        CAMERA_RES,
        CAMERA_RES,
        CAMERA_FOV_DEG,
    )
}

/// Builds the pinch scene and the exact grasp that holds it.
///
/// Returns the scene (one origin-centred box), the wrist pose, and the
/// grasp and pre-grasp configurations. Geometry is solved rather than
/// tuned: the box width makes the distal capsules tangent to the x
/// faces, and the wrist height leaves `palm_gap` between palm and box.
pub fn pinch_scene(
    hand: &HandModel,
    spec: &PinchDemoSpec,
) -> Result<(Scene, Pose, Vec<f64>, Vec<f64>)> {
    if hand.dof != 6 || hand.links.len() != 7 {
        return Err(Error::invalid(
            "the synthetic pinch assumes the three-finger hand layout",
        ));
    }
    let h_g = vec![
        spec.knuckle,
        spec.curl,
        spec.knuckle,
        spec.curl,
        spec.knuckle,
        spec.curl,
    ];
    let h_t = hand.clamp(&h_g.iter().map(|a| a - spec.open_by).collect::<Vec<_>>())?;

    let rest = hand.rest_poses(&h_g)?;
    let tip_a = rest[FINGER_A_DIST].transform_point(&Vector3::new(0.0, 0.0, DISTAL_TIP_Z));
    let hx = -tip_a.x - DISTAL_RADIUS;
    if !(hx > 0.003) {
        return Err(Error::invalid(format!(
            "pinch angles leave no box width: derived half extent {hx:.4} m",
        )));
    }

    let wrist = Pose::from_translation(Vector3::new(
        0.0,
        0.0,
        -spec.half_height - spec.palm_gap - 0.01,
    ));
    let tip_world_z = wrist.p.z + tip_a.z;
    if tip_world_z.abs() >= spec.half_height - DISTAL_RADIUS {
        return Err(Error::invalid(
            "fingertips land outside the box face; raise half_height or close the gap",
        ));
    }

    let scene = Scene::new(vec![PlacedShape::new(
        Shape::Box {
            half_extents: [hx, spec.half_depth, spec.half_height],
        },
        Pose::identity(),
    )]);
    Ok((scene, wrist, h_g, h_t))
}

/// Renders a pinch demonstration: one depth view per camera direction
/// plus the recorded approach. `seed` fixes the sensor noise.
pub fn pinch_demonstration(
    hand: &HandModel,
    spec: &PinchDemoSpec,
    directions: &[[f64; 3]],
    id: &str,
    seed: u64,
) -> Result<(Demonstration, Scene)> {
    if directions.is_empty() {
        return Err(Error::invalid("a demonstration needs at least one view"));
    }
    let (scene, wrist, h_g, h_t) = pinch_scene(hand, spec)?;
    let mut views = Vec::with_capacity(directions.len());
    let mut cameras = Vec::with_capacity(directions.len());
    for (v, dir) in directions.iter().enumerate() {
        let camera = octant_camera(*dir, CAMERA_DISTANCE);
        let cloud = simulate_depth_view(&scene, &camera, spec.noise, derive(seed, v as u64))?;
        views.push(cloud);
        cameras.push(camera.pose);
    }
    let approach = Pose::from_translation(wrist.p - Vector3::new(0.0, 0.0, 0.08));
    let demo = Demonstration {
        id: id.to_string(),
        h_g,
        h_t,
        wrist_trajectory: vec![approach, wrist],
        views,
        cameras,
        origin: None,
    };
    demo.validate()?;
    Ok((demo, scene))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{load_demonstration, save_demonstration};

    #[test]
    fn derived_box_touches_all_three_tips_exactly() {
        let hand = HandModel::trident();
        let spec = PinchDemoSpec::default();
        let (scene, wrist, h_g, h_t) = pinch_scene(&hand, &spec).unwrap();
        assert_eq!(h_t, vec![0.0, -0.22, 0.0, -0.22, 0.0, -0.22]);

        let body = &scene.objects[0];
        let fk = hand.forward_kinematics(&wrist, &h_g).unwrap();
        // Distal axis ends of both fingers and the thumb sit exactly one
        // capsule radius away from the box surface.
        for link in [2usize, 4, 6] {
            let tip = fk[link].transform_point(&Vector3::new(0.0, 0.0, DISTAL_TIP_Z));
            let gap = body.surface_distance(&tip) - DISTAL_RADIUS;
            assert!(gap.abs() < 1e-9, "link {link} gap {gap}");
        }
        // Fingers on the -x face, thumb on the +x face: an antipodal pinch.
        let tip_a = fk[2].transform_point(&Vector3::new(0.0, 0.0, DISTAL_TIP_Z));
        let tip_t = fk[6].transform_point(&Vector3::new(0.0, 0.0, DISTAL_TIP_Z));
        assert!(tip_a.x < 0.0 && tip_t.x > 0.0);
        assert!((tip_a.x + tip_t.x).abs() < 1e-9, "pinch is x-symmetric");
        // The tips press mid-face, away from every edge.
        assert!(tip_a.z.abs() < spec.half_height - 0.01);
        assert!(tip_a.y.abs() < spec.half_depth - 0.003);
    }

    #[test]
    fn palm_clearance_matches_the_spec_gap() {
        let hand = HandModel::trident();
        let spec = PinchDemoSpec::default();
        let (scene, wrist, _, _) = pinch_scene(&hand, &spec).unwrap();
        // Palm face is 0.01 above the wrist origin.
        let palm_top = wrist.p.z + 0.01;
        let box_bottom = -spec.half_height;
        assert!((box_bottom - palm_top - spec.palm_gap).abs() < 1e-12);
        // The palm must not intersect the box.
        assert!(scene.sdf(&Vector3::new(0.0, 0.0, palm_top)) > 0.0);
    }

    #[test]
    fn front_view_covers_exactly_the_three_near_faces() {
        let hand = HandModel::trident();
        let (scene, _, _, _) = pinch_scene(&hand, &PinchDemoSpec::default()).unwrap();
        let camera = octant_camera(FRONT_DIRECTION, CAMERA_DISTANCE);
        let cloud = simulate_depth_view(&scene, &camera, 0.0, 1).unwrap();
        assert!(cloud.len() > 500, "got {} points", cloud.len());
        let he = match scene.objects[0].shape {
            Shape::Box { half_extents } => half_extents,
            _ => unreachable!(),
        };
        let (mut on_xn, mut on_yn, mut on_zn) = (0usize, 0usize, 0usize);
        for p in &cloud.points {
            let faces = [
                (p.x + he[0]).abs() < 1e-6,
                (p.y + he[1]).abs() < 1e-6,
                (p.z + he[2]).abs() < 1e-6,
            ];
            assert!(faces.iter().any(|f| *f), "point {p:?} off the near faces");
            on_xn += faces[0] as usize;
            on_yn += faces[1] as usize;
            on_zn += faces[2] as usize;
        }
        assert!(on_xn > 100 && on_yn > 100 && on_zn > 100);
    }

    #[test]
    fn rendered_demonstrations_survive_the_directory_format() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION, BACK_DIRECTION],
            "pinch_00",
            11,
        )
        .unwrap();
        assert_eq!(demo.views.len(), 2);
        assert_eq!(demo.wrist_trajectory.len(), 2);

        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("pinch_00");
        save_demonstration(&demo, &dir).unwrap();
        let loaded = load_demonstration(&dir).unwrap();
        assert_eq!(loaded.views[1].points, demo.views[1].points);
        assert_eq!(loaded.views[1].sensor_viewpoint, demo.cameras[1].p);
    }

    #[test]
    fn canonical_views_frame_offset_scenes() {
        let scene = Scene::new(vec![PlacedShape::new(
            Shape::Box {
                half_extents: [0.01, 0.02, 0.03],
            },
            Pose::from_translation(Vector3::new(0.3, -0.2, 0.1)),
        )]);
        let camera = canonical_camera(&scene);
        let cloud = simulate_depth_view(&scene, &camera, 0.0, 1).unwrap();
        assert!(cloud.len() > 200);
    }
}

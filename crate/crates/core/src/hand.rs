//! Hand kinematics and the per-grasp joint-configuration density.
//!
//! A hand is a kinematic tree of rigid links: a palm at the root and a
//! revolute joint above every other link. Joint angles are listed in the
//! declaration order of the jointed links, so a configuration is a plain
//! `Vec<f64>` of length [`HandModel::dof`]. Link collision geometry lives
//! in [`LinkGeometry`] parts expressed in the link frame, which is the
//! frame *after* the joint rotation.

use std::path::Path;
use std::sync::Once;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contact::LinkGeometry;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::shapes::{PlacedShape, Shape};

/// Revolute joint: rotation about `axis` in the parent-mounted frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joint {
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Lower angle limit, radians.
    pub lower: f64,
    /// Upper angle limit, radians.
    pub upper: f64,
}

/// One rigid link of the hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandLink {
    /// Index of the parent link; `None` only for the root (palm).
    pub parent: Option<usize>,
    /// Fixed transform from the parent link frame to this link's joint
    /// frame (identity rotation for a pure offset).
    pub mount: Pose,
    /// Revolute joint between `mount` and the link frame; rigid if absent.
    pub joint: Option<Joint>,
    /// Collision shapes in the link frame.
    pub geometry: LinkGeometry,
}

/// Kinematic tree with one root and a configuration slot per joint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandModel {
    pub name: String,
    pub links: Vec<HandLink>,
    /// Number of joints; configuration vectors have this length.
    pub dof: usize,
}

static CLAMP_NOTICE: Once = Once::new();

impl HandModel {
    pub fn new(name: impl Into<String>, links: Vec<HandLink>) -> Result<HandModel> {
        let dof = links.iter().filter(|l| l.joint.is_some()).count();
        let hand = HandModel {
            name: name.into(),
            links,
            dof,
        };
        hand.validate()?;
        Ok(hand)
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::invalid("hand has no links"));
        }
        for (i, link) in self.links.iter().enumerate() {
            match link.parent {
                None if i != 0 => {
                    return Err(Error::invalid("hand has more than one root link"));
                }
                Some(p) if p >= i => {
                    return Err(Error::invalid(
                        "hand links must be declared parent-first",
                    ));
                }
                _ => {}
            }
            if i == 0 && link.joint.is_some() {
                return Err(Error::invalid("root link cannot carry a joint"));
            }
            if let Some(j) = &link.joint {
                if (j.axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("joint axis must be a unit vector"));
                }
                if !(j.lower.is_finite() && j.upper.is_finite() && j.lower <= j.upper) {
                    return Err(Error::invalid("joint limits must be finite and ordered"));
                }
            }
        }
        let dof = self.links.iter().filter(|l| l.joint.is_some()).count();
        if dof != self.dof {
            return Err(Error::invalid("declared dof does not match joint count"));
        }
        Ok(())
    }

    /// Joint angles clamped into their limits. Out-of-range input is
    /// normal during optimisation, so the notice is logged only once.
    pub fn clamp(&self, h_c: &[f64]) -> Result<Vec<f64>> {
        if h_c.len() != self.dof {
            return Err(Error::DimensionMismatch {
                expected: self.dof,
                got: h_c.len(),
            });
        }
        let mut out = h_c.to_vec();
        let mut slot = 0;
        let mut clamped = false;
        for link in &self.links {
            if let Some(j) = &link.joint {
                let v = out[slot].clamp(j.lower, j.upper);
                clamped |= v != out[slot];
                out[slot] = v;
                slot += 1;
            }
        }
        if clamped {
            CLAMP_NOTICE.call_once(|| {
                log::warn!("configuration outside joint limits; clamping (reported once)");
            });
        }
        Ok(out)
    }

    /// World pose of every link for wrist pose `h_w` and configuration
    /// `h_c` (soft-clamped into joint limits).
    pub fn forward_kinematics(&self, h_w: &Pose, h_c: &[f64]) -> Result<Vec<Pose>> {
        let angles = self.clamp(h_c)?;
        let mut poses = Vec::with_capacity(self.links.len());
        let mut slot = 0;
        for link in &self.links {
            let base = match link.parent {
                Some(p) => poses[p],
                None => *h_w,
            };
            let mounted = base.compose(&link.mount);
            let pose = match &link.joint {
                Some(j) => {
                    let rot = UnitQuaternion::from_axis_angle(
                        &nalgebra::Unit::new_unchecked(j.axis),
                        angles[slot],
                    );
                    slot += 1;
                    mounted.compose(&Pose::new(Vector3::zeros(), rot))
                }
                None => mounted,
            };
            poses.push(pose);
        }
        Ok(poses)
    }

    /// Link poses relative to the wrist: forward kinematics at identity.
    pub fn rest_poses(&self, h_c: &[f64]) -> Result<Vec<Pose>> {
        self.forward_kinematics(&Pose::identity(), h_c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = HandFile::from_model(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HandModel> {
        let text = std::fs::read_to_string(path)?;
        let file: HandFile = serde_json::from_str(&text)?;
        file.into_model()
    }

    /// Built-in three-finger hand: a palm plate with two fingers on one
    /// edge and an opposing thumb, two phalanges each (7 links, 6 joints).
    /// Fingers extend in +z from the palm face and close towards the
    /// x = 0 plane, so closing all joints pinches along the x axis.
    pub fn trident() -> HandModel {
        let palm = PlacedShape::new(
            Shape::Box {
                half_extents: [0.045, 0.03, 0.01],
            },
            Pose::identity(),
        );
        let prox_shape = |r| {
            PlacedShape::new(
                Shape::Capsule {
                    radius: r,
                    half_length: 0.0175,
                },
                Pose::from_translation(Vector3::new(0.0, 0.0, 0.0175)),
            )
        };
        let dist_shape = |r| {
            PlacedShape::new(
                Shape::Capsule {
                    radius: r,
                    half_length: 0.015,
                },
                Pose::from_translation(Vector3::new(0.0, 0.0, 0.015)),
            )
        };
        let joint = |axis: Vector3<f64>| {
            Some(Joint {
                axis,
                lower: -0.35,
                upper: 1.7,
            })
        };
        let mut links = vec![HandLink {
            parent: None,
            mount: Pose::identity(),
            joint: None,
            geometry: LinkGeometry::new("palm", vec![palm]),
        }];
        let fingers = [
            ("finger_a", Vector3::new(-0.035, -0.018, 0.01), Vector3::y()),
            ("finger_b", Vector3::new(-0.035, 0.018, 0.01), Vector3::y()),
            ("thumb", Vector3::new(0.035, 0.0, 0.01), -Vector3::y()),
        ];
        for (name, base, axis) in fingers {
            let prox = links.len();
            links.push(HandLink {
                parent: Some(0),
                mount: Pose::from_translation(base),
                joint: joint(axis),
                geometry: LinkGeometry::new(format!("{name}_prox"), vec![prox_shape(0.007)]),
            });
            links.push(HandLink {
                parent: Some(prox),
                mount: Pose::from_translation(Vector3::new(0.0, 0.0, 0.035)),
                joint: joint(axis),
                geometry: LinkGeometry::new(format!("{name}_dist"), vec![dist_shape(0.006)]),
            });
        }
        HandModel::new("trident", links).expect("built-in hand is valid")
    }
}

const HAND_SCHEMA: u32 = 1;

/// On-disk hand description. Links reference parents by id and must be
/// declared parent-first; joint slots follow link declaration order.
#[derive(Debug, Serialize, Deserialize)]
struct HandFile {
    schema: u32,
    name: String,
    links: Vec<LinkFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkFile {
    id: String,
    parent: Option<String>,
    mount: Pose,
    joint: Option<JointFile>,
    shapes: Vec<PlacedShape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    axis: [f64; 3],
    lower: f64,
    upper: f64,
}

impl HandFile {
    fn from_model(hand: &HandModel) -> HandFile {
        HandFile {
            schema: HAND_SCHEMA,
            name: hand.name.clone(),
            links: hand
                .links
                .iter()
                .map(|l| LinkFile {
                    id: l.geometry.link_id.clone(),
                    parent: l.parent.map(|p| hand.links[p].geometry.link_id.clone()),
                    mount: l.mount,
                    joint: l.joint.as_ref().map(|j| JointFile {
                        axis: [j.axis.x, j.axis.y, j.axis.z],
                        lower: j.lower,
                        upper: j.upper,
                    }),
                    shapes: l.geometry.parts.clone(),
                })
                .collect(),
        }
    }

    fn into_model(self) -> Result<HandModel> {
        if self.schema != HAND_SCHEMA {
            return Err(Error::StoreVersion {
                got: self.schema,
                expected: HAND_SCHEMA,
            });
        }
        let mut links = Vec::with_capacity(self.links.len());
        let mut ids: Vec<String> = Vec::with_capacity(self.links.len());
        for spec in self.links {
            let parent = match &spec.parent {
                None => None,
                Some(pid) => Some(
                    ids.iter().position(|id| id == pid).ok_or_else(|| {
                        Error::Parse(format!(
                            "link {:?} references unknown parent {pid:?}",
                            spec.id
                        ))
                    })?,
                ),
            };
            let joint = match spec.joint {
                None => None,
                Some(j) => {
                    let axis = Vector3::new(j.axis[0], j.axis[1], j.axis[2]);
                    let norm = axis.norm();
                    if norm < 1e-9 {
                        return Err(Error::Parse(format!(
                            "link {:?} has a zero joint axis",
                            spec.id
                        )));
                    }
                    Some(Joint {
                        axis: axis / norm,
                        lower: j.lower,
                        upper: j.upper,
                    })
                }
            };
            ids.push(spec.id.clone());
            links.push(HandLink {
                parent,
                mount: spec.mount,
                joint,
                geometry: LinkGeometry::new(spec.id, spec.shapes),
            });
        }
        HandModel::new(self.name, links)
    }
}

/// One Gaussian component of a joint-configuration density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigKernel {
    pub center: Vec<f64>,
    pub weight: f64,
}

/// Per-grasp density over joint configurations: an isotropic Gaussian
/// mixture along the line through the pre-contact and contact
/// configurations of the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandConfigModel {
    pub grasp_id: String,
    pub kernels: Vec<ConfigKernel>,
    /// Shared per-joint standard deviation, radians.
    pub bandwidth: f64,
}

/// Builds the configuration density for one demonstrated grasp.
///
/// Kernel centres interpolate between the contact configuration `h_g`
/// (blend 0) and the pre-contact configuration `h_t` (blend 1) and
/// extrapolate past `h_g` for negative blends, over a regular grid of
/// `count` blend values spanning `[-beta, beta]`. Weights fall off as
/// `exp(-alpha * |center - h_g|^2)` and are normalized.
pub fn build_config_model(
    grasp_id: impl Into<String>,
    h_g: &[f64],
    h_t: &[f64],
    alpha: f64,
    beta: f64,
    count: usize,
    sigma_hc: f64,
) -> Result<HandConfigModel> {
    if h_g.is_empty() {
        return Err(Error::invalid("configuration dimension must be positive"));
    }
    if h_g.len() != h_t.len() {
        return Err(Error::DimensionMismatch {
            expected: h_g.len(),
            got: h_t.len(),
        });
    }
    if !(beta > 0.0) || !(alpha > 0.0) || !(sigma_hc > 0.0) || count < 2 {
        return Err(Error::invalid(
            "config model needs alpha, beta, sigma > 0 and at least two kernels",
        ));
    }
    let mut kernels = Vec::with_capacity(count);
    let mut total = 0.0;
    for j in 0..count {
        let gamma = -beta + 2.0 * beta * j as f64 / (count - 1) as f64;
        let center: Vec<f64> = h_g
            .iter()
            .zip(h_t)
            .map(|(&g, &t)| (1.0 - gamma) * g + gamma * t)
            .collect();
        let dist2: f64 = center
            .iter()
            .zip(h_g)
            .map(|(&c, &g)| (c - g) * (c - g))
            .sum();
        let weight = (-alpha * dist2).exp();
        total += weight;
        kernels.push(ConfigKernel { center, weight });
    }
    // The grid contains a blend near 0 whose weight is close to 1, so the
    // total cannot underflow.
    for k in &mut kernels {
        k.weight /= total;
    }
    Ok(HandConfigModel {
        grasp_id: grasp_id.into(),
        kernels,
        bandwidth: sigma_hc,
    })
}

impl HandConfigModel {
    pub fn dim(&self) -> usize {
        self.kernels.first().map_or(0, |k| k.center.len())
    }

    /// Mixture density at configuration `h`.
    pub fn eval(&self, h: &[f64]) -> Result<f64> {
        if self.kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let d = self.dim();
        if h.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: h.len(),
            });
        }
        let sigma2 = self.bandwidth * self.bandwidth;
        let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();
        Ok(self
            .kernels
            .iter()
            .map(|k| {
                let dist2: f64 = k
                    .center
                    .iter()
                    .zip(h)
                    .map(|(&c, &x)| (c - x) * (c - x))
                    .sum();
                k.weight * (log_norm - 0.5 * dist2 / sigma2).exp()
            })
            .sum())
    }

    /// Weight-proportional kernel choice, then per-joint Gaussian noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut idx = self.kernels.len() - 1;
        for (i, k) in self.kernels.iter().enumerate() {
            acc += k.weight;
            if u < acc {
                idx = i;
                break;
            }
        }
        Ok(self.kernels[idx]
            .center
            .iter()
            .map(|&c| c + self.bandwidth * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

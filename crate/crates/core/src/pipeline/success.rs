//! Geometric grasp verdicts against an analytic scene: contacts,
//! opposition of the contact normals, and worst-case penetration.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hand::HandModel;
use crate::params::Params;
use crate::planner::CollisionField;
use crate::shapes::Scene;

/// One link touching the scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contact {
    pub link: usize,
    /// Distance from the link surface to the nearest scene sample, metres.
    pub distance: f64,
    /// The touched surface point.
    pub point: Vector3<f64>,
    /// Outward scene normal at that point.
    pub normal: Vector3<f64>,
}

/// Verdict of the geometric check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuccessCheck {
    pub success: bool,
    pub contacts: Vec<Contact>,
    /// Largest angle between any two contact normals, degrees.
    pub opposition_deg: f64,
    /// Deepest scene point inside any link, metres.
    pub max_penetration: f64,
}

/// Checks a grasp pose against the true scene geometry.
///
/// A grasp counts as a success when at least two links touch the
/// surface within `contact_tol`, some pair of contact normals spans at
/// least `opposition_angle_deg` (so the contacts can oppose), and no
/// scene point penetrates a link deeper than `max_penetration`.
pub fn geometric_success_check(
    hand: &HandModel,
    h_w: &Pose,
    h_c: &[f64],
    scene: &Scene,
    params: &Params,
) -> Result<SuccessCheck> {
    if scene.objects.is_empty() {
        return Err(Error::invalid("cannot check a grasp against an empty scene"));
    }
    // Sampling finer than the tolerance keeps face coverage from
    // deciding verdicts.
    let spacing = (params.contact_tol * 0.66).min(0.002);
    let samples: Vec<Vector3<f64>> = scene
        .objects
        .iter()
        .flat_map(|o| o.surface_samples(spacing))
        .collect();
    if samples.is_empty() {
        return Err(Error::invalid("scene produced no surface samples"));
    }

    let fk = hand.forward_kinematics(h_w, h_c)?;
    let field = CollisionField::new(samples.clone())?;
    let max_penetration = field.penetration(hand, &fk);

    let mut contacts = Vec::new();
    for (l, link) in hand.links.iter().enumerate() {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for p in &samples {
            let d = link.geometry.sdf(p, &fk[l]).abs();
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, *p));
            }
        }
        if let Some((distance, point)) = best {
            if distance <= params.contact_tol {
                contacts.push(Contact {
                    link: l,
                    distance,
                    point,
                    normal: scene.normal(&point),
                });
            }
        }
    }

    let mut opposition: f64 = 0.0;
    for i in 0..contacts.len() {
        for j in (i + 1)..contacts.len() {
            let dot = contacts[i].normal.dot(&contacts[j].normal).clamp(-1.0, 1.0);
            opposition = opposition.max(dot.acos().to_degrees());
        }
    }

    let success = contacts.len() >= 2
        && opposition >= params.opposition_angle_deg
        && max_penetration <= params.max_penetration;
    Ok(SuccessCheck {
        success,
        contacts,
        opposition_deg: opposition,
        max_penetration,
    })
}

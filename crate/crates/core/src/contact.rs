//! Contact models: which surface patches a hand link rests on, learned
//! per (link, view, grasp) from a demonstrated hand pose over a view's
//! surface features.
//!
//! A receptive field turns feature-to-link distance into a weight; the
//! weighted features, expressed relative to the link frame, form a kernel
//! density. Model norms measure how much surface evidence a link has, and
//! thresholding them selects which links and views are worth keeping.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::density::{Bandwidth, Feature, KernelSet};
use crate::error::{Error, Result};
use crate::geometry::{relative_link_pose, Pose};
use crate::shapes::PlacedShape;
use crate::surface::ObjectViewModel;

/// Rigid link approximated by a union of convex primitives, each placed
/// in the link's local frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub link_id: String,
    pub parts: Vec<PlacedShape>,
}

impl LinkGeometry {
    pub fn new(link_id: impl Into<String>, parts: Vec<PlacedShape>) -> Self {
        LinkGeometry {
            link_id: link_id.into(),
            parts,
        }
    }

    /// Signed distance from a world point to the link placed at `pose`
    /// (union over parts; negative inside).
    pub fn sdf(&self, world: &Vector3<f64>, pose: &Pose) -> f64 {
        let local = pose.inverse().transform_point(world);
        self.parts
            .iter()
            .map(|part| part.sdf(&local))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from a world point to the link surface.
    pub fn surface_distance(&self, world: &Vector3<f64>, pose: &Pose) -> f64 {
        self.sdf(world, pose).abs()
    }

    /// Closest point on the link surface, in world coordinates.
    pub fn closest_point(&self, world: &Vector3<f64>, pose: &Pose) -> Vector3<f64> {
        let local = pose.inverse().transform_point(world);
        let best = self
            .parts
            .iter()
            .min_by(|a, b| a.sdf(&local).abs().total_cmp(&b.sdf(&local).abs()))
            .expect("a link must have at least one part");
        pose.transform_point(&best.closest_surface_point(&local))
    }

    /// Conservative radius of a ball around the link origin covering all
    /// parts.
    pub fn bounding_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.pose.p.norm() + p.bounding_radius())
            .fold(0.0, f64::max)
    }
}

/// Weight of a surface feature for a link: falls off with the squared
/// distance to the link surface and is cut off past `delta`.
pub fn receptive_field(
    v: &Pose,
    link: &LinkGeometry,
    link_pose: &Pose,
    lambda: f64,
    delta: f64,
) -> f64 {
    let d = link.surface_distance(&v.p, link_pose);
    if d < delta {
        (-lambda * d * d).exp()
    } else {
        0.0
    }
}

/// Surface evidence for one link in one view of one demonstration:
/// a normalized kernel density over (feature pose relative to the link,
/// curvature descriptor), plus the unnormalized evidence mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactModel {
    pub kernels: KernelSet,
    pub norm: f64,
    pub link: usize,
    pub view: usize,
    pub grasp: usize,
}

impl ContactModel {
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Builds the contact model of `link` held at `link_pose` over a view's
/// features. Features beyond the receptive-field cutoff contribute
/// nothing; if none are in range the model is empty with norm 0.
#[allow(clippy::too_many_arguments)]
pub fn build_contact_model(
    view: &ObjectViewModel,
    link: &LinkGeometry,
    link_pose: &Pose,
    bandwidth: Bandwidth,
    lambda: f64,
    delta: f64,
    ids: (usize, usize, usize),
) -> Result<ContactModel> {
    if view.is_empty() {
        return Err(Error::invalid("cannot build a contact model from an empty view"));
    }
    if !(lambda > 0.0 && delta > 0.0) {
        return Err(Error::invalid("lambda and delta must be positive"));
    }
    let (link_idx, view_idx, grasp_idx) = ids;

    let mut set = KernelSet::new(bandwidth);
    let mut norm = 0.0;
    for k in &view.features.kernels {
        let f = receptive_field(&k.center.pose, link, link_pose, lambda, delta);
        if f > 0.0 {
            let u = relative_link_pose(&k.center.pose, link_pose);
            set.push(Feature::new(u, k.center.descriptor.clone()), f)?;
            norm += f;
        }
    }
    if set.is_empty() {
        log::debug!(
            "link {} sees no surface within {delta} m in view {view_idx} of grasp {grasp_idx}",
            link.link_id
        );
    } else {
        set.normalize()?;
    }
    Ok(ContactModel {
        kernels: set,
        norm,
        link: link_idx,
        view: view_idx,
        grasp: grasp_idx,
    })
}

/// Evidence mass of one contact model, keyed by its (link, view, grasp)
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub link: usize,
    pub view: usize,
    pub grasp: usize,
    pub norm: f64,
}

impl NormEntry {
    pub fn of(model: &ContactModel) -> Self {
        NormEntry {
            link: model.link,
            view: model.view,
            grasp: model.grasp,
            norm: model.norm,
        }
    }
}

/// Which contact models and views survive selection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// (link, view, grasp) triples whose evidence beats the threshold.
    pub b: BTreeSet<(usize, usize, usize)>,
    /// (view, grasp) pairs with strictly more than `zeta` surviving links.
    pub c: BTreeSet<(usize, usize)>,
    /// Triples retained overall: b holds and the view survived.
    pub retained: Vec<(usize, usize, usize)>,
}

impl SelectionResult {
    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }
}

/// Thresholds contact models on their share of the total evidence mass,
/// then keeps only views where strictly more than `zeta` links survive.
///
/// A model survives when its norm, scaled by the number of models its
/// grasp contributes (links x views-of-that-grasp x grasps), exceeds
/// `eta` times the total norm mass. The scaling makes the test read as
/// "above `eta` times the average" and is unchanged by rescaling all
/// norms together. All entries, including empty models, count toward the
/// total.
pub fn select_contacts(entries: &[NormEntry], eta: f64, zeta: usize) -> SelectionResult {
    let total: f64 = entries.iter().map(|e| e.norm).sum();
    if !(total > 0.0) {
        log::warn!("contact selection saw no evidence at all; nothing retained");
        return SelectionResult::default();
    }

    let links: BTreeSet<usize> = entries.iter().map(|e| e.link).collect();
    let grasps: BTreeSet<usize> = entries.iter().map(|e| e.grasp).collect();
    let n_l = links.len() as f64;
    let n_g = grasps.len() as f64;
    let views_of = |g: usize| -> f64 {
        entries
            .iter()
            .filter(|e| e.grasp == g)
            .map(|e| e.view)
            .collect::<BTreeSet<usize>>()
            .len() as f64
    };

    let mut result = SelectionResult::default();
    for e in entries {
        if n_l * views_of(e.grasp) * n_g * e.norm / total > eta {
            result.b.insert((e.link, e.view, e.grasp));
        }
    }
    let view_pairs: BTreeSet<(usize, usize)> = entries.iter().map(|e| (e.view, e.grasp)).collect();
    for &(m, g) in &view_pairs {
        let surviving = result.b.iter().filter(|&&(_, bm, bg)| bm == m && bg == g).count();
        if surviving > zeta {
            result.c.insert((m, g));
        }
    }
    result.retained = result
        .b
        .iter()
        .filter(|&&(_, m, g)| result.c.contains(&(m, g)))
        .copied()
        .collect();
    result
}

//! Learning from demonstrations: surface features per view, contact
//! models per link, evidence-based selection, and per-grasp
//! configuration densities, assembled into a model store.

use crate::contact::{build_contact_model, select_contacts, ContactModel, NormEntry};
use crate::error::{Error, Result};
use crate::hand::{build_config_model, HandModel};
use crate::params::Params;
use crate::surface::{principal_curvature_features, PointCloud};

use super::demo::Demonstration;
use super::ensure_normals;
use super::store::{GraspRecord, ModelStore, STORE_SCHEMA};

/// Learns both contact-model families and the configuration models
/// from a demonstration set.
///
/// The per-view family keeps one model per (link, view, grasp) triple;
/// the union family pools each grasp's views into a single pseudo-view
/// first. Both run through the same evidence selection: a model
/// survives when its evidence share beats `eta` times the average, and
/// a view survives when strictly more than `zeta` of its links do.
pub fn train(hand: &HandModel, demos: &[Demonstration], params: &Params) -> Result<ModelStore> {
    hand.validate()?;
    params.validate()?;
    if demos.is_empty() {
        return Err(Error::invalid("no demonstrations to learn from"));
    }

    let bandwidth = params.feature_bandwidth();
    let mut view_family: Vec<ContactModel> = Vec::new();
    let mut union_family: Vec<ContactModel> = Vec::new();
    let mut configs = Vec::new();
    let mut grasps = Vec::new();

    for (g, demo) in demos.iter().enumerate() {
        demo.validate()?;
        if demo.h_g.len() != hand.dof {
            return Err(Error::DimensionMismatch {
                expected: hand.dof,
                got: demo.h_g.len(),
            });
        }
        let link_poses = hand.forward_kinematics(demo.wrist(), &demo.h_g)?;

        let mut prepared: Vec<PointCloud> = Vec::with_capacity(demo.views.len());
        for view in &demo.views {
            prepared.push(ensure_normals(view, params.k_nn)?);
        }

        for (m, cloud) in prepared.iter().enumerate() {
            let features = principal_curvature_features(
                cloud,
                params.k_nn,
                bandwidth.clone(),
                format!("{}/{m}", demo.id),
                demo.id.clone(),
            )?;
            for (l, link) in hand.links.iter().enumerate() {
                view_family.push(build_contact_model(
                    &features,
                    &link.geometry,
                    &link_poses[l],
                    bandwidth.clone(),
                    params.lambda,
                    params.delta,
                    (l, m, g),
                )?);
            }
        }

        // Union pseudo-view: all of this grasp's clouds pooled, so the
        // model sees the object as if every side had been captured at
        // once. Normals are already present, so the merged viewpoint is
        // irrelevant.
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for cloud in &prepared {
            points.extend_from_slice(&cloud.points);
            normals.extend_from_slice(
                cloud
                    .normals
                    .as_deref()
                    .expect("prepared clouds carry normals"),
            );
        }
        let union = PointCloud {
            points,
            normals: Some(normals),
            sensor_viewpoint: prepared[0].sensor_viewpoint,
        };
        let features = principal_curvature_features(
            &union,
            params.k_nn,
            bandwidth.clone(),
            format!("{}/union", demo.id),
            demo.id.clone(),
        )?;
        for (l, link) in hand.links.iter().enumerate() {
            union_family.push(build_contact_model(
                &features,
                &link.geometry,
                &link_poses[l],
                bandwidth.clone(),
                params.lambda,
                params.delta,
                (l, 0, g),
            )?);
        }

        configs.push(build_config_model(
            demo.id.clone(),
            &demo.h_g,
            &demo.h_t,
            params.alpha,
            params.beta,
            params.n_c,
            params.sigma_hc,
        )?);
        grasps.push(GraspRecord {
            id: demo.id.clone(),
            h_g: demo.h_g.clone(),
            h_t: demo.h_t.clone(),
            wrist: *demo.wrist(),
            cameras: demo.cameras.clone(),
            n_views: demo.views.len(),
            origin: demo.origin.clone(),
        });
    }

    let view_entries: Vec<NormEntry> = view_family.iter().map(NormEntry::of).collect();
    let union_entries: Vec<NormEntry> = union_family.iter().map(NormEntry::of).collect();
    let view_sel = select_contacts(&view_entries, params.eta, params.zeta);
    let union_sel = select_contacts(&union_entries, params.eta, params.zeta);

    if view_sel.is_empty() && union_sel.is_empty() {
        return Err(Error::NothingLearned);
    }
    for (g, demo) in demos.iter().enumerate() {
        if !view_sel.retained.iter().any(|&(_, _, gg)| gg == g) {
            return Err(Error::invalid(format!(
                "demonstration '{}' retained no views: too little surface evidence near the hand",
                demo.id
            )));
        }
    }

    let view_models: Vec<ContactModel> = view_family
        .into_iter()
        .filter(|m| view_sel.b.contains(&(m.link, m.view, m.grasp)) && view_sel.c.contains(&(m.view, m.grasp)))
        .collect();
    let union_models: Vec<ContactModel> = union_family
        .into_iter()
        .filter(|m| union_sel.b.contains(&(m.link, m.view, m.grasp)) && union_sel.c.contains(&(m.view, m.grasp)))
        .collect();
    log::info!(
        "learned {} per-view and {} union contact models from {} demonstrations",
        view_models.len(),
        union_models.len(),
        demos.len()
    );

    Ok(ModelStore {
        schema: STORE_SCHEMA,
        hand: hand.clone(),
        params: params.clone(),
        grasps,
        view_models,
        union_models,
        configs,
        clusters: None,
        demo_source: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{pinch_demonstration, PinchDemoSpec, BACK_DIRECTION, FRONT_DIRECTION};
    use nalgebra::Vector3;

    #[test]
    fn one_front_view_keeps_the_five_near_side_links() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "pinch",
            3,
        )
        .unwrap();
        let params = Params::default();
        let store = train(&hand, &[demo], &params).unwrap();

        let links: Vec<usize> = store.view_models.iter().map(|m| m.link).collect();
        // Palm, both phalanges of both fingers; the thumb faces the
        // hidden side and must carry no evidence.
        assert_eq!(links, vec![0, 1, 2, 3, 4]);
        assert_eq!(store.union_models.len(), 5);
        assert_eq!(store.configs.len(), 1);
        assert_eq!(store.grasps[0].n_views, 1);
        for m in &store.view_models {
            assert!(m.norm > 0.0);
            assert!(!m.kernels.is_empty());
        }
    }

    #[test]
    fn the_union_family_pools_views_and_reaches_the_thumb() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION, BACK_DIRECTION],
            "pinch",
            4,
        )
        .unwrap();
        let params = Params::default();
        let store = train(&hand, &[demo], &params).unwrap();

        let union_links: std::collections::BTreeSet<usize> =
            store.union_models.iter().map(|m| m.link).collect();
        assert!(
            union_links.contains(&5) || union_links.contains(&6),
            "pooled views must produce thumb evidence, got links {union_links:?}"
        );
        // The per-view family keeps the two views separate.
        let views: std::collections::BTreeSet<usize> =
            store.view_models.iter().map(|m| m.view).collect();
        assert_eq!(views.len(), 2);
        // Union models all live in pseudo-view 0.
        assert!(store.union_models.iter().all(|m| m.view == 0));
    }

    #[test]
    fn a_demonstration_without_evidence_is_named_in_the_error() {
        let hand = HandModel::trident();
        let (good, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "good",
            5,
        )
        .unwrap();
        let (mut bad, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "hovering",
            6,
        )
        .unwrap();
        // Move the grasp a metre away from the object it observed.
        for pose in &mut bad.wrist_trajectory {
            pose.p += Vector3::new(1.0, 0.0, 0.0);
        }
        let err = train(&hand, &[good, bad], &Params::default()).unwrap_err();
        assert!(err.to_string().contains("hovering"), "got: {err}");
    }

    #[test]
    fn demanding_more_links_than_a_view_offers_fails_training() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "pinch",
            7,
        )
        .unwrap();
        // Five links see the front side; requiring more than five
        // survivors drops the only view.
        let params = Params {
            zeta: 5,
            ..Params::default()
        };
        assert!(train(&hand, &[demo], &params).is_err());
    }

    #[test]
    fn stores_built_by_training_round_trip_bitwise() {
        let hand = HandModel::trident();
        let (demo, _) = pinch_demonstration(
            &hand,
            &PinchDemoSpec::default(),
            &[FRONT_DIRECTION],
            "pinch",
            8,
        )
        .unwrap();
        let store = train(&hand, &[demo], &Params::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("store.json");
        store.save(&path).unwrap();
        let loaded = ModelStore::load(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&store).unwrap(),
            serde_json::to_string(&loaded).unwrap()
        );
    }
}

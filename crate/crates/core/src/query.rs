//! Query densities: densities over candidate hand-link poses on a test
//! object, one per contact-model prototype.
//!
//! A query density is built by importance sampling: draw a surface
//! feature from the test view, draw a link-to-feature offset from the
//! prototype conditioned on the feature's descriptor, compose the two
//! into a candidate link pose, and weight the candidate by how well the
//! prototype's predicted surface overlays the actual test surface around
//! it. The result is a weighted pose mixture used by the grasp planner
//! both to seed and to score grasps.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterPrototype, ModelIndex};
use crate::contact::ContactModel;
use crate::density::{Feature, Kernel, KernelSet};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::substream;
use crate::surface::ObjectViewModel;

/// A cluster prototype prepared for query formation: the member contact
/// models with their mixture probabilities, plus the flattened union used
/// to score surface overlap.
#[derive(Debug, Clone)]
pub struct PrototypeDensity {
    pub id: usize,
    pub members: Vec<KernelSet>,
    pub probs: Vec<f64>,
    pub flat: KernelSet,
}

impl PrototypeDensity {
    /// Prepares a clustered prototype over `models`.
    pub fn from_cluster<R: Rng + ?Sized>(
        id: usize,
        proto: &ClusterPrototype,
        models: &[ContactModel],
        cap: usize,
        rng: &mut R,
    ) -> Result<PrototypeDensity> {
        let members: Vec<KernelSet> = proto
            .members
            .iter()
            .map(|&g| models[g].kernels.clone())
            .collect();
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::invalid(
                "cluster members must be non-empty contact models",
            ));
        }
        let flat = proto.flatten(models, cap, rng)?;
        Ok(PrototypeDensity {
            id,
            members,
            probs: proto.probs.clone(),
            flat,
        })
    }

    /// Wraps a single contact model as its own prototype (merging off).
    pub fn singleton<R: Rng + ?Sized>(
        id: usize,
        model: &ContactModel,
        cap: usize,
        rng: &mut R,
    ) -> Result<PrototypeDensity> {
        let proto = ClusterPrototype {
            members: vec![0],
            probs: vec![1.0],
            exemplar: 0,
        };
        PrototypeDensity::from_cluster(id, &proto, std::slice::from_ref(model), cap, rng)
    }

    fn pick_member<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.members.len() - 1
    }
}

/// Applies a rigid transform to a contact-model kernel set: each
/// link-to-feature offset `u` becomes a predicted feature pose
/// `s * u^-1`, with descriptors and weights carried over.
pub fn transform_model(s: &Pose, m: &KernelSet) -> KernelSet {
    KernelSet {
        kernels: m
            .kernels
            .iter()
            .map(|k| Kernel {
                center: Feature::new(
                    s.compose(&k.center.pose.inverse()),
                    k.center.descriptor.clone(),
                ),
                weight: k.weight,
            })
            .collect(),
        bandwidth: m.bandwidth.clone(),
        normalized: m.normalized,
    }
}

/// Mean distance from the kernels of `transformed` to the view features
/// within `rho` of each kernel. A kernel with no view support inside
/// `rho` contributes the boundary value `w_lin rho^2 + 2 w_ang`, the
/// supremum of any within-radius distance, so the divergence stays
/// finite and continuous at the neighbourhood edge.
pub fn neighbourhood_divergence(
    transformed: &KernelSet,
    view: &ModelIndex,
    w_lin: f64,
    w_ang: f64,
    rho: f64,
) -> f64 {
    let cap = w_lin * rho * rho + 2.0 * w_ang;
    let mut acc = 0.0;
    for k in &transformed.kernels {
        let n = k.center.pose.q * Vector3::z();
        acc += view
            .min_distance_within(&k.center.pose.p, &n, w_lin, w_ang, rho)
            .unwrap_or(cap);
    }
    acc / transformed.kernels.len() as f64
}

/// Knobs for query-density formation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Number of kernels to draw.
    pub count: usize,
    /// Surface-overlap sharpness: weight = exp(-phi * divergence).
    pub phi: f64,
    /// Neighbourhood radius for the overlap divergence, metres.
    pub rho: f64,
    pub w_lin: f64,
    pub w_ang: f64,
    /// Resample attempts per kernel when the descriptor conditional
    /// degenerates before the whole formation fails.
    pub retries: usize,
    /// Weight kernels by the prototype's descriptor marginal instead of
    /// the surface-overlap divergence (the superseded rule, kept for
    /// like-for-like comparisons).
    pub marginal_weights: bool,
}

impl QueryConfig {
    pub fn from_params(p: &crate::params::Params) -> QueryConfig {
        QueryConfig {
            count: p.n_q,
            phi: p.phi,
            rho: p.rho(),
            w_lin: p.w_lin,
            w_ang: p.w_ang,
            retries: p.conditional_retries,
            marginal_weights: false,
        }
    }
}

/// Weighted mixture over candidate poses of one hand link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDensity {
    /// Prototype this density was formed for.
    pub prototype: usize,
    /// Pose-only kernels; weights sum to 1.
    pub kernels: KernelSet,
}

impl QueryDensity {
    /// Mixture density at link pose `s`.
    pub fn eval(&self, s: &Pose) -> Result<f64> {
        self.kernels.eval_pdf(&Feature::pose_only(*s))
    }

    /// Draws one candidate link pose.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Pose> {
        Ok(self.kernels.sample(rng)?.pose)
    }
}

/// Builds the query density for one prototype on one test view.
///
/// Each of `cfg.count` kernels is drawn independently on a seed-indexed
/// substream, so the result is reproducible regardless of thread count.
pub fn form_query_density(
    view: &ObjectViewModel,
    proto: &PrototypeDensity,
    cfg: &QueryConfig,
    seed: u64,
) -> Result<QueryDensity> {
    if view.is_empty() {
        return Err(Error::invalid("cannot form a query density on an empty view"));
    }
    if proto.members.is_empty() || proto.flat.is_empty() {
        return Err(Error::EmptyKernelSet);
    }
    if cfg.count == 0 {
        return Err(Error::invalid("query density needs at least one kernel"));
    }
    let index = ModelIndex::build(&view.features)?;

    let drawn: Result<Vec<(Pose, f64)>> = (0..cfg.count)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            for _ in 0..cfg.retries.max(1) {
                let feat = view.features.sample(&mut rng)?;
                let member = proto.pick_member(&mut rng);
                let cond = match proto.members[member].conditional_pose(&feat.descriptor) {
                    Ok(c) => c,
                    Err(Error::DegenerateConditional) => continue,
                    Err(e) => return Err(e),
                };
                let offset = cond.sample(&mut rng)?.pose;
                let s = feat.pose.compose(&offset);
                let w = if cfg.marginal_weights {
                    proto.flat.marginal_descriptor(&feat.descriptor)?
                } else {
                    let predicted = transform_model(&s, &proto.flat);
                    let d =
                        neighbourhood_divergence(&predicted, &index, cfg.w_lin, cfg.w_ang, cfg.rho);
                    (-cfg.phi * d).exp()
                };
                return Ok((s, w));
            }
            Err(Error::DegenerateConditional)
        })
        .collect();

    let mut kernels = KernelSet::new(crate::density::Bandwidth::pose_only(
        view.features.bandwidth.sigma_p,
        view.features.bandwidth.sigma_q,
    ));
    for (pose, w) in drawn? {
        kernels.push(Feature::pose_only(pose), w)?;
    }
    kernels.normalize()?;
    Ok(QueryDensity {
        prototype: proto.id,
        kernels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{build_contact_model, LinkGeometry};
    use crate::density::Bandwidth;
    use crate::geometry::relative_link_pose;
    use crate::params::Params;
    use crate::rng::{substream, uniform_quaternion};
    use crate::shapes::{PlacedShape, Shape};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn bw() -> Bandwidth {
        Bandwidth::isotropic(0.005, 0.5, 10.0, 2)
    }

    /// Flat square of features on z = 0 facing +z, descriptors ~ plane.
    fn plane_view(half: f64, step: usize) -> ObjectViewModel {
        let mut features = KernelSet::new(bw());
        for i in 0..=step {
            for j in 0..=step {
                let x = -half + 2.0 * half * i as f64 / step as f64;
                let y = -half + 2.0 * half * j as f64 / step as f64;
                features
                    .push(
                        Feature::new(
                            Pose::from_translation(Vector3::new(x, y, 0.0)),
                            vec![0.0, 0.0],
                        ),
                        1.0,
                    )
                    .unwrap();
            }
        }
        features.normalize().unwrap();
        ObjectViewModel {
            features,
            view_id: "plane".into(),
            grasp_id: "g0".into(),
        }
    }

    fn touching_box_link() -> (LinkGeometry, Pose) {
        let link = LinkGeometry::new(
            "tip",
            vec![PlacedShape::new(
                Shape::Box {
                    half_extents: [0.01, 0.01, 0.01],
                },
                Pose::identity(),
            )],
        );
        // Bottom face 0.5 mm above the plane.
        (link, Pose::from_translation(Vector3::new(0.0, 0.0, 0.0105)))
    }

    fn plane_prototype(view: &ObjectViewModel, s_star: &Pose) -> PrototypeDensity {
        let (link, _) = touching_box_link();
        let model =
            build_contact_model(view, &link, s_star, bw(), 50.0, 0.01, (0, 0, 0)).unwrap();
        assert!(!model.is_empty());
        let mut rng = substream(90, 0);
        PrototypeDensity::singleton(0, &model, 1000, &mut rng).unwrap()
    }

    #[test]
    fn transform_composes_and_round_trips() {
        let mut rng = substream(91, 0);
        let mut set = KernelSet::new(bw());
        set.push(Feature::new(Pose::identity(), vec![0.0, 0.0]), 1.0)
            .unwrap();
        for _ in 0..5 {
            let pose = Pose::new(
                Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()),
                uniform_quaternion(&mut rng),
            );
            set.push(Feature::new(pose, vec![1.0, -2.0]), 1.0).unwrap();
        }
        set.normalize().unwrap();

        let identity = transform_model(&Pose::identity(), &set);
        assert_eq!(identity.kernels[0].center.pose.p, Vector3::zeros());

        let s = Pose::new(Vector3::new(0.2, -0.1, 0.4), uniform_quaternion(&mut rng));
        let moved = transform_model(&s, &set);
        for (orig, out) in set.kernels.iter().zip(&moved.kernels) {
            // The predicted feature pose, related back to the link pose,
            // recovers the stored offset.
            let u = relative_link_pose(&out.center.pose, &s);
            assert_relative_eq!(u.p, orig.center.pose.p, epsilon = 1e-9);
            assert!(crate::geometry::same_rotation(&u.q, &orig.center.pose.q, 1e-9));
            assert_eq!(out.center.descriptor, orig.center.descriptor);
            assert_eq!(out.weight, orig.weight);
        }
    }

    #[test]
    fn self_transfer_overlays_the_training_surface() {
        let view = plane_view(0.05, 20);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let index = ModelIndex::build(&view.features).unwrap();
        let predicted = transform_model(&s_star, &proto.flat);
        let d = neighbourhood_divergence(&predicted, &index, 1.0, 0.01, 0.02);
        assert!(d < 1e-3, "self-transfer divergence {d}");
    }

    #[test]
    fn divergence_hits_scalar_values_and_the_support_cap() {
        let view = plane_view(0.05, 10);
        let index = ModelIndex::build(&view.features).unwrap();

        // One kernel straight above a feature at height giving a known
        // squared distance; same facing, so the angular term is zero.
        let mut probe = KernelSet::new(bw());
        probe
            .push(
                Feature::new(
                    Pose::from_translation(Vector3::new(0.0, 0.0, 0.01)),
                    vec![0.0, 0.0],
                ),
                1.0,
            )
            .unwrap();
        probe.normalize().unwrap();
        let d = neighbourhood_divergence(&probe, &index, 1.0, 0.01, 0.02);
        assert_relative_eq!(d, 1e-4, epsilon = 1e-12);

        // A kernel far outside every neighbourhood contributes exactly
        // the boundary value.
        let mut far = KernelSet::new(bw());
        far.push(
            Feature::new(
                Pose::from_translation(Vector3::new(10.0, 0.0, 0.0)),
                vec![0.0, 0.0],
            ),
            1.0,
        )
        .unwrap();
        far.normalize().unwrap();
        let cap = 1.0 * 0.02 * 0.02 + 2.0 * 0.01;
        let d_far = neighbourhood_divergence(&far, &index, 1.0, 0.01, 0.02);
        assert_eq!(d_far, cap);

        // Weighting rule at a known divergence: phi = 1, d = 0.5.
        assert_relative_eq!((-1.0f64 * 0.5).exp(), 0.606531, epsilon = 1e-6);
    }

    #[test]
    fn query_density_is_normalized_and_deterministic() {
        let view = plane_view(0.05, 14);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let cfg = QueryConfig {
            count: 400,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 32,
            marginal_weights: false,
        };
        let q1 = form_query_density(&view, &proto, &cfg, 7).unwrap();
        let q2 = form_query_density(&view, &proto, &cfg, 7).unwrap();
        assert_eq!(q1.kernels.len(), 400);
        let total: f64 = q1.kernels.kernels.iter().map(|k| k.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(q1, q2);
        let q3 = form_query_density(&view, &proto, &cfg, 8).unwrap();
        assert_ne!(q1, q3);
    }

    #[test]
    fn self_transfer_recovers_the_demonstrated_link_pose() {
        // The plane patch matches the receptive extent of the link, so
        // only candidates near the demonstrated placement keep the whole
        // predicted patch supported by the view.
        let view = plane_view(0.02, 14);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let cfg = QueryConfig {
            count: 2000,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 32,
            marginal_weights: false,
        };
        let q = form_query_density(&view, &proto, &cfg, 11).unwrap();
        let mut order: Vec<usize> = (0..q.kernels.len()).collect();
        order.sort_by(|&a, &b| {
            q.kernels.kernels[b]
                .weight
                .total_cmp(&q.kernels.kernels[a].weight)
        });
        let sigma_p = view.features.bandwidth.sigma_p;
        let hit = order[..20].iter().any(|&i| {
            let pose = q.kernels.kernels[i].center.pose;
            let dp = (pose.p - s_star.p).norm();
            let axis_angle = (pose.q * Vector3::z())
                .dot(&(s_star.q * Vector3::z()))
                .clamp(-1.0, 1.0)
                .acos();
            dp < 2.0 * sigma_p && axis_angle < 15f64.to_radians()
        });
        assert!(hit, "no top-20 kernel near the demonstrated pose");
    }

    #[test]
    fn sharper_phi_never_helps_the_worst_kernel() {
        let view = plane_view(0.05, 14);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let mut cfg = QueryConfig {
            count: 300,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 32,
            marginal_weights: false,
        };
        let index = ModelIndex::build(&view.features).unwrap();
        let q_soft = form_query_density(&view, &proto, &cfg, 13).unwrap();
        cfg.phi = 5.0;
        let q_sharp = form_query_density(&view, &proto, &cfg, 13).unwrap();
        // Weight computation consumes no randomness, so both runs hold
        // the same kernel poses; find the largest-divergence kernel.
        let divergences: Vec<f64> = q_soft
            .kernels
            .kernels
            .iter()
            .map(|k| {
                let predicted = transform_model(&k.center.pose, &proto.flat);
                neighbourhood_divergence(&predicted, &index, 1.0, 0.01, 0.02)
            })
            .collect();
        let worst = divergences
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(
            q_soft.kernels.kernels[worst].center.pose.p,
            q_sharp.kernels.kernels[worst].center.pose.p
        );
        assert!(
            q_sharp.kernels.kernels[worst].weight <= q_soft.kernels.kernels[worst].weight + 1e-15
        );
    }

    #[test]
    fn eval_matches_a_naive_sum_and_ignores_quaternion_sign() {
        let view = plane_view(0.04, 8);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let cfg = QueryConfig {
            count: 50,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 32,
            marginal_weights: false,
        };
        let q = form_query_density(&view, &proto, &cfg, 17).unwrap();
        let probe = Pose::new(
            Vector3::new(0.003, -0.002, 0.011),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.2),
        );
        let naive: f64 = q
            .kernels
            .kernels
            .iter()
            .map(|k| {
                k.weight
                    * crate::density::eval_kernel(
                        &Feature::pose_only(probe),
                        &k.center,
                        &q.kernels.bandwidth,
                    )
                    .unwrap()
            })
            .sum();
        let got = q.eval(&probe).unwrap();
        assert_relative_eq!(got, naive, epsilon = 1e-9 * naive.abs());

        let flipped = Pose::new(
            probe.p,
            UnitQuaternion::new_unchecked(-probe.q.into_inner()),
        );
        assert_eq!(q.eval(&probe).unwrap(), q.eval(&flipped).unwrap());
    }

    #[test]
    fn marginal_mode_changes_weights_but_not_poses() {
        let view = plane_view(0.05, 10);
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        let mut cfg = QueryConfig {
            count: 200,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 32,
            marginal_weights: false,
        };
        let q_new = form_query_density(&view, &proto, &cfg, 19).unwrap();
        cfg.marginal_weights = true;
        let q_old = form_query_density(&view, &proto, &cfg, 19).unwrap();
        for (a, b) in q_new.kernels.kernels.iter().zip(&q_old.kernels.kernels) {
            assert_eq!(a.center.pose.p, b.center.pose.p);
        }
        // Replaying each sample's substream recovers the drawn descriptor,
        // so the superseded weights can be recomputed independently.
        let mut expected: Vec<f64> = (0..200)
            .map(|k| {
                let mut rng = substream(19, k as u64);
                let feat = view.features.sample(&mut rng).unwrap();
                proto.flat.marginal_descriptor(&feat.descriptor).unwrap()
            })
            .collect();
        let total: f64 = expected.iter().sum();
        for w in &mut expected {
            *w /= total;
        }
        for (k, w) in q_old.kernels.kernels.iter().zip(&expected) {
            assert_relative_eq!(k.weight, *w, epsilon = 1e-12);
        }
        let differs = q_new
            .kernels
            .kernels
            .iter()
            .zip(&q_old.kernels.kernels)
            .any(|(a, b)| (a.weight - b.weight).abs() > 1e-9);
        assert!(differs, "the two weight rules should disagree somewhere");
    }

    #[test]
    fn hopeless_descriptors_error_after_bounded_retries() {
        let view = plane_view(0.04, 8);
        // Prototype whose descriptors sit hundreds of bandwidths away
        // from the plane's: every conditional degenerates.
        let mut set = KernelSet::new(Bandwidth::isotropic(0.005, 0.5, 1e-3, 2));
        set.push(
            Feature::new(Pose::identity(), vec![500.0, -500.0]),
            1.0,
        )
        .unwrap();
        set.normalize().unwrap();
        let proto = PrototypeDensity {
            id: 0,
            members: vec![set.clone()],
            probs: vec![1.0],
            flat: set,
        };
        let cfg = QueryConfig {
            count: 8,
            phi: 1.0,
            rho: 0.02,
            w_lin: 1.0,
            w_ang: 0.01,
            retries: 4,
            marginal_weights: false,
        };
        assert!(matches!(
            form_query_density(&view, &proto, &cfg, 23),
            Err(Error::DegenerateConditional)
        ));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let view = plane_view(0.04, 6);
        let cfg = QueryConfig::from_params(&Params::default());
        let empty = PrototypeDensity {
            id: 0,
            members: vec![],
            probs: vec![],
            flat: KernelSet::new(bw()),
        };
        assert!(form_query_density(&view, &empty, &cfg, 1).is_err());

        let empty_view = ObjectViewModel {
            features: KernelSet::new(bw()),
            view_id: "v".into(),
            grasp_id: "g".into(),
        };
        let (_, s_star) = touching_box_link();
        let proto = plane_prototype(&view, &s_star);
        assert!(form_query_density(&empty_view, &proto, &cfg, 1).is_err());
    }
}

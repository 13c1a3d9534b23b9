//! Grasp generation and refinement: seeds sampled from query densities,
//! simulated annealing over wrist pose and joint configuration, a soft
//! collision expert, and likelihood-normalized ranking.
//!
//! Likelihoods multiply three experts. The configuration expert and the
//! query-density product are evaluated at every annealing step; the
//! collision expert joins at the selection steps, where candidates are
//! ranked by the normalized product and only the top fraction survives.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::sample_vmf_pair;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::hand::{HandConfigModel, HandModel};
use crate::query::QueryDensity;
use crate::rng::{derive, gaussian_vector, substream};
use crate::spatial::KdTree;

/// One candidate grasp with its expert likelihoods and normalized score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSolution {
    pub h_w: Pose,
    pub h_c: Vec<f64>,
    /// Index of the grasp-view pair this candidate was seeded from.
    pub pair: usize,
    pub grasp: usize,
    pub view: usize,
    pub l_w: f64,
    pub l_c: f64,
    pub l_q: f64,
    /// `l_w * l_c * l_q^(n_max / n_gm)`.
    pub score: f64,
}

/// Annealing plan: linear temperature decline with rank-and-prune
/// selection barriers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// 1-based step indices at which candidates are ranked and pruned.
    pub selection_steps: Vec<usize>,
    /// Fraction of candidates kept at each selection step.
    pub survivor_fraction: f64,
}

impl AnnealSchedule {
    pub fn from_params(p: &crate::params::Params) -> AnnealSchedule {
        AnnealSchedule {
            steps: p.sa_steps,
            t_start: p.t_start,
            t_end: p.t_end,
            selection_steps: p.selection_steps.clone(),
            survivor_fraction: p.survivor_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("annealing needs at least one step"));
        }
        if !(self.t_end > 0.0 && self.t_start >= self.t_end) {
            return Err(Error::invalid(
                "temperatures must satisfy t_start >= t_end > 0",
            ));
        }
        if self
            .selection_steps
            .iter()
            .any(|&s| s == 0 || s > self.steps)
        {
            return Err(Error::invalid("selection steps must lie in [1, steps]"));
        }
        if !(self.survivor_fraction > 0.0 && self.survivor_fraction <= 1.0) {
            return Err(Error::invalid("survivor fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Temperature at 1-based step `k`, declining linearly.
    pub fn temperature(&self, k: usize) -> f64 {
        if self.steps <= 1 {
            return self.t_start;
        }
        let t = (k - 1) as f64 / (self.steps - 1) as f64;
        self.t_start + (self.t_end - self.t_start) * t
    }
}

/// Point cloud prepared for penetration queries.
#[derive(Debug, Clone)]
pub struct CollisionField {
    points: Vec<Vector3<f64>>,
    tree: KdTree,
}

impl CollisionField {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<CollisionField> {
        if points.is_empty() {
            return Err(Error::invalid("collision field needs a non-empty cloud"));
        }
        let tree = KdTree::build(&points);
        Ok(CollisionField { points, tree })
    }

    /// Deepest penetration of any cloud point into any hand link, metres;
    /// 0 when collision-free.
    pub fn penetration(&self, hand: &HandModel, link_poses: &[Pose]) -> f64 {
        let mut worst: f64 = 0.0;
        for (link, pose) in hand.links.iter().zip(link_poses) {
            let reach = link.geometry.bounding_radius();
            if reach <= 0.0 {
                continue;
            }
            for (i, _) in self.tree.within_radius(&pose.p, reach * reach) {
                let depth = -link.geometry.sdf(&self.points[i], pose);
                worst = worst.max(depth);
            }
        }
        worst
    }

    /// Soft collision expert: exp(-kappa * penetration), 1 when free.
    pub fn expert(&self, hand: &HandModel, link_poses: &[Pose], kappa: f64) -> f64 {
        (-kappa * self.penetration(hand, link_poses)).exp()
    }
}

/// One retained grasp-view pair and the query density of each of its
/// surviving links.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspPair {
    pub grasp: usize,
    pub view: usize,
    /// (hand link index, index into the shared query-density list).
    pub link_queries: Vec<(usize, usize)>,
}

/// Read-only bundle of everything grasp scoring needs.
pub struct PlannerContext<'a> {
    pub hand: &'a HandModel,
    pub queries: &'a [QueryDensity],
    pub pairs: &'a [GraspPair],
    /// Configuration model per grasp id.
    pub configs: &'a [HandConfigModel],
    pub collision: CollisionField,
    pub kappa: f64,
    /// Largest link-query count over all pairs.
    pub n_q_max: usize,
}

impl<'a> PlannerContext<'a> {
    pub fn new(
        hand: &'a HandModel,
        queries: &'a [QueryDensity],
        pairs: &'a [GraspPair],
        configs: &'a [HandConfigModel],
        cloud: Vec<Vector3<f64>>,
        kappa: f64,
    ) -> Result<PlannerContext<'a>> {
        if pairs.is_empty() {
            return Err(Error::NoCandidates(
                "no retained grasp-view pairs".into(),
            ));
        }
        for pair in pairs {
            if pair.link_queries.is_empty() {
                return Err(Error::invalid("a grasp-view pair has no link queries"));
            }
            if pair.grasp >= configs.len() {
                return Err(Error::invalid("pair references a missing config model"));
            }
            for &(link, q) in &pair.link_queries {
                if link >= hand.links.len() {
                    return Err(Error::invalid("pair references a missing hand link"));
                }
                if q >= queries.len() {
                    return Err(Error::invalid("pair references a missing query density"));
                }
            }
        }
        let n_q_max = pairs.iter().map(|p| p.link_queries.len()).max().unwrap();
        Ok(PlannerContext {
            hand,
            queries,
            pairs,
            configs,
            collision: CollisionField::new(cloud)?,
            kappa,
            n_q_max,
        })
    }
}

/// Expert likelihoods of a grasp for one grasp-view pair: the collision
/// term (1 when disabled), the configuration density, and the product of
/// the pair's query densities at the forward-kinematic link poses.
pub fn grasp_likelihood(
    ctx: &PlannerContext,
    pair: &GraspPair,
    h_w: &Pose,
    h_c: &[f64],
    with_collision: bool,
) -> Result<(f64, f64, f64)> {
    let fk = ctx.hand.forward_kinematics(h_w, h_c)?;
    let mut l_q = 1.0;
    for &(link, q) in &pair.link_queries {
        l_q *= ctx.queries[q].eval(&fk[link])?;
    }
    let l_c = ctx.configs[pair.grasp].eval(h_c)?;
    let l_w = if with_collision {
        ctx.collision.expert(ctx.hand, &fk, ctx.kappa)
    } else {
        1.0
    };
    Ok((l_w, l_c, l_q))
}

/// Rank-comparable score: grasps touching fewer links are raised to the
/// largest link count so the query products are commensurate.
pub fn normalized_score(l_w: f64, l_c: f64, l_q: f64, n_gm: usize, n_max: usize) -> f64 {
    debug_assert!(n_gm >= 1);
    l_w * l_c * l_q.powf(n_max as f64 / n_gm as f64)
}

/// Draws `count` seed grasps: pick a grasp-view pair and one of its
/// links, sample that link's pose from its query density and a
/// configuration from the grasp's model, then solve the wrist so the
/// link lands exactly on the sample. Likelihoods are left at zero; the
/// optimizer evaluates them.
pub fn generate_seeds(
    ctx: &PlannerContext,
    count: usize,
    seed: u64,
) -> Result<Vec<GraspSolution>> {
    if count == 0 {
        return Err(Error::invalid("seed count must be positive"));
    }
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, j as u64);
            let pair_idx = rng.random_range(0..ctx.pairs.len());
            let pair = &ctx.pairs[pair_idx];
            let slot = rng.random_range(0..pair.link_queries.len());
            let (link, q) = pair.link_queries[slot];
            let s_i = ctx.queries[q].sample(&mut rng)?;
            let h_c = ctx.hand.clamp(&ctx.configs[pair.grasp].sample(&mut rng)?)?;
            let rest = ctx.hand.rest_poses(&h_c)?;
            let h_w = s_i.compose(&rest[link].inverse());
            Ok(GraspSolution {
                h_w,
                h_c,
                pair: pair_idx,
                grasp: pair.grasp,
                view: pair.view,
                l_w: 0.0,
                l_c: 0.0,
                l_q: 0.0,
                score: 0.0,
            })
        })
        .collect()
}

struct Candidate {
    id: usize,
    sol: GraspSolution,
    /// Base likelihoods of the current state; valid once `evaluated`.
    l_c: f64,
    l_q: f64,
    evaluated: bool,
    /// Best fully-scored state seen so far.
    elite: Option<GraspSolution>,
}

fn full_solution(
    ctx: &PlannerContext,
    cand: &Candidate,
    l_w: f64,
) -> GraspSolution {
    let pair = &ctx.pairs[cand.sol.pair];
    let score = normalized_score(l_w, cand.l_c, cand.l_q, pair.link_queries.len(), ctx.n_q_max);
    GraspSolution {
        l_w,
        l_c: cand.l_c,
        l_q: cand.l_q,
        score,
        h_w: cand.sol.h_w,
        h_c: cand.sol.h_c.clone(),
        ..cand.sol
    }
}

fn better(a: &GraspSolution, b: &Option<GraspSolution>) -> bool {
    b.as_ref().is_none_or(|cur| a.score > cur.score)
}

/// Anneals every seed, pruning at the schedule's selection steps, and
/// returns the survivors' best states ranked by normalized score.
pub fn optimize(
    ctx: &PlannerContext,
    seeds: Vec<GraspSolution>,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<Vec<GraspSolution>> {
    schedule.validate()?;
    if seeds.is_empty() {
        return Err(Error::NoCandidates("no seed grasps to optimize".into()));
    }
    let mut candidates: Vec<Candidate> = seeds
        .into_iter()
        .enumerate()
        .map(|(id, sol)| Candidate {
            id,
            sol,
            l_c: 0.0,
            l_q: 0.0,
            evaluated: false,
            elite: None,
        })
        .collect();

    for step in 1..=schedule.steps {
        let t = schedule.temperature(step);
        let selection = schedule.selection_steps.contains(&step);
        let step_seed = derive(seed, step as u64);

        let results: Result<Vec<()>> = candidates
            .par_iter_mut()
            .map(|cand| {
                let mut rng = substream(step_seed, cand.id as u64);
                let pair = &ctx.pairs[cand.sol.pair];
                let exponent = ctx.n_q_max as f64 / pair.link_queries.len() as f64;
                if !cand.evaluated {
                    let (_, l_c, l_q) =
                        grasp_likelihood(ctx, pair, &cand.sol.h_w, &cand.sol.h_c, false)?;
                    cand.l_c = l_c;
                    cand.l_q = l_q;
                    cand.evaluated = true;
                }

                let h_w_new = Pose::new(
                    cand.sol.h_w.p + gaussian_vector(&mut rng, 0.1 * t),
                    sample_vmf_pair(&mut rng, &cand.sol.h_w.q, 1.0 / t),
                );
                let h_c_new: Vec<f64> = cand
                    .sol
                    .h_c
                    .iter()
                    .map(|&a| a + t * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (_, l_c_new, l_q_new) =
                    grasp_likelihood(ctx, pair, &h_w_new, &h_c_new, false)?;

                let mut crit_cur = cand.l_c * cand.l_q.powf(exponent);
                let mut crit_new = l_c_new * l_q_new.powf(exponent);
                let mut w_new = 1.0;
                if selection {
                    let fk_cur = ctx.hand.forward_kinematics(&cand.sol.h_w, &cand.sol.h_c)?;
                    let w_cur = ctx.collision.expert(ctx.hand, &fk_cur, ctx.kappa);
                    let fk_new = ctx.hand.forward_kinematics(&h_w_new, &h_c_new)?;
                    w_new = ctx.collision.expert(ctx.hand, &fk_new, ctx.kappa);
                    crit_cur *= w_cur;
                    crit_new *= w_new;
                    // Bank the pre-move state so an accepted downhill move
                    // cannot lose the best score seen so far.
                    let full = full_solution(ctx, cand, w_cur);
                    if better(&full, &cand.elite) {
                        cand.elite = Some(full);
                    }
                }

                let accept = if crit_new >= crit_cur {
                    true
                } else if crit_cur > 0.0 {
                    let ratio = crit_new / crit_cur;
                    rng.random::<f64>() < ratio.powf(1.0 / t)
                } else {
                    true
                };
                if accept {
                    cand.sol.h_w = h_w_new;
                    cand.sol.h_c = h_c_new;
                    cand.l_c = l_c_new;
                    cand.l_q = l_q_new;
                }

                if selection && accept {
                    let full = full_solution(ctx, cand, w_new);
                    if better(&full, &cand.elite) {
                        cand.elite = Some(full);
                    }
                }
                Ok(())
            })
            .collect();
        results?;

        if selection {
            // Rank the current states by the full normalized score (the
            // elites were just refreshed from them) and prune.
            let mut scored: Vec<(usize, f64, f64)> = candidates
                .iter()
                .map(|c| {
                    let elite = c.elite.as_ref().expect("selection step fills elites");
                    (c.id, elite.score, elite.l_w)
                })
                .collect();
            let all_zero = scored.iter().all(|&(_, s, _)| s == 0.0);
            if all_zero {
                log::warn!(
                    "all grasp scores vanished at selection step {step}; \
                     ranking by the collision expert alone"
                );
                scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            } else {
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            }
            let keep = ((candidates.len() as f64 * schedule.survivor_fraction).floor()
                as usize)
                .max(1);
            let kept: std::collections::BTreeSet<usize> =
                scored[..keep.min(scored.len())].iter().map(|s| s.0).collect();
            candidates.retain(|c| kept.contains(&c.id));
        }
    }

    // Final full scoring of the ending states, then rank the elites.
    let finals: Result<Vec<()>> = candidates
        .par_iter_mut()
        .map(|cand| {
            let fk = ctx.hand.forward_kinematics(&cand.sol.h_w, &cand.sol.h_c)?;
            let w = ctx.collision.expert(ctx.hand, &fk, ctx.kappa);
            let full = full_solution(ctx, cand, w);
            if better(&full, &cand.elite) {
                cand.elite = Some(full);
            }
            Ok(())
        })
        .collect();
    finals?;

    let mut out: Vec<(usize, GraspSolution)> = candidates
        .into_iter()
        .map(|c| (c.id, c.elite.expect("final pass fills elites")))
        .collect();
    if out.iter().all(|(_, s)| s.score == 0.0) {
        log::warn!("all final grasp scores vanished; ranking by the collision expert alone");
        out.sort_by(|a, b| b.1.l_w.total_cmp(&a.1.l_w).then(a.0.cmp(&b.0)));
    } else {
        out.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    }
    Ok(out.into_iter().map(|(_, s)| s).collect())
}

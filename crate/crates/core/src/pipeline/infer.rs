//! Transfer and planning on a novel view: form query densities from the
//! stored contact models, then seed and anneal grasp candidates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::planner::{
    generate_seeds, optimize, AnnealSchedule, GraspPair, GraspSolution, PlannerContext,
};
use crate::query::{form_query_density, PrototypeDensity, QueryConfig, QueryDensity};
use crate::rng::{derive, substream};
use crate::surface::{principal_curvature_features, PointCloud};

use super::ensure_normals;
use super::store::ModelStore;

/// Pipeline variant: which model family answers queries, how query
/// kernels are weighted, and whether merged prototypes are used.
///
/// - `A1`: union-of-views models, descriptor-marginal weights.
/// - `A2`: per-view models, descriptor-marginal weights.
/// - `A3`: per-view models, surface-overlap weights.
/// - `A4`: as `A3`, over merged cluster prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    A1,
    A2,
    A3,
    A4,
}

impl Variant {
    /// Per-view contact models instead of pooled-view models.
    pub fn view_based(self) -> bool {
        self != Variant::A1
    }

    /// Surface-overlap query weighting instead of descriptor marginals.
    pub fn new_eval(self) -> bool {
        matches!(self, Variant::A3 | Variant::A4)
    }

    /// Query merged cluster prototypes instead of single models.
    pub fn merged(self) -> bool {
        self == Variant::A4
    }

    pub const ALL: [Variant; 4] = [Variant::A1, Variant::A2, Variant::A3, Variant::A4];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A1 => "A1",
            Variant::A2 => "A2",
            Variant::A3 => "A3",
            Variant::A4 => "A4",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(Variant::A1),
            "A2" => Ok(Variant::A2),
            "A3" => Ok(Variant::A3),
            "A4" => Ok(Variant::A4),
            other => Err(Error::Parse(format!(
                "unknown variant {other:?}; expected A1, A2, A3, or A4"
            ))),
        }
    }
}

/// Result of one inference run: ranked grasps plus the phase timings.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    /// Best grasp first.
    pub ranked: Vec<GraspSolution>,
    /// The grasp-view pairs candidates were planned over; `GraspSolution::pair`
    /// indexes this list.
    pub pairs: Vec<GraspPair>,
    pub n_queries: usize,
    pub query_seconds: f64,
    pub optimize_seconds: f64,
}

/// Plans grasps for a novel view.
///
/// Phase one turns the cloud into surface features and forms one query
/// density per prototype; phase two seeds `params.h1` candidates and
/// anneals them. Everything downstream of `seed` is deterministic.
pub fn infer(
    store: &ModelStore,
    cloud: &PointCloud,
    variant: Variant,
    seed: u64,
    params: &Params,
) -> Result<InferOutcome> {
    params.validate()?;
    let family = if variant.view_based() {
        &store.view_models
    } else {
        &store.union_models
    };
    if family.is_empty() {
        return Err(Error::NothingLearned);
    }

    let query_clock = Instant::now();
    let prepared = ensure_normals(cloud, params.k_nn)?;
    let features = principal_curvature_features(
        &prepared,
        params.k_nn,
        params.feature_bandwidth(),
        "test",
        "test",
    )?;

    // One prototype per query density, and for each family model the
    // query it is answered by.
    let flatten_seed = derive(seed, 1);
    let mut prototypes: Vec<PrototypeDensity> = Vec::new();
    let query_of: Vec<usize> = if variant.merged() {
        let block = store.clusters.as_ref().filter(|b| b.merged).ok_or_else(|| {
            Error::invalid("this variant queries merged prototypes; run the merge step first")
        })?;
        if block.assignments.len() != family.len() {
            return Err(Error::invalid(
                "cluster block does not match the stored models; re-run the merge step",
            ));
        }
        for (c, proto) in block.prototypes.iter().enumerate() {
            let mut rng = substream(flatten_seed, c as u64);
            prototypes.push(PrototypeDensity::from_cluster(
                c,
                proto,
                family,
                params.prototype_mc_samples,
                &mut rng,
            )?);
        }
        block.assignments.clone()
    } else {
        for (i, model) in family.iter().enumerate() {
            let mut rng = substream(flatten_seed, i as u64);
            prototypes.push(PrototypeDensity::singleton(
                i,
                model,
                params.prototype_mc_samples,
                &mut rng,
            )?);
        }
        (0..family.len()).collect()
    };

    let cfg = QueryConfig {
        marginal_weights: !variant.new_eval(),
        ..QueryConfig::from_params(params)
    };
    let form_seed = derive(seed, 2);
    let queries: Vec<QueryDensity> = prototypes
        .iter()
        .map(|proto| form_query_density(&features, proto, &cfg, derive(form_seed, proto.id as u64)))
        .collect::<Result<_>>()?;
    let query_seconds = query_clock.elapsed().as_secs_f64();

    let optimize_clock = Instant::now();
    let mut by_pair: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (i, model) in family.iter().enumerate() {
        by_pair
            .entry((model.grasp, model.view))
            .or_default()
            .push((model.link, query_of[i]));
    }
    let pairs: Vec<GraspPair> = by_pair
        .into_iter()
        .map(|((grasp, view), link_queries)| GraspPair {
            grasp,
            view,
            link_queries,
        })
        .collect();

    let ctx = PlannerContext::new(
        &store.hand,
        &queries,
        &pairs,
        &store.configs,
        prepared.points.clone(),
        params.kappa,
    )?;
    let seeds = generate_seeds(&ctx, params.h1, derive(seed, 3))?;
    let ranked = optimize(&ctx, seeds, &AnnealSchedule::from_params(params), derive(seed, 4))?;
    let optimize_seconds = optimize_clock.elapsed().as_secs_f64();

    log::info!(
        "planned {} grasps over {} pairs and {} queries ({:.2}s queries, {:.2}s optimization)",
        ranked.len(),
        ctx.pairs.len(),
        queries.len(),
        query_seconds,
        optimize_seconds
    );
    Ok(InferOutcome {
        ranked,
        pairs,
        n_queries: queries.len(),
        query_seconds,
        optimize_seconds,
    })
}

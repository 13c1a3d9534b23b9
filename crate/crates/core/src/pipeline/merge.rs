//! Merging similar contact models across demonstrations into cluster
//! prototypes, recorded in the store so inference can query mixtures
//! instead of individual models.

use crate::cluster::{affinity_propagation, build_prototype, distance_matrix, ClusterPrototype};
use crate::error::{Error, Result};

use super::store::{ClusterBlock, ModelStore};

/// Clusters the per-view contact models (or records every model as its
/// own singleton cluster when `enable` is false) and writes the result
/// into the store. Re-running with the same flag is a no-op.
pub fn merge_store(store: &mut ModelStore, enable: bool) -> Result<()> {
    let n = store.view_models.len();
    if n == 0 {
        return Err(Error::NothingLearned);
    }
    if let Some(block) = &store.clusters {
        if block.merged == enable {
            log::info!("store already holds a matching cluster block; leaving it unchanged");
            return Ok(());
        }
    }

    let singletons = |merged: bool| ClusterBlock {
        merged,
        distance: Vec::new(),
        assignments: (0..n).collect(),
        exemplars: (0..n).collect(),
        prototypes: (0..n)
            .map(|i| ClusterPrototype {
                members: vec![i],
                probs: vec![1.0],
                exemplar: i,
            })
            .collect(),
        compression_ratio: 1.0,
    };

    if !enable {
        store.clusters = Some(singletons(false));
        return Ok(());
    }
    if n < 2 {
        log::info!("only {n} contact model(s); nothing to merge");
        store.clusters = Some(singletons(true));
        return Ok(());
    }

    let p = &store.params;
    let d = distance_matrix(&store.view_models, p.w_lin, p.w_ang)?;
    let ap = affinity_propagation(&d, None, p.ap_damping, p.ap_max_iter)?;
    if !ap.converged {
        log::warn!(
            "model clustering did not settle within {} iterations; using the final assignment",
            ap.iterations
        );
    }

    let mut prototypes = Vec::with_capacity(ap.exemplars.len());
    for (c, &exemplar) in ap.exemplars.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| ap.assignments[i] == c).collect();
        let dist: Vec<f64> = members.iter().map(|&i| d[i][exemplar]).collect();
        prototypes.push(build_prototype(members, exemplar, &dist, p.xi)?);
    }
    let ratio = n as f64 / ap.exemplars.len() as f64;
    log::info!(
        "merged {n} contact models into {} prototypes (ratio {ratio:.2})",
        ap.exemplars.len()
    );
    store.clusters = Some(ClusterBlock {
        merged: true,
        distance: d,
        assignments: ap.assignments,
        exemplars: ap.exemplars,
        prototypes,
        compression_ratio: ratio,
    });
    Ok(())
}

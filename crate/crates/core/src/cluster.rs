//! Contact-model compression: a divergence between kernel densities,
//! affinity-propagation clustering over the pairwise distances, and
//! mixture prototypes that stand in for each cluster.
//!
//! The divergence works on kernel positions and normals only; descriptors
//! and kernel weights carry no extra signal for telling two contact
//! patches apart, so they are ignored here.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::ContactModel;
use crate::density::{Kernel, KernelSet};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::derive;
use crate::spatial::KdTree;

/// Position-nearest candidates scanned before the exact completion pass.
const SCAN_CANDIDATES: usize = 16;

/// Distance between two kernels: squared position gap plus normal
/// misalignment (1 - n_x . n_y), with the frame z-axis acting as the
/// normal. The misalignment is computed as half the squared normal
/// difference, which is the same quantity for unit vectors but stays
/// exactly zero and nonnegative under floating point.
pub fn kernel_distance(x: &Pose, y: &Pose, w_lin: f64, w_ang: f64) -> f64 {
    let nx = x.q * Vector3::z();
    let ny = y.q * Vector3::z();
    w_lin * (x.p - y.p).norm_squared() + w_ang * 0.5 * (nx - ny).norm_squared()
}

/// Position index over one kernel set, for nearest-kernel queries under
/// the combined position/normal distance.
pub struct ModelIndex {
    tree: KdTree,
    positions: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl ModelIndex {
    pub fn build(set: &KernelSet) -> Result<ModelIndex> {
        if set.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let positions: Vec<Vector3<f64>> =
            set.kernels.iter().map(|k| k.center.pose.p).collect();
        let normals: Vec<Vector3<f64>> = set
            .kernels
            .iter()
            .map(|k| k.center.pose.q * Vector3::z())
            .collect();
        Ok(ModelIndex {
            tree: KdTree::build(&positions),
            positions,
            normals,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Exact minimum combined distance from (p, n) to any indexed kernel.
    ///
    /// Scans a handful of position-nearest candidates first; since the
    /// angular term is nonnegative, any kernel whose weighted squared
    /// position gap already exceeds the best candidate cannot win, so a
    /// radius-bounded sweep completes the search exactly.
    pub fn min_distance(
        &self,
        p: &Vector3<f64>,
        n: &Vector3<f64>,
        w_lin: f64,
        w_ang: f64,
    ) -> f64 {
        let near = self.tree.nearest_k(p, SCAN_CANDIDATES);
        let mut best = f64::INFINITY;
        for &(i, d2) in &near {
            best = best.min(w_lin * d2 + w_ang * 0.5 * (n - self.normals[i]).norm_squared());
        }
        let farthest = near.last().map(|&(_, d2)| d2).unwrap_or(0.0);
        if near.len() == self.positions.len() || (w_lin > 0.0 && best <= w_lin * farthest) {
            return best;
        }
        let radius2 = if w_lin > 0.0 { best / w_lin } else { f64::INFINITY };
        for (i, d2) in self.tree.within_radius(p, radius2) {
            best = best.min(w_lin * d2 + w_ang * 0.5 * (n - self.normals[i]).norm_squared());
        }
        best
    }

    /// Like [`min_distance`](Self::min_distance) but only over kernels
    /// within `radius` of `p`; `None` when that neighbourhood is empty.
    pub fn min_distance_within(
        &self,
        p: &Vector3<f64>,
        n: &Vector3<f64>,
        w_lin: f64,
        w_ang: f64,
        radius: f64,
    ) -> Option<f64> {
        let hits = self.tree.within_radius(p, radius * radius);
        if hits.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        for (i, d2) in hits {
            best = best.min(w_lin * d2 + w_ang * 0.5 * (n - self.normals[i]).norm_squared());
        }
        Some(best)
    }
}

/// Distance from one kernel to the nearest kernel of a model.
pub fn kernel_to_density_distance(
    x: &Pose,
    m: &ContactModel,
    w_lin: f64,
    w_ang: f64,
) -> Result<f64> {
    let index = ModelIndex::build(&m.kernels)?;
    let n = x.q * Vector3::z();
    Ok(index.min_distance(&x.p, &n, w_lin, w_ang))
}

/// Mean nearest-kernel distance from every kernel of `a` into `b`.
/// Asymmetric: dropping a patch from `a` lowers `divergence(a, b)` but
/// not `divergence(b, a)`.
pub fn divergence_sets(a: &KernelSet, b: &ModelIndex, w_lin: f64, w_ang: f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyKernelSet);
    }
    let mut acc = 0.0;
    for k in &a.kernels {
        let n = k.center.pose.q * Vector3::z();
        acc += b.min_distance(&k.center.pose.p, &n, w_lin, w_ang);
    }
    Ok(acc / a.kernels.len() as f64)
}

pub fn divergence(a: &ContactModel, b: &ContactModel, w_lin: f64, w_ang: f64) -> Result<f64> {
    let index = ModelIndex::build(&b.kernels)?;
    divergence_sets(&a.kernels, &index, w_lin, w_ang)
}

/// Symmetrized divergence: the larger of the two directions.
pub fn symmetric_distance(
    a: &ContactModel,
    b: &ContactModel,
    w_lin: f64,
    w_ang: f64,
) -> Result<f64> {
    Ok(divergence(a, b, w_lin, w_ang)?.max(divergence(b, a, w_lin, w_ang)?))
}

/// Full pairwise symmetric-distance matrix, computed in parallel.
pub fn distance_matrix(
    models: &[ContactModel],
    w_lin: f64,
    w_ang: f64,
) -> Result<Vec<Vec<f64>>> {
    let indices: Vec<ModelIndex> = models
        .iter()
        .map(|m| ModelIndex::build(&m.kernels))
        .collect::<Result<_>>()?;
    let n = models.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dij = divergence_sets(&models[i].kernels, &indices[j], w_lin, w_ang)?;
            let dji = divergence_sets(&models[j].kernels, &indices[i], w_lin, w_ang)?;
            Ok(((i, j), dij.max(dji)))
        })
        .collect::<Result<_>>()?;
    let mut d = vec![vec![0.0; n]; n];
    for ((i, j), v) in entries {
        d[i][j] = v;
        d[j][i] = v;
    }
    Ok(d)
}

/// Outcome of affinity propagation over a distance matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApResult {
    /// Cluster id per input item.
    pub assignments: Vec<usize>,
    /// Exemplar item index per cluster id.
    pub exemplars: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

/// Affinity propagation with similarity = -distance and a shared
/// preference (median off-diagonal similarity when not given).
///
/// Runs damped message passing until the exemplar set is stable for 15
/// sweeps or `max_iter` is hit; non-convergence keeps the last iterate
/// with a warning. A degenerate run that elects no exemplar collapses to
/// a single cluster around the most central item.
pub fn affinity_propagation(
    d: &[Vec<f64>],
    preference: Option<f64>,
    damping: f64,
    max_iter: usize,
) -> Result<ApResult> {
    let n = d.len();
    if n == 0 {
        return Err(Error::invalid("cannot cluster zero items"));
    }
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        if d[i][i] != 0.0 {
            return Err(Error::invalid("distance matrix must have a zero diagonal"));
        }
    }
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::invalid("damping must lie in [0, 1)"));
    }
    if n == 1 {
        return Ok(ApResult {
            assignments: vec![0],
            exemplars: vec![0],
            converged: true,
            iterations: 0,
        });
    }

    // Similarities: s(i,k) = -d(i,k); diagonal carries the preference.
    let pref = preference.unwrap_or_else(|| {
        let mut off: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| -d[i][j]))
            .collect();
        off.sort_by(f64::total_cmp);
        let mid = off.len() / 2;
        if off.len() % 2 == 1 {
            off[mid]
        } else {
            0.5 * (off[mid - 1] + off[mid])
        }
    });
    // Exactly (or near-exactly) tied similarities lock the messages into a
    // symmetric oscillation that never elects an exemplar, which is what
    // near-duplicate inputs produce. A deterministic jitter far below the
    // similarity spread breaks the ties without moving genuine structure;
    // an all-tied matrix (zero spread) is left alone and handled by the
    // single-cluster fallback below.
    const TIE_BREAK: f64 = 1e-9;
    let mut sim = vec![0.0f64; n * n];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for k in 0..n {
            let v = if i == k { pref } else { -d[i][k] };
            sim[i * n + k] = v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let spread = hi - lo;
    if spread > 0.0 {
        for (idx, v) in sim.iter_mut().enumerate() {
            let u = (derive(0xC1A5_7E12, idx as u64) >> 11) as f64
                / (1u64 << 53) as f64;
            *v += spread * TIE_BREAK * u;
        }
    }
    let s = |i: usize, k: usize| -> f64 { sim[i * n + k] };

    let mut r = vec![0.0f64; n * n];
    let mut a = vec![0.0f64; n * n];
    let mut exemplars_prev: Vec<usize> = Vec::new();
    let mut stable_for = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    const STABLE_SWEEPS: usize = 15;
    for it in 0..max_iter {
        iterations = it + 1;
        // Responsibilities, using the two largest (a+s) values per row.
        for i in 0..n {
            let mut max1 = f64::NEG_INFINITY;
            let mut max2 = f64::NEG_INFINITY;
            let mut arg1 = 0usize;
            for k in 0..n {
                let v = a[i * n + k] + s(i, k);
                if v > max1 {
                    max2 = max1;
                    max1 = v;
                    arg1 = k;
                } else if v > max2 {
                    max2 = v;
                }
            }
            for k in 0..n {
                let competing = if k == arg1 { max2 } else { max1 };
                let update = s(i, k) - competing;
                r[i * n + k] = damping * r[i * n + k] + (1.0 - damping) * update;
            }
        }
        // Availabilities from column sums of positive responsibilities.
        for k in 0..n {
            let mut pos_sum = 0.0;
            for i in 0..n {
                if i != k {
                    pos_sum += r[i * n + k].max(0.0);
                }
            }
            for i in 0..n {
                let update = if i == k {
                    pos_sum
                } else {
                    (r[k * n + k] + pos_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = damping * a[i * n + k] + (1.0 - damping) * update;
            }
        }

        let exemplars: Vec<usize> =
            (0..n).filter(|&k| r[k * n + k] + a[k * n + k] > 0.0).collect();
        if exemplars == exemplars_prev && !exemplars.is_empty() {
            stable_for += 1;
            if stable_for >= STABLE_SWEEPS {
                converged = true;
                break;
            }
        } else {
            stable_for = 0;
            exemplars_prev = exemplars;
        }
    }
    if !converged {
        log::warn!("affinity propagation did not converge in {max_iter} iterations");
    }

    let mut exemplars: Vec<usize> =
        (0..n).filter(|&k| r[k * n + k] + a[k * n + k] > 0.0).collect();
    if exemplars.is_empty() {
        // Degenerate messages (e.g. an all-zero distance matrix): fall
        // back to the single most central item.
        log::debug!("no exemplar elected; collapsing to one cluster");
        let best = (0..n)
            .max_by(|&x, &y| {
                let sx: f64 = (0..n).map(|i| s(i, x)).sum();
                let sy: f64 = (0..n).map(|i| s(i, y)).sum();
                sx.total_cmp(&sy)
            })
            .unwrap();
        exemplars = vec![best];
    }

    // Assign, then refine each cluster's exemplar to the member that the
    // rest of the cluster likes best, and assign once more.
    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let mut best = 0usize;
                let mut best_s = f64::NEG_INFINITY;
                for (c, &k) in exemplars.iter().enumerate() {
                    if i == k {
                        best = c;
                        break;
                    }
                    let v = s(i, k);
                    if v > best_s {
                        best_s = v;
                        best = c;
                    }
                }
                best
            })
            .collect()
    };
    let first_pass = assign(&exemplars);
    let mut refined = exemplars.clone();
    for (c, slot) in refined.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| first_pass[i] == c).collect();
        let best = members
            .iter()
            .copied()
            .max_by(|&x, &y| {
                let sx: f64 = members.iter().map(|&i| s(i, x)).sum();
                let sy: f64 = members.iter().map(|&i| s(i, y)).sum();
                sx.total_cmp(&sy)
            })
            .expect("every cluster contains its exemplar");
        *slot = best;
    }
    refined.sort_unstable();
    refined.dedup();
    let assignments = assign(&refined);

    Ok(ApResult {
        assignments,
        exemplars: refined,
        converged,
        iterations,
    })
}

/// One cluster of contact models, summarized as a mixture: member `k`
/// participates with probability falling off exponentially in its
/// distance to the exemplar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterPrototype {
    /// Member indices into the caller's contact-model list.
    pub members: Vec<usize>,
    /// Mixture probabilities, aligned with `members`, summing to 1.
    pub probs: Vec<f64>,
    /// The exemplar's index (also present in `members`).
    pub exemplar: usize,
}

/// Builds the mixture for one cluster. `dist_to_exemplar` aligns with
/// `members` and must be 0 for the exemplar itself.
pub fn build_prototype(
    members: Vec<usize>,
    exemplar: usize,
    dist_to_exemplar: &[f64],
    xi: f64,
) -> Result<ClusterPrototype> {
    if members.is_empty() {
        return Err(Error::invalid("a cluster prototype needs members"));
    }
    if members.len() != dist_to_exemplar.len() {
        return Err(Error::DimensionMismatch {
            expected: members.len(),
            got: dist_to_exemplar.len(),
        });
    }
    if !members.contains(&exemplar) {
        return Err(Error::invalid("the exemplar must be a cluster member"));
    }
    if dist_to_exemplar.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::invalid("distances to the exemplar must be nonnegative"));
    }
    let weights: Vec<f64> = dist_to_exemplar.iter().map(|&d| (-xi * d).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    Ok(ClusterPrototype {
        members,
        probs,
        exemplar,
    })
}

impl ClusterPrototype {
    /// Draws a member index (into the caller's model list) according to
    /// the mixture probabilities.
    pub fn pick_member<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.members[i];
            }
        }
        *self.members.last().expect("prototype has members")
    }

    /// Flattens the mixture into a single kernel set: the exact weighted
    /// union when it fits within `cap` kernels, otherwise `cap` kernels
    /// subsampled from the mixture.
    pub fn flatten<R: rand::Rng + ?Sized>(
        &self,
        models: &[ContactModel],
        cap: usize,
        rng: &mut R,
    ) -> Result<KernelSet> {
        if cap == 0 {
            return Err(Error::invalid("prototype kernel cap must be nonzero"));
        }
        let member_sets: Vec<&KernelSet> =
            self.members.iter().map(|&g| &models[g].kernels).collect();
        let bandwidth = member_sets
            .first()
            .map(|s| s.bandwidth.clone())
            .ok_or_else(|| Error::invalid("a cluster prototype needs members"))?;
        let total: usize = member_sets.iter().map(|s| s.len()).sum();
        let mut out = KernelSet::new(bandwidth);
        if total <= cap {
            for (set, &p) in member_sets.iter().zip(&self.probs) {
                for Kernel { center, weight } in &set.kernels {
                    out.push(center.clone(), p * weight)?;
                }
            }
        } else {
            for _ in 0..cap {
                let member = self.pick_member(rng);
                let set = &models[member].kernels;
                let j = set.pick_kernel(rng)?;
                out.push(set.kernels[j].center.clone(), 1.0)?;
            }
        }
        out.normalize()?;
        Ok(out)
    }
}

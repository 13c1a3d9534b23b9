//! Kernel density estimation over position x orientation x descriptor.
//!
//! A [`KernelSet`] is a weighted particle set: each kernel is a factored
//! product of a 3-variate position Gaussian, an antipodal von Mises-Fisher
//! orientation kernel, and a per-component descriptor Gaussian. Pose-only
//! sets use an empty descriptor block, which contributes a factor of 1
//! everywhere.

pub mod vmf;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
pub use vmf::{eval_vmf_pair, log_vmf_pair, sample_vmf, sample_vmf_pair};

/// Marginal weights below this are treated as a degenerate conditional.
const MARGINAL_FLOOR: f64 = 1e-300;

/// Per-block kernel bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Position standard deviation, metres.
    pub sigma_p: f64,
    /// Orientation concentration, dimensionless; larger is tighter.
    pub sigma_q: f64,
    /// Descriptor standard deviation per component; empty for pose-only sets.
    pub sigma_r: Vec<f64>,
}

impl Bandwidth {
    pub fn pose_only(sigma_p: f64, sigma_q: f64) -> Self {
        Bandwidth {
            sigma_p,
            sigma_q,
            sigma_r: Vec::new(),
        }
    }

    /// One descriptor standard deviation broadcast over `dim` components.
    pub fn isotropic(sigma_p: f64, sigma_q: f64, sigma_r: f64, dim: usize) -> Self {
        Bandwidth {
            sigma_p,
            sigma_q,
            sigma_r: vec![sigma_r; dim],
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.sigma_r.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_p > 0.0
            && self.sigma_p.is_finite()
            && self.sigma_q > 0.0
            && self.sigma_q.is_finite()
            && self.sigma_r.iter().all(|&s| s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("bandwidths must be positive and finite"))
        }
    }
}

/// A pose with an attached surface descriptor; the descriptor may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub descriptor: Vec<f64>,
}

impl Feature {
    pub fn new(pose: Pose, descriptor: Vec<f64>) -> Self {
        Feature { pose, descriptor }
    }

    pub fn pose_only(pose: Pose) -> Self {
        Feature {
            pose,
            descriptor: Vec::new(),
        }
    }
}

/// One weighted kernel of a [`KernelSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub center: Feature,
    pub weight: f64,
}

/// Weighted particle set with shared per-block bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub kernels: Vec<Kernel>,
    pub bandwidth: Bandwidth,
    /// True once weights have been scaled to sum to 1.
    #[serde(default)]
    pub normalized: bool,
}

/// Log-density of an isotropic Gaussian given the squared distance.
fn log_gauss(dist2: f64, dim: usize, sigma: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    -0.5 * dist2 / (sigma * sigma) - 0.5 * dim as f64 * (two_pi * sigma * sigma).ln()
}

/// Log-density of the per-component descriptor Gaussian.
fn log_gauss_descriptor(r: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..r.len() {
        let d = r[i] - mu[i];
        acc += log_gauss(d * d, 1, sigma[i]);
    }
    acc
}

/// Log of the factored kernel density at `x` centred on `mu`.
///
/// Callers must have checked that descriptor dimensions match the bandwidth.
pub fn log_kernel(x: &Feature, mu: &Feature, bw: &Bandwidth) -> f64 {
    let dp2 = (x.pose.p - mu.pose.p).norm_squared();
    log_gauss(dp2, 3, bw.sigma_p)
        + vmf::log_vmf_pair(&x.pose.q, &mu.pose.q, bw.sigma_q)
        + log_gauss_descriptor(&x.descriptor, &mu.descriptor, &bw.sigma_r)
}

/// Factored kernel density at `x` centred on `mu`: position Gaussian times
/// antipodal von Mises-Fisher times descriptor Gaussian.
pub fn eval_kernel(x: &Feature, mu: &Feature, bw: &Bandwidth) -> Result<f64> {
    bw.validate()?;
    let dim = bw.descriptor_dim();
    for (name, d) in [("point", x.descriptor.len()), ("centre", mu.descriptor.len())] {
        if d != dim {
            let _ = name;
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: d,
            });
        }
    }
    Ok(log_kernel(x, mu, bw).exp())
}

impl KernelSet {
    pub fn new(bandwidth: Bandwidth) -> Self {
        KernelSet {
            kernels: Vec::new(),
            bandwidth,
            normalized: false,
        }
    }

    pub fn from_weighted(bandwidth: Bandwidth, parts: Vec<(Feature, f64)>) -> Result<KernelSet> {
        let mut set = KernelSet::new(bandwidth);
        for (center, weight) in parts {
            set.push(center, weight)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, center: Feature, weight: f64) -> Result<()> {
        if center.descriptor.len() != self.bandwidth.descriptor_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.bandwidth.descriptor_dim(),
                got: center.descriptor.len(),
            });
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::invalid(format!("kernel weight {weight} invalid")));
        }
        self.kernels.push(Kernel { center, weight });
        self.normalized = false;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.bandwidth.descriptor_dim()
    }

    pub fn weight_sum(&self) -> f64 {
        self.kernels.iter().map(|k| k.weight).sum()
    }

    /// Scales weights to sum to 1. Errors when empty or all-zero.
    pub fn normalize(&mut self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let total = self.weight_sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!(
                "cannot normalize kernel weights with sum {total}"
            )));
        }
        for k in &mut self.kernels {
            k.weight /= total;
        }
        self.normalized = true;
        Ok(())
    }

    fn check_query(&self, descriptor_len: usize) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        if descriptor_len != self.bandwidth.descriptor_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.bandwidth.descriptor_dim(),
                got: descriptor_len,
            });
        }
        Ok(())
    }

    /// Weighted kernel sum at `x`.
    pub fn eval_pdf(&self, x: &Feature) -> Result<f64> {
        self.check_query(x.descriptor.len())?;
        debug_assert!(self.normalized, "eval_pdf expects a normalized set");
        Ok(self
            .kernels
            .iter()
            .map(|k| k.weight * log_kernel(x, &k.center, &self.bandwidth).exp())
            .sum())
    }

    /// Density of the descriptor block alone; pose blocks integrate out.
    pub fn marginal_descriptor(&self, r: &[f64]) -> Result<f64> {
        self.check_query(r.len())?;
        Ok(self
            .kernels
            .iter()
            .map(|k| {
                k.weight
                    * log_gauss_descriptor(r, &k.center.descriptor, &self.bandwidth.sigma_r).exp()
            })
            .sum())
    }

    /// Pose density conditioned on a descriptor value: pose centres kept,
    /// weights multiplied by each kernel's descriptor density at `r` and
    /// renormalized. The result is pose-only.
    pub fn conditional_pose(&self, r: &[f64]) -> Result<KernelSet> {
        self.check_query(r.len())?;
        let mut out = KernelSet::new(Bandwidth::pose_only(
            self.bandwidth.sigma_p,
            self.bandwidth.sigma_q,
        ));
        let mut total = 0.0;
        for k in &self.kernels {
            let w = k.weight
                * log_gauss_descriptor(r, &k.center.descriptor, &self.bandwidth.sigma_r).exp();
            total += w;
            out.kernels.push(Kernel {
                center: Feature::pose_only(k.center.pose),
                weight: w,
            });
        }
        if total < MARGINAL_FLOOR {
            return Err(Error::DegenerateConditional);
        }
        out.normalize()?;
        Ok(out)
    }

    /// Chooses a kernel index in proportion to the weights.
    pub fn pick_kernel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.kernels.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let total = if self.normalized {
            1.0
        } else {
            self.weight_sum()
        };
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, k) in self.kernels.iter().enumerate() {
            acc += k.weight;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(self.kernels.len() - 1)
    }

    /// Draws one feature: weight-proportional kernel choice, then Gaussian
    /// position noise, a von Mises-Fisher orientation draw, and Gaussian
    /// descriptor noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Feature> {
        let idx = self.pick_kernel(rng)?;
        Ok(self.sample_from(rng, idx))
    }

    /// Perturbs the center of kernel `idx` by the bandwidths.
    pub fn sample_from<R: Rng + ?Sized>(&self, rng: &mut R, idx: usize) -> Feature {
        let k = &self.kernels[idx];
        let p = k.center.pose.p
            + Vector3::new(
                self.bandwidth.sigma_p * rng.sample::<f64, _>(StandardNormal),
                self.bandwidth.sigma_p * rng.sample::<f64, _>(StandardNormal),
                self.bandwidth.sigma_p * rng.sample::<f64, _>(StandardNormal),
            );
        let q = vmf::sample_vmf_pair(rng, &k.center.pose.q, self.bandwidth.sigma_q);
        let descriptor = k
            .center
            .descriptor
            .iter()
            .zip(&self.bandwidth.sigma_r)
            .map(|(&mu, &s)| mu + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Feature {
            pose: Pose::new(p, q),
            descriptor,
        }
    }
}

/// Precomputed cumulative weights for repeated sampling from one set.
pub struct Sampler<'a> {
    set: &'a KernelSet,
    cdf: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(set: &'a KernelSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyKernelSet);
        }
        let mut cdf = Vec::with_capacity(set.len());
        let mut acc = 0.0;
        for k in &set.kernels {
            acc += k.weight;
            cdf.push(acc);
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::invalid(format!("weight sum {acc} not positive")));
        }
        Ok(Sampler { set, cdf })
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("non-empty");
        let u: f64 = rng.random::<f64>() * total;
        match self.cdf.binary_search_by(|probe| probe.total_cmp(&u)) {
            Ok(i) => (i + 1).min(self.cdf.len() - 1),
            Err(i) => i.min(self.cdf.len() - 1),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Feature {
        let idx = self.pick(rng);
        self.set.sample_from(rng, idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, uniform_quaternion};
    use nalgebra::UnitQuaternion;

    fn random_feature<R: Rng>(rng: &mut R, dim: usize) -> Feature {
        Feature::new(
            Pose::new(
                Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()),
                uniform_quaternion(rng),
            ),
            (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        )
    }

    fn random_set<R: Rng>(rng: &mut R, n: usize, dim: usize) -> KernelSet {
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, dim);
        let mut set = KernelSet::new(bw);
        for _ in 0..n {
            set.push(random_feature(rng, dim), 0.1 + rng.random::<f64>())
                .unwrap();
        }
        set.normalize().unwrap();
        set
    }

    /// Literal scalar formulas, independent of the library code paths.
    fn naive_kernel(x: &Feature, mu: &Feature, bw: &Bandwidth) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let dp2 = (x.pose.p - mu.pose.p).norm_squared();
        let pos = (two_pi * bw.sigma_p * bw.sigma_p).powf(-1.5)
            * (-dp2 / (2.0 * bw.sigma_p * bw.sigma_p)).exp();
        let dot = x.pose.q.coords.dot(&mu.pose.q.coords);
        let c4 = bw.sigma_q / (two_pi * two_pi * vmf::bessel_i1(bw.sigma_q));
        let ori = c4 * ((bw.sigma_q * dot).exp() + (-bw.sigma_q * dot).exp()) / 2.0;
        let mut des = 1.0;
        for i in 0..x.descriptor.len() {
            let d = x.descriptor[i] - mu.descriptor[i];
            let s = bw.sigma_r[i];
            des *= (two_pi * s * s).powf(-0.5) * (-d * d / (2.0 * s * s)).exp();
        }
        pos * ori * des
    }

    #[test]
    fn kernel_matches_naive_scalar_formula() {
        let mut r = substream(5, 0);
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 2);
        for _ in 0..50 {
            let x = random_feature(&mut r, 2);
            let mu = random_feature(&mut r, 2);
            let got = eval_kernel(&x, &mu, &bw).unwrap();
            let want = naive_kernel(&x, &mu, &bw);
            assert!((got - want).abs() <= 1e-12 * want.max(1e-30), "{got} vs {want}");
        }
    }

    #[test]
    fn kernel_peaks_at_center() {
        let mut r = substream(5, 1);
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 2);
        let mu = random_feature(&mut r, 2);
        let peak = eval_kernel(&mu, &mu, &bw).unwrap();
        for _ in 0..20 {
            let x = random_feature(&mut r, 2);
            assert!(eval_kernel(&x, &mu, &bw).unwrap() <= peak + 1e-12);
        }
    }

    #[test]
    fn kernel_dimension_mismatch_is_rejected() {
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 2);
        let a = Feature::pose_only(Pose::identity());
        let b = Feature::new(Pose::identity(), vec![0.0, 0.0]);
        assert!(matches!(
            eval_kernel(&a, &b, &bw),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pdf_matches_naive_double_loop() {
        let mut r = substream(5, 2);
        let set = random_set(&mut r, 30, 2);
        for _ in 0..20 {
            let x = random_feature(&mut r, 2);
            let got = set.eval_pdf(&x).unwrap();
            let want: f64 = set
                .kernels
                .iter()
                .map(|k| k.weight * naive_kernel(&x, &k.center, &set.bandwidth))
                .sum();
            assert!((got - want).abs() <= 1e-12 * want.max(1e-30));
        }
    }

    #[test]
    fn pdf_invariant_under_kernel_quaternion_flip() {
        let mut r = substream(5, 3);
        let mut set = random_set(&mut r, 10, 2);
        let x = random_feature(&mut r, 2);
        let before = set.eval_pdf(&x).unwrap();
        for k in &mut set.kernels {
            k.center.pose.q = UnitQuaternion::new_unchecked(-k.center.pose.q.into_inner());
        }
        let after = set.eval_pdf(&x).unwrap();
        assert!((before - after).abs() <= 1e-12 * before.max(1e-30));
    }

    #[test]
    fn marginal_ignores_poses() {
        let mut r = substream(5, 4);
        let mut set = random_set(&mut r, 15, 2);
        let q = vec![0.3, -0.7];
        let before = set.marginal_descriptor(&q).unwrap();
        for k in &mut set.kernels {
            k.center.pose = random_feature(&mut r, 0).pose;
        }
        let after = set.marginal_descriptor(&q).unwrap();
        assert_eq!(before, after);

        // One-kernel set reduces to a single descriptor Gaussian.
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 1);
        let mut one = KernelSet::new(bw.clone());
        one.push(Feature::new(Pose::identity(), vec![1.0]), 1.0)
            .unwrap();
        one.normalize().unwrap();
        let got = one.marginal_descriptor(&[1.4]).unwrap();
        let s = 0.5;
        let want = (2.0 * std::f64::consts::PI * s * s).powf(-0.5)
            * (-0.4f64.powi(2) / (2.0 * s * s)).exp();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn conditional_times_marginal_equals_joint() {
        let mut r = substream(5, 5);
        let set = random_set(&mut r, 20, 2);
        for _ in 0..100 {
            let x = random_feature(&mut r, 2);
            let joint = set.eval_pdf(&x).unwrap();
            let marginal = set.marginal_descriptor(&x.descriptor).unwrap();
            let cond = set.conditional_pose(&x.descriptor).unwrap();
            let cond_val = cond.eval_pdf(&Feature::pose_only(x.pose)).unwrap();
            let product = cond_val * marginal;
            assert!(
                (product - joint).abs() <= 1e-9 * joint.max(1e-30),
                "joint {joint}, product {product}"
            );
        }
    }

    #[test]
    fn conditional_weights_follow_descriptor_proximity() {
        // Query descriptor exactly on one kernel, others ten sigmas away.
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.1, 1);
        let mut set = KernelSet::new(bw);
        set.push(Feature::new(Pose::identity(), vec![0.0]), 0.5)
            .unwrap();
        set.push(
            Feature::new(Pose::from_translation(Vector3::x()), vec![1.0]),
            0.5,
        )
        .unwrap();
        set.normalize().unwrap();
        let cond = set.conditional_pose(&[0.0]).unwrap();
        assert!(cond.kernels[0].weight > 1.0 - 1e-9);

        // Shared descriptor leaves the weights unchanged.
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.1, 1);
        let mut same = KernelSet::new(bw);
        same.push(Feature::new(Pose::identity(), vec![0.5]), 0.3)
            .unwrap();
        same.push(
            Feature::new(Pose::from_translation(Vector3::x()), vec![0.5]),
            0.7,
        )
        .unwrap();
        same.normalize().unwrap();
        let cond = same.conditional_pose(&[0.2]).unwrap();
        assert!((cond.kernels[0].weight - 0.3).abs() < 1e-12);
        assert!((cond.kernels[1].weight - 0.7).abs() < 1e-12);
    }

    #[test]
    fn conditional_far_from_all_kernels_is_degenerate() {
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.01, 1);
        let mut set = KernelSet::new(bw);
        set.push(Feature::new(Pose::identity(), vec![0.0]), 1.0)
            .unwrap();
        set.normalize().unwrap();
        assert!(matches!(
            set.conditional_pose(&[1e6]),
            Err(Error::DegenerateConditional)
        ));
    }

    #[test]
    fn sampling_concentrates_on_centers_for_tiny_bandwidth() {
        let mut r = substream(5, 6);
        let bw = Bandwidth::isotropic(1e-12, 1e9, 1e-12, 1);
        let mut set = KernelSet::new(bw);
        let center = Feature::new(Pose::from_translation(Vector3::new(0.1, 0.2, 0.3)), vec![7.0]);
        set.push(center.clone(), 1.0).unwrap();
        set.normalize().unwrap();
        let s = set.sample(&mut r).unwrap();
        assert!((s.pose.p - center.pose.p).norm() < 1e-9);
        assert!((s.descriptor[0] - 7.0).abs() < 1e-9);
        assert!(crate::geometry::quat_dot(&s.pose.q, &center.pose.q).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn sample_mean_approaches_kernel_center() {
        let mut r = substream(5, 7);
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 1);
        let mut set = KernelSet::new(bw);
        let c = Vector3::new(0.4, -0.2, 0.9);
        set.push(Feature::new(Pose::from_translation(c), vec![0.0]), 1.0)
            .unwrap();
        set.normalize().unwrap();
        let n = 100_000;
        let mut mean = Vector3::zeros();
        for _ in 0..n {
            mean += set.sample(&mut r).unwrap().pose.p;
        }
        mean /= n as f64;
        // Three standard errors of the mean per axis.
        let tol = 3.0 * 0.05 / (n as f64).sqrt();
        for i in 0..3 {
            assert!((mean[i] - c[i]).abs() < tol, "axis {i}");
        }
    }

    #[test]
    fn kernel_pick_frequencies_match_weights() {
        let mut r = substream(5, 8);
        let bw = Bandwidth::isotropic(0.05, 2.0, 0.5, 0);
        let mut set = KernelSet::new(bw);
        let w = [0.6, 0.3, 0.1];
        for (i, &wi) in w.iter().enumerate() {
            set.push(
                Feature::pose_only(Pose::from_translation(Vector3::x() * i as f64)),
                wi,
            )
            .unwrap();
        }
        set.normalize().unwrap();
        let sampler = Sampler::new(&set).unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sampler.pick(&mut r)] += 1;
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - w[i]).abs() < 0.01, "kernel {i}: {freq} vs {}", w[i]);
        }
    }

    #[test]
    fn empty_set_operations_error() {
        let set = KernelSet::new(Bandwidth::pose_only(0.05, 2.0));
        assert!(matches!(
            set.eval_pdf(&Feature::pose_only(Pose::identity())),
            Err(Error::EmptyKernelSet)
        ));
        let mut empty = set.clone();
        assert!(empty.normalize().is_err());
        assert!(Sampler::new(&set).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_weights_bitwise() {
        let mut r = substream(5, 9);
        let set = random_set(&mut r, 8, 2);
        let text = serde_json::to_string(&set).unwrap();
        let back: KernelSet = serde_json::from_str(&text).unwrap();
        assert_eq!(set, back);
    }
}

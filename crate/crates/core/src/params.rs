//! Tunable parameters for learning, transfer, and optimization.
//!
//! Defaults are the hand-tuned values the pipeline was designed around;
//! every field can be overridden through a JSON config file or flags.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Receptive-field cutoff radius, metres.
    pub delta: f64,
    /// Receptive-field decay rate, 1/m^2.
    pub lambda: f64,

    /// Position kernel bandwidth, metres.
    pub sigma_p: f64,
    /// Orientation kernel concentration, dimensionless.
    pub sigma_q: f64,
    /// Curvature-descriptor bandwidth per component, 1/m.
    pub sigma_r: f64,

    /// Contact-selection threshold on normalized contact-model norms.
    pub eta: f64,
    /// Minimum surviving links per view, strict.
    pub zeta: usize,

    /// Prototype mixture spread.
    pub xi: f64,
    /// Linear term weight in the kernel distance, 1/m^2.
    pub w_lin: f64,
    /// Angular term weight in the kernel distance.
    pub w_ang: f64,
    /// Affinity-propagation damping factor.
    pub ap_damping: f64,
    /// Affinity-propagation iteration cap.
    pub ap_max_iter: usize,
    /// Kernel cap when a cluster prototype is flattened for evaluation.
    pub prototype_mc_samples: usize,

    /// Kernel count of the hand-configuration model.
    pub n_c: usize,
    /// Weight decay of the hand-configuration model, 1/rad^2.
    pub alpha: f64,
    /// Interpolation range of the hand-configuration model.
    pub beta: f64,
    /// Hand-configuration kernel bandwidth, radians.
    pub sigma_hc: f64,

    /// Kernels per query density.
    pub n_q: usize,
    /// Surface-mismatch weight decay in query formation.
    pub phi: f64,
    /// Neighbourhood radius for the mismatch divergence, in units of delta.
    pub rho_factor: f64,
    /// Retry budget when a sampled descriptor conditions to nothing.
    pub conditional_retries: usize,

    /// Seed grasps generated before annealing.
    pub h1: usize,
    /// Annealing steps.
    pub sa_steps: usize,
    /// Initial annealing temperature.
    pub t_start: f64,
    /// Final annealing temperature.
    pub t_end: f64,
    /// Steps (1-based) at which candidates are ranked and pruned.
    pub selection_steps: Vec<usize>,
    /// Fraction of candidates kept at each selection step.
    pub survivor_fraction: f64,
    /// Collision-expert sharpness, 1/m.
    pub kappa: f64,

    /// Neighbourhood size for normal and curvature estimation.
    pub k_nn: usize,

    /// Success check: contact tolerance, metres.
    pub contact_tol: f64,
    /// Success check: minimum angle spanned by contact normals, degrees.
    pub opposition_angle_deg: f64,
    /// Success check: maximum tolerated penetration, metres.
    pub max_penetration: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            delta: 0.01,
            lambda: 50.0,
            sigma_p: 0.005,
            sigma_q: 0.5,
            sigma_r: 10.0,
            eta: 0.2,
            zeta: 3,
            xi: 1.0,
            w_lin: 1.0,
            w_ang: 0.01,
            ap_damping: 0.9,
            ap_max_iter: 1000,
            prototype_mc_samples: 1000,
            n_c: 1000,
            alpha: 100.0,
            beta: 1.0,
            sigma_hc: 0.05,
            n_q: 5000,
            phi: 1.0,
            rho_factor: 2.0,
            conditional_retries: 32,
            h1: 50_000,
            sa_steps: 500,
            t_start: 0.05,
            t_end: 0.005,
            selection_steps: vec![1, 50],
            survivor_fraction: 0.1,
            kappa: 1000.0,
            k_nn: 25,
            contact_tol: 0.003,
            opposition_angle_deg: 120.0,
            max_penetration: 0.003,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("sigma_p", self.sigma_p),
            ("sigma_q", self.sigma_q),
            ("sigma_r", self.sigma_r),
            ("xi", self.xi),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sigma_hc", self.sigma_hc),
            ("phi", self.phi),
            ("rho_factor", self.rho_factor),
            ("t_start", self.t_start),
            ("t_end", self.t_end),
            ("kappa", self.kappa),
            ("contact_tol", self.contact_tol),
            ("max_penetration", self.max_penetration),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta must be nonnegative"));
        }
        if !(0.0 < self.survivor_fraction && self.survivor_fraction <= 1.0) {
            return Err(Error::invalid("survivor_fraction must lie in (0, 1]"));
        }
        if !(0.0 <= self.ap_damping && self.ap_damping < 1.0) {
            return Err(Error::invalid("ap_damping must lie in [0, 1)"));
        }
        if self.sa_steps == 0 || self.n_q == 0 || self.h1 == 0 || self.n_c == 0 {
            return Err(Error::invalid("iteration and kernel counts must be nonzero"));
        }
        if self.k_nn < 3 {
            return Err(Error::invalid("k_nn must be at least 3"));
        }
        if self
            .selection_steps
            .iter()
            .any(|&s| s == 0 || s > self.sa_steps)
        {
            return Err(Error::invalid(format!(
                "selection steps must lie in [1, {}]",
                self.sa_steps
            )));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Params> {
        let text = std::fs::read_to_string(path)?;
        let p: Params = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    /// Descriptor bandwidth for curvature features (2 components).
    pub fn feature_bandwidth(&self) -> crate::density::Bandwidth {
        crate::density::Bandwidth::isotropic(self.sigma_p, self.sigma_q, self.sigma_r, 2)
    }

    /// Neighbourhood radius used when restricting divergences to the
    /// surface patch around a transformed model.
    pub fn rho(&self) -> f64 {
        self.rho_factor * self.delta
    }
}

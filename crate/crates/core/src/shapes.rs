//! Convex-ish solid primitives with exact signed distance fields.
//!
//! Shapes approximate hand links and build synthetic scene objects. All
//! distances are Euclidean and exact per shape; composites take the union
//! (minimum) of their parts. Local shape frames put capsule, cylinder, and
//! tube axes along +z.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Pose;

/// Solid primitive in its local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Box {
        half_extents: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
    /// Segment from (0,0,-half_length) to (0,0,half_length) inflated by radius.
    Capsule {
        radius: f64,
        half_length: f64,
    },
    /// Capped solid cylinder along +z.
    Cylinder {
        radius: f64,
        half_length: f64,
    },
    /// Hollow capped cylinder: solid between the inner and outer radii.
    Tube {
        inner_radius: f64,
        outer_radius: f64,
        half_length: f64,
    },
    Composite {
        parts: Vec<PlacedShape>,
    },
}

/// A shape at a pose (in the parent frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub shape: Shape,
    #[serde(default)]
    pub pose: Pose,
}

/// Distance from a 2-D point to an axis-aligned rectangle, signed.
/// Used for solids of revolution via their (radial, z) cross-section.
fn sd_rect(u: f64, v: f64, c_u: f64, half_u: f64, half_v: f64) -> f64 {
    let du = (u - c_u).abs() - half_u;
    let dv = v.abs() - half_v;
    let outside = (du.max(0.0).powi(2) + dv.max(0.0).powi(2)).sqrt();
    outside + du.max(dv).min(0.0)
}

impl Shape {
    /// Exact signed distance in the local frame; negative inside.
    pub fn sdf_local(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Box { half_extents } => {
                let q = Vector3::new(
                    p.x.abs() - half_extents[0],
                    p.y.abs() - half_extents[1],
                    p.z.abs() - half_extents[2],
                );
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Capsule {
                radius,
                half_length,
            } => {
                let z = p.z.clamp(-half_length, *half_length);
                (p - Vector3::new(0.0, 0.0, z)).norm() - radius
            }
            Shape::Cylinder {
                radius,
                half_length,
            } => {
                // Capped cylinder: the axis is interior, not a wall, so the
                // radial coordinate is offset directly against the radius.
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let du = rho - radius;
                let dv = p.z.abs() - half_length;
                du.max(dv).min(0.0) + (du.max(0.0).powi(2) + dv.max(0.0).powi(2)).sqrt()
            }
            Shape::Tube {
                inner_radius,
                outer_radius,
                half_length,
            } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let mid = 0.5 * (inner_radius + outer_radius);
                let half_w = 0.5 * (outer_radius - inner_radius);
                sd_rect(rho, p.z, mid, half_w, *half_length)
            }
            Shape::Composite { parts } => parts
                .iter()
                .map(|part| part.sdf(p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Radius of a local-origin-centred ball containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Box { half_extents } => {
                Vector3::new(half_extents[0], half_extents[1], half_extents[2]).norm()
            }
            Shape::Sphere { radius } => *radius,
            Shape::Capsule {
                radius,
                half_length,
            } => half_length + radius,
            Shape::Cylinder {
                radius,
                half_length,
            }
            | Shape::Tube {
                outer_radius: radius,
                half_length,
                ..
            } => (radius * radius + half_length * half_length).sqrt(),
            Shape::Composite { parts } => parts
                .iter()
                .map(|part| part.pose.p.norm() + part.shape.bounding_radius())
                .fold(0.0, f64::max),
        }
    }

    /// Roughly evenly spaced points on the surface, in the local frame.
    /// Deterministic; density controlled by `spacing` (metres).
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        match self {
            Shape::Box { half_extents } => {
                let h = half_extents;
                // One grid per face, points at cell centres.
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let na = steps(2.0 * h[a], spacing);
                    let nb = steps(2.0 * h[b], spacing);
                    for side in [-1.0, 1.0] {
                        for ia in 0..na {
                            for ib in 0..nb {
                                let mut p = Vector3::zeros();
                                p[axis] = side * h[axis];
                                p[a] = grid(ia, na, h[a]);
                                p[b] = grid(ib, nb, h[b]);
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Sphere { radius } => {
                let n = sphere_count(*radius, spacing);
                fibonacci_sphere(&mut out, n, *radius, 0.0, -1.0, 1.0);
            }
            Shape::Capsule {
                radius,
                half_length,
            } => {
                side_rings(&mut out, *radius, *half_length, spacing);
                let n = sphere_count(*radius, spacing);
                fibonacci_sphere(&mut out, n, *radius, *half_length, 0.0, 1.0);
                fibonacci_sphere(&mut out, n, *radius, -half_length, -1.0, 0.0);
            }
            Shape::Cylinder {
                radius,
                half_length,
            } => {
                side_rings(&mut out, *radius, *half_length, spacing);
                for side in [-1.0, 1.0] {
                    disk(&mut out, 0.0, *radius, side * half_length, spacing);
                }
            }
            Shape::Tube {
                inner_radius,
                outer_radius,
                half_length,
            } => {
                side_rings(&mut out, *outer_radius, *half_length, spacing);
                side_rings(&mut out, *inner_radius, *half_length, spacing);
                for side in [-1.0, 1.0] {
                    disk(&mut out, *inner_radius, *outer_radius, side * half_length, spacing);
                }
            }
            Shape::Composite { parts } => {
                for part in parts {
                    for p in part.shape.surface_samples(spacing) {
                        out.push(part.pose.transform_point(&p));
                    }
                }
            }
        }
        out
    }
}

fn steps(extent: f64, spacing: f64) -> usize {
    ((extent / spacing).ceil() as usize).max(1)
}

fn grid(i: usize, n: usize, half: f64) -> f64 {
    -half + (i as f64 + 0.5) * 2.0 * half / n as f64
}

fn sphere_count(radius: f64, spacing: f64) -> usize {
    let area = 4.0 * std::f64::consts::PI * radius * radius;
    ((area / (spacing * spacing)).ceil() as usize).max(8)
}

/// Fibonacci-lattice points on a sphere of `radius` centred at (0,0,z0),
/// keeping latitudes with z-fraction in [z_min, z_max].
fn fibonacci_sphere(out: &mut Vec<Vector3<f64>>, n: usize, radius: f64, z0: f64, z_min: f64, z_max: f64) {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        if z < z_min || z > z_max {
            continue;
        }
        let rho = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        out.push(Vector3::new(
            radius * rho * phi.cos(),
            radius * rho * phi.sin(),
            radius * z + z0,
        ));
    }
}

/// Rings around the z axis covering a cylindrical side wall.
fn side_rings(out: &mut Vec<Vector3<f64>>, radius: f64, half_length: f64, spacing: f64) {
    let nz = steps(2.0 * half_length, spacing);
    let nt = steps(2.0 * std::f64::consts::PI * radius, spacing).max(3);
    for iz in 0..nz {
        let z = grid(iz, nz, half_length);
        for it in 0..nt {
            let t = 2.0 * std::f64::consts::PI * it as f64 / nt as f64;
            out.push(Vector3::new(radius * t.cos(), radius * t.sin(), z));
        }
    }
}

/// Concentric rings covering a flat annulus at height z.
fn disk(out: &mut Vec<Vector3<f64>>, r_in: f64, r_out: f64, z: f64, spacing: f64) {
    let nr = steps(r_out - r_in, spacing);
    for ir in 0..nr {
        let r = r_in + (ir as f64 + 0.5) * (r_out - r_in) / nr as f64;
        let nt = steps(2.0 * std::f64::consts::PI * r, spacing).max(3);
        for it in 0..nt {
            let t = 2.0 * std::f64::consts::PI * it as f64 / nt as f64;
            out.push(Vector3::new(r * t.cos(), r * t.sin(), z));
        }
    }
    if r_in == 0.0 {
        out.push(Vector3::new(0.0, 0.0, z));
    }
}

impl PlacedShape {
    pub fn new(shape: Shape, pose: Pose) -> Self {
        PlacedShape { shape, pose }
    }

    /// Signed distance in the parent frame; negative inside.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let local = self.pose.inverse().transform_point(p);
        self.shape.sdf_local(&local)
    }

    /// Unsigned distance to the surface (zero on it, positive elsewhere).
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.sdf(p).abs()
    }

    /// Outward surface normal near `p`, by central differences of the SDF.
    pub fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        gradient(|x| self.sdf(x), p)
    }

    /// Closest point on the surface from `p` (exact where the SDF gradient
    /// is defined; corner cases land within numerical-gradient error).
    pub fn closest_surface_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = self.sdf(p);
        p - self.normal(p) * d
    }

    /// Surface samples in the parent frame.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vector3<f64>> {
        self.shape
            .surface_samples(spacing)
            .iter()
            .map(|p| self.pose.transform_point(p))
            .collect()
    }

    pub fn bounding_radius(&self) -> f64 {
        self.shape.bounding_radius()
    }
}

fn gradient(f: impl Fn(&Vector3<f64>) -> f64, p: &Vector3<f64>) -> Vector3<f64> {
    let h = 1e-6;
    let mut g = Vector3::zeros();
    for i in 0..3 {
        let mut a = *p;
        let mut b = *p;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(&a) - f(&b)) / (2.0 * h);
    }
    let n = g.norm();
    if n > 1e-12 {
        g / n
    } else {
        Vector3::z()
    }
}

/// A collection of placed solids; the test-scene ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<PlacedShape>,
}

/// One ray-cast hit.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Scene {
    pub fn new(objects: Vec<PlacedShape>) -> Self {
        Scene { objects }
    }

    /// Union signed distance; negative inside any object.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        self.objects
            .iter()
            .map(|o| o.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward normal of the union surface near `p`.
    pub fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        gradient(|x| self.sdf(x), p)
    }

    /// First surface point along `origin + t dir`, by sphere tracing the
    /// exact SDF. `dir` need not be normalized on input.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<Hit> {
        let d = dir.normalize();
        let eps = 1e-7;
        let mut t = 0.0;
        for _ in 0..512 {
            let p = origin + d * t;
            let dist = self.sdf(&p);
            if dist < eps {
                return Some(Hit {
                    t,
                    point: p,
                    normal: self.normal(&p),
                });
            }
            t += dist;
            if t > t_max {
                return None;
            }
        }
        None
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn shapes_under_test() -> Vec<Shape> {
        vec![
            Shape::Box {
                half_extents: [0.05, 0.03, 0.02],
            },
            Shape::Sphere { radius: 0.04 },
            Shape::Capsule {
                radius: 0.01,
                half_length: 0.03,
            },
            Shape::Cylinder {
                radius: 0.03,
                half_length: 0.05,
            },
            Shape::Tube {
                inner_radius: 0.02,
                outer_radius: 0.03,
                half_length: 0.04,
            },
        ]
    }

    #[test]
    fn sdf_magnitude_matches_distance_to_surface_samples() {
        // Dense surface sampling bounds the true distance from both sides.
        let mut r = substream(7, 0);
        for shape in shapes_under_test() {
            let spacing = 0.002;
            let samples = shape.surface_samples(spacing);
            assert!(samples.len() > 50);
            for _ in 0..40 {
                let p = Vector3::new(
                    (r.random::<f64>() - 0.5) * 0.2,
                    (r.random::<f64>() - 0.5) * 0.2,
                    (r.random::<f64>() - 0.5) * 0.2,
                );
                let sampled: f64 = samples
                    .iter()
                    .map(|s| (s - p).norm())
                    .fold(f64::INFINITY, f64::min);
                let sdf = shape.sdf_local(&p).abs();
                assert!(
                    (sdf - sampled).abs() < 1.5 * spacing,
                    "{shape:?}: sdf {sdf}, sampled {sampled}"
                );
            }
        }
    }

    #[test]
    fn surface_samples_lie_on_the_surface() {
        for shape in shapes_under_test() {
            for p in shape.surface_samples(0.005) {
                let d = shape.sdf_local(&p).abs();
                assert!(d < 1e-9, "{shape:?}: residual {d}");
            }
        }
    }

    #[test]
    fn sphere_and_box_sdf_analytic_cases() {
        let s = Shape::Sphere { radius: 0.5 };
        assert!((s.sdf_local(&Vector3::new(2.0, 0.0, 0.0)) - 1.5).abs() < 1e-12);
        assert!((s.sdf_local(&Vector3::zeros()) + 0.5).abs() < 1e-12);

        let b = Shape::Box {
            half_extents: [1.0, 1.0, 1.0],
        };
        assert!((b.sdf_local(&Vector3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((b.sdf_local(&Vector3::new(2.0, 2.0, 2.0)) - 3.0f64.sqrt()).abs() < 1e-12);
        assert!((b.sdf_local(&Vector3::new(0.5, 0.0, 0.0)) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cylinder_axis_is_interior() {
        let c = Shape::Cylinder {
            radius: 0.03,
            half_length: 0.05,
        };
        assert!((c.sdf_local(&Vector3::zeros()) + 0.03).abs() < 1e-12);
        assert!((c.sdf_local(&Vector3::new(0.0, 0.0, 0.049)) + 0.001).abs() < 1e-12);
        assert!((c.sdf_local(&Vector3::new(0.05, 0.0, 0.0)) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn tube_has_a_hole() {
        let t = Shape::Tube {
            inner_radius: 0.02,
            outer_radius: 0.03,
            half_length: 0.05,
        };
        // On the axis, inside the hole: distance to the inner wall.
        assert!((t.sdf_local(&Vector3::zeros()) - 0.02).abs() < 1e-12);
        // Between the walls: inside the solid.
        assert!(t.sdf_local(&Vector3::new(0.025, 0.0, 0.0)) < 0.0);
    }

    #[test]
    fn placed_shape_respects_pose() {
        let placed = PlacedShape::new(
            Shape::Sphere { radius: 0.1 },
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        );
        assert!((placed.sdf(&Vector3::new(1.0, 0.0, 0.3)) - 0.2).abs() < 1e-12);
        let n = placed.normal(&Vector3::new(1.0, 0.0, 0.3));
        assert!((n - Vector3::z()).norm() < 1e-5);
        let c = placed.closest_surface_point(&Vector3::new(1.0, 0.0, 0.3));
        assert!((c - Vector3::new(1.0, 0.0, 0.1)).norm() < 1e-5);
    }

    #[test]
    fn raycast_hits_sphere_at_analytic_depth() {
        let scene = Scene::new(vec![PlacedShape::new(
            Shape::Sphere { radius: 0.25 },
            Pose::identity(),
        )]);
        let origin = Vector3::new(-2.0, 0.0, 0.0);
        let hit = scene.raycast(&origin, &Vector3::x(), 10.0).unwrap();
        assert!((hit.t - 1.75).abs() < 1e-5);
        assert!((hit.point - Vector3::new(-0.25, 0.0, 0.0)).norm() < 1e-5);
        assert!((hit.normal - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-5);
        assert!(scene
            .raycast(&origin, &Vector3::new(0.0, 1.0, 0.0), 10.0)
            .is_none());
    }

    #[test]
    fn composite_is_the_union_of_parts() {
        let comp = Shape::Composite {
            parts: vec![
                PlacedShape::new(
                    Shape::Sphere { radius: 0.1 },
                    Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)),
                ),
                PlacedShape::new(
                    Shape::Sphere { radius: 0.1 },
                    Pose::from_translation(Vector3::new(-0.5, 0.0, 0.0)),
                ),
            ],
        };
        assert!((comp.sdf_local(&Vector3::zeros()) - 0.4).abs() < 1e-12);
        assert!(comp.sdf_local(&Vector3::new(0.5, 0.0, 0.05)) < 0.0);
        assert!(comp.bounding_radius() >= 0.6);
    }

    #[test]
    fn rotated_cylinder_sdf_matches_axis_aligned() {
        let mut r = substream(7, 1);
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        let placed = PlacedShape::new(
            Shape::Cylinder {
                radius: 0.02,
                half_length: 0.05,
            },
            Pose::new(Vector3::zeros(), q),
        );
        let plain = Shape::Cylinder {
            radius: 0.02,
            half_length: 0.05,
        };
        for _ in 0..30 {
            let p = Vector3::new(
                (r.random::<f64>() - 0.5) * 0.2,
                (r.random::<f64>() - 0.5) * 0.2,
                (r.random::<f64>() - 0.5) * 0.2,
            );
            // Rotation about x maps (x, y, z) -> (x, -z, y) in local coords.
            let local = Vector3::new(p.x, p.z, -p.y);
            assert!((placed.sdf(&p) - plain.sdf_local(&local)).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_serde_round_trip() {
        let scene = Scene::new(vec![
            PlacedShape::new(
                Shape::Box {
                    half_extents: [0.05, 0.03, 0.02],
                },
                Pose::from_translation(Vector3::new(0.0, 0.0, 0.02)),
            ),
            PlacedShape::new(
                Shape::Composite {
                    parts: vec![PlacedShape::new(Shape::Sphere { radius: 0.01 }, Pose::identity())],
                },
                Pose::identity(),
            ),
        ]);
        let text = serde_json::to_string(&scene).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
    }
}

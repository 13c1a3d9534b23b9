//! Rigid-body poses and quaternion helpers.
//!
//! A [`Pose`] is a rotation followed by a translation. Composition and
//! inversion follow the homogeneous-matrix convention, so `a.compose(&b)`
//! applies `b` first and `a` second.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Rigid-body transform on SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Translation, metres.
    pub p: Vector3<f64>,
    /// Rotation. Unit norm is maintained by all constructors.
    pub q: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            p: Vector3::zeros(),
            q: UnitQuaternion::identity(),
        }
    }

    pub fn new(p: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Pose { p, q }
    }

    pub fn from_translation(p: Vector3<f64>) -> Self {
        Pose {
            p,
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds from arrays: position `[x, y, z]` and quaternion `[x, y, z, w]`.
    /// Quaternions already of unit norm are taken bit-for-bit so that
    /// serialization round-trips exactly; others are normalized.
    pub fn from_arrays(p: [f64; 3], q: [f64; 4]) -> Self {
        let raw = Quaternion::new(q[3], q[0], q[1], q[2]);
        let q = if (raw.norm_squared() - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(raw)
        } else {
            UnitQuaternion::from_quaternion(raw)
        };
        Pose {
            p: Vector3::new(p[0], p[1], p[2]),
            q,
        }
    }

    /// Position as `[x, y, z]`.
    pub fn p_array(&self) -> [f64; 3] {
        [self.p.x, self.p.y, self.p.z]
    }

    /// Quaternion as `[x, y, z, w]` (scalar last).
    pub fn q_array(&self) -> [f64; 4] {
        let c = self.q.coords;
        [c.x, c.y, c.z, c.w]
    }

    /// `self` applied after `other`: the result maps a point `x` to
    /// `self * (other * x)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            p: self.p + self.q * other.p,
            q: self.q * other.q,
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.inverse();
        Pose {
            p: -(qi * self.p),
            q: qi,
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.q * x + self.p
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Rotation angle in radians between the orientations, in `[0, pi]`.
    /// Insensitive to the quaternion double cover.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.q.angle_to(&other.q)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    p: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            p: self.p_array(),
            q: self.q_array(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        Ok(Pose::from_arrays(r.p, r.q))
    }
}

/// Pose of `s` expressed in the frame of `v`: the `u` with
/// `v.compose(&u) = s`.
pub fn relative_link_pose(v: &Pose, s: &Pose) -> Pose {
    v.inverse().compose(s)
}

/// Plain 4-vector dot product of two unit quaternions.
pub fn quat_dot(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.coords.dot(&b.coords)
}

/// Whether two quaternions denote the same rotation, up to the double cover.
pub fn same_rotation(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, tol: f64) -> bool {
    quat_dot(a, b).abs() >= 1.0 - tol
}

//! Principal-curvature frames and descriptors.
//!
//! Each oriented point gets a local quadric patch fitted over its
//! neighbourhood; the eigenstructure of the resulting shape operator
//! yields the two principal curvatures (descriptor) and directions
//! (completing the frame). Convex surfaces with outward normals carry
//! positive curvature, so a sphere of radius R reads (1/R, 1/R).

use nalgebra::{
    Cholesky, Matrix2, Matrix3, Matrix5, Rotation3, UnitQuaternion, Vector2, Vector3, Vector5,
};
use rayon::prelude::*;

use crate::density::{Bandwidth, Feature, KernelSet};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::spatial::KdTree;

use super::{ObjectViewModel, PointCloud};

const UMBILIC_TOL: f64 = 1e-8;

/// Builds the surface-feature density of a single view: one equally
/// weighted kernel per point, with pose (point, principal frame) and a
/// two-component curvature descriptor.
pub fn principal_curvature_features(
    cloud: &PointCloud,
    k_nn: usize,
    bandwidth: Bandwidth,
    view_id: impl Into<String>,
    grasp_id: impl Into<String>,
) -> Result<ObjectViewModel> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("curvature features need normals; estimate them first"))?;
    if cloud.len() < k_nn + 1 {
        return Err(Error::CloudTooSmall {
            got: cloud.len(),
            need: k_nn + 1,
        });
    }
    if bandwidth.descriptor_dim() != 2 {
        return Err(Error::invalid("surface features carry a 2d descriptor"));
    }
    cloud.validate()?;

    let tree = KdTree::build(&cloud.points);
    let centroid = cloud.centroid();

    let features: Vec<Feature> = cloud
        .points
        .par_iter()
        .zip(normals.par_iter())
        .map(|(p, n)| {
            let neighbours = tree.nearest_k(p, k_nn + 1);
            let local = fit_local_patch(&cloud.points, &neighbours, p, n);
            feature_from_patch(p, n, &local, &centroid)
        })
        .collect();

    let mut set = KernelSet::new(bandwidth);
    for f in features {
        set.push(f, 1.0)?;
    }
    set.normalize()?;
    Ok(ObjectViewModel {
        features: set,
        view_id: view_id.into(),
        grasp_id: grasp_id.into(),
    })
}

/// Curvatures of the fitted patch; `dir1` is the direction of the larger
/// curvature in the canonical tangent basis of the normal (see
/// [`tangent_basis`]).
struct LocalPatch {
    r1: f64,
    r2: f64,
    dir1: Vector2<f64>,
    umbilic: bool,
}

/// Least-squares quadric height field h(u,v) = a u + b v + c u^2 + d uv + e v^2
/// over the neighbourhood, expressed in an arbitrary tangent basis at `p`,
/// followed by the shape operator of the graph.
fn fit_local_patch(
    points: &[Vector3<f64>],
    neighbours: &[(usize, f64)],
    p: &Vector3<f64>,
    n: &Vector3<f64>,
) -> LocalPatch {
    let (e_u, e_v) = tangent_basis(n);
    // Normal equations of the 5-parameter fit, Jacobi-scaled so the
    // mixed linear/quadratic column magnitudes do not wreck conditioning.
    let mut m = Matrix5::zeros();
    let mut g = Vector5::zeros();
    for &(i, _) in neighbours {
        let d = points[i] - p;
        let (u, v) = (d.dot(&e_u), d.dot(&e_v));
        let row = Vector5::new(u, v, u * u, u * v, v * v);
        m += row * row.transpose();
        g += row * d.dot(n);
    }
    let scale = Vector5::from_fn(|j, _| {
        let s = m[(j, j)].sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    for i in 0..5 {
        for j in 0..5 {
            m[(i, j)] /= scale[i] * scale[j];
        }
        g[i] /= scale[i];
    }
    let coeff = match Cholesky::new(m) {
        Some(chol) => chol.solve(&g).component_div(&scale),
        None => return flat_patch(),
    };
    let (ca, cb, cc, cd, ce) = (coeff[0], coeff[1], coeff[2], coeff[3], coeff[4]);
    if !coeff.iter().all(|c| c.is_finite()) {
        return flat_patch();
    }

    let denom = (1.0 + ca * ca + cb * cb).sqrt();
    let first = Matrix2::new(1.0 + ca * ca, ca * cb, ca * cb, 1.0 + cb * cb);
    let second = Matrix2::new(2.0 * cc, cd, cd, 2.0 * ce) / denom;
    let shape = match first.try_inverse() {
        Some(inv) => inv * second,
        None => return flat_patch(),
    };

    // Real eigenvalues: the shape operator is self-adjoint in the first
    // fundamental form.
    let tr = shape[(0, 0)] + shape[(1, 1)];
    let det = shape[(0, 0)] * shape[(1, 1)] - shape[(0, 1)] * shape[(1, 0)];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = 0.5 * (tr - disc);

    // Curvature of a convex, outward-oriented patch must be positive:
    // negate the graph eigenvalues.
    let (big, small) = (-l2, -l1);
    let umbilic = (big - small).abs() < UMBILIC_TOL;
    let dir1 = if umbilic {
        Vector2::new(1.0, 0.0)
    } else {
        eigendirection(&shape, l2)
    };
    LocalPatch {
        r1: big,
        r2: small,
        dir1,
        umbilic,
    }
}

fn flat_patch() -> LocalPatch {
    LocalPatch {
        r1: 0.0,
        r2: 0.0,
        dir1: Vector2::new(1.0, 0.0),
        umbilic: true,
    }
}

fn eigendirection(shape: &Matrix2<f64>, lambda: f64) -> Vector2<f64> {
    // (S - lambda I) x = 0; pick the better-conditioned row.
    let a = Vector2::new(shape[(0, 1)], lambda - shape[(0, 0)]);
    let b = Vector2::new(lambda - shape[(1, 1)], shape[(1, 0)]);
    let v = if a.norm() >= b.norm() { a } else { b };
    if v.norm() < 1e-15 {
        Vector2::new(1.0, 0.0)
    } else {
        v.normalize()
    }
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e_u = (seed - n * seed.dot(n)).normalize();
    let e_v = n.cross(&e_u);
    (e_u, e_v)
}

fn feature_from_patch(
    p: &Vector3<f64>,
    n: &Vector3<f64>,
    patch: &LocalPatch,
    centroid: &Vector3<f64>,
) -> Feature {
    let (e_u, e_v) = tangent_basis(n);
    let mut k1 = if patch.umbilic {
        project_into_tangent(&Vector3::x(), n)
            .or_else(|| project_into_tangent(&Vector3::y(), n))
            .expect("a tangent plane cannot exclude both x and y")
    } else {
        let d = patch.dir1;
        (e_u * d.x + e_v * d.y).normalize()
    };
    // Deterministic sign: toward the cloud centroid, global axes as
    // tie-breakers.
    let toward = centroid - p;
    let mut key = k1.dot(&toward);
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        if key.abs() > 1e-12 {
            break;
        }
        key = k1.dot(&axis);
    }
    if key < 0.0 {
        k1 = -k1;
    }
    // Re-orthogonalize against the normal before building the frame.
    k1 = (k1 - n * k1.dot(n)).normalize();
    let k2 = n.cross(&k1);
    let rot = Matrix3::from_columns(&[k1, k2, *n]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    Feature::new(Pose::new(*p, q), vec![patch.r1, patch.r2])
}

fn project_into_tangent(axis: &Vector3<f64>, n: &Vector3<f64>) -> Option<Vector3<f64>> {
    let proj = axis - n * axis.dot(n);
    if proj.norm() < 1e-6 {
        None
    } else {
        Some(proj.normalize())
    }
}

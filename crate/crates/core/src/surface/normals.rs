//! Normal estimation for unorganized point clouds.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spatial::KdTree;

use super::PointCloud;

/// Estimates a unit normal per point from the covariance of its `k_nn`
/// nearest neighbours and orients each normal toward the sensor.
///
/// Points whose neighbourhood is degenerate (collinear or coincident,
/// covariance rank below 2) are dropped; the number of dropped points is
/// reported through a warning.
pub fn estimate_normals(cloud: &PointCloud, k_nn: usize) -> Result<PointCloud> {
    if k_nn < 3 {
        return Err(Error::invalid("normal estimation needs k_nn >= 3"));
    }
    if cloud.len() < k_nn + 1 {
        return Err(Error::CloudTooSmall {
            got: cloud.len(),
            need: k_nn + 1,
        });
    }
    cloud.validate()?;

    let tree = KdTree::build(&cloud.points);
    let per_point: Vec<Option<Vector3<f64>>> = cloud
        .points
        .par_iter()
        .map(|p| {
            let neighbours = tree.nearest_k(p, k_nn + 1);
            neighbourhood_normal(&cloud.points, &neighbours)
                .map(|n| orient_toward(n, &(cloud.sensor_viewpoint - p)))
        })
        .collect();

    let mut points = Vec::with_capacity(cloud.len());
    let mut normals = Vec::with_capacity(cloud.len());
    let mut dropped = 0usize;
    for (p, n) in cloud.points.iter().zip(&per_point) {
        match n {
            Some(n) => {
                points.push(*p);
                normals.push(*n);
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("normal estimation dropped {dropped} degenerate points");
    }

    Ok(PointCloud {
        points,
        normals: Some(normals),
        sensor_viewpoint: cloud.sensor_viewpoint,
    })
}

/// Smallest-eigenvalue direction of the neighbourhood covariance, or
/// `None` when the neighbourhood does not span a surface patch.
fn neighbourhood_normal(
    points: &[Vector3<f64>],
    neighbours: &[(usize, f64)],
) -> Option<Vector3<f64>> {
    let mean = neighbours
        .iter()
        .map(|&(i, _)| points[i])
        .sum::<Vector3<f64>>()
        / neighbours.len() as f64;
    let mut cov = Matrix3::zeros();
    for &(i, _) in neighbours {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // Ascending eigenvalue order by index.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (e1, e2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(e2 > 0.0) || e1 <= 1e-9 * e2 {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    Some(n.normalize())
}

fn orient_toward(n: Vector3<f64>, toward: &Vector3<f64>) -> Vector3<f64> {
    if n.dot(toward) < 0.0 {
        -n
    } else {
        n
    }
}

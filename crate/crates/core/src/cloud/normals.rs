use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2};
use rayon::prelude::*;

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};
use crate::Vec3;

pub const DEFAULT_NEIGHBOURS: usize = 20;

/// Eigenvalue ratio below which a neighbourhood counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Normals from the covariance of each point and its `k` nearest
/// neighbours: the eigenvector of the smallest eigenvalue, oriented toward
/// the sensor. Neighbourhoods with a rank-deficient covariance (collinear or
/// coincident points) get no normal. Planar clouds use a 2x2 covariance in
/// the `xy` plane.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::Precondition(format!("need k ≥ 3 neighbours, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::Precondition(format!(
            "need at least {} points for k = {k}, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let points = cloud.points();
    let tree = KdTree::build(points);
    let origin = cloud.sensor_origin();
    let planar = cloud.is_planar();
    let normals = points
        .par_iter()
        .map(|p| {
            let hood = tree.nearest(p, k + 1);
            let n = if planar {
                normal_2d(points, &hood)
            } else {
                normal_3d(points, &hood)
            }?;
            Some(if n.dot(&(origin - p)) < 0.0 { -n } else { n })
        })
        .collect();
    cloud.clone().with_normals(normals)
}

fn normal_3d(points: &[Vec3], hood: &[usize]) -> Option<Vec3> {
    let mean = hood.iter().map(|&i| points[i]).sum::<Vec3>() / hood.len() as f64;
    let cov = hood
        .iter()
        .map(|&i| {
            let d = points[i] - mean;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>();
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(max > 0.0) || !(mid > RANK_TOLERANCE * max) {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}

fn normal_2d(points: &[Vec3], hood: &[usize]) -> Option<Vec3> {
    let xy = |i: usize| Vector2::new(points[i].x, points[i].y);
    let mean = hood.iter().map(|&i| xy(i)).sum::<Vector2<f64>>() / hood.len() as f64;
    let cov = hood
        .iter()
        .map(|&i| {
            let d = xy(i) - mean;
            d * d.transpose()
        })
        .sum::<Matrix2<f64>>();
    let eig = SymmetricEigen::new(cov);
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    if !(eig.eigenvalues[hi] > 0.0) {
        return None;
    }
    let v = eig.eigenvectors.column(lo);
    Some(Vec3::new(v[0], v[1], 0.0).normalize())
}

//! Two-dimensional PCA projection of labeled embeddings.
//!
//! Points are centered and projected onto the two leading right singular
//! vectors of the centered data matrix. Each axis is signed so that its
//! largest-magnitude loading is positive, which makes output reproducible.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectionPoint>,
    /// Fewer than two directions carry variance.
    pub degenerate: bool,
    pub explained_variance: [f64; 2],
}

/// Relative singular-value floor below which a direction counts as empty.
const RANK_TOL: f64 = 1e-10;

/// `points` are `(label, alpha, vector)` triples.
pub fn export_projection(points: &[(String, f64, Vec<f64>)]) -> Result<Projection> {
    if points.len() < 2 {
        return Err(Error::precondition("projection needs at least two points"));
    }
    let d = points[0].2.len();
    if d < 2 {
        return Err(Error::precondition("projection needs dimension at least 2"));
    }
    if points.iter().any(|p| p.2.len() != d) {
        return Err(Error::precondition("mixed vector dimensions"));
    }
    if points.iter().any(|p| p.2.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteInput);
    }
    let n = points.len();
    let mut x = DMatrix::from_fn(n, d, |i, j| points[i].2[j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let top = svd.singular_values[order[0]];
    let mut axes: Vec<Vec<f64>> = Vec::new();
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let s = svd.singular_values[k];
        if top == 0.0 || s <= RANK_TOL * top {
            continue;
        }
        let mut axis: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, v)| v)
            .unwrap_or(0.0);
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        explained[slot] = s * s / (n - 1) as f64;
        axes.push(axis);
    }
    let degenerate = axes.len() < 2;
    let project = |i: usize, a: Option<&Vec<f64>>| {
        a.map_or(0.0, |a| x.row(i).iter().zip(a).map(|(p, q)| p * q).sum())
    };
    let out = points
        .iter()
        .enumerate()
        .map(|(i, (label, alpha, _))| ProjectionPoint {
            x: project(i, axes.first()),
            y: project(i, axes.get(1)),
            label: label.clone(),
            alpha: *alpha,
        })
        .collect();
    Ok(Projection {
        points: out,
        degenerate,
        explained_variance: explained,
    })
}

/// Writes `x,y,label,alpha` rows.
pub fn write_projection_csv(projection: &Projection, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &projection.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(vs: &[&[f64]]) -> Vec<(String, f64, Vec<f64>)> {
        vs.iter().enumerate().map(|(i, v)| (format!("l{}", i % 2), 0.5, v.to_vec())).collect()
    }

    fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }

    #[test]
    fn two_dimensional_input_is_isometric() {
        let input = pts(&[&[0.0, 0.0], &[3.0, 1.0], &[-1.0, 2.0], &[5.0, -4.0]]);
        let p = export_projection(&input).unwrap();
        assert!(!p.degenerate);
        for i in 0..input.len() {
            for j in 0..input.len() {
                let orig = dist((input[i].2[0], input[i].2[1]), (input[j].2[0], input[j].2[1]));
                let proj = dist((p.points[i].x, p.points[i].y), (p.points[j].x, p.points[j].y));
                assert!((orig - proj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_points_collapse_to_origin() {
        let p = export_projection(&pts(&[&[1.0, 2.0, 3.0][..]; 4])).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| q.x == 0.0 && q.y == 0.0));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p = export_projection(&pts(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]])).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| q.y == 0.0));
    }

    #[test]
    fn csv_header() {
        let p = export_projection(&pts(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("projection.csv");
        write_projection_csv(&p, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,label,alpha"));
        assert_eq!(text.lines().count(), 3);
    }
}

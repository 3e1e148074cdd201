//! Helpers shared by the integration tests.
#![allow(dead_code)]

use commaware_core::grid::Workspace;
use commaware_core::predict::CostGrid;
use commaware_core::Vec2;

/// Gaussian elimination with partial pivoting on a dense copy of `a`.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, bi)| {
        let mut r = row.clone();
        r.push(*bi);
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Least squares `min ‖A x − y‖` by Householder QR on a dense copy.
pub fn qr_least_squares(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let (m, cols) = (y.len(), a[0].len());
    let (mut a, mut y) = (a.to_vec(), y.to_vec());
    for c in 0..cols {
        let norm = (c..m).map(|i| a[i][c] * a[i][c]).sum::<f64>().sqrt();
        let alpha = if a[c][c] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (c..m).map(|i| a[i][c]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for k in c..cols {
            let f = 2.0 * (c..m).map(|i| v[i - c] * a[i][k]).sum::<f64>() / vv;
            for i in c..m {
                a[i][k] -= f * v[i - c];
            }
        }
        let f = 2.0 * (c..m).map(|i| v[i - c] * y[i]).sum::<f64>() / vv;
        for i in c..m {
            y[i] -= f * v[i - c];
        }
    }
    let mut x = vec![0.0; cols];
    for r in (0..cols).rev() {
        let s: f64 = (r + 1..cols).map(|k| a[r][k] * x[k]).sum();
        x[r] = (y[r] - s) / a[r][r];
    }
    x
}

/// Kriging posterior computed from scratch: Householder least squares on
/// `[1, -10 log10 d]`, then dense solves against `Φ`.
pub fn dense_posterior(
    pos: &[Vec2],
    y: &[f64],
    qb: Vec2,
    xi: f64,
    eta: f64,
    rho: f64,
    q: Vec2,
) -> (f64, f64) {
    let reg = |p: Vec2| [1.0, -10.0 * p.distance(qb).log10()];
    let design: Vec<Vec<f64>> = pos.iter().map(|p| reg(*p).to_vec()).collect();
    let theta = qr_least_squares(&design, y);
    let cov = |d: f64| xi * xi * (-d / eta).exp();
    let m = pos.len();
    let phi: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| cov(pos[i].distance(pos[j])) + if i == j { rho * rho } else { 0.0 }).collect())
        .collect();
    let resid: Vec<f64> = pos.iter().zip(y).map(|(p, yi)| {
        let h = reg(*p);
        yi - h[0] * theta[0] - h[1] * theta[1]
    }).collect();
    let psi: Vec<f64> = pos.iter().map(|p| cov(p.distance(q))).collect();
    let w = dense_solve(&phi, &resid);
    let v = dense_solve(&phi, &psi);
    let hq = reg(q);
    let mean = hq[0] * theta[0] + hq[1] * theta[1] + psi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let var = xi * xi + rho * rho - psi.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var.max(0.0))
}

/// `s = 0.3 + 0.001 x - 0.002 y` on the default workspace.
pub fn linear_cost_grid() -> CostGrid {
    CostGrid::from_fn(&Workspace::default(), 1.0, |q| 0.3 + 0.001 * q.x - 0.002 * q.y).unwrap()
}

pub fn flat_cost_grid(s: f64) -> CostGrid {
    CostGrid::from_fn(&Workspace::default(), 1.0, |_| s).unwrap()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

//! Kriging prediction of the channel from measurements and the derived
//! communication-cost field `s(q) = E[1/Υ(q)]`.
//!
//! The dB-domain channel at an unvisited `q` is Gaussian with
//!
//! ```text
//! mean(q)     = H_q θ̂ + Ψ(q)ᵀ Φ⁻¹ (Y − H_Q θ̂)
//! variance(q) = ξ̂² + ρ̂² − Ψ(q)ᵀ Φ⁻¹ Ψ(q)
//! ```
//!
//! with `H_q = [1, −10 log₁₀‖q − q_b‖]`, `Φ = Ω + ρ̂² I`,
//! `Ω_ij = ξ̂² exp(−‖q_i − q_j‖/η̂)` and `Ψ_i(q) = ξ̂² exp(−‖q − q_i‖/η̂)`.
//! For the lognormal linear-domain CNR this gives
//! `s = exp((ln10/10)² Σ/2) / 10^(mean/10)`.

use std::io::Write;

use faer::Mat;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::channel::{GroundTruthField, MeasurementSet, Workspace};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{Grid, GridGeometry};
use crate::linalg::Cholesky;

const DB_TO_NEPER_SQ: f64 = (std::f64::consts::LN_10 / 10.0) * (std::f64::consts::LN_10 / 10.0);

/// Least-squares path-loss estimate `[K̂_PL, n̂_PL]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossFit {
    pub k_pl: f64,
    pub n_pl: f64,
}

impl PathLossFit {
    /// `H_q θ̂`.
    pub fn mean_db(&self, q: Vec2, base_station: Vec2) -> f64 {
        self.k_pl + self.n_pl * log_regressor(q, base_station)
    }
}

/// Second regressor `−10 log₁₀‖q − q_b‖`.
fn log_regressor(q: Vec2, base_station: Vec2) -> f64 {
    -10.0 * q.distance(base_station).log10()
}

/// Ordinary least squares of the measured dB values on `[1, −10 log₁₀ d]`.
pub fn fit_path_loss(meas: &MeasurementSet, base_station: Vec2) -> Result<PathLossFit> {
    let m = meas.len();
    if m < 2 {
        return Err(Error::RankDeficient(format!("{m} measurement(s); need at least 2")));
    }
    let g: Vec<f64> = meas
        .positions()
        .iter()
        .map(|&q| {
            if q == base_station {
                Err(Error::AtBaseStation)
            } else {
                Ok(log_regressor(q, base_station))
            }
        })
        .collect::<Result<_>>()?;
    let y = meas.values_db();
    let g_mean = g.iter().sum::<f64>() / m as f64;
    let y_mean = y.iter().sum::<f64>() / m as f64;
    let sxx: f64 = g.iter().map(|gi| (gi - g_mean).powi(2)).sum();
    let sxy: f64 = g.iter().zip(y).map(|(gi, yi)| (gi - g_mean) * (yi - y_mean)).sum();
    let scale: f64 = g.iter().map(|gi| gi * gi).sum::<f64>().max(1.0);
    if !(sxx > 1e-12 * scale) {
        return Err(Error::RankDeficient(
            "all measurements lie at the same distance from the base station".into(),
        ));
    }
    let n_pl = sxy / sxx;
    Ok(PathLossFit {
        k_pl: y_mean - n_pl * g_mean,
        n_pl,
    })
}

/// Hyper-parameters of the kriging covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrigingParams {
    pub xi_db: f64,
    pub eta: f64,
    pub rho_db: f64,
}

impl KrigingParams {
    fn validate(&self) -> Result<()> {
        if !(self.xi_db >= 0.0 && self.xi_db.is_finite()) {
            return Err(Error::invalid("xi_hat", "must be finite and >= 0"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta_hat", "must be finite and > 0"));
        }
        if !(self.rho_db >= 0.0 && self.rho_db.is_finite()) {
            return Err(Error::invalid("rho_hat", "must be finite and >= 0"));
        }
        Ok(())
    }

    fn covariance(&self, d: f64) -> f64 {
        self.xi_db * self.xi_db * (-d / self.eta).exp()
    }

    pub fn prior_variance(&self) -> f64 {
        self.xi_db * self.xi_db + self.rho_db * self.rho_db
    }
}

/// Gaussian posterior of the dB channel given a measurement set.
#[derive(Clone, Debug)]
pub struct Predictor {
    measurements: MeasurementSet,
    base_station: Vec2,
    fit: PathLossFit,
    hyper: KrigingParams,
    phi: Cholesky,
    residual_weights: Vec<f64>,
    noise_floor_dbm: f64,
}

impl Predictor {
    pub fn build(meas: &MeasurementSet, base_station: Vec2, hyper: KrigingParams) -> Result<Self> {
        hyper.validate()?;
        let fit = fit_path_loss(meas, base_station)?;
        let pts = meas.positions();
        let m = pts.len();
        let nugget = hyper.rho_db * hyper.rho_db;
        let mut phi = Mat::<f64>::zeros(m, m);
        for j in 0..m {
            let col = phi.col_as_slice_mut(j);
            col[j] = hyper.covariance(0.0) + nugget;
            for i in j + 1..m {
                col[i] = hyper.covariance(pts[i].distance(pts[j]));
            }
        }
        let phi_full = {
            let mut full = phi.clone();
            for j in 0..m {
                for i in j + 1..m {
                    full[(j, i)] = full[(i, j)];
                }
            }
            full
        };
        let chol = Cholesky::factor(phi, "kriging matrix Φ")?;
        let residual: Vec<f64> = pts
            .iter()
            .zip(meas.values_db())
            .map(|(&q, y)| y - fit.mean_db(q, base_station))
            .collect();
        // one step of iterative refinement
        let mut w = chol.solve(&residual);
        let r: Vec<f64> = (0..m)
            .map(|i| residual[i] - (0..m).map(|j| phi_full[(i, j)] * w[j]).sum::<f64>())
            .collect();
        let dw = chol.solve(&r);
        for (wi, di) in w.iter_mut().zip(dw) {
            *wi += di;
        }
        Ok(Predictor {
            measurements: meas.clone(),
            base_station,
            fit,
            hyper,
            phi: chol,
            residual_weights: w,
            noise_floor_dbm: 0.0,
        })
    }

    /// Sets the receiver noise floor subtracted from the channel gain when
    /// forming the CNR for [`Predictor::expected_inv_cnr`].
    pub fn with_noise_floor(mut self, noise_floor_dbm: f64) -> Self {
        self.noise_floor_dbm = noise_floor_dbm;
        self
    }

    pub fn fit(&self) -> PathLossFit {
        self.fit
    }

    pub fn hyper(&self) -> KrigingParams {
        self.hyper
    }

    pub fn measurements(&self) -> &MeasurementSet {
        &self.measurements
    }

    pub fn base_station(&self) -> Vec2 {
        self.base_station
    }

    pub fn residual_weights(&self) -> &[f64] {
        &self.residual_weights
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        self.noise_floor_dbm
    }

    /// The assembled `Φ` matrix (dense, symmetric).
    pub fn phi(&self) -> Mat<f64> {
        let pts = self.measurements.positions();
        let nugget = self.hyper.rho_db * self.hyper.rho_db;
        Mat::from_fn(pts.len(), pts.len(), |i, j| {
            self.hyper.covariance(pts[i].distance(pts[j])) + if i == j { nugget } else { 0.0 }
        })
    }

    fn psi(&self, q: Vec2) -> Vec<f64> {
        self.measurements
            .positions()
            .iter()
            .map(|&qi| self.hyper.covariance(q.distance(qi)))
            .collect()
    }

    /// Posterior mean (dB) and variance (dB²) of the channel gain at `q`.
    pub fn posterior(&self, q: Vec2) -> Result<(f64, f64)> {
        if q == self.base_station {
            return Err(Error::AtBaseStation);
        }
        let psi = self.psi(q);
        let mean = self.fit.mean_db(q, self.base_station)
            + psi
                .iter()
                .zip(&self.residual_weights)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let var = self.hyper.prior_variance() - self.phi.inverse_quadratic_form(&psi);
        Ok((mean, var.max(0.0)))
    }

    /// `E[1/Υ(q)]` with the CNR taken relative to the noise floor.
    pub fn expected_inv_cnr(&self, q: Vec2) -> Result<f64> {
        let (mean, var) = self.posterior(q)?;
        Ok(expected_inv_cnr(mean - self.noise_floor_dbm, var))
    }

    /// Posterior at many points at once; `None` marks the base station.
    pub fn posterior_batch(&self, points: &[Vec2]) -> Vec<Option<(f64, f64)>> {
        const CHUNK: usize = 2048;
        let m = self.measurements.len();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let mut psi = Mat::<f64>::zeros(m, chunk.len());
            for (c, &q) in chunk.iter().enumerate() {
                let col = psi.col_as_slice_mut(c);
                for (slot, &qi) in col.iter_mut().zip(self.measurements.positions()) {
                    *slot = self.hyper.covariance(q.distance(qi));
                }
            }
            let means: Vec<f64> = (0..chunk.len())
                .map(|c| {
                    psi.col_as_slice(c)
                        .iter()
                        .zip(&self.residual_weights)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            self.phi.solve_lower_in_place(psi.as_mut());
            for (c, &q) in chunk.iter().enumerate() {
                if q == self.base_station {
                    out.push(None);
                    continue;
                }
                let quad: f64 = psi.col_as_slice(c).iter().map(|v| v * v).sum();
                let mean = self.fit.mean_db(q, self.base_station) + means[c];
                out.push(Some((mean, (self.hyper.prior_variance() - quad).max(0.0))));
            }
        }
        out
    }
}

/// Posterior-mean error against a realized field, over its grid nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub rmse_db: f64,
    pub mean_error_db: f64,
    pub max_abs_error_db: f64,
    /// Fraction of nodes whose true value lies within two posterior
    /// standard deviations of the mean.
    pub coverage_2sigma: f64,
    pub nodes: usize,
}

pub fn prediction_error(predictor: &Predictor, field: &GroundTruthField) -> PredictionError {
    let nodes: Vec<Vec2> = field.grid.geometry().nodes().collect();
    let post = predictor.posterior_batch(&nodes);
    let (mut sq, mut sum, mut max, mut covered, mut n) = (0.0, 0.0, 0.0f64, 0usize, 0usize);
    for (p, truth) in post.iter().zip(field.grid.values()) {
        if let Some((mean, var)) = p {
            let e = mean - truth;
            sq += e * e;
            sum += e;
            max = max.max(e.abs());
            covered += usize::from(e.abs() <= 2.0 * var.sqrt());
            n += 1;
        }
    }
    let nf = n.max(1) as f64;
    PredictionError {
        rmse_db: (sq / nf).sqrt(),
        mean_error_db: sum / nf,
        max_abs_error_db: max,
        coverage_2sigma: covered as f64 / nf,
        nodes: n,
    }
}

pub fn build_predictor(
    meas: &MeasurementSet,
    base_station: Vec2,
    xi_hat: f64,
    eta_hat: f64,
    rho_hat: f64,
) -> Result<Predictor> {
    Predictor::build(
        meas,
        base_station,
        KrigingParams {
            xi_db: xi_hat,
            eta: eta_hat,
            rho_db: rho_hat,
        },
    )
}

/// `E[1/Υ]` for a lognormal CNR with dB mean `mean_db` and dB variance
/// `variance`.
pub fn expected_inv_cnr(mean_db: f64, variance: f64) -> f64 {
    (DB_TO_NEPER_SQ * variance / 2.0).exp() * 10f64.powf(-mean_db / 10.0)
}

/// Precomputed `s` with its spatial gradient on a regular grid.
#[derive(Clone, Debug)]
pub struct CostGrid {
    s: Grid,
    ds_dx: Grid,
    ds_dy: Grid,
}

/// Value and gradient of `s` at a point; `clamped` is set when the query
/// was outside the grid and got projected onto it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostSample {
    pub s: f64,
    pub grad: Vec2,
    pub clamped: bool,
}

impl CostGrid {
    /// Wraps an `s` grid and derives the gradient grids by central
    /// differences.
    pub fn from_grid(s: Grid) -> Result<Self> {
        if let Some(bad) = s.values().iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "cost grid",
                format!("s must be positive and finite, found {bad}"),
            ));
        }
        let (ds_dx, ds_dy) = s.gradient();
        Ok(CostGrid { s, ds_dx, ds_dy })
    }

    /// Grid of `f` evaluated at the nodes. Useful for synthetic cost fields.
    pub fn from_fn(ws: &Workspace, resolution: f64, f: impl FnMut(Vec2) -> f64) -> Result<Self> {
        let g = GridGeometry::covering(ws, resolution)?;
        CostGrid::from_grid(Grid::from_fn(g, f)?)
    }

    pub fn s_grid(&self) -> &Grid {
        &self.s
    }

    pub fn gradient_grids(&self) -> (&Grid, &Grid) {
        (&self.ds_dx, &self.ds_dy)
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.s.geometry()
    }

    /// Bilinear interpolation of `s` and of each gradient component.
    pub fn s_and_grad(&self, q: Vec2) -> CostSample {
        let g = self.s.geometry();
        let inside = g.contains(q);
        let p = if inside {
            q
        } else {
            Vec2::new(q.x.clamp(g.x_min, g.x_max), q.y.clamp(g.y_min, g.y_max))
        };
        CostSample {
            s: self.s.bilinear(p),
            grad: Vec2::new(self.ds_dx.bilinear(p), self.ds_dy.bilinear(p)),
            clamped: !inside,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.s.write_csv(out)
    }
}

pub fn s_and_grad(grid: &CostGrid, q: Vec2) -> CostSample {
    grid.s_and_grad(q)
}

/// Evaluates `s` at every node of the lattice covering `ws`. A node that
/// coincides with the base station takes its nearest valid neighbour's value.
pub fn build_cost_grid(predictor: &Predictor, ws: &Workspace, resolution: f64) -> Result<CostGrid> {
    let geometry = GridGeometry::covering(ws, resolution)?;
    let nodes: Vec<Vec2> = geometry.nodes().collect();
    let noise = predictor.noise_floor_dbm();
    let mut values: Vec<Option<f64>> = predictor
        .posterior_batch(&nodes)
        .into_iter()
        .map(|p| p.map(|(mean, var)| expected_inv_cnr(mean - noise, var)))
        .collect();
    let missing: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_none()).collect();
    for i in missing {
        let (ix, iy) = (i % geometry.nx, i / geometry.nx);
        let neighbour = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]
            .iter()
            .filter_map(|(dx, dy)| {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                (jx >= 0 && jy >= 0 && (jx as usize) < geometry.nx && (jy as usize) < geometry.ny)
                    .then(|| values[geometry.index(jx as usize, jy as usize)])
                    .flatten()
            })
            .next();
        match neighbour {
            Some(v) => {
                debug!("cost grid node ({ix}, {iy}) sits on the base station; copied neighbour value {v:e}");
                values[i] = Some(v);
            }
            None => {
                warn!("cost grid node ({ix}, {iy}) has no valid neighbour");
                return Err(Error::AtBaseStation);
            }
        }
    }
    let values = values.into_iter().map(|v| v.expect("filled above")).collect();
    CostGrid::from_grid(Grid::new(geometry, values)?)
}

//! Synthetic ground-truth channel: log-distance path loss, spatially
//! correlated shadowing and i.i.d. multipath, all in dB, on a regular grid.
//! Measurements are bilinear reads of the realized field.

use std::io::{BufRead, Write};

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{parse_row, Grid, GridGeometry};
use crate::linalg::Cholesky;

pub use crate::grid::Workspace;

/// Default cap on grid nodes for dense covariance factorization.
pub const DEFAULT_NODE_CAP: usize = 40_000;

/// RNG stream used for field synthesis; measurements draw from their own.
const FIELD_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Path-loss intercept at 1 m (dB).
    pub k_pl: f64,
    /// Path-loss exponent.
    pub n_pl: f64,
    /// Shadowing standard deviation (dB).
    pub xi_db: f64,
    /// Shadowing decorrelation distance (m).
    pub eta: f64,
    /// Multipath standard deviation (dB).
    pub rho_db: f64,
    /// Receiver thermal noise (dBm).
    pub noise_floor_dbm: f64,
    /// Target bit error rate at the receiver.
    pub ber_threshold: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            k_pl: -41.34,
            n_pl: 3.86,
            xi_db: 3.20,
            eta: 3.09,
            rho_db: 1.64,
            noise_floor_dbm: -110.0,
            ber_threshold: 2e-6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.k_pl,
            self.n_pl,
            self.xi_db,
            self.eta,
            self.rho_db,
            self.noise_floor_dbm,
            self.ber_threshold,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("channel", "all parameters must be finite"));
        }
        if self.xi_db < 0.0 {
            return Err(Error::invalid("channel.xi_db", "must be >= 0"));
        }
        if self.rho_db < 0.0 {
            return Err(Error::invalid("channel.rho_db", "must be >= 0"));
        }
        if self.eta <= 0.0 {
            return Err(Error::invalid("channel.eta", "must be > 0"));
        }
        if self.n_pl <= 0.0 {
            return Err(Error::invalid("channel.n_pl", "must be > 0"));
        }
        if !(self.ber_threshold > 0.0 && self.ber_threshold < 0.2) {
            return Err(Error::invalid(
                "channel.ber_threshold",
                "must lie in (0, 0.2) for a positive MQAM constant",
            ));
        }
        Ok(())
    }

    /// MQAM constant `K = -1.5 / ln(5 · BER)`.
    pub fn mqam_constant(&self) -> f64 {
        -1.5 / (5.0 * self.ber_threshold).ln()
    }

    pub fn path_loss_db(&self, distance: f64) -> f64 {
        self.k_pl - 10.0 * self.n_pl * distance.log10()
    }
}

/// Realized channel (dB) over the workspace.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthField {
    pub grid: Grid,
    pub workspace: Workspace,
    pub params: ChannelParams,
    pub seed: u64,
}

impl GroundTruthField {
    pub fn resolution(&self) -> f64 {
        self.grid.geometry().resolution
    }

    /// Bilinear lookup in the dB domain.
    pub fn true_cnr(&self, q: Vec2) -> Result<f64> {
        if !self.workspace.contains(q) {
            return Err(Error::OutsideWorkspace { x: q.x, y: q.y });
        }
        Ok(self.grid.bilinear(q))
    }

    /// Deterministic path-loss value the synthesizer used at grid node `index`.
    pub fn path_loss_at_node(&self, index: usize) -> f64 {
        let g = self.grid.geometry();
        node_path_loss(&self.params, &self.workspace, g, g.node_at(index))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.grid.write_csv(out)
    }
}

/// Path loss at a grid node. The node that coincides with the base station
/// uses a distance of half a grid cell.
fn node_path_loss(params: &ChannelParams, ws: &Workspace, g: &GridGeometry, q: Vec2) -> f64 {
    let d = q.distance(ws.base_station).max(0.5 * g.resolution);
    params.path_loss_db(d)
}

/// Holds the Cholesky factor of the shadowing covariance for one grid so that
/// many seeds can be drawn without refactorizing.
#[derive(Clone, Debug)]
pub struct FieldSynthesizer {
    params: ChannelParams,
    workspace: Workspace,
    geometry: GridGeometry,
    shadow_factor: Option<Cholesky>,
}

impl FieldSynthesizer {
    pub fn new(params: ChannelParams, ws: Workspace, resolution: f64) -> Result<Self> {
        Self::with_node_cap(params, ws, resolution, DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(
        params: ChannelParams,
        ws: Workspace,
        resolution: f64,
        node_cap: usize,
    ) -> Result<Self> {
        params.validate()?;
        let geometry = GridGeometry::covering(&ws, resolution)?;
        let nodes = geometry.len();
        if nodes > node_cap {
            return Err(Error::GridTooLarge {
                nodes,
                cap: node_cap,
            });
        }
        let shadow_factor = if params.xi_db > 0.0 {
            let var = params.xi_db * params.xi_db;
            let jitter = 1e-10 * var;
            let pts: Vec<Vec2> = geometry.nodes().collect();
            let mut cov = Mat::<f64>::zeros(nodes, nodes);
            for j in 0..nodes {
                let col = cov.col_as_slice_mut(j);
                col[j] = var + jitter;
                for i in j + 1..nodes {
                    col[i] = var * (-pts[i].distance(pts[j]) / params.eta).exp();
                }
            }
            Some(Cholesky::factor(cov, "shadowing covariance")?)
        } else {
            None
        };
        Ok(FieldSynthesizer {
            params,
            workspace: ws,
            geometry,
            shadow_factor,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn draw(&self, seed: u64) -> GroundTruthField {
        let n = self.geometry.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(FIELD_STREAM);
        let shadow = match &self.shadow_factor {
            Some(l) => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                l.lower_mul(&z)
            }
            None => vec![0.0; n],
        };
        let rho = self.params.rho_db;
        let values = self
            .geometry
            .nodes()
            .zip(shadow)
            .map(|(q, sh)| {
                let multipath = if rho > 0.0 {
                    rho * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                node_path_loss(&self.params, &self.workspace, &self.geometry, q) + sh + multipath
            })
            .collect();
        GroundTruthField {
            grid: Grid::new(self.geometry, values).expect("geometry and values agree"),
            workspace: self.workspace,
            params: self.params,
            seed,
        }
    }
}

pub fn generate_field(
    params: ChannelParams,
    ws: Workspace,
    resolution: f64,
    seed: u64,
) -> Result<GroundTruthField> {
    Ok(FieldSynthesizer::new(params, ws, resolution)?.draw(seed))
}

pub fn true_cnr(field: &GroundTruthField, q: Vec2) -> Result<f64> {
    field.true_cnr(q)
}

/// CNR samples (dB) at known positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    positions: Vec<Vec2>,
    values_db: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(positions: Vec<Vec2>, values_db: Vec<f64>) -> Result<Self> {
        if positions.len() != values_db.len() {
            return Err(Error::invalid(
                "measurements",
                format!(
                    "{} positions but {} values",
                    positions.len(),
                    values_db.len()
                ),
            ));
        }
        if positions.is_empty() {
            return Err(Error::invalid("measurements", "need at least one sample"));
        }
        if !positions.iter().all(|p| p.is_finite()) || !values_db.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("measurements", "non-finite entry"));
        }
        Ok(MeasurementSet {
            positions,
            values_db,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn values_db(&self) -> &[f64] {
        &self.values_db
    }

    /// Appends `other`, keeping every existing sample.
    pub fn extend(&mut self, other: &MeasurementSet) {
        self.positions.extend_from_slice(&other.positions);
        self.values_db.extend_from_slice(&other.values_db);
    }

    /// Checks the workspace and base-station invariants.
    pub fn validate_in(&self, ws: &Workspace) -> Result<()> {
        for p in &self.positions {
            if !ws.contains(*p) {
                return Err(Error::OutsideWorkspace { x: p.x, y: p.y });
            }
            if *p == ws.base_station {
                return Err(Error::AtBaseStation);
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,cnr_db")?;
        for (p, v) in self.positions.iter().zip(&self.values_db) {
            writeln!(out, "{:?},{:?},{:?}", p.x, p.y, v)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "x,y,cnr_db" {
                    return Err(Error::Parse {
                        what: "measurement CSV",
                        line: 1,
                        reason: format!("unexpected header `{line}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line).map_err(|reason| Error::Parse {
                what: "measurement CSV",
                line: i + 1,
                reason,
            })?;
            if row.len() != 3 {
                return Err(Error::Parse {
                    what: "measurement CSV",
                    line: i + 1,
                    reason: format!("expected 3 columns, got {}", row.len()),
                });
            }
            positions.push(Vec2::new(row[0], row[1]));
            values.push(row[2]);
        }
        MeasurementSet::new(positions, values)
    }
}

/// Draws `n` positions uniformly over the workspace, rejecting points within
/// one grid cell of the base station, and reads the field there.
pub fn sample_measurements(field: &GroundTruthField, n: usize, seed: u64) -> Result<MeasurementSet> {
    sample_measurements_in(field, n, seed, None)
}

/// As [`sample_measurements`], optionally restricted to the disk
/// `(center, radius)` intersected with the workspace.
pub fn sample_measurements_in(
    field: &GroundTruthField,
    n: usize,
    seed: u64,
    disk: Option<(Vec2, f64)>,
) -> Result<MeasurementSet> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one measurement"));
    }
    let ws = field.workspace;
    let (lo, hi) = match disk {
        Some((c, r)) => {
            if !(r > 0.0) {
                return Err(Error::invalid("sampling radius", "must be positive"));
            }
            let lo = ws.clamp(Vec2::new(c.x - r, c.y - r));
            let hi = ws.clamp(Vec2::new(c.x + r, c.y + r));
            (lo, hi)
        }
        None => (
            Vec2::new(ws.x_min, ws.y_min),
            Vec2::new(ws.x_max, ws.y_max),
        ),
    };
    let exclusion = field.resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MEASUREMENT_STREAM);
    let mut positions = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while positions.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 10_000 {
            return Err(Error::invalid(
                "sampling region",
                "too few admissible positions (region empty or covered by the base-station exclusion)",
            ));
        }
        let q = Vec2::new(
            lo.x + (hi.x - lo.x) * rng.random::<f64>(),
            lo.y + (hi.y - lo.y) * rng.random::<f64>(),
        );
        if q.distance(ws.base_station) <= exclusion {
            continue;
        }
        if let Some((c, r)) = disk {
            if q.distance(c) > r {
                continue;
            }
        }
        values.push(field.true_cnr(q)?);
        positions.push(q);
    }
    MeasurementSet::new(positions, values)
}

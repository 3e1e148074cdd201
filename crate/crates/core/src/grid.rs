//! Regular lattices over the workspace with bilinear lookup, and the CSV grid
//! format shared by channel fields and cost grids.
//!
//! CSV layout: a header line `x_min,x_max,y_min,y_max,resolution`, a line
//! with those five values, then one line per grid row (increasing y) holding
//! the row's node values in increasing x.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Rectangular operating area with the base station position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub base_station: Vec2,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            x_min: 0.0,
            x_max: 50.0,
            y_min: 0.0,
            y_max: 50.0,
            base_station: Vec2::new(5.0, 5.0),
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid(
                "workspace",
                "bounds must be finite with x_min < x_max and y_min < y_max",
            ));
        }
        if !self.base_station.is_finite() {
            return Err(Error::invalid("workspace.base_station", "must be finite"));
        }
        Ok(())
    }

    pub fn contains(&self, q: Vec2) -> bool {
        q.x >= self.x_min && q.x <= self.x_max && q.y >= self.y_min && q.y <= self.y_max
    }

    pub fn clamp(&self, q: Vec2) -> Vec2 {
        Vec2::new(
            q.x.clamp(self.x_min, self.x_max),
            q.y.clamp(self.y_min, self.y_max),
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Node layout of a lattice anchored at the workspace's lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    /// Smallest lattice with spacing `resolution` whose nodes cover the
    /// workspace bounds.
    pub fn covering(ws: &Workspace, resolution: f64) -> Result<Self> {
        ws.validate()?;
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid("resolution", "must be positive and finite"));
        }
        let count = |span: f64| ((span / resolution - 1e-9).ceil().max(1.0)) as usize + 1;
        Ok(GridGeometry {
            x_min: ws.x_min,
            x_max: ws.x_max,
            y_min: ws.y_min,
            y_max: ws.y_max,
            resolution,
            nx: count(ws.width()),
            ny: count(ws.height()),
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.x_min + ix as f64 * self.resolution,
            self.y_min + iy as f64 * self.resolution,
        )
    }

    pub fn node_at(&self, index: usize) -> Vec2 {
        self.node(index % self.nx, index / self.nx)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.len()).map(move |i| self.node_at(i))
    }

    pub fn contains(&self, q: Vec2) -> bool {
        q.x >= self.x_min && q.x <= self.x_max && q.y >= self.y_min && q.y <= self.y_max
    }

    /// Lower-left cell index and fractional offsets of `q`.
    fn locate(&self, q: Vec2) -> (usize, usize, f64, f64) {
        let cell = |coord: f64, origin: f64, n: usize| {
            let f = (coord - origin) / self.resolution;
            let i = (f.floor().max(0.0) as usize).min(n - 2);
            (i, (f - i as f64).clamp(0.0, 1.0))
        };
        let (ix, tx) = cell(q.x, self.x_min, self.nx);
        let (iy, ty) = cell(q.y, self.y_min, self.ny);
        (ix, iy, tx, ty)
    }
}

/// Scalar values on a [`GridGeometry`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::invalid(
                "grid values",
                format!("expected {} values, got {}", geometry.len(), values.len()),
            ));
        }
        if geometry.nx < 2 || geometry.ny < 2 {
            return Err(Error::invalid("grid", "needs at least 2x2 nodes"));
        }
        Ok(Grid { geometry, values })
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(Vec2) -> f64) -> Result<Self> {
        let values = geometry.nodes().map(&mut f).collect();
        Grid::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.geometry.index(ix, iy)]
    }

    /// Bilinear interpolation of the four nodes surrounding `q`. Points
    /// outside the lattice extrapolate flat from the nearest cell edge.
    pub fn bilinear(&self, q: Vec2) -> f64 {
        let g = &self.geometry;
        let (ix, iy, tx, ty) = g.locate(q);
        let v00 = self.get(ix, iy);
        let v10 = self.get(ix + 1, iy);
        let v01 = self.get(ix, iy + 1);
        let v11 = self.get(ix + 1, iy + 1);
        (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11
    }

    /// Central differences in x and y, one-sided on the boundary.
    pub fn gradient(&self) -> (Grid, Grid) {
        let g = self.geometry;
        let h = g.resolution;
        let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * h);
        let mut gx = Vec::with_capacity(g.len());
        let mut gy = Vec::with_capacity(g.len());
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (l, r) = (ix.saturating_sub(1), (ix + 1).min(g.nx - 1));
                let (b, t) = (iy.saturating_sub(1), (iy + 1).min(g.ny - 1));
                gx.push(diff(self.get(l, iy), self.get(r, iy), r - l));
                gy.push(diff(self.get(ix, b), self.get(ix, t), t - b));
            }
        }
        (
            Grid { geometry: g, values: gx },
            Grid { geometry: g, values: gy },
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.geometry;
        writeln!(out, "x_min,x_max,y_min,y_max,resolution")?;
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?}",
            g.x_min, g.x_max, g.y_min, g.y_max, g.resolution
        )?;
        let mut line = String::new();
        for row in self.values.chunks(g.nx) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v:?}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            what: "grid CSV",
            line,
            reason,
        };
        let mut lines = input.lines();
        let mut next = |n: usize| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| parse_err(n, "unexpected end of file".into()))?
                .map_err(Error::from)
        };
        let header = next(1)?;
        if header.trim() != "x_min,x_max,y_min,y_max,resolution" {
            return Err(parse_err(1, format!("unexpected header `{header}`")));
        }
        let meta = parse_row(&next(2)?).map_err(|e| parse_err(2, e))?;
        if meta.len() != 5 {
            return Err(parse_err(2, format!("expected 5 values, got {}", meta.len())));
        }
        let ws = Workspace {
            x_min: meta[0],
            x_max: meta[1],
            y_min: meta[2],
            y_max: meta[3],
            base_station: Vec2::ZERO,
        };
        let geometry =
            GridGeometry::covering(&ws, meta[4]).map_err(|e| parse_err(2, e.to_string()))?;
        let mut values = Vec::with_capacity(geometry.len());
        for iy in 0..geometry.ny {
            let n = iy + 3;
            let row = parse_row(&next(n)?).map_err(|e| parse_err(n, e))?;
            if row.len() != geometry.nx {
                return Err(parse_err(
                    n,
                    format!("expected {} values, got {}", geometry.nx, row.len()),
                ));
            }
            values.extend(row);
        }
        Grid::new(geometry, values)
    }
}

pub(crate) fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.trim()
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| format!("`{tok}`: {e}"))
        })
        .collect()
}

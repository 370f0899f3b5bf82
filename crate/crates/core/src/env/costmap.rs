//! Bird's-eye cost grid.
//!
//! Text format: one row of whitespace-separated integer costs per line,
//! first data line is row 0 (lowest y). Lines starting with `#` are
//! comments, except `# resolution <metres>` which sets the cell size
//! (default 1.0). Cell `(col, row)` covers
//! `[col·res, (col+1)·res) × [row·res, (row+1)·res)`.

use serde::{Deserialize, Serialize};

use super::geometry::{OrientedRect, Vec2};
use crate::error::{NavqError, Result};

pub const COST_ROAD: u32 = 1;
pub const COST_SIDEWALK: u32 = 50;
pub const COST_OBSTACLE: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<u32>,
}

impl CostMap {
    pub fn new(width: usize, height: usize, resolution: f64, fill: u32) -> Result<Self> {
        if width == 0 || height == 0 || !(resolution > 0.0) {
            return Err(NavqError::Config("cost map needs positive size and resolution".into()));
        }
        Ok(CostMap { width, height, resolution, cells: vec![fill; width * height] })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn extent(&self) -> Vec2 {
        [self.width as f64 * self.resolution, self.height as f64 * self.resolution]
    }

    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, cost: u32) {
        self.cells[row * self.width + col] = cost;
    }

    /// Cost at a world point; outside the map counts as an obstacle.
    pub fn cost_at(&self, p: Vec2) -> u32 {
        if p[0] < 0.0 || p[1] < 0.0 {
            return COST_OBSTACLE;
        }
        let (c, r) = ((p[0] / self.resolution) as usize, (p[1] / self.resolution) as usize);
        if c >= self.width || r >= self.height {
            return COST_OBSTACLE;
        }
        self.get(c, r)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let e = self.extent();
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] < e[0] && p[1] < e[1]
    }

    /// Sets every cell whose centre lies in `[x0,x1) × [y0,y1)` to `cost`.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, cost: u32) {
        for r in 0..self.height {
            let y = (r as f64 + 0.5) * self.resolution;
            if y < y0 || y >= y1 {
                continue;
            }
            for c in 0..self.width {
                let x = (c as f64 + 0.5) * self.resolution;
                if x >= x0 && x < x1 {
                    self.set(c, r, cost);
                }
            }
        }
    }

    /// Marks cells overlapped by `rect` (sampled at half-cell spacing).
    pub fn stamp(&mut self, rect: &OrientedRect, cost: u32) {
        for p in footprint_samples(rect, self.resolution) {
            if self.contains(p) {
                let (c, r) = ((p[0] / self.resolution) as usize, (p[1] / self.resolution) as usize);
                let cell = &mut self.cells[r * self.width + c];
                *cell = (*cell).max(cost);
            }
        }
    }

    /// Car-state cost: the maximum cell cost under the footprint, i.e. 1 when
    /// fully on road, 50 when partly on the sidewalk, 100 when colliding.
    pub fn footprint_cost(&self, rect: &OrientedRect) -> u32 {
        footprint_samples(rect, self.resolution).map(|p| self.cost_at(p)).max().unwrap_or(COST_ROAD)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut resolution = 1.0;
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("resolution") {
                    resolution = it
                        .next()
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| NavqError::Input(format!("line {}: bad resolution directive", ln + 1)))?;
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|_| NavqError::Input(format!("line {}: bad cost {t:?}", ln + 1))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(NavqError::Input("cost map rows must be non-empty and of equal length".into()));
        }
        let mut map = CostMap::new(width, rows.len(), resolution, COST_ROAD)?;
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                map.set(c, r, *v);
            }
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# resolution {}\n", self.resolution);
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width).map(|c| self.get(c, r).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Grid of points covering `rect` at a spacing no coarser than half a cell.
pub fn footprint_samples(rect: &OrientedRect, resolution: f64) -> impl Iterator<Item = Vec2> + '_ {
    let spacing = (resolution / 2.0).min(0.5);
    let nl = (rect.length / spacing).ceil().max(1.0) as usize;
    let nw = (rect.width / spacing).ceil().max(1.0) as usize;
    (0..=nl).flat_map(move |i| {
        (0..=nw).map(move |j| {
            let lx = -rect.length / 2.0 + rect.length * i as f64 / nl as f64;
            let ly = -rect.width / 2.0 + rect.width * j as f64 / nw as f64;
            rect.world([lx, ly])
        })
    })
}

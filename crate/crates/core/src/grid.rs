//! Board discretization shared by the goal posterior, the guidance features and
//! the reward field, plus the text grid-dump format used for heatmaps.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::board::BoardConfig;
use crate::error::{Error, Result};

/// Regular `gx × gy` tiling of the board rectangle. Cells are indexed
/// row-major: `index = iy * gx + ix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalGrid {
    pub gx: usize,
    pub gy: usize,
    pub half_width: f64,
    pub half_height: f64,
}

impl GoalGrid {
    pub fn new(gx: usize, gy: usize, half_width: f64, half_height: f64) -> Result<Self> {
        if gx < 2 || gy < 2 {
            return Err(Error::InvalidConfig(format!("grid resolution must be at least 2x2, got {gx}x{gy}")));
        }
        if !(half_width > 0.0 && half_height > 0.0) {
            return Err(Error::InvalidConfig("grid bounds must be positive".into()));
        }
        Ok(Self {
            gx,
            gy,
            half_width,
            half_height,
        })
    }

    pub fn for_board(cfg: &BoardConfig, gx: usize, gy: usize) -> Result<Self> {
        Self::new(gx, gy, cfg.half_width, cfg.half_height)
    }

    pub fn len(&self) -> usize {
        self.gx * self.gy
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_width / self.gx as f64
    }

    pub fn cell_height(&self) -> f64 {
        2.0 * self.half_height / self.gy as f64
    }

    pub fn x_center(&self, ix: usize) -> f64 {
        -self.half_width + (ix as f64 + 0.5) * self.cell_width()
    }

    pub fn y_center(&self, iy: usize) -> f64 {
        -self.half_height + (iy as f64 + 0.5) * self.cell_height()
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.gx).map(|i| self.x_center(i)).collect()
    }

    pub fn y_centers(&self) -> Vec<f64> {
        (0..self.gy).map(|i| self.y_center(i)).collect()
    }

    pub fn center(&self, index: usize) -> [f64; 2] {
        [self.x_center(index % self.gx), self.y_center(index / self.gx)]
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.gx + ix
    }

    /// Bin of a coordinate along one axis, clamped to the grid. The flag is set
    /// when the coordinate lay outside the board.
    pub fn axis_bin(&self, axis: usize, value: f64) -> (usize, bool) {
        let (half, n) = if axis == 0 {
            (self.half_width, self.gx)
        } else {
            (self.half_height, self.gy)
        };
        let outside = !(value >= -half && value <= half);
        let t = ((value + half) / (2.0 * half) * n as f64).floor();
        let bin = if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(n - 1)
        };
        (bin, outside)
    }

    /// Cell containing `pos`, clamped to the nearest cell when off-board.
    pub fn cell_of(&self, pos: [f64; 2]) -> (usize, bool) {
        let (ix, ox) = self.axis_bin(0, pos[0]);
        let (iy, oy) = self.axis_bin(1, pos[1]);
        (self.index(ix, iy), ox || oy)
    }

    pub fn same_shape(&self, other: &GoalGrid) -> bool {
        self.gx == other.gx
            && self.gy == other.gy
            && self.half_width == other.half_width
            && self.half_height == other.half_height
    }
}

/// Normalized softmax of `values`, computed with the max shift.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// SHA-256 over the little-endian bytes of `values`, hex encoded. Two grid
/// payloads with the same checksum carry bit-identical values.
pub fn grid_checksum(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// A heatmap snapshot in the text grid-dump format:
///
/// ```text
/// # grid-dump v1
/// # kind=<kind> gx=<gx> gy=<gy> x_min=<..> x_max=<..> y_min=<..> y_max=<..> iteration=<k>
/// v(0,0),v(1,0),...,v(gx-1,0)
/// ...            one line per y row, bottom row first
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub kind: String,
    pub grid: GoalGrid,
    pub iteration: usize,
    pub values: Vec<f64>,
}

impl GridDump {
    pub fn new(kind: impl Into<String>, grid: GoalGrid, iteration: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.gx,
                grid.gy
            )));
        }
        Ok(Self {
            kind: kind.into(),
            grid,
            iteration,
            values,
        })
    }

    pub fn checksum(&self) -> String {
        grid_checksum(&self.values)
    }

    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = String::new();
        s.push_str("# grid-dump v1\n");
        let _ = writeln!(
            s,
            "# kind={} gx={} gy={} x_min={} x_max={} y_min={} y_max={} iteration={}",
            self.kind, g.gx, g.gy, -g.half_width, g.half_width, -g.half_height, g.half_height, self.iteration
        );
        for row in self.values.chunks(g.gx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic.trim() != "# grid-dump v1" {
            return Err(Error::Format("missing `# grid-dump v1` header".into()));
        }
        let header = lines.next().transpose()?.unwrap_or_default();
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("missing metadata line".into()))?;
        let mut kind = None;
        let (mut gx, mut gy, mut iteration) = (None, None, None);
        let (mut x_max, mut y_max) = (None, None);
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header token `{token}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{v}`")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Format(format!("bad integer `{v}`")));
            match key {
                "kind" => kind = Some(value.to_string()),
                "gx" => gx = Some(int(value)?),
                "gy" => gy = Some(int(value)?),
                "iteration" => iteration = Some(int(value)?),
                "x_max" => x_max = Some(num(value)?),
                "y_max" => y_max = Some(num(value)?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Format(format!("header lacks `{k}`"));
        let grid = GoalGrid::new(
            gx.ok_or_else(|| missing("gx"))?,
            gy.ok_or_else(|| missing("gy"))?,
            x_max.ok_or_else(|| missing("x_max"))?,
            y_max.ok_or_else(|| missing("y_max"))?,
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for cell in line.split(',') {
                values.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad value `{cell}`")))?,
                );
            }
        }
        Self::new(
            kind.ok_or_else(|| missing("kind"))?,
            grid,
            iteration.ok_or_else(|| missing("iteration"))?,
            values,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_tile_the_board() {
        let g = GoalGrid::new(4, 3, 0.25, 0.3).unwrap();
        assert!((g.x_center(0) + 0.1875).abs() < 1e-15);
        assert!((g.y_center(2) - 0.2).abs() < 1e-12);
        assert_eq!(g.cell_of([0.25, 0.3]).0, g.len() - 1);
        assert_eq!(g.cell_of([-0.25, -0.3]).0, 0);
        let (c, outside) = g.cell_of([1.0, 0.0]);
        assert!(outside);
        assert_eq!(c % g.gx, g.gx - 1);
        for i in 0..g.len() {
            assert_eq!(g.cell_of(g.center(i)).0, i);
        }
    }

    #[test]
    fn odd_grid_centers_a_cell_on_origin() {
        let g = GoalGrid::new(41, 41, 0.25, 0.25).unwrap();
        assert!(g.x_center(20).abs() < 1e-15);
        assert!(GoalGrid::new(1, 5, 0.25, 0.25).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let g = GoalGrid::new(3, 2, 0.25, 0.25).unwrap();
        let d = GridDump::new("reward", g, 4, vec![0.1, -2.0, 3.5, 1e-17, 0.0, 7.25]).unwrap();
        let parsed = GridDump::parse(d.to_text().as_bytes()).unwrap();
        assert_eq!(parsed, d);
        assert_eq!(parsed.checksum(), d.checksum());
        assert!(GridDump::new("reward", g, 0, vec![0.0; 5]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

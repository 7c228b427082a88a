//! The evolutionary reward field: goal density plus blended guidance features.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureField;
use crate::grid::{GoalGrid, GridDump};
use crate::smbi::{to_density, GoalField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Goal density plus all four features.
    #[default]
    Evl,
    /// Goal density only.
    BayesOnly,
    /// The agent does not learn from the field; it is still composed (as in
    /// `BayesOnly`) so runs log comparable snapshots.
    FixedExternal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Shape factor on the goal density.
    pub alpha: f64,
    /// Blend weights for spectral entropy, visit frequency, pace and reaction.
    pub beta: [f64; 4],
    /// Offset controlling the extent of the positive-reward region.
    pub eta: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 10_000.0,
            beta: [1_000.0, 10_000.0, 10_000.0, 10_000.0],
            eta: 10.0,
            mode: RewardMode::Evl,
        }
    }
}

impl RewardConfig {
    pub fn with_mode(mode: RewardMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if self.beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::InvalidConfig("beta weights must be non-negative".into()));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidConfig("eta must be finite".into()));
        }
        Ok(())
    }

    /// Blend weights actually applied: zero unless in EVL mode.
    pub fn effective_beta(&self) -> [f64; 4] {
        match self.mode {
            RewardMode::Evl => self.beta,
            RewardMode::BayesOnly | RewardMode::FixedExternal => [0.0; 4],
        }
    }

    /// Penalty added to the reward of a step that drops the ball off the board.
    pub fn fall_off_penalty(&self) -> f64 {
        -10.0 * self.eta
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewardField {
    pub grid: GoalGrid,
    pub values: Vec<f64>,
    pub iteration_index: usize,
    /// Hashes of the goal field and the feature fields it was composed from.
    pub provenance: Vec<String>,
    #[serde(skip)]
    clamped: AtomicU64,
}

impl Clone for RewardField {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            values: self.values.clone(),
            iteration_index: self.iteration_index,
            provenance: self.provenance.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for RewardField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values && self.iteration_index == other.iteration_index
    }
}

fn hash_values(tag: &str, values: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl RewardField {
    pub fn from_values(grid: GoalGrid, values: Vec<f64>, iteration_index: usize) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} cells", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("reward values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            iteration_index,
            provenance: Vec::new(),
            clamped: AtomicU64::new(0),
        })
    }

    /// A constant field.
    pub fn constant(grid: GoalGrid, value: f64) -> Self {
        Self::from_values(grid, vec![value; grid.len()], 0).expect("finite constant")
    }

    /// `peak · exp(-|p − center|² / (2 width²))` sampled at cell centers.
    pub fn gaussian_bump(grid: GoalGrid, center: [f64; 2], width: f64, peak: f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let c = grid.center(i);
                let d2 = (c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2);
                peak * (-d2 / (2.0 * width * width)).exp()
            })
            .collect();
        Self::from_values(grid, values, 0).expect("finite bump")
    }

    /// Number of `reward_at` queries that had to be clamped onto the board.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn max_abs_difference(&self, other: &RewardField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dump(&self) -> GridDump {
        GridDump::new("reward", self.grid, self.iteration_index, self.values.clone()).expect("shape checked")
    }

    /// Bilinear interpolation between cell centers. Positions between the
    /// outermost centers and the board edge take the edge row's value.
    pub fn reward_at(&self, pos: [f64; 2]) -> f64 {
        let g = &self.grid;
        let outside = !(pos[0].abs() <= g.half_width && pos[1].abs() <= g.half_height);
        if outside {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        let (ix, tx) = axis_coord(pos[0], g.half_width, g.gx);
        let (iy, ty) = axis_coord(pos[1], g.half_height, g.gy);
        let v = |i: usize, j: usize| self.values[g.index(i, j)];
        let bottom = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let top = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        bottom * (1.0 - ty) + top * ty
    }
}

/// Lower neighbour index and interpolation weight along one axis.
fn axis_coord(value: f64, half: f64, n: usize) -> (usize, f64) {
    let width = 2.0 * half / n as f64;
    let u = ((value + half) / width - 0.5).clamp(0.0, (n - 1) as f64);
    let u = if u.is_nan() { 0.0 } else { u };
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

pub fn reward_at(field: &RewardField, pos: [f64; 2]) -> f64 {
    field.reward_at(pos)
}

/// `V = α·density − η + Σ β_m·H_m` over the grid.
pub fn compose(goal: &GoalField, features: &[FeatureField; 4], cfg: &RewardConfig) -> Result<RewardField> {
    cfg.validate()?;
    for f in features {
        if !f.grid.same_shape(&goal.grid) || f.joint.len() != goal.grid.len() {
            return Err(Error::GridMismatch(format!(
                "feature `{}` is not on the goal grid",
                f.kind.as_str()
            )));
        }
    }
    let density = to_density(goal);
    let beta = cfg.effective_beta();
    let mut values: Vec<f64> = density.iter().map(|d| cfg.alpha * d - cfg.eta).collect();
    if cfg.mode == RewardMode::Evl {
        for (f, b) in features.iter().zip(beta) {
            for (v, h) in values.iter_mut().zip(&f.joint) {
                *v += b * h;
            }
        }
    }
    let mut field = RewardField::from_values(goal.grid, values, goal.iteration_index)?;
    field.provenance.push(hash_values("goal", &goal.mean));
    for f in features {
        field.provenance.push(hash_values(f.kind.as_str(), &f.joint));
    }
    Ok(field)
}

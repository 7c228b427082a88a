//! Goal-specificity guidance features extracted from the motion history.
//!
//! Each feature is a pair of per-axis distributions over the grid bins of the
//! ball coordinates; their outer product is the joint distribution over cells
//! that the reward consumes.
//!
//! * spectral entropy: windowed spectral entropy of each coordinate signal,
//!   deposited on the bins visited inside the window;
//! * visit frequency: uniform-kernel density of visited coordinates;
//! * pace: first differences, with slow steps weighted up where they occur;
//! * reaction: second differences, with calm steps weighted up where they occur.
//!
//! Older iterations are discounted geometrically and only the most recent
//! `window` iterations contribute.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::board::Trajectory;
use crate::error::{Error, Result};
use crate::grid::GoalGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    SpectralEntropy,
    VisitFrequency,
    Pace,
    Reaction,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::SpectralEntropy,
        FeatureKind::VisitFrequency,
        FeatureKind::Pace,
        FeatureKind::Reaction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::SpectralEntropy => "spectral_entropy",
            FeatureKind::VisitFrequency => "visit_frequency",
            FeatureKind::Pace => "pace",
            FeatureKind::Reaction => "reaction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Number of most recent iterations used.
    pub window: usize,
    pub recency_discount: f64,
    /// Half-width of the uniform visit kernel, in bins.
    pub kernel_radius_bins: usize,
    pub entropy_window: usize,
    pub entropy_stride: usize,
    /// Sample time τ used to scale differences.
    pub sample_time: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: 10,
            recency_discount: 0.9,
            kernel_radius_bins: 0,
            entropy_window: 64,
            entropy_stride: 32,
            sample_time: 0.05,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.entropy_window < 2 || self.entropy_stride == 0 {
            return Err(Error::InvalidConfig("feature windows must be positive".into()));
        }
        if !(self.recency_discount > 0.0 && self.recency_discount <= 1.0) {
            return Err(Error::InvalidConfig("recency_discount must lie in (0, 1]".into()));
        }
        if !(self.sample_time > 0.0) {
            return Err(Error::InvalidConfig("sample_time must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Trajectories grouped by the training iteration that produced them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    entries: Vec<HistoryEntry>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a trajectory. Iterations must not go backwards; several
    /// trajectories may share one iteration.
    pub fn push(&mut self, iteration: usize, traj: Trajectory) -> Result<()> {
        match self.entries.last_mut() {
            Some(last) if last.iteration == iteration => last.trajectories.push(traj),
            Some(last) if last.iteration > iteration => {
                return Err(Error::InvalidConfig(format!(
                    "history iteration {iteration} precedes {}",
                    last.iteration
                )))
            }
            _ => self.entries.push(HistoryEntry {
                iteration,
                trajectories: vec![traj],
            }),
        }
        Ok(())
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trajectory_count(&self) -> usize {
        self.entries.iter().map(|e| e.trajectories.len()).sum()
    }

    /// Drops all but the newest `keep` iterations.
    pub fn truncate_front(&mut self, keep: usize) {
        if self.entries.len() > keep {
            self.entries.drain(..self.entries.len() - keep);
        }
    }

    /// Trajectories inside the window with their recency weights.
    pub fn weighted(&self, cfg: &FeatureConfig) -> Vec<(f64, &Trajectory)> {
        let Some(newest) = self.entries.last().map(|e| e.iteration) else {
            return Vec::new();
        };
        let start = self.entries.len().saturating_sub(cfg.window);
        self.entries[start..]
            .iter()
            .flat_map(|e| {
                let w = cfg.recency_discount.powi((newest - e.iteration) as i32);
                e.trajectories.iter().map(move |t| (w, t))
            })
            .collect()
    }
}

/// Weighted histogram of a scalar statistic (a derivative value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHistogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
}

impl ValueHistogram {
    fn build(samples: &[(f64, f64)], bins: usize) -> Option<Self> {
        let total: f64 = samples.iter().map(|s| s.1).sum();
        if samples.is_empty() || !(total > 0.0) {
            return None;
        }
        let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let span_tol = 1e-9 * lo.abs().max(hi.abs()).max(1e-12);
        if hi - lo <= span_tol {
            let mean = samples.iter().map(|s| s.0 * s.1).sum::<f64>() / total;
            return Some(Self {
                lo: mean,
                hi: mean,
                masses: vec![1.0],
            });
        }
        let mut masses = vec![0.0; bins];
        for &(v, w) in samples {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            masses[k.min(bins - 1)] += w / total;
        }
        Some(Self { lo, hi, masses })
    }

    pub fn center(&self, bin: usize) -> f64 {
        if self.masses.len() == 1 {
            return 0.5 * (self.lo + self.hi);
        }
        self.lo + (bin as f64 + 0.5) * (self.hi - self.lo) / self.masses.len() as f64
    }

    /// Center of the heaviest bin.
    pub fn mode(&self) -> f64 {
        self.center(crate::grid::argmax(&self.masses))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureField {
    pub kind: FeatureKind,
    pub grid: GoalGrid,
    /// Distribution over x bins and over y bins.
    pub per_axis: [Vec<f64>; 2],
    /// Row-major product of the per-axis distributions.
    pub joint: Vec<f64>,
    pub window: usize,
    pub bin_count: [usize; 2],
    /// Distribution of the raw derivative values (pace and reaction only).
    pub value_histograms: Option<[ValueHistogram; 2]>,
}

impl FeatureField {
    fn assemble(
        kind: FeatureKind,
        grid: &GoalGrid,
        cfg: &FeatureConfig,
        deposits: [Vec<f64>; 2],
        value_histograms: Option<[ValueHistogram; 2]>,
    ) -> Self {
        let per_axis = deposits.map(normalize_or_uniform);
        let mut joint = Vec::with_capacity(grid.len());
        for py in &per_axis[1] {
            for px in &per_axis[0] {
                joint.push(px * py);
            }
        }
        let joint = normalize_or_uniform(joint);
        Self {
            kind,
            grid: *grid,
            per_axis,
            joint,
            window: cfg.window,
            bin_count: [grid.gx, grid.gy],
            value_histograms,
        }
    }

    pub fn uniform(kind: FeatureKind, grid: &GoalGrid, cfg: &FeatureConfig) -> Self {
        Self::assemble(kind, grid, cfg, [vec![0.0; grid.gx], vec![0.0; grid.gy]], None)
    }
}

fn normalize_or_uniform(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
    v
}

fn axis_signal(traj: &Trajectory, axis: usize) -> Vec<f64> {
    traj.records.iter().map(|r| r.state.ball_pos[axis]).collect()
}

fn check_inputs(history: &History, cfg: &FeatureConfig) -> Result<()> {
    cfg.validate()?;
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    Ok(())
}

/// Spectral entropy in bits of one window, DC and Nyquist bins excluded.
/// A window with no power outside DC has entropy 0.
pub fn window_spectral_entropy(fft: &dyn Fft<f64>, window: &[f64]) -> f64 {
    let n = window.len();
    let mut buf: Vec<Complex<f64>> = window.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    let power: Vec<f64> = buf[1..=(n - 1) / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    let energy: f64 = window.iter().map(|x| x * x).sum::<f64>() * n as f64;
    if !(total > 1e-24 * energy) || total <= f64::MIN_POSITIVE {
        return 0.0;
    }
    power
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| {
            let q = p / total;
            -q * q.log2()
        })
        .sum()
}

struct FftCache {
    planner: FftPlanner<f64>,
}

impl FftCache {
    fn get(&mut self, len: usize) -> Arc<dyn Fft<f64>> {
        self.planner.plan_fft_forward(len)
    }
}

pub fn spectral_entropy(history: &History, grid: &GoalGrid, cfg: &FeatureConfig) -> Result<FeatureField> {
    check_inputs(history, cfg)?;
    let mut ffts = FftCache {
        planner: FftPlanner::new(),
    };
    let mut deposits = [vec![0.0; grid.gx], vec![0.0; grid.gy]];
    for (weight, traj) in history.weighted(cfg) {
        let len = traj.len();
        if len < 8 {
            continue;
        }
        let (win, stride) = if cfg.entropy_window > len {
            (len, len)
        } else {
            (cfg.entropy_window, cfg.entropy_stride)
        };
        let fft = ffts.get(win);
        for (axis, deposit) in deposits.iter_mut().enumerate() {
            let signal = axis_signal(traj, axis);
            let mut start = 0;
            while start + win <= len {
                let window = &signal[start..start + win];
                let h = window_spectral_entropy(fft.as_ref(), window);
                if h > 0.0 {
                    let share = weight * h / win as f64;
                    for &v in window {
                        deposit[grid.axis_bin(axis, v).0] += share;
                    }
                }
                start += stride;
            }
        }
    }
    Ok(FeatureField::assemble(FeatureKind::SpectralEntropy, grid, cfg, deposits, None))
}

pub fn visit_frequency(history: &History, grid: &GoalGrid, cfg: &FeatureConfig) -> Result<FeatureField> {
    check_inputs(history, cfg)?;
    let mut deposits = [vec![0.0; grid.gx], vec![0.0; grid.gy]];
    let r = cfg.kernel_radius_bins;
    for (weight, traj) in history.weighted(cfg) {
        for rec in &traj.records {
            for (axis, deposit) in deposits.iter_mut().enumerate() {
                let bins = deposit.len();
                let (b, _) = grid.axis_bin(axis, rec.state.ball_pos[axis]);
                let lo = b.saturating_sub(r);
                let hi = (b + r).min(bins - 1);
                let share = weight / (hi - lo + 1) as f64;
                deposit[lo..=hi].iter_mut().for_each(|d| *d += share);
            }
        }
    }
    Ok(FeatureField::assemble(FeatureKind::VisitFrequency, grid, cfg, deposits, None))
}

/// `(weight, value, position)` samples of a finite-difference statistic.
type DiffSamples = Vec<(f64, f64, f64)>;

fn difference_samples(history: &History, cfg: &FeatureConfig, order: usize) -> [DiffSamples; 2] {
    let tau = cfg.sample_time;
    let mut out = [Vec::new(), Vec::new()];
    for (weight, traj) in history.weighted(cfg) {
        if traj.len() < order + 1 {
            continue;
        }
        for (axis, samples) in out.iter_mut().enumerate() {
            let d = axis_signal(traj, axis);
            for t in order..d.len() {
                let value = match order {
                    1 => (d[t] - d[t - 1]) / tau,
                    _ => (d[t] - 2.0 * d[t - 1] + d[t - 2]) / (tau * tau),
                };
                samples.push((weight, value, d[t]));
            }
        }
    }
    out
}

fn median_abs(samples: &[(f64, f64, f64)]) -> f64 {
    let mut mags: Vec<f64> = samples.iter().map(|s| s.1.abs()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let m = mags.len();
    let median = if m % 2 == 1 {
        mags[m / 2]
    } else {
        0.5 * (mags[m / 2 - 1] + mags[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        mags.iter().sum::<f64>() / m as f64
    }
}

fn calm_weighted(
    kind: FeatureKind,
    history: &History,
    grid: &GoalGrid,
    cfg: &FeatureConfig,
    order: usize,
) -> Result<FeatureField> {
    check_inputs(history, cfg)?;
    let samples = difference_samples(history, cfg, order);
    let mut deposits = [vec![0.0; grid.gx], vec![0.0; grid.gy]];
    for (axis, axis_samples) in samples.iter().enumerate() {
        let scale = median_abs(axis_samples);
        for &(w, value, pos) in axis_samples {
            let calm = if scale > 0.0 { (-value.abs() / scale).exp() } else { 1.0 };
            deposits[axis][grid.axis_bin(axis, pos).0] += w * calm;
        }
    }
    let bins = [grid.gx, grid.gy];
    let hists = match (
        ValueHistogram::build(&weights_values(&samples[0]), bins[0]),
        ValueHistogram::build(&weights_values(&samples[1]), bins[1]),
    ) {
        (Some(x), Some(y)) => Some([x, y]),
        _ => None,
    };
    Ok(FeatureField::assemble(kind, grid, cfg, deposits, hists))
}

fn weights_values(samples: &[(f64, f64, f64)]) -> Vec<(f64, f64)> {
    samples.iter().map(|s| (s.1, s.0)).collect()
}

pub fn pace(history: &History, grid: &GoalGrid, cfg: &FeatureConfig) -> Result<FeatureField> {
    calm_weighted(FeatureKind::Pace, history, grid, cfg, 1)
}

pub fn reaction(history: &History, grid: &GoalGrid, cfg: &FeatureConfig) -> Result<FeatureField> {
    calm_weighted(FeatureKind::Reaction, history, grid, cfg, 2)
}

/// All four features, in the order spectral entropy, visit frequency, pace,
/// reaction.
pub fn extract_all(history: &History, grid: &GoalGrid, cfg: &FeatureConfig) -> Result<[FeatureField; 4]> {
    Ok([
        spectral_entropy(history, grid, cfg)?,
        visit_frequency(history, grid, cfg)?,
        pace(history, grid, cfg)?,
        reaction(history, grid, cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GoalGrid {
        GoalGrid::new(11, 11, 0.25, 0.25).unwrap()
    }

    fn history_of(trajs: Vec<Trajectory>) -> History {
        let mut h = History::new();
        for (i, t) in trajs.into_iter().enumerate() {
            h.push(i, t).unwrap();
        }
        h
    }

    fn xs(values: &[f64]) -> Trajectory {
        Trajectory::from_positions(&values.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>())
    }

    fn assert_distribution(f: &FeatureField) {
        for d in f.per_axis.iter() {
            assert!(d.iter().all(|v| *v >= 0.0 && v.is_finite()));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((f.joint.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    /// Direct O(n²) DFT entropy, independent of the FFT path.
    fn dft_entropy(x: &[f64]) -> f64 {
        let n = x.len();
        let power: Vec<f64> = (1..=(n - 1) / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let total: f64 = power.iter().sum();
        power.iter().map(|p| p / total).filter(|q| *q > 0.0).map(|q| -q * q.log2()).sum()
    }

    #[test]
    fn constant_signal_has_zero_entropy_and_uniform_field() {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(64);
        assert_eq!(window_spectral_entropy(fft.as_ref(), &[0.13; 64]), 0.0);
        assert_eq!(window_spectral_entropy(fft.as_ref(), &[0.0; 64]), 0.0);
        let f = spectral_entropy(&history_of(vec![xs(&[0.1; 200])]), &grid(), &FeatureConfig::default()).unwrap();
        assert_distribution(&f);
        assert!(f.per_axis[0].iter().all(|v| (v - 1.0 / 11.0).abs() < 1e-12));
    }

    #[test]
    fn pure_tone_has_zero_entropy() {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(64);
        let tone: Vec<f64> = (0..64).map(|t| 0.1 * (2.0 * std::f64::consts::PI * 5.0 * t as f64 / 64.0).sin()).collect();
        assert!(window_spectral_entropy(fft.as_ref(), &tone) < 1e-9);
    }

    #[test]
    fn noise_entropy_matches_direct_dft() {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mean_h = 0.0;
        for _ in 0..200 {
            let noise: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = window_spectral_entropy(fft.as_ref(), &noise);
            assert!((h - dft_entropy(&noise)).abs() < 1e-10);
            assert!(h <= 31f64.log2() + 1e-12);
            mean_h += h / 200.0;
        }
        // White noise sits within a fraction of a bit below the 31-bin maximum.
        assert!((mean_h - 31f64.log2()).abs() < 0.8, "mean entropy {mean_h}");
    }

    #[test]
    fn short_trajectory_uses_single_window() {
        let sig: Vec<f64> = (0..20).map(|t| 0.01 * ((t * 7) % 5) as f64).collect();
        let f = spectral_entropy(&history_of(vec![xs(&sig)]), &grid(), &FeatureConfig::default()).unwrap();
        assert_distribution(&f);
        assert!(f.per_axis[0].iter().any(|v| (v - 1.0 / 11.0).abs() > 1e-6));
    }

    #[test]
    fn visits_in_one_bin_carry_all_mass() {
        let f = visit_frequency(&history_of(vec![xs(&[0.01; 50])]), &grid(), &FeatureConfig::default()).unwrap();
        assert_eq!(f.per_axis[0][5], 1.0);
    }

    #[test]
    fn uniform_coverage_gives_uniform_distribution() {
        let g = grid();
        let centers = g.x_centers();
        let traj = xs(&centers.iter().cycle().take(11 * 6).copied().collect::<Vec<_>>());
        let f = visit_frequency(&history_of(vec![traj]), &g, &FeatureConfig::default()).unwrap();
        assert!(f.per_axis[0].iter().all(|v| (v - 1.0 / 11.0).abs() < 1e-12));
    }

    #[test]
    fn three_bin_counting_oracle() {
        let g = GoalGrid::new(3, 3, 0.3, 0.3).unwrap();
        let cfg = FeatureConfig {
            recency_discount: 1.0,
            ..Default::default()
        };
        let h = history_of(vec![xs(&[-0.2, -0.2]), xs(&[0.2, 0.2])]);
        let f = visit_frequency(&h, &g, &cfg).unwrap();
        // Counting: bin0 ×2, bin2 ×2 of four samples.
        let expected = [2.0 / 4.0, 0.0, 2.0 / 4.0];
        for (a, b) in f.per_axis[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn recency_discount_and_window() {
        let g = GoalGrid::new(3, 3, 0.3, 0.3).unwrap();
        let cfg = FeatureConfig {
            recency_discount: 0.5,
            window: 2,
            ..Default::default()
        };
        let h = history_of(vec![xs(&[0.0; 4]), xs(&[-0.2; 4]), xs(&[0.2; 4])]);
        let f = visit_frequency(&h, &g, &cfg).unwrap();
        // Oldest entry falls outside the window; the middle one weighs 0.5.
        assert!((f.per_axis[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.per_axis[0][1], 0.0);
        assert!((f.per_axis[0][2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_pace_and_reaction_spike_at_zero() {
        let h = history_of(vec![xs(&[0.05; 30])]);
        let cfg = FeatureConfig::default();
        for f in [pace(&h, &grid(), &cfg).unwrap(), reaction(&h, &grid(), &cfg).unwrap()] {
            let hist = &f.value_histograms.as_ref().unwrap()[0];
            assert_eq!(hist.masses, vec![1.0]);
            assert_eq!(hist.mode(), 0.0);
            assert_distribution(&f);
        }
    }

    #[test]
    fn constant_velocity_pace_spike() {
        let delta = 0.002;
        let cfg = FeatureConfig::default();
        let traj = xs(&(0..100).map(|t| -0.1 + delta * t as f64).collect::<Vec<_>>());
        let f = pace(&history_of(vec![traj.clone()]), &grid(), &cfg).unwrap();
        let hist = &f.value_histograms.as_ref().unwrap()[0];
        assert_eq!(hist.masses.len(), 1);
        assert!((hist.mode() - delta / 0.05).abs() < 1e-9);
        let r = reaction(&history_of(vec![traj]), &grid(), &cfg).unwrap();
        assert!(r.value_histograms.as_ref().unwrap()[0].mode().abs() < 1e-9);
    }

    #[test]
    fn quadratic_reaction_spike() {
        let c = 1e-4;
        let cfg = FeatureConfig::default();
        let traj = xs(&(0..40).map(|t| -0.2 + c * (t * t) as f64).collect::<Vec<_>>());
        let f = reaction(&history_of(vec![traj]), &grid(), &cfg).unwrap();
        let hist = &f.value_histograms.as_ref().unwrap()[0];
        assert_eq!(hist.masses.len(), 1);
        assert!((hist.mode() - 2.0 * c / (0.05 * 0.05)).abs() < 1e-6);
    }

    #[test]
    fn short_trajectories_are_skipped() {
        let cfg = FeatureConfig::default();
        let h = history_of(vec![xs(&[0.1])]);
        let p = pace(&h, &grid(), &cfg).unwrap();
        assert!(p.value_histograms.is_none());
        assert_distribution(&p);
        let h = history_of(vec![xs(&[0.1, 0.2])]);
        assert!(reaction(&h, &grid(), &cfg).unwrap().value_histograms.is_none());
        assert!(pace(&h, &grid(), &cfg).unwrap().value_histograms.is_some());
        assert!(visit_frequency(&History::new(), &grid(), &cfg).is_err());
    }

    #[test]
    fn slow_regions_gain_pace_mass() {
        // Fast sweep through the left half, slow crawl on the right.
        let mut pos = Vec::new();
        let mut x = -0.24;
        while x < 0.0 {
            pos.push(x);
            x += 0.02;
        }
        while x < 0.24 {
            pos.push(x);
            x += 0.002;
        }
        let f = pace(&history_of(vec![xs(&pos)]), &grid(), &FeatureConfig::default()).unwrap();
        let left: f64 = f.per_axis[0][..5].iter().sum();
        let right: f64 = f.per_axis[0][6..].iter().sum();
        assert!(right > 5.0 * left);
    }

    #[test]
    fn permutation_within_iteration_is_irrelevant() {
        let g = grid();
        let cfg = FeatureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|_| {
                Trajectory::from_positions(
                    &(0..90)
                        .map(|_| [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)])
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let mut a = History::new();
        let mut b = History::new();
        for t in &trajs {
            a.push(0, t.clone()).unwrap();
        }
        for t in trajs.iter().rev() {
            b.push(0, t.clone()).unwrap();
        }
        for (fa, fb) in extract_all(&a, &g, &cfg).unwrap().iter().zip(extract_all(&b, &g, &cfg).unwrap().iter()) {
            for (x, y) in fa.joint.iter().zip(&fb.joint) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(a.push(0, trajs[0].clone()).is_ok());
        let mut c = History::new();
        c.push(3, trajs[0].clone()).unwrap();
        assert!(c.push(2, trajs[0].clone()).is_err());
    }

    #[test]
    fn serialized_history_reproduces_fields() {
        let g = grid();
        let cfg = FeatureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut h = History::new();
        for it in 0..4 {
            let t = Trajectory::from_positions(
                &(0..120).map(|_| [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)]).collect::<Vec<_>>(),
            );
            h.push(it, t).unwrap();
        }
        let restored: History = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(extract_all(&h, &g, &cfg).unwrap(), extract_all(&restored, &g, &cfg).unwrap());
    }
}

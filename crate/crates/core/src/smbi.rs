//! State-based multivariate Bayesian inference of the latent goal field.
//!
//! The goal field `F` assigns a latent value to every grid cell. Its prior is a
//! zero-mean Gaussian whose covariance is the squared-exponential kernel
//! between cell centers. Observing a ball position is modelled as drawing its
//! cell from `softmax(F)`, so the posterior over `F` given a trajectory is
//! non-Gaussian; it is replaced by its Laplace approximation, a Gaussian at the
//! MAP mode with precision `K⁻¹ + W`.
//!
//! The kernel on a regular grid factorizes as `Kx ⊗ Ky`, so its eigenbasis is
//! the Kronecker product of two small one-dimensional eigenproblems. Newton's
//! method runs in the whitened coordinates `F = m + Φ·u` with
//! `Φ = Q·Λ^½` and `u ~ N(0, I)`; modes whose prior variance falls below a
//! relative cutoff carry no information and are dropped. In these coordinates
//! the negative Hessian is `I + Φᵀ W Φ`, which is always positive definite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::board::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, softmax, GoalGrid, GridDump};

/// Squared-exponential kernel `exp(-|p-q|² / (2ℓ²))`.
pub fn kernel(p: [f64; 2], q: [f64; 2], lengthscale: f64) -> Result<f64> {
    if !(lengthscale > 0.0) {
        return Err(Error::InvalidConfig(format!("kernel lengthscale must be positive, got {lengthscale}")));
    }
    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
    Ok((-d2 / (2.0 * lengthscale * lengthscale)).exp())
}

/// How the kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Bandwidth {
    /// Fixed lengthscale in meters.
    Lengthscale(f64),
    /// Fraction of the board width.
    BoardFraction(f64),
    /// Kernel precision equal to the trajectory length Γ, i.e. `ℓ = 1/√Γ`.
    TrajectoryLength,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::BoardFraction(0.15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmbiConfig {
    pub resolution: [usize; 2],
    pub bandwidth: Bandwidth,
    /// Observations are tempered by `1 / obs_noise`.
    pub obs_noise: f64,
    pub max_newton_iters: usize,
    pub grad_tol: f64,
    /// Kernel modes with eigenvalue below `eigen_cutoff · λ_max` are dropped.
    pub eigen_cutoff: f64,
}

impl Default for SmbiConfig {
    fn default() -> Self {
        Self {
            resolution: [41, 41],
            bandwidth: Bandwidth::default(),
            obs_noise: 1.0,
            max_newton_iters: 50,
            grad_tol: 1e-6,
            eigen_cutoff: 1e-12,
        }
    }
}

impl SmbiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.obs_noise > 0.0) {
            return Err(Error::InvalidConfig("obs_noise must be positive".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidConfig("max_newton_iters must be at least 1".into()));
        }
        match self.bandwidth {
            Bandwidth::Lengthscale(l) | Bandwidth::BoardFraction(l) if !(l > 0.0) => {
                Err(Error::InvalidConfig("bandwidth must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn lengthscale(&self, grid: &GoalGrid, episode_steps: usize) -> f64 {
        match self.bandwidth {
            Bandwidth::Lengthscale(l) => l,
            Bandwidth::BoardFraction(f) => f * 2.0 * grid.half_width,
            Bandwidth::TrajectoryLength => 1.0 / (episode_steps.max(1) as f64).sqrt(),
        }
    }
}

/// What happened inside the last posterior update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub newton_iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    /// Diagonal jitter that had to be added before the Hessian factorized.
    pub jitter: f64,
    /// Observations that lay off the board and were snapped to the nearest cell.
    pub clamped_observations: usize,
    /// Number of kernel modes kept.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalField {
    pub grid: GoalGrid,
    /// MAP estimate of the latent goal values, one per cell.
    pub mean: Vec<f64>,
    /// Laplace posterior variance per cell.
    pub covariance_diag: Vec<f64>,
    /// Prior mean the next update starts from.
    pub prior_mean: Vec<f64>,
    pub kernel_lengthscale: f64,
    pub obs_noise: f64,
    pub iteration_index: usize,
    pub diagnostics: UpdateDiagnostics,
}

impl GoalField {
    /// The zero-mean kernel prior.
    pub fn prior(grid: GoalGrid, lengthscale: f64, obs_noise: f64) -> Result<Self> {
        if !(lengthscale > 0.0) {
            return Err(Error::InvalidConfig("lengthscale must be positive".into()));
        }
        if !(obs_noise > 0.0) {
            return Err(Error::InvalidConfig("obs_noise must be positive".into()));
        }
        let n = grid.len();
        Ok(Self {
            grid,
            mean: vec![0.0; n],
            // Kernel diagonal.
            covariance_diag: vec![1.0; n],
            prior_mean: vec![0.0; n],
            kernel_lengthscale: lengthscale,
            obs_noise,
            iteration_index: 0,
            diagnostics: UpdateDiagnostics::default(),
        })
    }

    pub fn from_config(grid: GoalGrid, cfg: &SmbiConfig, episode_steps: usize) -> Result<Self> {
        cfg.validate()?;
        Self::prior(grid, cfg.lengthscale(&grid, episode_steps), cfg.obs_noise)
    }

    /// Softmax of the posterior mean over cells: the goal density handed to the
    /// reward.
    pub fn density(&self) -> Vec<f64> {
        to_density(self)
    }

    /// Grid dump of the goal density, kind `posterior`.
    pub fn to_dump(&self) -> GridDump {
        GridDump::new("posterior", self.grid, self.iteration_index, self.density()).expect("shape checked")
    }

    pub fn is_well_formed(&self) -> bool {
        let n = self.grid.len();
        self.mean.len() == n
            && self.covariance_diag.len() == n
            && self.prior_mean.len() == n
            && self.mean.iter().all(|v| v.is_finite())
            && self.prior_mean.iter().all(|v| v.is_finite())
            && self.covariance_diag.iter().all(|v| *v > 0.0 && v.is_finite())
    }
}

pub fn to_density(field: &GoalField) -> Vec<f64> {
    softmax(&field.mean)
}

/// Per-cell observation counts of a trajectory's ball positions.
pub fn visit_counts(grid: &GoalGrid, traj: &Trajectory) -> (Vec<f64>, usize) {
    let mut counts = vec![0.0; grid.len()];
    let mut clamped = 0;
    for r in &traj.records {
        let (cell, outside) = grid.cell_of(r.state.ball_pos);
        counts[cell] += 1.0;
        clamped += outside as usize;
    }
    (counts, clamped)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub clamped_observations: usize,
}

/// `Σ_t [F(cell(s_t)) − log Σ_c exp F(c)]` over the trajectory.
pub fn log_likelihood(grid: &GoalGrid, field_values: &[f64], traj: &Trajectory) -> Result<LogLikelihood> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if field_values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} field values for {} cells",
            field_values.len(),
            grid.len()
        )));
    }
    if field_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite field value".into()));
    }
    let lse = log_sum_exp(field_values);
    let (counts, clamped) = visit_counts(grid, traj);
    let value = counts
        .iter()
        .zip(field_values)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, f)| c * (f - lse))
        .sum();
    Ok(LogLikelihood {
        value,
        clamped_observations: clamped,
    })
}

/// Truncated eigenbasis of the grid kernel, `K ≈ Φ Φᵀ`.
///
/// Column `m` of `Φ` is `√(λx_i λy_j) · (qx_i ⊗ qy_j)` for the kept mode
/// pair `(i, j)`.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    /// `n × r` dense form, used for matrix-vector products.
    pub phi: DMatrix<f64>,
    gx: usize,
    gy: usize,
    /// Per-axis eigenvectors restricted to the x modes in use.
    qx: DMatrix<f64>,
    qy: DMatrix<f64>,
    /// `(compact x mode, y mode, √λ)` for every column.
    modes: Vec<(usize, usize, f64)>,
}

fn axis_eigen(centers: &[f64], lengthscale: f64) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let n = centers.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = centers[i] - centers[j];
        (-d * d / (2.0 * lengthscale * lengthscale)).exp()
    });
    SymmetricEigen::new(k)
}

impl KernelBasis {
    pub fn new(grid: &GoalGrid, lengthscale: f64, cutoff: f64) -> Self {
        let ex = axis_eigen(&grid.x_centers(), lengthscale);
        let ey = axis_eigen(&grid.y_centers(), lengthscale);
        let lx: Vec<f64> = ex.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let ly: Vec<f64> = ey.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let lmax = lx.iter().copied().fold(0.0, f64::max) * ly.iter().copied().fold(0.0, f64::max);
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (i, &a) in lx.iter().enumerate() {
            for (j, &b) in ly.iter().enumerate() {
                let lambda = a * b;
                if lambda > cutoff * lmax {
                    pairs.push((i, j, lambda));
                }
            }
        }
        // Largest first; ties broken by index so the basis is reproducible.
        pairs.sort_by(|p, q| q.2.total_cmp(&p.2).then(p.0.cmp(&q.0)).then(p.1.cmp(&q.1)));

        let mut x_used: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        x_used.sort_unstable();
        x_used.dedup();
        let qx = DMatrix::from_fn(grid.gx, x_used.len(), |r, c| ex.eigenvectors[(r, x_used[c])]);
        let modes: Vec<(usize, usize, f64)> = pairs
            .iter()
            .map(|&(i, j, l)| (x_used.binary_search(&i).expect("used mode"), j, l.sqrt()))
            .collect();

        let n = grid.len();
        let mut phi = DMatrix::zeros(n, modes.len());
        for (col, &(a, j, s)) in modes.iter().enumerate() {
            for iy in 0..grid.gy {
                let qy = ey.eigenvectors[(iy, j)];
                for ix in 0..grid.gx {
                    phi[(grid.index(ix, iy), col)] = s * qx[(ix, a)] * qy;
                }
            }
        }
        Self {
            phi,
            gx: grid.gx,
            gy: grid.gy,
            qx,
            qy: ey.eigenvectors,
            modes,
        }
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    /// `Φᵀ diag(p) Φ`, exploiting the Kronecker structure of the columns.
    pub fn weighted_gram(&self, p: &[f64]) -> DMatrix<f64> {
        let (gx, gy) = (self.gx, self.gy);
        let nx = self.qx.ncols();
        // t[(a, b, iy)] = Σ_ix qx[ix, a] qx[ix, b] p[ix, iy]
        let mut t = vec![0.0; nx * nx * gy];
        for iy in 0..gy {
            let row = &p[iy * gx..(iy + 1) * gx];
            for a in 0..nx {
                for b in a..nx {
                    let mut acc = 0.0;
                    for (ix, w) in row.iter().enumerate() {
                        acc += self.qx[(ix, a)] * self.qx[(ix, b)] * w;
                    }
                    t[(a * nx + b) * gy + iy] = acc;
                    t[(b * nx + a) * gy + iy] = acc;
                }
            }
        }
        let r = self.rank();
        let mut g = DMatrix::zeros(r, r);
        for m1 in 0..r {
            let (a1, j1, s1) = self.modes[m1];
            for m2 in m1..r {
                let (a2, j2, s2) = self.modes[m2];
                let tv = &t[(a1 * nx + a2) * gy..(a1 * nx + a2 + 1) * gy];
                let mut acc = 0.0;
                for (iy, w) in tv.iter().enumerate() {
                    acc += self.qy[(iy, j1)] * self.qy[(iy, j2)] * w;
                }
                let v = s1 * s2 * acc;
                g[(m1, m2)] = v;
                g[(m2, m1)] = v;
            }
        }
        g
    }

    /// `diag(Φ C Φᵀ)` for a symmetric `r × r` matrix `C`.
    pub fn projected_diagonal(&self, c: &DMatrix<f64>) -> Vec<f64> {
        let (gx, gy) = (self.gx, self.gy);
        let nx = self.qx.ncols();
        let r = self.rank();
        let mut out = vec![0.0; gx * gy];
        let mut inner = vec![0.0; nx * nx];
        for iy in 0..gy {
            inner.iter_mut().for_each(|v| *v = 0.0);
            for m1 in 0..r {
                let (a1, j1, s1) = self.modes[m1];
                let w1 = s1 * self.qy[(iy, j1)];
                for m2 in 0..r {
                    let (a2, j2, s2) = self.modes[m2];
                    inner[a1 * nx + a2] += w1 * s2 * self.qy[(iy, j2)] * c[(m1, m2)];
                }
            }
            for ix in 0..gx {
                let mut acc = 0.0;
                for a in 0..nx {
                    let qa = self.qx[(ix, a)];
                    for b in 0..nx {
                        acc += qa * self.qx[(ix, b)] * inner[a * nx + b];
                    }
                }
                out[iy * gx + ix] = acc;
            }
        }
        out
    }
}

/// The Laplace approximation at a mode, in whitened coordinates.
#[derive(Debug, Clone)]
pub struct LaplaceSolution {
    pub mean: Vec<f64>,
    /// `I + Φᵀ W Φ`: the posterior precision of the whitened coefficients.
    pub precision: DMatrix<f64>,
    pub covariance_diag: Vec<f64>,
    pub diagnostics: UpdateDiagnostics,
}

struct Objective<'a> {
    basis: &'a KernelBasis,
    phi: &'a DMatrix<f64>,
    prior_mean: &'a DVector<f64>,
    counts: &'a DVector<f64>,
    total: f64,
    weight: f64,
}

impl Objective<'_> {
    fn field(&self, u: &DVector<f64>) -> DVector<f64> {
        self.prior_mean + self.phi * u
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let f = self.field(u);
        let lse = log_sum_exp(f.as_slice());
        self.weight * (self.counts.dot(&f) - self.total * lse) - 0.5 * u.norm_squared()
    }

    /// Gradient and negative Hessian at `u`.
    fn derivatives(&self, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let f = self.field(u);
        let pi = DVector::from_vec(softmax(f.as_slice()));
        let resid = (self.counts - &pi * self.total) * self.weight;
        let grad = self.phi.tr_mul(&resid) - u;

        let scale = self.weight * self.total;
        let proj = self.phi.tr_mul(&pi);
        let mut hess = self.basis.weighted_gram(pi.as_slice()) * scale;
        hess.ger(-scale, &proj, &proj, 1.0);
        for i in 0..hess.nrows() {
            hess[(i, i)] += 1.0;
        }
        (grad, hess)
    }
}

fn factorize(mut h: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(c) = h.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let mut jitter = 1e-8;
    for _ in 0..12 {
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
        if let Some(c) = h.clone().cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("Laplace Hessian could not be factorized".into()))
}

/// Laplace approximation of the posterior given a prior mean and the visit counts.
pub fn laplace(
    basis: &KernelBasis,
    prior_mean: &[f64],
    counts: &[f64],
    weight: f64,
    max_iters: usize,
    grad_tol: f64,
) -> Result<LaplaceSolution> {
    let n = prior_mean.len();
    if counts.len() != n || basis.phi.nrows() != n {
        return Err(Error::GridMismatch("prior, counts and kernel basis disagree".into()));
    }
    let prior_mean = DVector::from_column_slice(prior_mean);
    let counts = DVector::from_column_slice(counts);
    let obj = Objective {
        basis,
        phi: &basis.phi,
        prior_mean: &prior_mean,
        counts: &counts,
        total: counts.sum(),
        weight,
    };

    let mut u = DVector::zeros(basis.rank());
    let mut diag = UpdateDiagnostics {
        rank: basis.rank(),
        ..Default::default()
    };
    let mut value = obj.value(&u);
    let (mut grad, mut hess) = obj.derivatives(&u);
    loop {
        diag.final_grad_norm = grad.amax();
        if diag.final_grad_norm < grad_tol {
            diag.converged = true;
            break;
        }
        if diag.newton_iterations >= max_iters {
            log::warn!(
                "Laplace mode search stopped after {max_iters} Newton steps (|grad| = {:.3e})",
                diag.final_grad_norm
            );
            break;
        }
        let (chol, jitter) = factorize(hess.clone())?;
        diag.jitter = diag.jitter.max(jitter);
        let direction = chol.solve(&grad);
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &u + &direction * t;
            let v = obj.value(&candidate);
            if v >= value + 1e-4 * t * slope || (v - value).abs() <= 1e-14 * value.abs().max(1.0) {
                accepted = Some((candidate, v));
                break;
            }
            t *= 0.5;
        }
        diag.newton_iterations += 1;
        let Some((next, v)) = accepted else {
            log::warn!("Laplace line search stalled at |grad| = {:.3e}", diag.final_grad_norm);
            break;
        };
        u = next;
        value = v;
        (grad, hess) = obj.derivatives(&u);
    }

    let (chol, jitter) = factorize(hess.clone())?;
    diag.jitter = diag.jitter.max(jitter);
    let covariance_diag = basis
        .projected_diagonal(&chol.inverse())
        .into_iter()
        .map(|v| v.max(f64::MIN_POSITIVE))
        .collect();
    Ok(LaplaceSolution {
        mean: obj.field(&u).as_slice().to_vec(),
        precision: hess,
        covariance_diag,
        diagnostics: diag,
    })
}

/// Reusable posterior updater for one grid and kernel.
#[derive(Debug, Clone)]
pub struct Smbi {
    pub config: SmbiConfig,
    grid: GoalGrid,
    lengthscale: f64,
    basis: KernelBasis,
}

impl Smbi {
    pub fn new(grid: GoalGrid, config: SmbiConfig, episode_steps: usize) -> Result<Self> {
        config.validate()?;
        let lengthscale = config.lengthscale(&grid, episode_steps);
        let basis = KernelBasis::new(&grid, lengthscale, config.eigen_cutoff);
        Ok(Self {
            config,
            grid,
            lengthscale,
            basis,
        })
    }

    pub fn grid(&self) -> &GoalGrid {
        &self.grid
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn prior(&self) -> GoalField {
        GoalField::prior(self.grid, self.lengthscale, self.config.obs_noise).expect("validated config")
    }

    /// Returns the posterior after observing `traj`, starting from the field's
    /// prior mean. The result's prior mean is its own posterior mean, so the
    /// next call builds on it; the covariance restarts from the kernel.
    pub fn update(&self, field: &GoalField, traj: &Trajectory) -> Result<GoalField> {
        Ok(self.update_with_precision(field, traj)?.0)
    }

    pub fn update_with_precision(&self, field: &GoalField, traj: &Trajectory) -> Result<(GoalField, DMatrix<f64>)> {
        if !field.grid.same_shape(&self.grid) {
            return Err(Error::GridMismatch("field grid differs from the updater's grid".into()));
        }
        if !field.is_well_formed() {
            return Err(Error::Numerical("goal field is not well formed".into()));
        }
        if traj.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        let (counts, clamped) = visit_counts(&self.grid, traj);
        let sol = laplace(
            &self.basis,
            &field.prior_mean,
            &counts,
            1.0 / field.obs_noise,
            self.config.max_newton_iters,
            self.config.grad_tol,
        )?;
        let mut diagnostics = sol.diagnostics;
        diagnostics.clamped_observations = clamped;
        Ok((
            GoalField {
                grid: self.grid,
                prior_mean: sol.mean.clone(),
                mean: sol.mean,
                covariance_diag: sol.covariance_diag,
                kernel_lengthscale: field.kernel_lengthscale,
                obs_noise: field.obs_noise,
                iteration_index: field.iteration_index + 1,
                diagnostics,
            },
            sol.precision,
        ))
    }
}

/// One-shot posterior update; builds the kernel basis from the field itself.
pub fn update_posterior(field: &GoalField, traj: &Trajectory) -> Result<GoalField> {
    let config = SmbiConfig {
        resolution: [field.grid.gx, field.grid.gy],
        bandwidth: Bandwidth::Lengthscale(field.kernel_lengthscale),
        obs_noise: field.obs_noise,
        ..SmbiConfig::default()
    };
    Smbi::new(field.grid, config, traj.len())?.update(field, traj)
}

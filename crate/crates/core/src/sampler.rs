//! Samplers for the Gibbs ensemble: overdamped Langevin and MALA chains,
//! exact random-matrix samplers for validation, and energy minimization.
//!
//! All randomness flows through a counter-mode stream cipher RNG, so a
//! (seed, stream) pair pins the trajectory bitwise regardless of scheduling.

use ndarray::Array2;
use ndarray_linalg::{EigVals, c64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::equilibrium::Potential;
use crate::kernels::RieszKernel;
use crate::modenergy::{hamiltonian, Configuration};
use crate::numerics::{sym_tridiagonal_eigenvalues, tree_sum_n};
use crate::{Error, Result};

/// The ensemble exp(-beta N^{-s/d} H_N) dX, with effective temperature
/// theta = beta N^{1 - s/d}.
pub struct GibbsModel<'a> {
    pub kernel: RieszKernel,
    pub potential: &'a dyn Potential,
    pub beta: f64,
    pub n: usize,
}

impl<'a> GibbsModel<'a> {
    pub fn new(
        kernel: RieszKernel,
        potential: &'a dyn Potential,
        beta: f64,
        n: usize,
    ) -> Result<Self> {
        if potential.dim() != kernel.d {
            return Err(Error::InvalidParameter(
                "potential and kernel dimensions disagree".into(),
            ));
        }
        if !(beta > 0.0) || n == 0 {
            return Err(Error::InvalidParameter(
                "beta must be positive and N at least 1".into(),
            ));
        }
        if !potential.confining_for(&kernel) {
            return Err(Error::InvalidParameter(
                "potential does not confine this kernel; the ensemble is not normalizable".into(),
            ));
        }
        Ok(Self { kernel, potential, beta, n })
    }

    pub fn theta(&self) -> f64 {
        self.beta * (self.n as f64).powf(1.0 - self.kernel.s / self.kernel.d as f64)
    }

    /// Conservative explicit step: 0.1 / (N^{2/d} (1 + sup |Delta V| on the
    /// unit ball)), matching the microscale stiffness of the drift.
    pub fn default_step(&self) -> f64 {
        let d = self.kernel.d;
        let mut lap: f64 = 0.0;
        for t in [-1.0f64, -0.5, 0.0, 0.5, 1.0] {
            let x = vec![t; d];
            lap = lap.max(self.potential.laplacian_v(&x).abs());
        }
        0.1 / ((self.n as f64).powf(2.0 / d as f64) * (1.0 + lap))
    }
}

/// A chain position plus everything needed to continue it deterministically.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Configuration,
    pub steps: usize,
    pub rng: ChaCha8Rng,
    pub accepted: u64,
    pub proposed: u64,
    /// Current step size; halved automatically when a step blows up.
    pub step_size: f64,
    pub warnings: Vec<String>,
}

impl ChainState {
    pub fn new(x: Configuration, seed: u64, stream: u64, step_size: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            x,
            steps: 0,
            rng,
            accepted: 0,
            proposed: 0,
            step_size,
            warnings: Vec::new(),
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// None means the model's default step.
    pub step: Option<f64>,
    /// Record a snapshot every this many steps; 0 disables recording.
    pub record_every: usize,
    /// Coordinate magnitude treated as a blown-up chain.
    pub blowup_bound: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { step: None, record_every: 0, blowup_bound: 1e6 }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ChainState,
    pub snapshots: Vec<(usize, Configuration)>,
}

/// F_i = -(1/N) sum_{j != i} grad g(x_i - x_j) - grad V(x_i), flattened.
pub fn force(x: &Configuration, model: &GibbsModel) -> Result<Vec<f64>> {
    if !x.is_simple() {
        return Err(Error::InvalidInput(
            "coincident points make the interaction force singular".into(),
        ));
    }
    let n = x.len();
    let d = x.d;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let xi = x.point(i);
        let mut grad = [0.0f64; 8];
        let mut acc = [0.0f64; 8];
        for j in 0..n {
            if j != i {
                model.kernel.grad_g(xi, x.point(j), &mut grad[..d]);
                for a in 0..d {
                    acc[a] += grad[a];
                }
            }
        }
        model.potential.grad_v(xi, &mut grad[..d]);
        for a in 0..d {
            out[i * d + a] = -acc[a] / n as f64 - grad[a];
        }
    }
    Ok(out)
}

fn draw_noise(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn step_is_sane(coords: &[f64], bound: f64) -> bool {
    coords.iter().all(|c| c.is_finite() && c.abs() <= bound)
}

/// Euler-Maruyama integration of dx_i = F_i dt + sqrt(2/theta) dW_i.
///
/// A step that leaves the sanity box is retried with a halved step size (and
/// fresh noise); the reduction is permanent for the rest of the run.
pub fn langevin_run(
    model: &GibbsModel,
    x0: &Configuration,
    n_steps: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let h0 = opts.step.unwrap_or_else(|| model.default_step());
    let mut state = ChainState::new(x0.clone(), seed, 0, h0);
    let mut snapshots = Vec::new();
    let theta = model.theta();
    let nd = x0.len() * x0.d;
    for step in 0..n_steps {
        let f = force(&state.x, model)?;
        let mut halvings = 0;
        loop {
            let h = state.step_size;
            let noise = draw_noise(&mut state.rng, nd, (2.0 * h / theta).sqrt());
            let coords: Vec<f64> = state
                .x
                .coords()
                .iter()
                .zip(f.iter().zip(&noise))
                .map(|(xi, (fi, ni))| xi + h * fi + ni)
                .collect();
            if step_is_sane(&coords, opts.blowup_bound) {
                state.x = Configuration::new(x0.d, coords)?;
                break;
            }
            state.step_size *= 0.5;
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Diverged {
                    what: "langevin chain",
                    history: vec![step as f64, state.step_size],
                });
            }
        }
        state.steps += 1;
        if opts.record_every > 0 && (step + 1) % opts.record_every == 0 {
            snapshots.push((step + 1, state.x.clone()));
        }
    }
    Ok(RunOutput { state, snapshots })
}

/// Metropolis-adjusted Langevin targeting exp(-beta N^{-s/d} H_N) exactly.
pub fn mala_run(
    model: &GibbsModel,
    x0: &Configuration,
    n_steps: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let h0 = opts.step.unwrap_or_else(|| model.default_step());
    let mut state = ChainState::new(x0.clone(), seed, 0, h0);
    let mut snapshots = Vec::new();
    let theta = model.theta();
    let nf = model.n as f64;
    let nd = x0.len() * x0.d;
    // log target = -(theta / N) H_N.
    let mut energy = hamiltonian(&state.x, model.potential, &model.kernel);
    if !energy.is_finite() {
        return Err(Error::InvalidInput(
            "initial configuration has infinite energy".into(),
        ));
    }
    let mut f = force(&state.x, model)?;
    for step in 0..n_steps {
        let h = state.step_size;
        let noise = draw_noise(&mut state.rng, nd, (2.0 * h / theta).sqrt());
        let prop: Vec<f64> = state
            .x
            .coords()
            .iter()
            .zip(f.iter().zip(&noise))
            .map(|(xi, (fi, ni))| xi + h * fi + ni)
            .collect();
        state.proposed += 1;
        let accepted = step_is_sane(&prop, opts.blowup_bound) && {
            let y = Configuration::new(x0.d, prop)?;
            let energy_y = hamiltonian(&y, model.potential, &model.kernel);
            if energy_y.is_finite() && y.is_simple() {
                let fy = force(&y, model)?;
                // Proposal kernels q(x -> y) with variance 2h/theta per axis.
                let mut fwd = 0.0;
                let mut bwd = 0.0;
                for k in 0..nd {
                    let df = y.coords()[k] - state.x.coords()[k] - h * f[k];
                    let db = state.x.coords()[k] - y.coords()[k] - h * fy[k];
                    fwd += df * df;
                    bwd += db * db;
                }
                let log_alpha =
                    theta / nf * (energy - energy_y) + theta / (4.0 * h) * (fwd - bwd);
                if (state.rng.gen::<f64>()).ln() < log_alpha {
                    state.x = y;
                    energy = energy_y;
                    f = fy;
                    true
                } else {
                    false
                }
            } else {
                false
            }
        };
        if accepted {
            state.accepted += 1;
        }
        state.steps += 1;
        if state.proposed >= 200
            && state.acceptance_rate() < 0.01
            && state.warnings.is_empty()
        {
            state
                .warnings
                .push(format!("acceptance rate {:.4} after {} proposals; reduce the step size",
                    state.acceptance_rate(), state.proposed));
        }
        if opts.record_every > 0 && (step + 1) % opts.record_every == 0 {
            snapshots.push((step + 1, state.x.clone()));
        }
    }
    Ok(RunOutput { state, snapshots })
}

/// Eigenvalues of an N x N matrix of i.i.d. centered complex Gaussians with
/// variance 1/N, as 2D points. This is an exact draw of the planar log-gas at
/// beta = 2 with quadratic confinement (circle-law limit).
pub fn ginibre_sample(n: usize, seed: u64) -> Result<Configuration> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (2.0 * n as f64).sqrt();
    let m = Array2::from_shape_fn((n, n), |_| {
        let re: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let im: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        c64::new(re * scale, im * scale)
    });
    let eig = m
        .eigvals()
        .map_err(|e| Error::Backend(format!("dense eigenvalue solve failed: {e}")))?;
    let mut coords = Vec::with_capacity(2 * n);
    for z in eig.iter() {
        coords.push(z.re);
        coords.push(z.im);
    }
    Configuration::new(2, coords)
}

/// Eigenvalues of the tridiagonal beta-Hermite model (diagonal N(0,2),
/// sub-diagonal chi with beta(N-k) degrees of freedom), scaled by
/// 1/sqrt(beta N) so the empirical law tends to the semicircle on [-2, 2].
/// Exact draw of the 1D log-gas at inverse temperature beta, V = x^2/4.
pub fn hermite_beta_sample(n: usize, beta: f64, seed: u64) -> Result<Configuration> {
    if n == 0 || !(beta > 0.0) {
        return Err(Error::InvalidParameter(
            "N must be at least 1 and beta positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            g * 2.0f64.sqrt()
        })
        .collect();
    let sub: Vec<f64> = (1..n)
        .map(|k| {
            let dof = beta * (n - k) as f64;
            let chi2 = ChiSquared::new(dof)
                .map_err(|e| Error::InvalidParameter(format!("chi parameter: {e}")))?;
            Ok(chi2.sample(&mut rng).sqrt())
        })
        .collect::<Result<_>>()?;
    let eig = sym_tridiagonal_eigenvalues(diag, sub)?;
    let scale = 1.0 / (beta * n as f64).sqrt();
    Configuration::new(1, eig.into_iter().map(|l| l * scale).collect())
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Configuration,
    pub energy: f64,
    pub gradient_sup: f64,
    pub iterations: usize,
}

/// Gradient descent with Armijo backtracking on H_N until
/// the sup norm of grad H_N falls below tol. H_N never increases.
pub fn minimize_energy(
    model: &GibbsModel,
    x0: &Configuration,
    tol: f64,
    max_iters: usize,
) -> Result<MinimizeResult> {
    let n = x0.len();
    let d = x0.d;
    let nf = n as f64;
    let grad_h = |x: &Configuration| -> Result<Vec<f64>> {
        // grad_i H = sum_{j != i} grad g + N grad V; force is -(1/N) of this.
        let f = force(x, model)?;
        Ok(f.iter().map(|fi| -nf * fi).collect())
    };
    let mut x = x0.clone();
    let mut energy = hamiltonian(&x, model.potential, &model.kernel);
    if !energy.is_finite() {
        return Err(Error::InvalidInput(
            "initial configuration has infinite energy".into(),
        ));
    }
    let mut alpha = 1.0 / nf;
    for iter in 0..max_iters {
        let g = grad_h(&x)?;
        let sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup < tol {
            return Ok(MinimizeResult { x, energy, gradient_sup: sup, iterations: iter });
        }
        let g2 = tree_sum_n(g.len(), &|k| g[k] * g[k]);
        let mut backtracks = 0;
        loop {
            let coords: Vec<f64> = x
                .coords()
                .iter()
                .zip(&g)
                .map(|(xi, gi)| xi - alpha * gi)
                .collect();
            let trial = Configuration::new(d, coords)?;
            let trial_energy = hamiltonian(&trial, model.potential, &model.kernel);
            if trial_energy.is_finite() && trial_energy <= energy - 1e-4 * alpha * g2 {
                x = trial;
                energy = trial_energy;
                alpha = (alpha * 1.5).min(1.0);
                break;
            }
            alpha *= 0.5;
            backtracks += 1;
            if backtracks > 200 {
                return Err(Error::NoConvergence {
                    what: "energy descent line search",
                    residual: sup,
                    tolerance: tol,
                    iterations: iter,
                });
            }
        }
    }
    let g = grad_h(&x)?;
    let sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Err(Error::NoConvergence {
        what: "energy minimization",
        residual: sup,
        tolerance: tol,
        iterations: max_iters,
    })
}

/// One checkpoint per file: a metadata header, then one point per row.
pub fn write_checkpoint<W: std::io::Write>(
    w: &mut W,
    x: &Configuration,
    step: usize,
    beta: f64,
    seed: u64,
) -> std::io::Result<()> {
    writeln!(w, "dim,N,step,beta,seed")?;
    writeln!(w, "{},{},{},{:.16e},{}", x.d, x.len(), step, beta, seed)?;
    for i in 0..x.len() {
        let row: Vec<String> = x.point(i).iter().map(|c| format!("{c:.16e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Inverse of [`write_checkpoint`]; returns (configuration, step, beta, seed).
pub fn read_checkpoint<R: std::io::BufRead>(r: R) -> Result<(Configuration, usize, f64, u64)> {
    let mut lines = r.lines();
    let bad = |m: &str| Error::InvalidInput(format!("checkpoint parse: {m}"));
    let header = lines.next().ok_or_else(|| bad("empty file"))?.map_err(io_err)?;
    if header.trim() != "dim,N,step,beta,seed" {
        return Err(bad("unrecognized header"));
    }
    let meta = lines.next().ok_or_else(|| bad("missing metadata row"))?.map_err(io_err)?;
    let fields: Vec<&str> = meta.trim().split(',').collect();
    if fields.len() != 5 {
        return Err(bad("metadata row needs 5 fields"));
    }
    let d: usize = fields[0].parse().map_err(|_| bad("dim"))?;
    let n: usize = fields[1].parse().map_err(|_| bad("N"))?;
    let step: usize = fields[2].parse().map_err(|_| bad("step"))?;
    let beta: f64 = fields[3].parse().map_err(|_| bad("beta"))?;
    let seed: u64 = fields[4].parse().map_err(|_| bad("seed"))?;
    let mut coords = Vec::with_capacity(n * d);
    for line in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        for f in line.trim().split(',') {
            coords.push(f.parse().map_err(|_| bad("coordinate"))?);
        }
    }
    if coords.len() != n * d {
        return Err(bad("coordinate count does not match header"));
    }
    Ok((Configuration::new(d, coords)?, step, beta, seed))
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidInput(format!("checkpoint io: {e}"))
}

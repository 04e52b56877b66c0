//! Thermal equilibrium measures via the damped Kirkwood-Monroe fixed point.
//!
//! The iteration runs entirely in log space, w = log mu, so tail cells keep
//! finite values and the relation h + V + w/theta = c_theta can be verified on
//! the whole grid. Damping is geometric, mu_{k+1} = mu_k^{1-a} target^a, with
//! the step accepted only if the free energy E_theta does not increase.

use super::gridded::{GridConvolver, GriddedDensity};
use super::Potential;
use crate::kernels::RieszKernel;
use crate::{Error, Result};

/// Cell-centered grid on [-l, l]^2 with n cells per axis.
#[derive(Debug, Clone, Copy)]
pub struct ThermalGrid {
    pub l: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct ThermalParams {
    /// Stop when the sup-norm change of mu between accepted steps drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping exponent; halved whenever a step would raise E_theta.
    pub alpha0: f64,
    /// Damping exhaustion threshold; below this the iteration reports divergence.
    pub min_alpha: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5_000,
            alpha0: 0.5,
            min_alpha: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThermalSolution {
    pub density: GriddedDensity,
    /// log mu at every cell, finite everywhere (this is the iteration variable).
    pub log_density: Vec<f64>,
    pub theta: f64,
    pub c_theta: f64,
    /// sup over the grid of |h + V + log(mu)/theta - c_theta|.
    pub el_residual: f64,
    /// Free energy E_theta at the solution.
    pub energy: f64,
    pub iterations: usize,
    /// sup-norm change of mu after each accepted step.
    pub residual_history: Vec<f64>,
    /// Free energy after each accepted step; nonincreasing by construction.
    pub energy_history: Vec<f64>,
}

impl ThermalSolution {
    /// log mu at the cell containing x; None off the grid.
    pub fn log_value(&self, x: &[f64]) -> Option<f64> {
        self.density.cell_of(x).map(|i| self.log_density[i])
    }
}

pub fn thermal_equilibrium(
    potential: &dyn Potential,
    theta: f64,
    grid: ThermalGrid,
    params: &ThermalParams,
) -> Result<ThermalSolution> {
    if potential.dim() != 2 {
        return Err(Error::InvalidParameter(
            "the thermal solver is implemented for d = 2".into(),
        ));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter("theta must be positive".into()));
    }
    let kernel = RieszKernel::log2d();
    let mut density = GriddedDensity::zeros_centered(2, grid.l, grid.n)?;
    let convolver = GridConvolver::new(&density, &kernel)?;
    let cells = density.values.len();
    let w_cell = density.h * density.h;

    let v_cells: Vec<f64> = (0..cells).map(|i| potential.v(&density.point_of(i))).collect();

    // Start from the leading interior profile Delta V / c_d, floored so the
    // logarithm is finite, with the tail shaped by the potential.
    let c_d = 2.0 * std::f64::consts::PI;
    let mut w: Vec<f64> = (0..cells)
        .map(|i| {
            let f0 = potential.laplacian_v(&density.point_of(i)) / c_d;
            f0.max(1e-10).ln() - v_cells[i]
        })
        .collect();
    log_normalize(&mut w, w_cell);

    let mu_of = |w: &[f64]| -> Vec<f64> { w.iter().map(|t| t.exp()).collect() };
    let energy_of = |w: &[f64], mu: &[f64], field: &[f64]| -> f64 {
        let mut e = 0.0;
        for i in 0..mu.len() {
            e += mu[i] * (0.5 * field[i] + v_cells[i] + w[i] / theta);
        }
        e * w_cell
    };

    let mut mu = mu_of(&w);
    let mut field = convolver.field(&mu);
    let mut energy = energy_of(&w, &mu, &field);
    let mut alpha = params.alpha0;
    let mut history = Vec::new();
    let mut energy_history = Vec::new();
    let mut accepted_streak = 0usize;
    let mut iterations = 0usize;

    loop {
        iterations += 1;
        if iterations > params.max_iter {
            return Err(Error::NoConvergence {
                what: "thermal fixed point",
                residual: history.last().copied().unwrap_or(f64::INFINITY),
                tolerance: params.tol,
                iterations: params.max_iter,
            });
        }
        // Candidate: damped move toward the Gibbs target exp(-theta (V + h)).
        let mut w_cand: Vec<f64> = (0..cells)
            .map(|i| ((1.0 - alpha) * w[i] - alpha * theta * (v_cells[i] + field[i])).max(-700.0))
            .collect();
        log_normalize(&mut w_cand, w_cell);
        let mu_cand = mu_of(&w_cand);
        let field_cand = convolver.field(&mu_cand);
        let energy_cand = energy_of(&w_cand, &mu_cand, &field_cand);

        if energy_cand > energy + 1e-12 * (1.0 + energy.abs()) {
            alpha *= 0.5;
            accepted_streak = 0;
            if alpha < params.min_alpha {
                return Err(Error::Diverged {
                    what: "thermal fixed point",
                    history,
                });
            }
            continue;
        }

        let change = mu
            .iter()
            .zip(&mu_cand)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        history.push(change);
        energy_history.push(energy_cand);
        w = w_cand;
        mu = mu_cand;
        field = field_cand;
        energy = energy_cand;
        accepted_streak += 1;
        if accepted_streak >= 10 {
            alpha = (2.0 * alpha).min(params.alpha0);
            accepted_streak = 0;
        }
        if change < params.tol {
            break;
        }
    }

    // c_theta as the mass-weighted mean of the quantity that should be constant.
    let mut c_theta = 0.0;
    for i in 0..cells {
        c_theta += mu[i] * (v_cells[i] + field[i] + w[i] / theta);
    }
    c_theta *= w_cell;
    let el_residual = (0..cells)
        .map(|i| (v_cells[i] + field[i] + w[i] / theta - c_theta).abs())
        .fold(0.0f64, f64::max);

    density.values = mu;
    Ok(ThermalSolution {
        density,
        log_density: w,
        theta,
        c_theta,
        el_residual,
        energy,
        iterations,
        residual_history: history,
        energy_history,
    })
}

/// Shift w so that h^d sum exp(w) = 1, in a numerically safe way.
fn log_normalize(w: &mut [f64], cell_weight: f64) {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = w.iter().map(|t| (t - m).exp()).sum();
    let log_mass = cell_weight.ln() + m + sum.ln();
    for t in w.iter_mut() {
        *t = (*t - log_mass).max(-700.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::AnalyticPotential;

    #[test]
    fn quadratic_potential_plateaus_at_circle_law_density() {
        let potential = AnalyticPotential::RadialQuadratic { d: 2, a: 1.0 };
        let grid = ThermalGrid { l: 1.6, n: 96 };
        let theta = 50.0;
        let sol = thermal_equilibrium(&potential, theta, grid, &ThermalParams::default()).unwrap();

        assert!((sol.density.mass() - 1.0).abs() < 1e-12);
        assert!(sol.density.values.iter().all(|&v| v > 0.0), "strict positivity");
        assert!(
            sol.el_residual < 1e-6,
            "thermal Euler-Lagrange residual {}",
            sol.el_residual
        );
        // Interior plateau: Delta V / c_d = 1/pi, approached beyond all orders
        // of the 1/theta expansion away from the boundary layer.
        let center = sol.density.value(&[0.0, 0.0]);
        let f0 = 1.0 / std::f64::consts::PI;
        assert!(
            (center - f0).abs() < 2e-4,
            "center density {center} vs {f0}"
        );
        // The free energy decreased monotonically along accepted steps.
        let mut last = f64::INFINITY;
        for &e in &sol.energy_history {
            assert!(e <= last + 1e-12 * (1.0 + last.abs()), "energy rose: {e} > {last}");
            last = e;
        }
        assert!(sol.iterations < 5_000);
    }

    #[test]
    fn thermal_energy_beats_zero_temperature_profile() {
        // Minimality: E_theta at the solved measure is below E_theta of the
        // circle law sampled on the same grid.
        let potential = AnalyticPotential::RadialQuadratic { d: 2, a: 1.0 };
        let grid = ThermalGrid { l: 1.6, n: 96 };
        let theta = 50.0;
        let sol = thermal_equilibrium(&potential, theta, grid, &ThermalParams::default()).unwrap();

        let mut disk = GriddedDensity::zeros_centered(2, grid.l, grid.n).unwrap();
        for i in 0..disk.values.len() {
            let x = disk.point_of(i);
            if x[0] * x[0] + x[1] * x[1] <= 1.0 {
                disk.values[i] = 1.0 / std::f64::consts::PI;
            }
        }
        disk.normalize();
        let kernel = RieszKernel::log2d();
        let e_disk = 0.5 * disk.self_interaction(&kernel).unwrap()
            + disk.integrate(&|x| potential.v(x))
            + disk.entropy() / theta;
        assert!(
            sol.energy < e_disk,
            "E_theta(mu_theta) = {} should beat E_theta(mu_V) = {}",
            sol.energy,
            e_disk
        );
    }
}

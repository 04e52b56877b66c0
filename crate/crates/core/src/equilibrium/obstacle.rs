//! Obstacle-problem route to the equilibrium measure in d = 2.
//!
//! Solves min(-Delta h, h - psi) = 0 on a Dirichlet box with psi = c - V and
//! boundary data -log|x| (the far field of unit total charge). The measure is
//! recovered from the discrete Laplacian on the coincidence set, and c is fixed
//! by an outer bisection driving the recovered mass to 1; mass is monotone
//! increasing in c, which makes the bracket search safe.

use super::{GriddedDensity, Potential};
use crate::kernels::coulomb_constant;
use crate::{Error, Result};

/// Square Dirichlet box [-l, l]^2 with n nodes per axis (boundary included).
#[derive(Debug, Clone, Copy)]
pub struct ObstacleGrid {
    pub l: f64,
    pub n: usize,
}

impl ObstacleGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.l / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [-self.l + i as f64 * h, -self.l + j as f64 * h]
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleParams {
    /// SOR relaxation factor, clamped to [1, 1.9].
    pub omega: f64,
    /// Complementarity residual tolerance (sup norm).
    pub tol: f64,
    pub max_sweeps: usize,
    /// Stop the outer loop when |mass - 1| drops below this.
    pub mass_tol: f64,
    /// Initial bracket for the Euler-Lagrange constant c.
    pub c_bracket: (f64, f64),
}

impl Default for ObstacleParams {
    fn default() -> Self {
        Self {
            omega: 1.9,
            tol: 1e-8,
            max_sweeps: 100_000,
            mass_tol: 1e-6,
            c_bracket: (-2.0, 2.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub grid: ObstacleGrid,
    /// Solution h at the n x n nodes, row-major.
    pub h: Vec<f64>,
    /// Nodes where the constraint h = psi is active.
    pub coincidence: Vec<bool>,
    /// Recovered density (-Delta_h h)/c_d as a grid density (nodes as cells).
    pub mu: GriddedDensity,
    pub c: f64,
    pub mass: f64,
    pub sweeps: usize,
    pub bisection_steps: usize,
}

impl ObstacleSolution {
    /// Largest node distance from the origin inside the coincidence set.
    pub fn coincidence_radius(&self) -> f64 {
        let n = self.grid.n;
        let mut r2 = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if self.coincidence[i * n + j] {
                    let x = self.grid.node(i, j);
                    r2 = r2.max(x[0] * x[0] + x[1] * x[1]);
                }
            }
        }
        r2.sqrt()
    }
}

/// Projected SOR for min(-Delta h, h - psi) = 0 with fixed Dirichlet data.
/// `h` enters as the warm start and leaves as the solution; returns sweeps used.
pub fn psor(
    grid: &ObstacleGrid,
    psi: &[f64],
    boundary: &dyn Fn([f64; 2]) -> f64,
    h: &mut [f64],
    params: &ObstacleParams,
) -> Result<usize> {
    let n = grid.n;
    if psi.len() != n * n || h.len() != n * n {
        return Err(Error::InvalidInput("psi/h must hold n*n node values".into()));
    }
    let omega = params.omega.clamp(1.0, 1.9);
    let dx = grid.spacing();
    let inv_dx2 = 1.0 / (dx * dx);
    for i in 0..n {
        for j in 0..n {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                h[i * n + j] = boundary(grid.node(i, j));
            }
        }
    }
    let mut residual = f64::INFINITY;
    for sweep in 1..=params.max_sweeps {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                let nb = h[k - n] + h[k + n] + h[k - 1] + h[k + 1];
                let gs = 0.25 * nb;
                h[k] = (h[k] + omega * (gs - h[k])).max(psi[k]);
            }
        }
        // Complementarity residual on the relaxed iterate.
        residual = 0.0;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                let lap = (4.0 * h[k] - h[k - n] - h[k + n] - h[k - 1] - h[k + 1]) * inv_dx2;
                let r = lap.min(h[k] - psi[k]);
                residual = residual.max(r.abs());
            }
        }
        if residual < params.tol {
            return Ok(sweep);
        }
    }
    Err(Error::NoConvergence {
        what: "projected SOR",
        residual,
        tolerance: params.tol,
        iterations: params.max_sweeps,
    })
}

/// Recovered mass: sum of (-Delta_h h) dx^2 / c_d over interior nodes.
fn recovered_mass(grid: &ObstacleGrid, h: &[f64]) -> f64 {
    let n = grid.n;
    let c_d = coulomb_constant(2).expect("d = 2 is valid");
    let mut total = 0.0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let k = i * n + j;
            total += 4.0 * h[k] - h[k - n] - h[k + n] - h[k - 1] - h[k + 1];
        }
    }
    total / c_d
}

/// Full equilibrium solve: bisection on c so the coincidence set carries mass 1.
pub fn obstacle_solve(
    potential: &dyn Potential,
    grid: ObstacleGrid,
    params: &ObstacleParams,
) -> Result<ObstacleSolution> {
    if potential.dim() != 2 {
        return Err(Error::InvalidParameter(
            "the obstacle route is implemented for d = 2".into(),
        ));
    }
    let n = grid.n;
    let boundary = |x: [f64; 2]| -0.5 * (x[0] * x[0] + x[1] * x[1]).ln();
    let v_nodes: Vec<f64> = (0..n * n)
        .map(|k| {
            let x = grid.node(k / n, k % n);
            potential.v(&x)
        })
        .collect();
    let psi_for = |c: f64| -> Vec<f64> { v_nodes.iter().map(|v| c - v).collect() };

    // Warm-started mass evaluation; h persists across bisection steps.
    let mut h = vec![0.0; n * n];
    for k in 0..n * n {
        h[k] = boundary(grid.node(k / n, k % n)).min(0.0);
    }
    let mut sweeps_total = 0usize;
    let mut solve_at = |c: f64, h: &mut Vec<f64>| -> Result<f64> {
        let psi = psi_for(c);
        sweeps_total += psor(&grid, &psi, &boundary, h, params)?;
        Ok(recovered_mass(&grid, h))
    };

    let (mut c_lo, mut c_hi) = params.c_bracket;
    let mut m_lo = solve_at(c_lo, &mut h)?;
    let mut m_hi = solve_at(c_hi, &mut h)?;
    let mut expansions = 0;
    while m_lo > 1.0 {
        c_lo -= 1.0;
        m_lo = solve_at(c_lo, &mut h)?;
        expansions += 1;
        if expansions > 30 {
            return Err(Error::InvalidParameter(
                "could not bracket the equilibrium constant from below".into(),
            ));
        }
    }
    while m_hi < 1.0 {
        c_hi += 1.0;
        m_hi = solve_at(c_hi, &mut h)?;
        expansions += 1;
        if expansions > 30 {
            return Err(Error::InvalidParameter(
                "could not bracket the equilibrium constant from above".into(),
            ));
        }
    }

    let mut c = 0.5 * (c_lo + c_hi);
    let mut mass = solve_at(c, &mut h)?;
    let mut bisection_steps = 0;
    while (mass - 1.0).abs() > params.mass_tol && c_hi - c_lo > 1e-13 {
        if mass > 1.0 {
            c_hi = c;
        } else {
            c_lo = c;
        }
        c = 0.5 * (c_lo + c_hi);
        mass = solve_at(c, &mut h)?;
        bisection_steps += 1;
        if bisection_steps > 200 {
            return Err(Error::NoConvergence {
                what: "mass bisection on c",
                residual: (mass - 1.0).abs(),
                tolerance: params.mass_tol,
                iterations: bisection_steps,
            });
        }
    }

    let psi = psi_for(c);
    let coincidence: Vec<bool> = (0..n * n).map(|k| h[k] <= psi[k]).collect();
    if (0..n * n).any(|k| {
        coincidence[k] && {
            let (i, j) = (k / n, k % n);
            i == 0 || j == 0 || i == n - 1 || j == n - 1
        }
    }) {
        return Err(Error::InvalidParameter(
            "coincidence set touches the computational box; enlarge the domain".into(),
        ));
    }

    let c_d = coulomb_constant(2).expect("d = 2 is valid");
    let dx = grid.spacing();
    let mut mu_vals = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let k = i * n + j;
            let lap = (4.0 * h[k] - h[k - n] - h[k + n] - h[k - 1] - h[k + 1]) / (dx * dx);
            mu_vals[k] = (lap / c_d).max(0.0);
        }
    }
    let mu = GriddedDensity::new(
        2,
        vec![-grid.l - 0.5 * dx, -grid.l - 0.5 * dx],
        dx,
        vec![n, n],
        mu_vals,
    )?;

    Ok(ObstacleSolution {
        grid,
        h,
        coincidence,
        mu,
        c,
        mass,
        sweeps: sweeps_total,
        bisection_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::AnalyticPotential;

    #[test]
    fn inactive_constraint_gives_harmonic_solution() {
        // psi far below the boundary data: the constraint never binds and the
        // solver returns the discrete harmonic extension. x^2 - y^2 is in the
        // kernel of the 5-point Laplacian, so the recovery is exact.
        let grid = ObstacleGrid { l: 1.0, n: 33 };
        let harmonic = |x: [f64; 2]| x[0] * x[0] - x[1] * x[1];
        let psi = vec![-50.0; grid.n * grid.n];
        let mut h = vec![0.0; grid.n * grid.n];
        let params = ObstacleParams::default();
        psor(&grid, &psi, &harmonic, &mut h, &params).unwrap();
        let n = grid.n;
        for i in 0..n {
            for j in 0..n {
                let x = grid.node(i, j);
                assert!(
                    (h[i * n + j] - harmonic(x)).abs() < 1e-9,
                    "harmonic mismatch at ({i},{j})"
                );
                assert!(h[i * n + j] > psi[i * n + j]);
            }
        }
    }

    #[test]
    fn quadratic_potential_recovers_unit_disk() {
        // V = |x|^2/2: coincidence set is the unit disk, density 1/pi, c = 1/2.
        let grid = ObstacleGrid { l: 2.0, n: 65 };
        let potential = AnalyticPotential::RadialQuadratic { d: 2, a: 1.0 };
        let sol = obstacle_solve(&potential, grid, &ObstacleParams::default()).unwrap();
        let dx = grid.spacing();
        assert!((sol.mass - 1.0).abs() < 1e-5, "mass {}", sol.mass);
        assert!((sol.c - 0.5).abs() < 5.0 * dx * dx, "c {}", sol.c);
        assert!(
            (sol.coincidence_radius() - 1.0).abs() <= dx,
            "radius {}",
            sol.coincidence_radius()
        );
        // Interior of the coincidence set: density matches 1/pi closely.
        let n = grid.n;
        let target = 1.0 / std::f64::consts::PI;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let x = grid.node(i, j);
                if (x[0] * x[0] + x[1] * x[1]).sqrt() < 0.8 {
                    let v = sol.mu.values[i * n + j];
                    assert!(
                        (v - target).abs() < 0.01 * target,
                        "density {v} at {x:?}"
                    );
                }
            }
        }
    }
}

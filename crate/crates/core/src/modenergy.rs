//! Point-configuration energies: H_N, the modulated energy F_N, splitting and
//! blow-up identities, and transport derivatives A_1, A_2.
//!
//! Two evaluation routes coexist. Closed-form densities give F_N through their
//! exact potentials and self-interactions; that route feeds the splitting and
//! scaling identities. The node route (`NodeMeasure`) freezes one quadrature
//! rule and reuses it for F_N(t) along a transport and for the A_n sums, so
//! Taylor remainders in t are exact modulo roundoff rather than limited by
//! quadrature error.

use crate::equilibrium::{
    energy_functional, zeta, Density, EquilibriumResult, Potential, ThermalSolution,
};
use crate::kernels::RieszKernel;
use crate::numerics::tree_sum_n;
use crate::{Error, Result};

/// An ordered list of N points in R^d, stored flat (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub d: usize,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || coords.len() % d != 0 || coords.is_empty() {
            return Err(Error::InvalidInput(
                "coordinate buffer length must be a positive multiple of d".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("coordinates must be finite".into()));
        }
        Ok(Self { d, coords })
    }

    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::InvalidInput("row length must equal d".into()));
            }
            coords.extend_from_slice(r);
        }
        Self::new(d, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Smallest pairwise distance; 0 signals a coincident pair.
    pub fn min_gap(&self) -> f64 {
        let n = self.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(dist(self.point(i), self.point(j)));
            }
        }
        best
    }

    pub fn is_simple(&self) -> bool {
        self.min_gap() > 0.0
    }

    pub fn translated(&self, shift: &[f64]) -> Configuration {
        let mut coords = self.coords.clone();
        for p in coords.chunks_exact_mut(self.d) {
            for (a, s) in p.iter_mut().zip(shift) {
                *a += s;
            }
        }
        Configuration { d: self.d, coords }
    }

    pub fn dilated(&self, t: f64) -> Configuration {
        Configuration {
            d: self.d,
            coords: self.coords.iter().map(|c| c * t).collect(),
        }
    }
}

#[inline]
fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// A Lipschitz vector field with an analytic Jacobian and a recorded bound.
pub trait Transport: Sync {
    fn dim(&self) -> usize;
    fn v(&self, x: &[f64], out: &mut [f64]);
    /// Row-major d x d Jacobian.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
    /// Upper bound on the operator norm of the Jacobian.
    fn lipschitz(&self) -> f64;
}

/// v(x) = A x + b.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub d: usize,
    /// Row-major d x d matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AffineField {
    pub fn constant(b: Vec<f64>) -> Self {
        let d = b.len();
        Self { d, a: vec![0.0; d * d], b }
    }

    /// Rigid rotation rate omega in the plane.
    pub fn rotation2d(omega: f64) -> Self {
        Self {
            d: 2,
            a: vec![0.0, -omega, omega, 0.0],
            b: vec![0.0, 0.0],
        }
    }
}

impl Transport for AffineField {
    fn dim(&self) -> usize {
        self.d
    }

    fn v(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let mut acc = self.b[i];
            for j in 0..self.d {
                acc += self.a[i * self.d + j] * x[j];
            }
            out[i] = acc;
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }

    fn lipschitz(&self) -> f64 {
        // Frobenius norm dominates the operator norm.
        self.a.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

/// Compactly supported C-infinity bump: v(x) = amp * exp(-1/(1-u)) with
/// u = |x - center|^2 / radius^2, zero outside the ball.
#[derive(Debug, Clone)]
pub struct BumpField {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: Vec<f64>,
}

impl BumpField {
    fn profile(&self, x: &[f64]) -> (f64, f64) {
        let u: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / (self.radius * self.radius);
        if u >= 1.0 {
            return (0.0, 0.0);
        }
        let phi = (-1.0 / (1.0 - u)).exp();
        let dphi = -phi / ((1.0 - u) * (1.0 - u));
        (phi, dphi)
    }
}

impl Transport for BumpField {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn v(&self, x: &[f64], out: &mut [f64]) {
        let (phi, _) = self.profile(x);
        for (o, a) in out.iter_mut().zip(&self.amplitude) {
            *o = a * phi;
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let (_, dphi) = self.profile(x);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] =
                    self.amplitude[i] * dphi * 2.0 * (x[j] - self.center[j])
                        / (self.radius * self.radius);
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        // sup |phi'(u)| 2 sqrt(u) / R over u in [0,1) is below 2 * 4e^{-2} / R.
        let amp = self.amplitude.iter().map(|t| t * t).sum::<f64>().sqrt();
        amp * 8.0 * (-2.0f64).exp() / self.radius
    }
}

/// How a point moves for time t under the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    /// Straight-line map x + t v(x); linear in t, so the A_n Taylor identities
    /// hold exactly order by order.
    Line,
    /// The autonomous flow of dx/dt = v(x), integrated by RK4 in 16 steps.
    Flow,
}

pub fn transport_point(x: &[f64], field: &dyn Transport, t: f64, mode: TransportMode) -> Vec<f64> {
    let d = x.len();
    let mut buf = vec![0.0; d];
    match mode {
        TransportMode::Line => {
            field.v(x, &mut buf);
            x.iter().zip(&buf).map(|(a, v)| a + t * v).collect()
        }
        TransportMode::Flow => {
            let steps = 16;
            let h = t / steps as f64;
            let mut y = x.to_vec();
            let mut k1 = vec![0.0; d];
            let mut k2 = vec![0.0; d];
            let mut k3 = vec![0.0; d];
            let mut k4 = vec![0.0; d];
            for _ in 0..steps {
                field.v(&y, &mut k1);
                for i in 0..d {
                    buf[i] = y[i] + 0.5 * h * k1[i];
                }
                field.v(&buf, &mut k2);
                for i in 0..d {
                    buf[i] = y[i] + 0.5 * h * k2[i];
                }
                field.v(&buf, &mut k3);
                for i in 0..d {
                    buf[i] = y[i] + h * k3[i];
                }
                field.v(&buf, &mut k4);
                for i in 0..d {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            y
        }
    }
}

pub fn transport_configuration(
    x: &Configuration,
    field: &dyn Transport,
    t: f64,
    mode: TransportMode,
) -> Configuration {
    let mut coords = Vec::with_capacity(x.coords().len());
    for i in 0..x.len() {
        coords.extend(transport_point(x.point(i), field, t, mode));
    }
    Configuration { d: x.d, coords }
}

/// H_N = (1/2) sum_{i != j} g(x_i - x_j) + N sum_i V(x_i).
///
/// Coincident points return +infinity whenever the kernel is singular (s >= 0).
pub fn hamiltonian(x: &Configuration, potential: &dyn Potential, kernel: &RieszKernel) -> f64 {
    let n = x.len();
    let pair = tree_sum_n(n, &|i| {
        let mut acc = 0.0;
        for j in i + 1..n {
            acc += kernel.g(x.point(i), x.point(j));
        }
        acc
    });
    let confine = tree_sum_n(n, &|i| potential.v(x.point(i)));
    pair + n as f64 * confine
}

/// F_N = (1/2) sum_{i != j} g - N sum_i h^mu(x_i) + (N^2/2) iint g dmu dmu.
pub fn modulated_energy(x: &Configuration, mu: &Density, kernel: &RieszKernel) -> Result<f64> {
    let n = x.len();
    let pair = tree_sum_n(n, &|i| {
        let mut acc = 0.0;
        for j in i + 1..n {
            acc += kernel.g(x.point(i), x.point(j));
        }
        acc
    });
    if pair == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut cross = 0.0;
    for i in 0..n {
        cross += mu.potential(kernel, x.point(i))?;
    }
    let double = mu.self_interaction(kernel)?;
    Ok(pair - n as f64 * cross + 0.5 * (n as f64) * (n as f64) * double)
}

/// r_i = (1/4) min(nearest-neighbor distance, lambda).
pub fn nn_radii(x: &Configuration, lambda: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut nearest = f64::INFINITY;
            for j in 0..n {
                if j != i {
                    nearest = nearest.min(dist(x.point(i), x.point(j)));
                }
            }
            0.25 * nearest.min(lambda)
        })
        .collect()
}

/// The natural interparticle lengthscale (N ||mu||_inf)^{-1/d}.
pub fn default_lambda(n: usize, mu_sup: f64, d: usize) -> f64 {
    (n as f64 * mu_sup).powf(-1.0 / d as f64)
}

/// |H_N - (N^2 E(mu_V) + N sum zeta(x_i) + F_N)|; zero in exact arithmetic.
pub fn splitting_residual(
    x: &Configuration,
    eq: &EquilibriumResult,
    potential: &dyn Potential,
    kernel: &RieszKernel,
) -> Result<f64> {
    let n = x.len() as f64;
    let h = hamiltonian(x, potential, kernel);
    let f = modulated_energy(x, &eq.density, kernel)?;
    let e = energy_functional(&eq.density, potential, kernel)?;
    let mut zsum = 0.0;
    for i in 0..x.len() {
        zsum += zeta(x.point(i), eq, potential, kernel)?;
    }
    Ok((h - (n * n * e + n * zsum + f)).abs())
}

/// |H_N - (N^2 E_theta(mu_theta) - (N/theta) sum log mu_theta(x_i) + F_N)|.
///
/// Exact up to the thermal solver's Euler-Lagrange residual when the points
/// sit at grid cell centers.
pub fn thermal_splitting_residual(
    x: &Configuration,
    thermal: &ThermalSolution,
    potential: &dyn Potential,
    kernel: &RieszKernel,
) -> Result<f64> {
    let n = x.len() as f64;
    let h = hamiltonian(x, potential, kernel);
    let mu = Density::Gridded(thermal.density.clone());
    let f = modulated_energy(x, &mu, kernel)?;
    let mut logsum = 0.0;
    for i in 0..x.len() {
        let w = thermal.log_value(x.point(i)).ok_or_else(|| {
            Error::InvalidInput("configuration leaves the thermal grid".into())
        })?;
        logsum += w;
    }
    Ok((h - (n * n * thermal.energy - n / thermal.theta * logsum + f)).abs())
}

/// Two-sided check of the blow-up identity
/// N^{-s/d} (F_N(X, mu) + (N/2d) log N for s = 0) = F_N(N^{1/d} X, mu(N^{-1/d} .)).
pub fn blowup_scaling_residual(
    x: &Configuration,
    mu: &Density,
    kernel: &RieszKernel,
) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let d = x.d as f64;
    let lam = n.powf(1.0 / d);
    let f = modulated_energy(x, mu, kernel)?;
    let log_term = if kernel.s == 0.0 {
        n / (2.0 * d) * n.ln()
    } else {
        0.0
    };
    let lhs = lam.powf(-kernel.s) * (f + log_term);
    let rhs = modulated_energy(&x.dilated(lam), &mu.dilate(lam), kernel)?;
    Ok(((lhs - rhs).abs(), lhs))
}

/// A probability measure frozen onto explicit quadrature nodes. The same node
/// set serves F_N and the A_n sums, which keeps transport Taylor remainders
/// exact instead of quadrature-limited.
#[derive(Debug, Clone)]
pub struct NodeMeasure {
    pub d: usize,
    pts: Vec<f64>,
    w: Vec<f64>,
}

impl NodeMeasure {
    /// Discretize a density with about `level` radial resolution.
    pub fn from_density(mu: &Density, level: usize) -> Result<Self> {
        let d = mu.dim();
        let mut pts = Vec::new();
        let mut w = Vec::new();
        match mu {
            Density::Ball { d: 2, radius } => {
                let (r2s, wr) = crate::numerics::gauss_legendre_on(level, 0.0, radius * radius);
                let na = 2 * level;
                for (r2, wi) in r2s.iter().zip(&wr) {
                    let r = r2.sqrt();
                    for k in 0..na {
                        let phi = 2.0 * std::f64::consts::PI * k as f64 / na as f64;
                        pts.extend([r * phi.cos(), r * phi.sin()]);
                        w.push(wi / (radius * radius * na as f64));
                    }
                }
            }
            Density::Ball { d: 3, radius } => {
                let (rs, wr) = crate::numerics::gauss_legendre_on(level, 0.0, *radius);
                let (cts, wc) = crate::numerics::gauss_legendre_on(level / 2 + 2, -1.0, 1.0);
                let na = level;
                for (r, wri) in rs.iter().zip(&wr) {
                    for (ct, wci) in cts.iter().zip(&wc) {
                        let st = (1.0 - ct * ct).sqrt();
                        for k in 0..na {
                            let phi = 2.0 * std::f64::consts::PI * k as f64 / na as f64;
                            pts.extend([r * st * phi.cos(), r * st * phi.sin(), r * ct]);
                            w.push(wri * wci * 1.5 * r * r / (radius.powi(3) * na as f64));
                        }
                    }
                }
            }
            Density::Semicircle { radius } => {
                let (phis, wp) = crate::numerics::gauss_legendre_on(
                    4 * level,
                    -std::f64::consts::FRAC_PI_2,
                    std::f64::consts::FRAC_PI_2,
                );
                for (phi, wi) in phis.iter().zip(&wp) {
                    let c = phi.cos();
                    pts.push(radius * phi.sin());
                    w.push(wi * 2.0 * c * c / std::f64::consts::PI);
                }
            }
            Density::RadialPoly2D { radius, a0, a2 } => {
                let (rs, wr) = crate::numerics::gauss_legendre_on(level, 0.0, *radius);
                let na = 2 * level;
                for (r, wri) in rs.iter().zip(&wr) {
                    let density = a0 + a2 * r * r;
                    for k in 0..na {
                        let phi = 2.0 * std::f64::consts::PI * k as f64 / na as f64;
                        pts.extend([r * phi.cos(), r * phi.sin()]);
                        w.push(wri * density * 2.0 * std::f64::consts::PI * r / na as f64);
                    }
                }
            }
            Density::Gridded(g) => {
                for (idx, &v) in g.values.iter().enumerate() {
                    if v > 0.0 {
                        pts.extend(g.point_of(idx));
                        w.push(v * g.h.powi(g.d as i32));
                    }
                }
            }
            Density::Ball { .. } => {
                return Err(Error::InvalidParameter("unsupported ball dimension".into()))
            }
        }
        Ok(Self { d, pts, w })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    pub fn point(&self, k: usize) -> &[f64] {
        &self.pts[k * self.d..(k + 1) * self.d]
    }

    pub fn mass(&self) -> f64 {
        self.w.iter().sum()
    }

    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        self.w[k]
    }

    pub fn integrate<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> f64 {
        tree_sum_n(self.len(), &|k| self.w[k] * f(self.point(k)))
    }

    pub fn transported(&self, field: &dyn Transport, t: f64, mode: TransportMode) -> NodeMeasure {
        // Push-forward: nodes move, weights stay (exact change of variables).
        let mut pts = Vec::with_capacity(self.pts.len());
        for k in 0..self.len() {
            pts.extend(transport_point(self.point(k), field, t, mode));
        }
        NodeMeasure { d: self.d, pts, w: self.w.clone() }
    }

    pub fn potential(&self, kernel: &RieszKernel, x: &[f64]) -> f64 {
        tree_sum_n(self.len(), &|k| self.w[k] * kernel.g(x, self.point(k)))
    }

    /// (1/2) sum_{k != l} w_k w_l g(y_k - y_l); the diagonal is excluded, which
    /// is the only consistent choice for an atomic quadrature measure.
    pub fn half_double_energy(&self, kernel: &RieszKernel) -> f64 {
        let m = self.len();
        tree_sum_n(m, &|k| {
            let mut acc = 0.0;
            for l in k + 1..m {
                acc += self.w[k] * self.w[l] * kernel.g(self.point(k), self.point(l));
            }
            acc
        })
    }
}

/// F_N against the node measure; companion of `a_n` on the same nodes.
pub fn modulated_energy_nodes(
    x: &Configuration,
    nodes: &NodeMeasure,
    kernel: &RieszKernel,
) -> f64 {
    let n = x.len();
    let pair = tree_sum_n(n, &|i| {
        let mut acc = 0.0;
        for j in i + 1..n {
            acc += kernel.g(x.point(i), x.point(j));
        }
        acc
    });
    let cross = tree_sum_n(n, &|i| nodes.potential(kernel, x.point(i)));
    pair - n as f64 * cross + (n as f64) * (n as f64) * nodes.half_double_energy(kernel)
}

fn pair_term(
    kernel: &RieszKernel,
    field: &dyn Transport,
    order: u8,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let d = x.len();
    let mut vx = [0.0f64; 4];
    let mut vy = [0.0f64; 4];
    field.v(x, &mut vx[..d]);
    field.v(y, &mut vy[..d]);
    let mut dv = [0.0f64; 4];
    for i in 0..d {
        dv[i] = vx[i] - vy[i];
    }
    match order {
        1 => {
            let mut grad = [0.0f64; 4];
            kernel.grad_g(x, y, &mut grad[..d]);
            (0..d).map(|i| grad[i] * dv[i]).sum()
        }
        _ => {
            let mut hess = [0.0f64; 16];
            kernel.hess_g(x, y, &mut hess[..d * d]);
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += hess[i * d + j] * dv[i] * dv[j];
                }
            }
            acc
        }
    }
}

/// A_n = (1/2) iint_{off-diagonal} grad^n g(x-y) : (v(x)-v(y))^n
/// d(sum delta_{x_i} - N mu)^2 for n in {1, 2}, mu frozen on `nodes`.
pub fn a_n(
    x: &Configuration,
    nodes: &NodeMeasure,
    field: &dyn Transport,
    order: u8,
    kernel: &RieszKernel,
) -> Result<f64> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidParameter("transport order must be 1 or 2".into()));
    }
    let n = x.len();
    let m = nodes.len();
    let nf = n as f64;
    // Point-point, both diagonals excluded by symmetry (factor 2 against 1/2).
    let pp = tree_sum_n(n, &|i| {
        let mut acc = 0.0;
        for j in i + 1..n {
            acc += pair_term(kernel, field, order, x.point(i), x.point(j));
        }
        acc
    });
    // Point-measure cross term.
    let cross = tree_sum_n(n, &|i| {
        let xi = x.point(i);
        let mut acc = 0.0;
        for k in 0..m {
            if dist(xi, nodes.point(k)) > 0.0 {
                acc += nodes.w[k] * pair_term(kernel, field, order, xi, nodes.point(k));
            }
        }
        acc
    });
    // Measure-measure term, off-diagonal.
    let mm = tree_sum_n(m, &|k| {
        let mut acc = 0.0;
        for l in k + 1..m {
            acc += nodes.w[k]
                * nodes.w[l]
                * pair_term(kernel, field, order, nodes.point(k), nodes.point(l));
        }
        acc
    });
    Ok(pp - nf * cross + nf * nf * mm)
}

/// |A_1| over the sharp-commutator budget
/// ||grad v||_inf (F_N + (N/2d) log(N ||mu||_inf) 1_{s=0} + N^{1+s/d} ||mu||_inf^{s/d}).
pub fn commutator_ratio(
    x: &Configuration,
    mu: &Density,
    nodes: &NodeMeasure,
    field: &dyn Transport,
    kernel: &RieszKernel,
) -> Result<f64> {
    let n = x.len() as f64;
    let d = x.d as f64;
    let sup = mu.sup();
    let a1 = a_n(x, nodes, field, 1, kernel)?;
    let f = modulated_energy(x, mu, kernel)?;
    let log_term = if kernel.s == 0.0 {
        n / (2.0 * d) * (n * sup).ln()
    } else {
        0.0
    };
    let budget = f + log_term + n.powf(1.0 + kernel.s / d) * sup.powf(kernel.s / d);
    let lip = field.lipschitz();
    if lip == 0.0 {
        return Ok(0.0);
    }
    Ok(a1.abs() / (lip * budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::AnalyticPotential;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn disk() -> Density {
        Density::Ball { d: 2, radius: 1.0 }
    }

    fn sample_config(n: usize, mu: &Density, seed: u64) -> Configuration {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::new();
        for _ in 0..n {
            coords.extend(mu.sample(&mut rng));
        }
        Configuration::new(mu.dim(), coords).unwrap()
    }

    struct ZeroPotential(usize);
    impl Potential for ZeroPotential {
        fn dim(&self) -> usize {
            self.0
        }
        fn v(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn grad_v(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn laplacian_v(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn confining_for(&self, _kernel: &RieszKernel) -> bool {
            false
        }
    }

    #[test]
    fn hamiltonian_closed_cases() {
        let k = RieszKernel::log2d();
        let v0 = ZeroPotential(2);
        // Two points at distance 1: g = 0.
        let x = Configuration::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(hamiltonian(&x, &v0, &k), 0.0);
        // Coincident pair: +infinity.
        let x = Configuration::new(2, vec![0.3, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(hamiltonian(&x, &v0, &k), f64::INFINITY);
        assert!(!x.is_simple());
        // Unit equilateral triangle: all distances 1.
        let h = 3f64.sqrt() / 2.0;
        let x = Configuration::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.5, h]).unwrap();
        assert!(hamiltonian(&x, &v0, &k).abs() < 1e-14);
    }

    #[test]
    fn modulated_energy_single_point_frozen_value() {
        let k = RieszKernel::log2d();
        let x = Configuration::new(2, vec![0.0, 0.0]).unwrap();
        // -h(0) + 1/2 * 1/4 = -1/2 + 1/8 = -3/8.
        assert_relative_eq!(
            modulated_energy(&x, &disk(), &k).unwrap(),
            -0.375,
            epsilon = 1e-14
        );
    }

    #[test]
    fn modulated_energy_invariances() {
        let k = RieszKernel::log2d();
        let x = sample_config(12, &disk(), 3);
        let f = modulated_energy(&x, &disk(), &k).unwrap();
        // Permutation: reverse the points.
        let rows: Vec<Vec<f64>> = (0..x.len()).rev().map(|i| x.point(i).to_vec()).collect();
        let xr = Configuration::from_rows(2, &rows).unwrap();
        let fr = modulated_energy(&xr, &disk(), &k).unwrap();
        assert_relative_eq!(f, fr, max_relative = 1e-12);
        // Simultaneous translation of points and measure, on the node route.
        let nodes = NodeMeasure::from_density(&disk(), 24).unwrap();
        let f0 = modulated_energy_nodes(&x, &nodes, &k);
        let shift = [0.7, -1.3];
        let xt = x.translated(&shift);
        let mut moved = nodes.clone();
        for p in moved.pts.chunks_exact_mut(2) {
            p[0] += shift[0];
            p[1] += shift[1];
        }
        let ft = modulated_energy_nodes(&xt, &moved, &k);
        assert_relative_eq!(f0, ft, max_relative = 1e-10);
    }

    #[test]
    fn nn_radii_cases() {
        let x = Configuration::new(2, vec![0.0, 0.0, 0.2, 0.0]).unwrap();
        let r = nn_radii(&x, 1.0);
        assert_relative_eq!(r[0], 0.05);
        assert_relative_eq!(r[1], 0.05);
        // lambda caps an isolated point.
        let x = Configuration::new(2, vec![0.0, 0.0, 100.0, 0.0]).unwrap();
        assert_relative_eq!(nn_radii(&x, 1.0)[0], 0.25);
        // Coincident pair collapses to zero.
        let x = Configuration::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(nn_radii(&x, 1.0)[0], 0.0);
    }

    #[test]
    fn splitting_identity_on_the_circle_law() {
        let k = RieszKernel::log2d();
        let pot = AnalyticPotential::RadialQuadratic { d: 2, a: 1.0 };
        let eq = crate::equilibrium::analytic_equilibrium(&pot, &k).unwrap();
        for (n, seed) in [(4usize, 1u64), (16, 2), (48, 3)] {
            let x = sample_config(n, &disk(), seed);
            let res = splitting_residual(&x, &eq, &pot, &k).unwrap();
            let scale = (n * n) as f64;
            assert!(
                res <= 1e-11 * scale.max(1.0),
                "splitting residual {res} at N = {n}"
            );
        }
        // Points inside the support: the zeta term itself is negligible.
        let x = sample_config(16, &disk(), 5);
        let mut zsum = 0.0;
        for i in 0..x.len() {
            zsum += zeta(x.point(i), &eq, &pot, &k).unwrap();
        }
        assert!(zsum.abs() < 1e-9);
    }

    #[test]
    fn thermal_splitting_identity_at_cell_centers() {
        use crate::equilibrium::{thermal_equilibrium, ThermalGrid, ThermalParams};
        let k = RieszKernel::log2d();
        let pot = AnalyticPotential::RadialQuadratic { d: 2, a: 1.0 };
        let sol = thermal_equilibrium(
            &pot,
            50.0,
            ThermalGrid { l: 1.6, n: 64 },
            &ThermalParams::default(),
        )
        .unwrap();
        let g = &sol.density;
        let m = g.shape[1];
        let rows: Vec<Vec<f64>> = [(20usize, 20usize), (32, 32), (40, 28), (25, 38)]
            .iter()
            .map(|&(i, j)| g.point_of(i * m + j))
            .collect();
        let x = Configuration::from_rows(2, &rows).unwrap();
        let res = thermal_splitting_residual(&x, &sol, &pot, &k).unwrap();
        // The identity holds up to the grid Euler-Lagrange residual per point
        // pair, plus convolution roundoff.
        let n = x.len() as f64;
        assert!(
            res <= n * n * (sol.el_residual + 1e-9),
            "thermal splitting residual {res} vs el residual {}",
            sol.el_residual
        );
        // Off the grid the residual is undefined rather than silently wrong.
        let far = Configuration::new(2, vec![5.0, 5.0]).unwrap();
        assert!(thermal_splitting_residual(&far, &sol, &pot, &k).is_err());
    }

    #[test]
    fn blowup_identity_including_log_bookkeeping() {
        let k = RieszKernel::log2d();
        for (n, seed) in [(1usize, 11u64), (4, 12), (25, 13)] {
            let x = sample_config(n, &disk(), seed);
            let (res, lhs) = blowup_scaling_residual(&x, &disk(), &k).unwrap();
            assert!(
                res <= 1e-10 * lhs.abs().max(1.0),
                "blow-up residual {res} vs scale {lhs} at N = {n}"
            );
        }
        // 1D semicircle, s = 0: same bookkeeping in d = 1.
        let k1 = RieszKernel::log1d();
        let sc = Density::Semicircle { radius: 2.0 };
        let x = sample_config(9, &sc, 21);
        let (res, lhs) = blowup_scaling_residual(&x, &sc, &k1).unwrap();
        assert!(res <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn expected_modulated_energy_of_iid_samples() {
        // E[F_N] = -(N/2) iint g dmu dmu for iid draws from mu.
        let k = RieszKernel::log2d();
        let n = 8;
        let m = 4000;
        let mut vals = Vec::with_capacity(m);
        for seed in 0..m {
            let x = sample_config(n, &disk(), 1000 + seed as u64);
            vals.push(modulated_energy(&x, &disk(), &k).unwrap());
        }
        let (mean, var) = crate::numerics::mean_and_variance(&vals);
        let se = (var / m as f64).sqrt();
        let expected = -(n as f64) / 2.0 * 0.25;
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "mean {mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn transport_taylor_remainders_have_exact_orders() {
        let k = RieszKernel::log2d();
        let x = sample_config(16, &disk(), 42);
        let nodes = NodeMeasure::from_density(&disk(), 16).unwrap();
        let field = BumpField {
            center: vec![0.1, -0.2],
            radius: 1.5,
            amplitude: vec![0.4, 0.7],
        };
        let f0 = modulated_energy_nodes(&x, &nodes, &k);
        let a1 = a_n(&x, &nodes, &field, 1, &k).unwrap();
        let a2 = a_n(&x, &nodes, &field, 2, &k).unwrap();
        let ts = [1e-1, 1e-2, 1e-3];
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        for &t in &ts {
            let xt = transport_configuration(&x, &field, t, TransportMode::Line);
            let nt = nodes.transported(&field, t, TransportMode::Line);
            let ft = modulated_energy_nodes(&xt, &nt, &k);
            r1.push((ft - f0 - t * a1).abs());
            r2.push((ft - f0 - t * a1 - 0.5 * t * t * a2).abs());
        }
        for w in 0..ts.len() - 1 {
            let slope1 = (r1[w] / r1[w + 1]).ln() / (ts[w] / ts[w + 1]).ln();
            let slope2 = (r2[w] / r2[w + 1]).ln() / (ts[w] / ts[w + 1]).ln();
            assert!((slope1 - 2.0).abs() < 0.1, "first-order remainder slope {slope1}");
            assert!((slope2 - 3.0).abs() < 0.2, "second-order remainder slope {slope2}");
        }
        // The RK4 flow agrees with the line map at first order.
        let t = 1e-3;
        let xt = transport_configuration(&x, &field, t, TransportMode::Flow);
        let nt = nodes.transported(&field, t, TransportMode::Flow);
        let ft = modulated_energy_nodes(&xt, &nt, &k);
        assert!((ft - f0 - t * a1).abs() < 10.0 * r1[2].max(1e-12));
    }

    #[test]
    fn a2_vanishes_identically_for_the_1d_coulomb_kernel() {
        let k = RieszKernel::coulomb1d();
        let sc = Density::Semicircle { radius: 2.0 };
        let x = sample_config(10, &sc, 7);
        let nodes = NodeMeasure::from_density(&sc, 20).unwrap();
        let field = BumpField {
            center: vec![0.0],
            radius: 3.0,
            amplitude: vec![1.0],
        };
        assert_eq!(a_n(&x, &nodes, &field, 2, &k).unwrap(), 0.0);
        // A constant field kills every order.
        let const_field = AffineField::constant(vec![2.5]);
        assert_eq!(a_n(&x, &nodes, &const_field, 1, &k).unwrap(), 0.0);
        assert_eq!(a_n(&x, &nodes, &const_field, 2, &k).unwrap(), 0.0);
    }

    #[test]
    fn commutator_ratio_is_finite_and_scales() {
        let k = RieszKernel::log2d();
        let x = sample_config(24, &disk(), 9);
        let nodes = NodeMeasure::from_density(&disk(), 16).unwrap();
        let field = BumpField {
            center: vec![0.0, 0.0],
            radius: 1.2,
            amplitude: vec![0.5, -0.3],
        };
        let ratio = commutator_ratio(&x, &disk(), &nodes, &field, &k).unwrap();
        assert!(ratio.is_finite() && ratio >= 0.0);
        let zero = commutator_ratio(
            &x,
            &disk(),
            &nodes,
            &AffineField::constant(vec![1.0, 1.0]),
            &k,
        )
        .unwrap();
        assert_eq!(zero, 0.0);
    }
}

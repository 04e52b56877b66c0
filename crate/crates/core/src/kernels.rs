//! The Riesz/Coulomb interaction kernel and its truncations.
//!
//! The pair interaction is g(x) = -log|x| for s = 0 and g(x) = |x|^{-s}/s
//! otherwise, with the exponent restricted to d-2 <= s < d so that the kernel
//! is (up to a fractional power) the Green function of a local operator. The
//! truncation f_eta = (g - g(eta))_+ chops the singularity at scale eta; its
//! complement g_eta = g - f_eta coincides with the potential of a unit charge
//! smeared uniformly over the sphere of radius eta in the Coulomb cases
//! (Newton's theorem), which is what makes the truncated energy monotone.

use crate::{Error, Result};
use statrs::function::gamma::gamma;

/// Interaction kernel parameters: dimension `d` and Riesz exponent `s`.
///
/// `s = 0` is the logarithmic case (2D Coulomb, 1D log gas); `s = d-2 > 0` is
/// the plain Coulomb kernel in d >= 3; `d = 1, s = -1` is the 1D Coulomb gas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RieszKernel {
    pub d: usize,
    pub s: f64,
}

impl RieszKernel {
    /// Builds a kernel, enforcing d - 2 <= s < d.
    pub fn new(d: usize, s: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let df = d as f64;
        if !(df - 2.0..df).contains(&s) {
            return Err(Error::InvalidParameter(format!(
                "Riesz exponent s = {s} outside [d-2, d) = [{}, {}) for d = {d}",
                df - 2.0,
                df
            )));
        }
        Ok(Self { d, s })
    }

    /// 2D logarithmic kernel, the most common case in this crate.
    pub fn log2d() -> Self {
        Self { d: 2, s: 0.0 }
    }

    /// 1D logarithmic kernel (beta-ensembles).
    pub fn log1d() -> Self {
        Self { d: 1, s: 0.0 }
    }

    /// 3D Coulomb kernel g = 1/|x|.
    pub fn coulomb3d() -> Self {
        Self { d: 3, s: 1.0 }
    }

    /// 1D Coulomb kernel g = -|x|.
    pub fn coulomb1d() -> Self {
        Self { d: 1, s: -1.0 }
    }

    /// g as a function of the radius r = |x| >= 0.
    ///
    /// Singular evaluations follow extended-real arithmetic: r = 0 gives +inf
    /// for s >= 0 and 0 for s < 0. Hot loops never branch on errors.
    #[inline]
    pub fn g_radial(&self, r: f64) -> f64 {
        if self.s == 0.0 {
            -r.ln()
        } else {
            r.powf(-self.s) / self.s
        }
    }

    /// g(x - y) for points given as coordinate slices.
    #[inline]
    pub fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        self.g_radial(dist(x, y))
    }

    /// dg/dr, the radial derivative of the kernel.
    #[inline]
    pub fn g_prime_radial(&self, r: f64) -> f64 {
        // d/dr of r^{-s}/s is -r^{-s-1} for every s, including the log case.
        -r.powf(-self.s - 1.0)
    }

    /// Gradient of g at x - y, written into `out` (length d).
    #[inline]
    pub fn grad_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        // grad g = -|x|^{-s-2} x in all cases.
        let factor = -r2.powf(-(self.s + 2.0) / 2.0);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = factor * (a - b);
        }
    }

    /// Hessian of g at z = x - y: -|z|^{-s-2} I + (s+2)|z|^{-s-4} z z^T,
    /// written row-major into `out` (length d*d).
    pub fn hess_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut z = [0.0f64; 8];
        let z = &mut z[..d];
        for i in 0..d {
            z[i] = x[i] - y[i];
        }
        let r2: f64 = z.iter().map(|a| a * a).sum();
        // Factored as |z|^{-s-2} ((s+2) zz^T/|z|^2 - I): the d = 1 Coulomb case
        // (s = -1) then cancels to exactly zero instead of to roundoff.
        let scale = r2.powf(-(self.s + 2.0) / 2.0);
        for i in 0..d {
            for j in 0..d {
                let unit = (self.s + 2.0) * z[i] * z[j] / r2 - if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = scale * unit;
            }
        }
    }

    /// Truncated singular part f_eta(x) = (g(x) - g(eta))_+, supported in B(0, eta).
    ///
    /// The branch mirrors `g_eta_radial` so the split g = g_eta + f_eta is
    /// bit-exact outside B(0, eta) and a plain two-term sum inside.
    #[inline]
    pub fn f_eta_radial(&self, r: f64, eta: f64) -> f64 {
        if r >= eta {
            return 0.0;
        }
        (self.g_radial(r) - self.g_radial(eta)).max(0.0)
    }

    /// Truncated kernel g_eta = min(g, g(eta)); g is radially decreasing for
    /// every admissible (d, s), so the min is the plateau at radius eta.
    #[inline]
    pub fn g_eta_radial(&self, r: f64, eta: f64) -> f64 {
        if r >= eta {
            self.g_radial(r)
        } else {
            self.g_radial(eta)
        }
    }

    /// Normalization constant turning g into a Green function.
    ///
    /// For the Coulomb cases this is c_d = c_{d,s}; the equilibrium density on
    /// the droplet is Delta V / c_d.
    pub fn constant(&self) -> Result<f64> {
        riesz_constant(self.d, self.s)
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

/// Surface area of the unit sphere S^{d-1} in R^d.
///
/// Built by the two-step recurrence |S^{d-1}| = 2 pi |S^{d-3}| / (d - 2) from
/// |S^0| = 2 and |S^1| = 2 pi, so small dimensions come out exactly (4 pi in
/// d = 3, 2 pi^2 in d = 4) rather than through Gamma-function roundoff.
pub fn sphere_area(d: usize) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut area = if d % 2 == 1 { 2.0 } else { two_pi };
    let mut k = if d % 2 == 1 { 1 } else { 2 };
    while k < d {
        area *= two_pi / k as f64;
        k += 2;
    }
    area
}

/// Coulomb normalization c_d: 2*pi in dimension 2, |S^{d-1}| for d >= 3.
///
/// The 1D logarithmic constant is not Coulombic; ask `riesz_constant(1, 0)`.
pub fn coulomb_constant(d: usize) -> Result<f64> {
    match d {
        0 | 1 => Err(Error::InvalidParameter(format!(
            "coulomb_constant needs d >= 2, got {d}"
        ))),
        2 => Ok(2.0 * std::f64::consts::PI),
        _ => Ok(sphere_area(d)),
    }
}

/// Riesz normalization c_{d,s} with (-Delta)^{(d-s)/2} g = c_{d,s} delta_0.
///
/// Cases: 2*pi for s = 0 in d <= 2; |S^{d-1}| for the plain Coulomb point
/// s = d-2 > 0; the Gamma-function formula 2^{d-s} pi^{d/2} Gamma((d-s)/2) /
/// Gamma(s/2) in the strictly fractional range s > max(0, d-2); and 2 for the
/// one-dimensional Coulomb kernel g = -|x| (second derivative -2 delta_0).
pub fn riesz_constant(d: usize, s: f64) -> Result<f64> {
    let df = d as f64;
    if !(df - 2.0..df).contains(&s) {
        return Err(Error::InvalidParameter(format!(
            "(d, s) = ({d}, {s}) outside the supported range d-2 <= s < d"
        )));
    }
    let pi = std::f64::consts::PI;
    if s == 0.0 && d <= 2 {
        Ok(2.0 * pi)
    } else if s == df - 2.0 && s > 0.0 {
        Ok(sphere_area(d))
    } else if s > (df - 2.0).max(0.0) {
        Ok(2.0f64.powf(df - s) * pi.powf(df / 2.0) * gamma((df - s) / 2.0) / gamma(s / 2.0))
    } else if d == 1 && s == -1.0 {
        Ok(2.0)
    } else {
        Err(Error::InvalidParameter(format!(
            "no closed-form constant registered for (d, s) = ({d}, {s})"
        )))
    }
}

/// Unit charge smeared uniformly over the sphere of radius `eta` around `center`.
///
/// Its potential g * delta^{(eta)} equals g outside the sphere and freezes at
/// g(eta) inside (Newton), which is exactly g_eta in the Coulomb cases.
#[derive(Debug, Clone)]
pub struct SmearedCharge {
    pub center: Vec<f64>,
    pub eta: f64,
}

impl SmearedCharge {
    pub fn new(center: Vec<f64>, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter("smearing radius must be positive".into()));
        }
        Ok(Self { center, eta })
    }

    /// Potential of the smeared charge at `x`, by product-angle quadrature over
    /// the sphere: `n` nodes on the circle in 2D, an n-point Gauss-Legendre rule
    /// in cos(theta) times 2n uniform azimuthal nodes in 3D. With n = 64 the
    /// result carries the smooth-integrand quadrature to well below 1e-8 for
    /// |x - center| away from the sphere itself.
    pub fn potential_quadrature(&self, kernel: &RieszKernel, x: &[f64], n: usize) -> Result<f64> {
        if kernel.d != self.center.len() || x.len() != self.center.len() {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        let eta = self.eta;
        match kernel.d {
            2 => {
                // Trapezoid on the circle is spectrally accurate for periodic integrands.
                let mut acc = 0.0;
                for k in 0..n {
                    let phi = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
                    let y = [self.center[0] + eta * phi.cos(), self.center[1] + eta * phi.sin()];
                    acc += kernel.g(x, &y);
                }
                Ok(acc / n as f64)
            }
            3 => {
                let (nodes, weights) = crate::numerics::gauss_legendre(n);
                let m = 2 * n;
                let mut acc = 0.0;
                for (ct, w) in nodes.iter().zip(&weights) {
                    let st = (1.0 - ct * ct).sqrt();
                    let mut ring = 0.0;
                    for k in 0..m {
                        let phi = 2.0 * std::f64::consts::PI * (k as f64) / (m as f64);
                        let y = [
                            self.center[0] + eta * st * phi.cos(),
                            self.center[1] + eta * st * phi.sin(),
                            self.center[2] + eta * ct,
                        ];
                        ring += kernel.g(x, &y);
                    }
                    // Gauss-Legendre weight integrates d(cos theta) over [-1, 1];
                    // the uniform sphere measure is d(cos theta) dphi / (4 pi).
                    acc += w * ring / m as f64;
                }
                Ok(acc / 2.0)
            }
            d => Err(Error::InvalidParameter(format!(
                "sphere quadrature implemented for d in {{2, 3}}, got {d}"
            ))),
        }
    }
}

//! Densities tabulated on uniform grids, with log-kernel convolutions.
//!
//! Cell values live at cell centers; integrals use midpoint weights h^d. The
//! kernel side of every convolution is integrated exactly over each cell
//! (closed-form antiderivatives of log), so the logarithmic singularity never
//! meets a quadrature node: this is the singularity subtraction that keeps
//! potentials of gridded densities at O(h^2) accuracy with a small constant.

use crate::kernels::RieszKernel;
use crate::numerics::tree_sum_n;
use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::sync::Arc;

/// A nonnegative density sampled at the centers of a uniform grid (d = 1 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    pub d: usize,
    /// Lower corner of the grid box (cell centers start h/2 inside).
    pub origin: Vec<f64>,
    /// Uniform spacing along every axis.
    pub h: f64,
    /// Cells per axis; values are row-major over these.
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(d: usize, origin: Vec<f64>, h: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::InvalidParameter("gridded densities support d = 1 or 2".into()));
        }
        if origin.len() != d || shape.len() != d {
            return Err(Error::InvalidInput("origin/shape length must equal d".into()));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::InvalidInput(format!(
                "expected {n} values for shape {shape:?}, got {}",
                values.len()
            )));
        }
        if !(h > 0.0) || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "spacing must be positive and values finite and nonnegative".into(),
            ));
        }
        Ok(Self { d, origin, h, shape, values })
    }

    /// Uniform grid over a centered box [-l, l]^d with n cells per axis.
    pub fn zeros_centered(d: usize, l: f64, n: usize) -> Result<Self> {
        let h = 2.0 * l / n as f64;
        Self::new(d, vec![-l; d], h, vec![n; d], vec![0.0; n.pow(d as u32)])
    }

    /// Center coordinate of the cell with flat index `idx`.
    pub fn point_of(&self, idx: usize) -> Vec<f64> {
        match self.d {
            1 => vec![self.origin[0] + (idx as f64 + 0.5) * self.h],
            _ => {
                let m = self.shape[1];
                let i = idx / m;
                let j = idx % m;
                vec![
                    self.origin[0] + (i as f64 + 0.5) * self.h,
                    self.origin[1] + (j as f64 + 0.5) * self.h,
                ]
            }
        }
    }

    pub(crate) fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for a in 0..self.d {
            let t = (x[a] - self.origin[a]) / self.h;
            if t < 0.0 || t >= self.shape[a] as f64 {
                return None;
            }
            idx = idx * self.shape[a] + t as usize;
        }
        Some(idx)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.cell_of(x).map_or(0.0, |i| self.values[i])
    }

    pub fn mass(&self) -> f64 {
        self.h.powi(self.d as i32) * self.values.iter().sum::<f64>()
    }

    /// Rescale values so the total mass is exactly 1.
    pub fn normalize(&mut self) {
        let m = self.mass();
        for v in &mut self.values {
            *v /= m;
        }
    }

    pub fn support_radius(&self) -> f64 {
        let cutoff = 1e-12 * self.values.iter().cloned().fold(0.0, f64::max);
        let mut r2max = 0.0f64;
        for (idx, &v) in self.values.iter().enumerate() {
            if v > cutoff {
                let x = self.point_of(idx);
                r2max = r2max.max(x.iter().map(|t| t * t).sum());
            }
        }
        r2max.sqrt() + 0.5 * self.h * (self.d as f64).sqrt()
    }

    /// int mu log mu (the entropy integrand vanishes where mu does).
    pub fn entropy(&self) -> f64 {
        self.h.powi(self.d as i32)
            * self
                .values
                .iter()
                .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
                .sum::<f64>()
    }

    /// Midpoint-rule integral of f against the density.
    pub fn integrate(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let w = self.h.powi(self.d as i32);
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                acc += v * f(&self.point_of(i));
            }
        }
        w * acc
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let total: f64 = self.values.iter().sum();
        let mut u: f64 = rng.gen_range(0.0..total);
        let mut idx = self.values.len() - 1;
        for (i, v) in self.values.iter().enumerate() {
            if u < *v {
                idx = i;
                break;
            }
            u -= v;
        }
        let mut x = self.point_of(idx);
        for xi in &mut x {
            *xi += self.h * (rng.gen_range(0.0..1.0) - 0.5);
        }
        x
    }

    pub fn dilate(&self, t: f64) -> GriddedDensity {
        GriddedDensity {
            d: self.d,
            origin: self.origin.iter().map(|o| o * t).collect(),
            h: self.h * t,
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .map(|v| v / t.powi(self.d as i32))
                .collect(),
        }
    }

    /// h^mu(x) by direct summation with exact per-cell kernel integrals.
    pub fn potential_at(&self, kernel: &RieszKernel, x: &[f64]) -> Result<f64> {
        check_log_kernel(kernel, self.d)?;
        let h = self.h;
        Ok(tree_sum_n(self.values.len(), &|j| {
            if self.values[j] == 0.0 {
                return 0.0;
            }
            let y = self.point_of(j);
            let cell = match self.d {
                1 => cell_log_integral_1d(x[0] - y[0], h),
                _ => cell_log_integral_2d(x[0] - y[0], x[1] - y[1], h),
            };
            self.values[j] * cell
        }))
    }

    /// h^mu at every cell center, via FFT convolution with the exact cell table.
    pub fn potential_field(&self, kernel: &RieszKernel) -> Result<Vec<f64>> {
        Ok(GridConvolver::new(self, kernel)?.field(&self.values))
    }

    /// iint g d(mu x mu) with the same convolution (midpoint in the outer integral).
    pub fn self_interaction(&self, kernel: &RieszKernel) -> Result<f64> {
        let field = self.potential_field(kernel)?;
        let w = self.h.powi(self.d as i32);
        Ok(w * tree_sum_n(field.len(), &|i| field[i] * self.values[i]))
    }

    /// Serialize to the documented CSV layout (see docs/formats.md).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rieszlab gridded density v1")?;
        writeln!(w, "d,{}", self.d)?;
        writeln!(w, "origin,{}", join17(&self.origin))?;
        let upper: Vec<f64> = self
            .origin
            .iter()
            .zip(&self.shape)
            .map(|(o, n)| o + self.h * *n as f64)
            .collect();
        writeln!(w, "corner,{}", join17(&upper))?;
        writeln!(w, "spacing,{:.16e}", self.h)?;
        writeln!(
            w,
            "shape,{}",
            self.shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
        )?;
        writeln!(w, "values")?;
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut d = 0usize;
        let mut origin = Vec::new();
        let mut h = 0.0f64;
        let mut shape = Vec::new();
        let mut values = Vec::new();
        let mut in_values = false;
        for line in r.lines() {
            let line = line.map_err(|e| Error::InvalidInput(format!("read failure: {e}")))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if in_values {
                values.push(parse_f64(line)?);
                continue;
            }
            let mut parts = line.split(',');
            match parts.next().unwrap_or("") {
                "d" => d = parse_f64(parts.next().unwrap_or(""))? as usize,
                "origin" => origin = parts.map(parse_f64).collect::<Result<_>>()?,
                "corner" => {}
                "spacing" => h = parse_f64(parts.next().unwrap_or(""))?,
                "shape" => {
                    shape = parts
                        .map(|p| parse_f64(p).map(|v| v as usize))
                        .collect::<Result<_>>()?
                }
                "values" => in_values = true,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown gridded-density header field '{other}'"
                    )))
                }
            }
        }
        Self::new(d, origin, h, shape, values)
    }
}

fn join17(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("cannot parse '{s}' as a number")))
}

fn check_log_kernel(kernel: &RieszKernel, d: usize) -> Result<()> {
    if kernel.d != d || kernel.s != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gridded potentials are implemented for the log kernel in d = {d}; got (d, s) = ({}, {})",
            kernel.d, kernel.s
        )));
    }
    Ok(())
}

/// int over [v - h/2, v + h/2] of -log|t| dt (antiderivative t - t log|t|).
pub(crate) fn cell_log_integral_1d(v: f64, h: f64) -> f64 {
    let a = v - 0.5 * h;
    let b = v + 0.5 * h;
    let anti = |t: f64| {
        if t == 0.0 {
            0.0
        } else {
            t - t * t.abs().ln()
        }
    };
    anti(b) - anti(a)
}

/// int of -log|u| over the square cell of side h centered at (vx, vy).
pub(crate) fn cell_log_integral_2d(vx: f64, vy: f64, h: f64) -> f64 {
    let x0 = vx - 0.5 * h;
    let x1 = vx + 0.5 * h;
    let y0 = vy - 0.5 * h;
    let y1 = vy + 0.5 * h;
    -(log_corner(x1, y1) - log_corner(x0, y1) - log_corner(x1, y0) + log_corner(x0, y0))
}

/// F(x, y) = int_0^x int_0^y log sqrt(u^2 + v^2) dv du, odd in each argument.
fn log_corner(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let r2 = x * x + y * y;
    x * y * (0.5 * r2.ln() - 1.5) + 0.5 * x * x * (y / x).atan() + 0.5 * y * y * (x / y).atan()
}

/// FFT convolution engine pairing a grid layout with the exact cell-integrated
/// log kernel. Build once, apply to many value vectors (the thermal fixed
/// point reuses it every iteration).
pub struct GridConvolver {
    d: usize,
    shape: Vec<usize>,
    pad: Vec<usize>,
    kernel_hat: Vec<Complex64>,
    fwd: Vec<Arc<dyn rustfft::Fft<f64>>>,
    inv: Vec<Arc<dyn rustfft::Fft<f64>>>,
}

impl GridConvolver {
    pub fn new(grid: &GriddedDensity, kernel: &RieszKernel) -> Result<Self> {
        check_log_kernel(kernel, grid.d)?;
        let shape = grid.shape.clone();
        let pad: Vec<usize> = shape.iter().map(|n| (2 * n).next_power_of_two()).collect();
        let mut planner = FftPlanner::new();
        let fwd: Vec<_> = pad.iter().map(|&p| planner.plan_fft_forward(p)).collect();
        let inv: Vec<_> = pad.iter().map(|&p| planner.plan_fft_inverse(p)).collect();
        // Kernel table at signed offsets, laid out circularly.
        let h = grid.h;
        let mut kernel_buf = match grid.d {
            1 => {
                let p = pad[0];
                let mut buf = vec![Complex64::new(0.0, 0.0); p];
                for q in 0..p {
                    let off = signed_offset(q, p);
                    if off.unsigned_abs() < shape[0] {
                        buf[q] = Complex64::new(cell_log_integral_1d(off as f64 * h, h), 0.0);
                    }
                }
                buf
            }
            _ => {
                let (p, q) = (pad[0], pad[1]);
                let mut buf = vec![Complex64::new(0.0, 0.0); p * q];
                for i in 0..p {
                    let di = signed_offset(i, p);
                    if di.unsigned_abs() >= shape[0] {
                        continue;
                    }
                    for j in 0..q {
                        let dj = signed_offset(j, q);
                        if dj.unsigned_abs() >= shape[1] {
                            continue;
                        }
                        buf[i * q + j] = Complex64::new(
                            cell_log_integral_2d(di as f64 * h, dj as f64 * h, h),
                            0.0,
                        );
                    }
                }
                buf
            }
        };
        fft_nd(&mut kernel_buf, &pad, &fwd);
        Ok(Self {
            d: grid.d,
            shape,
            pad,
            kernel_hat: kernel_buf,
            fwd,
            inv,
        })
    }

    /// Convolve a value vector (row-major over the grid shape) with the kernel.
    pub fn field(&self, values: &[f64]) -> Vec<f64> {
        let total_pad: usize = self.pad.iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); total_pad];
        match self.d {
            1 => {
                for (i, &v) in values.iter().enumerate() {
                    buf[i] = Complex64::new(v, 0.0);
                }
            }
            _ => {
                let q = self.pad[1];
                let m = self.shape[1];
                for i in 0..self.shape[0] {
                    for j in 0..m {
                        buf[i * q + j] = Complex64::new(values[i * m + j], 0.0);
                    }
                }
            }
        }
        fft_nd(&mut buf, &self.pad, &self.fwd);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        fft_nd(&mut buf, &self.pad, &self.inv);
        let scale = 1.0 / total_pad as f64;
        match self.d {
            1 => (0..self.shape[0]).map(|i| buf[i].re * scale).collect(),
            _ => {
                let q = self.pad[1];
                let m = self.shape[1];
                let mut out = vec![0.0; self.shape[0] * m];
                for i in 0..self.shape[0] {
                    for j in 0..m {
                        out[i * m + j] = buf[i * q + j].re * scale;
                    }
                }
                out
            }
        }
    }
}

fn signed_offset(q: usize, p: usize) -> isize {
    if q <= p / 2 {
        q as isize
    } else {
        q as isize - p as isize
    }
}

/// In-place n-dimensional FFT (n = 1 or 2) on a row-major padded buffer.
fn fft_nd(buf: &mut [Complex64], pad: &[usize], plans: &[Arc<dyn rustfft::Fft<f64>>]) {
    match pad.len() {
        1 => plans[0].process(buf),
        _ => {
            let (p, q) = (pad[0], pad[1]);
            // Rows are contiguous.
            for row in buf.chunks_exact_mut(q) {
                plans[1].process(row);
            }
            // Columns via transpose, row FFTs, transpose back.
            let mut t = vec![Complex64::new(0.0, 0.0); p * q];
            for i in 0..p {
                for j in 0..q {
                    t[j * p + i] = buf[i * q + j];
                }
            }
            for col in t.chunks_exact_mut(p) {
                plans[0].process(col);
            }
            for i in 0..p {
                for j in 0..q {
                    buf[i * q + j] = t[j * p + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_legendre_on;
    use approx::assert_relative_eq;

    #[test]
    fn cell_integrals_match_quadrature() {
        let h = 0.25;
        // 1D: singular cells against closed forms, regular ones against quadrature.
        let a = h / 2.0;
        // Cell centered on the singularity: 2 int_0^a -log t = 2a(1 - log a).
        assert_relative_eq!(
            cell_log_integral_1d(0.0, h),
            2.0 * a * (1.0 - a.ln()),
            max_relative = 1e-14
        );
        // Cell with the singularity on its edge: int_0^h -log t = h(1 - log h).
        assert_relative_eq!(
            cell_log_integral_1d(a, h),
            h * (1.0 - h.ln()),
            max_relative = 1e-14
        );
        for v in [0.6, -2.3] {
            let (ts, ws) = gauss_legendre_on(200, v - a, v + a);
            let naive: f64 = ts.iter().zip(&ws).map(|(t, w)| -w * t.abs().ln()).sum();
            assert_relative_eq!(cell_log_integral_1d(v, h), naive, max_relative = 1e-12);
        }
        // 2D, away from the singularity: tensor Gauss-Legendre oracle.
        for (vx, vy) in [(0.7, -0.4), (1.3, 0.0), (2.0, 2.0)] {
            let (xs, wx) = gauss_legendre_on(64, vx - h / 2.0, vx + h / 2.0);
            let (ys, wy) = gauss_legendre_on(64, vy - h / 2.0, vy + h / 2.0);
            let mut naive = 0.0;
            for (x, wxi) in xs.iter().zip(&wx) {
                for (y, wyi) in ys.iter().zip(&wy) {
                    naive += -wxi * wyi * 0.5 * (x * x + y * y).ln();
                }
            }
            assert_relative_eq!(cell_log_integral_2d(vx, vy, h), naive, max_relative = 1e-12);
        }
        // 2D singular cell: closed form for the centered square, from the
        // corner antiderivative at (a, a): int over [-a,a]^2 of -log r
        // = a^2 (6 - 2 log(2 a^2) - pi).
        let exact = a * a * (6.0 - 2.0 * (2.0 * a * a).ln() - std::f64::consts::PI);
        assert_relative_eq!(cell_log_integral_2d(0.0, 0.0, h), exact, max_relative = 1e-12);
    }

    #[test]
    fn fft_field_matches_direct_sum() {
        let kernel = RieszKernel::log2d();
        let n = 24;
        let mut g = GriddedDensity::zeros_centered(2, 1.0, n).unwrap();
        for idx in 0..g.values.len() {
            let x = g.point_of(idx);
            let r2: f64 = x.iter().map(|t| t * t).sum();
            g.values[idx] = (-3.0 * r2).exp();
        }
        g.normalize();
        let field = g.potential_field(&kernel).unwrap();
        for &idx in &[0usize, 77, n * n / 2, n * n - 1] {
            let direct = g.potential_at(&kernel, &g.point_of(idx)).unwrap();
            assert_relative_eq!(field[idx], direct, max_relative = 1e-11);
        }
    }

    #[test]
    fn gridded_potential_converges_to_parabolic_profile_closed_form() {
        // mu(r) = (2/pi)(1 - r^2)_+ is continuous, so midpoint sampling carries
        // no boundary-jump error and the potential converges at O(h^2).
        let kernel = RieszKernel::log2d();
        let profile = crate::equilibrium::Density::RadialPoly2D {
            radius: 1.0,
            a0: 2.0 / std::f64::consts::PI,
            a2: -2.0 / std::f64::consts::PI,
        };
        let mut errs = Vec::new();
        for n in [40usize, 80] {
            let mut g = GriddedDensity::zeros_centered(2, 1.2, n).unwrap();
            for idx in 0..g.values.len() {
                let x = g.point_of(idx);
                g.values[idx] = profile.value(&x);
            }
            let mut err = 0.0f64;
            for x in [[0.0, 0.0], [0.3, -0.2], [1.7, 0.4]] {
                let exact = profile.potential(&kernel, &x).unwrap();
                let approx_val = g.potential_at(&kernel, &x).unwrap();
                err = err.max((exact - approx_val).abs());
            }
            errs.push(err);
        }
        assert!(
            errs[1] < 0.35 * errs[0],
            "potential error must shrink quadratically: {errs:?}"
        );
        assert!(errs[1] < 5e-4);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut g = GriddedDensity::zeros_centered(2, 0.8, 7).unwrap();
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs();
        }
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GriddedDensity::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(g, back);
    }
}

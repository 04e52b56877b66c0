//! Point-process observables and their statistical tests: discrepancy,
//! linear-statistic fluctuations with the Gaussian prediction for the planar
//! log case, number-variance curves, and local blow-up windows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::modenergy::{Configuration, NodeMeasure};
use crate::numerics::{gauss_legendre_on, mean_and_variance, tree_sum_n};
use crate::{Error, Result};

/// Radial profile of a test function; the variants double as smoothness tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Profile {
    /// exp(1 - 1/(1 - r^2)) inside the unit ball, infinitely smooth.
    Bump,
    /// 1 on r <= 1/2, a half-cosine ramp down to 0 at r = 1; C^1 only.
    Plateau,
}

impl Profile {
    fn value(self, r: f64) -> f64 {
        match self {
            Profile::Bump => {
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                }
            }
            Profile::Plateau => {
                if r >= 1.0 {
                    0.0
                } else if r <= 0.5 {
                    1.0
                } else {
                    let c = (std::f64::consts::PI * (r - 0.5)).cos();
                    c * c
                }
            }
        }
    }

    fn slope(self, r: f64) -> f64 {
        match self {
            Profile::Bump => {
                if r >= 1.0 {
                    0.0
                } else {
                    let q = 1.0 - r * r;
                    (1.0 - 1.0 / q).exp() * (-2.0 * r / (q * q))
                }
            }
            Profile::Plateau => {
                if !(0.5..1.0).contains(&r) {
                    0.0
                } else {
                    let t = std::f64::consts::PI * (r - 0.5);
                    -std::f64::consts::PI * (2.0 * t).sin()
                }
            }
        }
    }
}

/// Compactly supported radial test function amplitude * profile(|x - c| / l),
/// supported in the closed ball B(c, l).
#[derive(Debug, Clone, Serialize)]
pub struct TestFunction {
    d: usize,
    center: Vec<f64>,
    scale: f64,
    amplitude: f64,
    profile: Profile,
}

impl TestFunction {
    pub fn new(
        profile: Profile,
        center: Vec<f64>,
        scale: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if center.is_empty() || center.len() > 3 {
            return Err(Error::InvalidInput(format!(
                "center must have 1..=3 coordinates, got {}",
                center.len()
            )));
        }
        if !(scale > 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need scale > 0 and finite amplitude, got ({scale}, {amplitude})"
            )));
        }
        Ok(Self {
            d: center.len(),
            center,
            scale,
            amplitude,
            profile,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same shape and center at a new mesoscopic scale.
    pub fn rescaled(&self, scale: f64) -> Result<Self> {
        Self::new(self.profile, self.center.clone(), scale, self.amplitude)
    }

    fn radius_of(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt()
            / self.scale
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * self.profile.value(self.radius_of(x))
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = self.radius_of(x);
        if r == 0.0 || r >= 1.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let coeff = self.amplitude * self.profile.slope(r) / (r * self.scale * self.scale);
        for (o, (a, c)) in out.iter_mut().zip(x.iter().zip(&self.center)) {
            *o = coeff * (a - c);
        }
    }

    /// int |grad xi|^2 by tensor Gauss-Legendre over the support box, with the
    /// difference from a coarser rule as error bar.
    pub fn grad_sq_integral(&self) -> (f64, f64) {
        let fine = self.grad_sq_quadrature(96);
        let coarse = self.grad_sq_quadrature(64);
        (fine, (fine - coarse).abs())
    }

    fn grad_sq_quadrature(&self, n: usize) -> f64 {
        let d = self.d;
        let (xs, ws): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..d)
            .map(|k| gauss_legendre_on(n, self.center[k] - self.scale, self.center[k] + self.scale))
            .unzip();
        let mut idx = vec![0usize; d];
        let mut point = vec![0.0; d];
        let mut grad = vec![0.0; d];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for k in 0..d {
                point[k] = xs[k][idx[k]];
                w *= ws[k][idx[k]];
            }
            self.gradient(&point, &mut grad);
            total += w * grad.iter().map(|g| g * g).sum::<f64>();
            let mut axis = 0;
            loop {
                if axis == d {
                    return total;
                }
                idx[axis] += 1;
                if idx[axis] < n {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }
}

/// Homogeneous batch of configurations from one model, with its seeds.
#[derive(Debug, Clone)]
pub struct SampleEnsemble {
    d: usize,
    n: usize,
    configs: Vec<Configuration>,
    pub seeds: Vec<u64>,
    pub provenance: String,
}

impl SampleEnsemble {
    pub fn new(configs: Vec<Configuration>, seeds: Vec<u64>, provenance: &str) -> Result<Self> {
        let first = configs.first().ok_or_else(|| {
            Error::InvalidInput("ensemble needs at least one configuration".to_string())
        })?;
        let (d, n) = (first.d, first.len());
        if configs.iter().any(|c| c.d != d || c.len() != n) {
            return Err(Error::InvalidInput(
                "ensemble configurations must share dimension and size".to_string(),
            ));
        }
        if !seeds.is_empty() && seeds.len() != configs.len() {
            return Err(Error::InvalidInput(
                "seed list must be empty or match the configuration count".to_string(),
            ));
        }
        Ok(Self {
            d,
            n,
            configs,
            seeds,
            provenance: provenance.to_string(),
        })
    }

    pub fn from_seeds<F>(seeds: &[u64], provenance: &str, f: F) -> Result<Self>
    where
        F: Fn(u64) -> Result<Configuration>,
    {
        let configs = seeds.iter().map(|&s| f(s)).collect::<Result<Vec<_>>>()?;
        Self::new(configs, seeds.to_vec(), provenance)
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn points_per_config(&self) -> usize {
        self.n
    }

    pub fn config(&self, i: usize) -> &Configuration {
        &self.configs[i]
    }
}

/// Count in a region minus the reference mass N mu(region), both sides
/// resolved on the same quadrature nodes.
pub fn discrepancy_in<R: Fn(&[f64]) -> bool + Sync>(
    x: &Configuration,
    mu: &NodeMeasure,
    region: R,
) -> f64 {
    let count = (0..x.len()).filter(|&i| region(x.point(i))).count() as f64;
    let mass = tree_sum_n(mu.len(), &|k| {
        if region(mu.point(k)) {
            mu.weight(k)
        } else {
            0.0
        }
    });
    count - x.len() as f64 * mass
}

pub fn discrepancy(x: &Configuration, mu: &NodeMeasure, center: &[f64], radius: f64) -> f64 {
    let r2 = radius * radius;
    discrepancy_in(x, mu, |p: &[f64]| {
        p.iter()
            .zip(center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            <= r2
    })
}

/// Linear-statistic fluctuation sum xi(x_i) - N int xi d mu.
pub fn fluct(x: &Configuration, mu: &NodeMeasure, xi: &TestFunction) -> f64 {
    let points = tree_sum_n(x.len(), &|i| xi.value(x.point(i)));
    points - x.len() as f64 * mu.integrate(|p| xi.value(p))
}

/// Gaussian fluctuation report for an ensemble against one test function.
#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub samples: usize,
    pub empirical_mean: f64,
    pub mean_std_error: f64,
    pub empirical_variance: f64,
    pub predicted_variance: Option<f64>,
    pub predicted_error_bar: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub ad_statistic: f64,
    pub ad_p_value: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub bulk_distance: f64,
    pub warnings: Vec<String>,
}

/// Fluctuation moments and normality for `ensemble`, with the Gaussian
/// variance prediction (1/(2 pi beta)) int |grad xi|^2 in the planar log
/// case. The support of xi must stay a fixed fraction inside the droplet.
pub fn clt_harness(
    ensemble: &SampleEnsemble,
    mu: &NodeMeasure,
    xi: &TestFunction,
    beta: f64,
) -> Result<CltReport> {
    if ensemble.dim() != mu.d || xi.dim() != mu.d {
        return Err(Error::InvalidInput(
            "ensemble, measure, and test function dimensions differ".to_string(),
        ));
    }
    let droplet_radius = (0..mu.len())
        .map(|k| mu.point(k).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let xi_extent =
        xi.center().iter().map(|v| v * v).sum::<f64>().sqrt() + xi.scale();
    let bulk_distance = droplet_radius - xi_extent;
    if bulk_distance < 0.1 * (2.0 * droplet_radius) {
        return Err(Error::InvalidParameter(format!(
            "test function reaches within {bulk_distance:.3} of the droplet edge; \
             need at least 0.1 of the diameter {:.3}",
            2.0 * droplet_radius
        )));
    }
    let mut warnings = Vec::new();
    if ensemble.len() < 50 {
        warnings.push(format!(
            "ensemble of {} samples is under-powered for normality testing",
            ensemble.len()
        ));
    }
    let values: Vec<f64> = (0..ensemble.len())
        .map(|i| fluct(ensemble.config(i), mu, xi))
        .collect();
    let (mean, var) = mean_and_variance(&values);
    let (predicted, bar) = if mu.d == 2 {
        let (i_grad, i_err) = xi.grad_sq_integral();
        let c = 2.0 * std::f64::consts::PI * beta;
        (Some(i_grad / c), Some(i_err / c))
    } else {
        (None, None)
    };
    let ratio = predicted.map(|p| var / p);
    if let Some(r) = ratio {
        if !(0.5..=2.0).contains(&r) {
            warnings.push(format!(
                "empirical variance is {r:.2} times the Gaussian prediction"
            ));
        }
    }
    let (ad_statistic, ad_p_value) = normality_anderson_darling(&values);
    let (ks_statistic, ks_p_value) = normality_ks(&values);
    Ok(CltReport {
        samples: ensemble.len(),
        empirical_mean: mean,
        mean_std_error: (var / ensemble.len() as f64).sqrt(),
        empirical_variance: var,
        predicted_variance: predicted,
        predicted_error_bar: bar,
        variance_ratio: ratio,
        ad_statistic,
        ad_p_value,
        ks_statistic,
        ks_p_value,
        bulk_distance,
        warnings,
    })
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Anderson-Darling normality statistic (mean and variance estimated) and the
/// case-3 p-value approximation.
pub fn normality_anderson_darling(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 8, "too few samples for a meaningful test");
    let (mean, var) = mean_and_variance(xs);
    let sd = var.sqrt();
    let mut z: Vec<f64> = xs.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut a2 = -nf;
    for i in 0..n {
        let phi_lo = standard_normal_cdf(z[i]).clamp(1e-300, 1.0 - 1e-16);
        let phi_hi = standard_normal_cdf(z[n - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
        a2 -= (2.0 * i as f64 + 1.0) / nf * (phi_lo.ln() + (1.0 - phi_hi).ln());
    }
    let a_star = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a_star >= 0.6 {
        (1.2937 - 5.709 * a_star + 0.0186 * a_star * a_star).exp()
    } else if a_star >= 0.34 {
        (0.9177 - 4.279 * a_star - 1.38 * a_star * a_star).exp()
    } else if a_star >= 0.2 {
        1.0 - (-8.318 + 42.796 * a_star - 59.938 * a_star * a_star).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a_star - 223.73 * a_star * a_star).exp()
    };
    (a_star, p.clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov distance to the fitted normal with the asymptotic
/// Kolmogorov p-value; secondary indicator (parameters are estimated, so the
/// p-value runs lenient).
pub fn normality_ks(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 8, "too few samples for a meaningful test");
    let (mean, var) = mean_and_variance(xs);
    let sd = var.sqrt();
    let mut z: Vec<f64> = xs.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d = 0.0f64;
    for i in 0..n {
        let cdf = standard_normal_cdf(z[i]);
        d = d.max((i as f64 + 1.0) / nf - cdf).max(cdf - i as f64 / nf);
    }
    let lambda = d * (nf.sqrt() + 0.12 + 0.11 / nf.sqrt());
    let mut q = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        q += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, q.clamp(0.0, 1.0))
}

/// Count variances in balls around one center, with a log-log slope against
/// the mean count.
#[derive(Debug, Clone, Serialize)]
pub struct NumberVariance {
    pub radii: Vec<f64>,
    pub mean_counts: Vec<f64>,
    pub variances: Vec<f64>,
    pub slope: Option<f64>,
}

impl NumberVariance {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,mean_count,variance\n");
        for i in 0..self.radii.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                self.radii[i], self.mean_counts[i], self.variances[i]
            ));
        }
        out
    }

    /// Slope refit restricted to radii whose mean count lies in [lo, hi].
    pub fn slope_in_count_range(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .mean_counts
            .iter()
            .zip(&self.variances)
            .filter(|(m, v)| **m >= lo && **m <= hi && **v > 0.0)
            .map(|(m, v)| (m.ln(), v.ln()))
            .collect();
        fit_slope(&pts)
    }
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn number_variance_curve(
    ensemble: &SampleEnsemble,
    center: &[f64],
    radii: &[f64],
) -> Result<NumberVariance> {
    if center.len() != ensemble.dim() {
        return Err(Error::InvalidInput(
            "center dimension does not match the ensemble".to_string(),
        ));
    }
    if radii.is_empty() {
        return Err(Error::InvalidInput("need at least one radius".to_string()));
    }
    let mut mean_counts = Vec::with_capacity(radii.len());
    let mut variances = Vec::with_capacity(radii.len());
    for &r in radii {
        let r2 = r * r;
        let counts: Vec<f64> = (0..ensemble.len())
            .map(|i| {
                let c = ensemble.config(i);
                (0..c.len())
                    .filter(|&j| {
                        c.point(j)
                            .iter()
                            .zip(center)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            <= r2
                    })
                    .count() as f64
            })
            .collect();
        let (m, v) = mean_and_variance(&counts);
        mean_counts.push(m);
        variances.push(v);
    }
    let pts: Vec<(f64, f64)> = mean_counts
        .iter()
        .zip(&variances)
        .filter(|(m, v)| **m > 0.0 && **v > 0.0)
        .map(|(m, v)| (m.ln(), v.ln()))
        .collect();
    Ok(NumberVariance {
        radii: radii.to_vec(),
        mean_counts,
        variances,
        slope: fit_slope(&pts),
    })
}

/// Blow-up window: {N^{1/d} (x_i - center)} clipped to the sup-norm box of
/// the given half width. The window may come back empty, so the points are
/// returned as rows rather than a configuration.
pub fn local_field(x: &Configuration, center: &[f64], half_width: f64) -> Result<Vec<Vec<f64>>> {
    if center.len() != x.d {
        return Err(Error::InvalidInput(
            "center dimension does not match the configuration".to_string(),
        ));
    }
    let scale = (x.len() as f64).powf(1.0 / x.d as f64);
    let mut rows = Vec::new();
    for i in 0..x.len() {
        let p = x.point(i);
        let rescaled: Vec<f64> = p.iter().zip(center).map(|(a, c)| scale * (a - c)).collect();
        if rescaled.iter().all(|v| v.abs() <= half_width) {
            rows.push(rescaled);
        }
    }
    Ok(rows)
}

/// Poisson process with the given expected total count, uniform in the ball.
pub fn poisson_ball_sample(
    d: usize,
    expected: f64,
    radius: f64,
    seed: u64,
) -> Result<Configuration> {
    if d == 0 || d > 3 || !(expected > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidParameter(
            "poisson sample needs d in 1..=3, expected > 0, radius > 0".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = rand_distr::Poisson::new(expected)
        .map_err(|e| Error::InvalidParameter(format!("poisson intensity: {e}")))?;
    let count = rand_distr::Distribution::sample(&dist, &mut rng) as usize;
    let mut coords = Vec::with_capacity(count.max(1) * d);
    for _ in 0..count.max(1) {
        loop {
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
            if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                coords.extend(p);
                break;
            }
        }
    }
    Configuration::new(d, coords)
}

/// Independent uniform points in the ball, the i.i.d. control ensemble.
pub fn uniform_ball_sample(d: usize, n: usize, radius: f64, seed: u64) -> Result<Configuration> {
    if d == 0 || d > 3 || n == 0 || !(radius > 0.0) {
        return Err(Error::InvalidParameter(
            "uniform sample needs d in 1..=3, n >= 1, radius > 0".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        loop {
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
            if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                coords.extend(p);
                break;
            }
        }
    }
    Configuration::new(d, coords)
}

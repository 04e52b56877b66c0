//! Deterministic mean-field flows and their stability diagnostics: modulated
//! energy tracked against the stationary equilibrium measure, energy
//! dissipation and conservation checks, and a bounded-Lipschitz distance.

use serde::Serialize;

use crate::equilibrium::{Density, EquilibriumResult};
use crate::modenergy::{hamiltonian, modulated_energy, Configuration};
use crate::sampler::{force, GibbsModel};
use crate::{Error, Result};

/// Which mobility multiplies the mean-field force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowKind {
    /// M = I: dissipative gradient descent of H_N / N.
    Gradient,
    /// M = rotation by pi/2 (d = 2 only): H_N is conserved exactly in
    /// continuous time.
    Conservative,
}

#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub t_final: f64,
    /// None: the model's default explicit step.
    pub step: Option<f64>,
    /// Target number of recorded rows (at least 2: endpoints).
    pub snapshots: usize,
    /// Constant completing the positivity shift N^{1+s/d} c0 in the
    /// normalized energy; 1 is a safe default for the bundled densities.
    pub c0: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { t_final: 1.0, step: None, snapshots: 20, c0: 1.0 }
    }
}

/// Time series of the flow diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryReport {
    pub flow: FlowKind,
    pub times: Vec<f64>,
    /// F_N(X^t, mu_V).
    pub modulated: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    /// Bounded-Lipschitz distance of the empirical measure to mu_V.
    pub bl_distance: Vec<f64>,
    /// (F_N + (N/2d) log N for s = 0 + c0 N^{1+s/d}) / N^2; positive and
    /// expected to obey a Gronwall envelope.
    pub normalized: Vec<f64>,
    pub gronwall_c0: f64,
    /// Smallest C with normalized(t) <= exp(C t) normalized(0) on the grid.
    pub gronwall_c: f64,
}

impl TrajectoryReport {
    pub fn to_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "time,modulated_energy,hamiltonian,bl_distance,normalized")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i],
                self.modulated[i],
                self.hamiltonian[i],
                self.bl_distance[i],
                self.normalized[i]
            )?;
        }
        Ok(())
    }
}

fn apply_mobility(kind: FlowKind, d: usize, f: &[f64], out: &mut Vec<f64>) {
    out.clear();
    match kind {
        FlowKind::Gradient => out.extend_from_slice(f),
        FlowKind::Conservative => {
            // Rotation by pi/2 on each point's force vector.
            for p in f.chunks_exact(d) {
                out.push(-p[1]);
                out.push(p[0]);
            }
        }
    }
}

/// One explicit step: Euler for the gradient flow, midpoint for the
/// conservative flow (second order keeps its energy drift measurable).
fn flow_step(
    model: &GibbsModel,
    kind: FlowKind,
    x: &Configuration,
    h: f64,
    scratch: &mut Vec<f64>,
) -> Result<Configuration> {
    let d = x.d;
    let f = force(x, model)?;
    apply_mobility(kind, d, &f, scratch);
    match kind {
        FlowKind::Gradient => {
            let coords: Vec<f64> = x
                .coords()
                .iter()
                .zip(scratch.iter())
                .map(|(xi, vi)| xi + h * vi)
                .collect();
            Configuration::new(d, coords)
        }
        FlowKind::Conservative => {
            let mid: Vec<f64> = x
                .coords()
                .iter()
                .zip(scratch.iter())
                .map(|(xi, vi)| xi + 0.5 * h * vi)
                .collect();
            let xm = Configuration::new(d, mid)?;
            let fm = force(&xm, model)?;
            apply_mobility(kind, d, &fm, scratch);
            let coords: Vec<f64> = x
                .coords()
                .iter()
                .zip(scratch.iter())
                .map(|(xi, vi)| xi + h * vi)
                .collect();
            Configuration::new(d, coords)
        }
    }
}

/// Advance the flow for `n_steps` of size h. Exposed for order checks.
pub fn flow_advance(
    model: &GibbsModel,
    kind: FlowKind,
    x0: &Configuration,
    h: f64,
    n_steps: usize,
) -> Result<Configuration> {
    let mut x = x0.clone();
    let mut scratch = Vec::new();
    for _ in 0..n_steps {
        x = flow_step(model, kind, &x, h, &mut scratch)?;
        if x.coords().iter().any(|c| c.abs() > 1e6) {
            return Err(Error::Diverged {
                what: "mean-field flow",
                history: vec![h, x.coords().iter().fold(0.0f64, |m, c| m.max(c.abs()))],
            });
        }
    }
    Ok(x)
}

/// Track F_N(X^t, mu_V), H_N, and the bounded-Lipschitz distance along the
/// flow. The reference measure is frozen at the stationary mu_V.
pub fn meanfield_track(
    model: &GibbsModel,
    eq: &EquilibriumResult,
    x0: &Configuration,
    kind: FlowKind,
    opts: &TrackOptions,
) -> Result<TrajectoryReport> {
    if kind == FlowKind::Conservative && x0.d != 2 {
        return Err(Error::InvalidParameter(
            "the rotational mobility is a planar construction".into(),
        ));
    }
    if !(opts.t_final > 0.0) || opts.snapshots < 2 {
        return Err(Error::InvalidParameter(
            "need positive final time and at least two snapshots".into(),
        ));
    }
    let h = opts.step.unwrap_or_else(|| model.default_step());
    let n_steps = (opts.t_final / h).ceil() as usize;
    let record_every = (n_steps / (opts.snapshots - 1)).max(1);

    let n = x0.len() as f64;
    let d = x0.d as f64;
    let shift = if model.kernel.s == 0.0 { n / (2.0 * d) * n.ln() } else { 0.0 };
    let lift = opts.c0 * n.powf(1.0 + model.kernel.s / d);

    let mut report = TrajectoryReport {
        flow: kind,
        times: Vec::new(),
        modulated: Vec::new(),
        hamiltonian: Vec::new(),
        bl_distance: Vec::new(),
        normalized: Vec::new(),
        gronwall_c0: opts.c0,
        gronwall_c: 0.0,
    };
    let record = |t: f64, x: &Configuration, rep: &mut TrajectoryReport| -> Result<()> {
        let f = modulated_energy(x, &eq.density, &model.kernel)?;
        rep.times.push(t);
        rep.modulated.push(f);
        rep.hamiltonian.push(hamiltonian(x, model.potential, &model.kernel));
        rep.bl_distance.push(empirical_distance(x, &eq.density));
        rep.normalized.push((f + shift + lift) / (n * n));
        Ok(())
    };

    let mut x = x0.clone();
    let mut scratch = Vec::new();
    record(0.0, &x, &mut report)?;
    for step in 1..=n_steps {
        x = flow_step(model, kind, &x, h, &mut scratch)?;
        if x.coords().iter().any(|c| c.abs() > 1e6) {
            return Err(Error::Diverged {
                what: "mean-field flow",
                history: vec![step as f64 * h],
            });
        }
        if step % record_every == 0 || step == n_steps {
            record(step as f64 * h, &x, &mut report)?;
        }
    }

    let e0 = report.normalized[0];
    let mut c: f64 = 0.0;
    if e0 > 0.0 {
        for (t, e) in report.times.iter().zip(&report.normalized).skip(1) {
            if *e > e0 {
                c = c.max((e / e0).ln() / t);
            }
        }
    }
    report.gronwall_c = c;
    Ok(report)
}

/// The fixed Lipschitz-1 dictionary behind [`empirical_distance`]:
/// distance caps min(|x - c|, 1) on a small grid of centers, clipped
/// coordinates, and low-frequency trigonometric waves cos(k.x)/|k|,
/// sin(k.x)/|k| for nonzero integer k with |k|_inf <= 2.
pub fn bl_dictionary(d: usize) -> Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> {
    let mut dict: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> = Vec::new();
    let mut centers: Vec<Vec<f64>> = vec![vec![0.0; d]];
    for a in 0..d {
        for s in [-0.5, 0.5] {
            let mut c = vec![0.0; d];
            c[a] = s;
            centers.push(c);
        }
    }
    for c in centers {
        dict.push(Box::new(move |x: &[f64]| {
            let r: f64 = x
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            r.min(1.0)
        }));
    }
    for a in 0..d {
        dict.push(Box::new(move |x: &[f64]| x[a].clamp(-3.0, 3.0)));
    }
    // Half of the nonzero lattice; the other half is redundant (cos even,
    // sin odd).
    let mut ks: Vec<Vec<f64>> = Vec::new();
    let range = [-2i32, -1, 0, 1, 2];
    match d {
        1 => {
            for k in [1, 2] {
                ks.push(vec![k as f64]);
            }
        }
        _ => {
            for &k1 in &range {
                for &k2 in &range {
                    if k1 > 0 || (k1 == 0 && k2 > 0) {
                        ks.push(vec![k1 as f64, k2 as f64]);
                    }
                }
            }
        }
    }
    for k in ks {
        let norm = k.iter().map(|t| t * t).sum::<f64>().sqrt();
        let kc = k.clone();
        dict.push(Box::new(move |x: &[f64]| {
            let p: f64 = x.iter().zip(&kc).map(|(a, b)| a * b).sum();
            p.cos() / norm
        }));
        dict.push(Box::new(move |x: &[f64]| {
            let p: f64 = x.iter().zip(&k).map(|(a, b)| a * b).sum();
            p.sin() / norm
        }));
    }
    dict
}

/// Bounded-Lipschitz distance between the empirical measure of X and mu,
/// maximized over [`bl_dictionary`].
pub fn empirical_distance(x: &Configuration, mu: &Density) -> f64 {
    let n = x.len() as f64;
    let mut best: f64 = 0.0;
    for f in bl_dictionary(x.d) {
        let emp: f64 = (0..x.len()).map(|i| f(x.point(i))).sum::<f64>() / n;
        let cont = mu.integrate(&|p: &[f64]| f(p));
        best = best.max((emp - cont).abs());
    }
    best
}

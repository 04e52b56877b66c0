//! Shared numerical utilities: quadrature rules, special functions, and
//! deterministic parallel reductions.
//!
//! Floating-point sums here are evaluated over a fixed binary tree of index
//! blocks, so results are bitwise reproducible no matter how many worker
//! threads the runtime happens to use.

use rayon::join;

/// Below this many terms a tree sum just runs sequentially.
const TREE_BLOCK: usize = 2048;

/// Sum of f(i) for i in [lo, hi) over a fixed binary tree.
///
/// The tree shape depends only on the index range, never on thread timing, so
/// identical inputs give bitwise identical sums on any thread count.
pub fn tree_sum<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if hi - lo <= TREE_BLOCK {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = join(|| tree_sum(lo, mid, f), || tree_sum(mid, hi, f));
    a + b
}

/// Convenience wrapper over [0, n).
pub fn tree_sum_n<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    tree_sum(0, n, f)
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; nodes are accurate to machine
/// precision for the moderate orders (n <= 512) used in this crate.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_and_derivative(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

/// Exponential integral E_1(x) = int_x^inf e^{-t}/t dt for x > 0.
///
/// Power series below x = 1, modified Lentz continued fraction above; both
/// branches give full double precision (Abramowitz & Stegun 5.1.11, 5.1.22).
pub fn exp_int_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E_1 requires a positive argument");
    if x <= 1.0 {
        // E_1(x) = -gamma - ln x + sum_{k>=1} (-1)^{k+1} x^k / (k * k!)
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..=40 {
            let kf = k as f64;
            term *= -x / kf;
            let contrib = -term / kf;
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs().max(1.0) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        // Continued fraction e^{-x} * 1/(x+1- 1/(x+3- 4/(x+5- 9/(...))))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for k in 1..200 {
            let a = -(k as f64) * (k as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x).exp() * h
    }
}

/// Upper incomplete gamma function Gamma(a, x) = int_x^inf t^{a-1} e^{-t} dt, a > 0.
///
/// Series for the lower function when x < a + 1, modified Lentz continued
/// fraction otherwise; both run to full double precision.
pub fn upper_gamma(a: f64, x: f64) -> f64 {
    use statrs::function::gamma::gamma;
    assert!(a > 0.0, "upper_gamma needs a > 0");
    if x <= 0.0 {
        return gamma(a);
    }
    let log_prefactor = a * x.ln() - x;
    if x < a + 1.0 {
        // gamma_lower(a, x) = x^a e^{-x} sum_n x^n / (a (a+1) ... (a+n)).
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        gamma(a) - sum * log_prefactor.exp()
    } else {
        // Gamma(a, x) = e^{-x} x^a / (x + 1 - a - 1(1-a)/(x + 3 - a - ...)).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b.max(tiny);
        let mut h = d;
        for k in 1..500 {
            let an = -(k as f64) * (k as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefactor.exp() * h
    }
}

/// Mean and (unbiased) sample variance in one pass.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

// LAPACK's root-free QR iteration for symmetric tridiagonal spectra. The
// workspace links the system BLAS/LAPACK library directly (see the cargo
// config), so a plain declaration is enough.
extern "C" {
    fn dsterf_(n: *const i32, d: *mut f64, e: *mut f64, info: *mut i32);
}

/// Eigenvalues of the symmetric tridiagonal matrix with the given diagonal and
/// sub-diagonal, ascending.
pub fn sym_tridiagonal_eigenvalues(
    mut diag: Vec<f64>,
    mut sub: Vec<f64>,
) -> crate::Result<Vec<f64>> {
    if sub.len() + 1 != diag.len() {
        return Err(crate::Error::InvalidInput(
            "sub-diagonal must be one shorter than the diagonal".into(),
        ));
    }
    let n = diag.len() as i32;
    let mut info = 0i32;
    unsafe { dsterf_(&n, diag.as_mut_ptr(), sub.as_mut_ptr(), &mut info) };
    if info != 0 {
        return Err(crate::Error::Backend(format!(
            "tridiagonal eigenvalue iteration failed with code {info}"
        )));
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // Degree 15 is the highest exactly integrated by 8 nodes.
        let val: f64 = x.iter().zip(&w).map(|(t, wi)| wi * t.powi(14)).sum();
        assert_relative_eq!(val, 2.0 / 15.0, max_relative = 1e-13);
        let (x, w) = gauss_legendre_on(32, 0.0, std::f64::consts::PI);
        let val: f64 = x.iter().zip(&w).map(|(t, wi)| wi * t.sin()).sum();
        assert_relative_eq!(val, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn gauss_legendre_odd_order() {
        let (x, w) = gauss_legendre(5);
        assert_eq!(x[2], 0.0);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        let val: f64 = x.iter().zip(&w).map(|(t, wi)| wi * t.powi(8)).sum();
        assert_relative_eq!(val, 2.0 / 9.0, max_relative = 1e-13);
    }

    #[test]
    fn exp_int_matches_quadrature() {
        // Oracle: direct Gauss-Legendre quadrature of the defining integral on
        // [x, x + 60] (the tail beyond is below double precision).
        for x in [0.05, 0.3, 0.9, 1.0, 1.1, 2.5, 7.0, 30.0] {
            let (t, w) = gauss_legendre_on(400, x, x + 60.0);
            let oracle: f64 = t.iter().zip(&w).map(|(ti, wi)| wi * (-ti).exp() / ti).sum();
            assert_relative_eq!(exp_int_e1(x), oracle, max_relative = 1e-12);
        }
        // A&S 5.1 table value.
        assert_relative_eq!(exp_int_e1(1.0), 0.219_383_934_395_520_3, max_relative = 1e-13);
    }

    #[test]
    fn upper_gamma_values() {
        // Gamma(1, x) = e^{-x} exactly.
        assert_relative_eq!(upper_gamma(1.0, 2.0), (-2.0f64).exp(), max_relative = 1e-13);
        // Quadrature oracle: the defining integral truncated where the tail
        // drops below double precision.
        for (a, x) in [(0.5, 0.7), (0.5, 3.0), (1.5, 0.2), (2.5, 6.0), (0.75, 1.0)] {
            let (t, w) = gauss_legendre_on(600, x, x + 90.0);
            let oracle: f64 = t
                .iter()
                .zip(&w)
                .map(|(ti, wi)| wi * ti.powf(a - 1.0) * (-ti).exp())
                .sum();
            assert_relative_eq!(upper_gamma(a, x), oracle, max_relative = 1e-12);
        }
        // Recurrence Gamma(a+1, x) = a Gamma(a, x) + x^a e^{-x} ties the series
        // branch (x < a+1) to the continued-fraction branch (x >= a+1).
        for x in [0.4f64, 1.2, 2.6, 8.0] {
            let lhs = upper_gamma(1.5, x);
            let rhs = 0.5 * upper_gamma(0.5, x) + x.sqrt() * (-x).exp();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
        }
    }

    #[test]
    fn tree_sum_matches_sequential_and_is_deterministic() {
        let n = 100_000;
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let tree = tree_sum_n(n, &f);
        let tree2 = tree_sum_n(n, &f);
        assert_eq!(tree.to_bits(), tree2.to_bits());
        let seq: f64 = (0..n).map(f).sum();
        assert_relative_eq!(tree, seq, max_relative = 1e-12);
    }

    #[test]
    fn tridiagonal_spectrum_matches_the_discrete_laplacian_closed_form() {
        // Zero diagonal, unit sub-diagonal: eigenvalues 2 cos(k pi / (n+1)).
        let n = 2048usize;
        let eig = sym_tridiagonal_eigenvalues(vec![0.0; n], vec![1.0; n - 1]).unwrap();
        let mut exact: Vec<f64> = (1..=n)
            .map(|k| 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in eig.iter().zip(&exact) {
            assert!((e - x).abs() <= 1e-8 * x.abs().max(1.0), "{e} vs {x}");
        }
    }
}

//! One-dimensional quadrature used throughout the crate.
//!
//! Two rules live here: an adaptive Gauss–Kronrod (7/15) integrator for
//! radial integrals with user-supplied integrands, and fixed weights for
//! integrals of the form `∫_0^π g(θ) sin^m θ dθ` sampled on the uniform
//! polar grid `θ_i = iπ/N`.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Relative tolerance used for radial integrals unless a caller overrides it.
pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// Absolute floor below which an interval is accepted regardless of size.
pub const DEFAULT_ABS_TOL: f64 = 1e-14;
const MAX_INTERVALS: usize = 4000;

fn kronrod_interval<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let x = half * XGK[j];
        let s = f(center - x) + f(center + x);
        resk += WGK[j] * s;
        if j % 2 == 1 {
            resg += WG[j / 2] * s;
        }
    }
    (resk * half, ((resk - resg) * half).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the total
/// estimate falls under `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!("non-finite integration bounds [{a}, {b}]")));
    }
    let (v, e) = kronrod_interval(&f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) {
        if !total.is_finite() {
            return Err(Error::Numeric("integrand produced a non-finite value".into()));
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Numeric(format!(
                "adaptive quadrature did not converge on [{a}, {b}]: error estimate {err:e}"
            )));
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v0, e0) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine resolution; keep what we have
            intervals.push((lo, hi, v0, 0.0));
            err -= e0;
            continue;
        }
        let (v1, e1) = kronrod_interval(&f, lo, mid);
        let (v2, e2) = kronrod_interval(&f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // re-sum to shed accumulated update rounding
    Ok(intervals.iter().map(|t| t.2).sum())
}

/// [`integrate`] with the crate-default tolerances.
pub fn integrate_default<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    integrate(f, a, b, DEFAULT_REL_TOL, DEFAULT_ABS_TOL)
}

/// Fixed-order Gauss–Legendre rule on `[a, b]`. Used by tests as a
/// non-adaptive reference.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre_nodes(order);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    nodes
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
        * h
}

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_nodes(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `∫_0^π cos(jθ) sin^m θ dθ`, exactly, via the binomial expansion of
/// `sin^m θ` into exponentials.
pub fn cos_sin_moment(j: usize, m: usize) -> f64 {
    // sin^m θ = (2i)^{-m} Σ_p C(m,p) (-1)^p e^{i(m-2p)θ}
    // ∫_0^π e^{iqθ} cos(jθ) dθ = (E(q+j) + E(q-j)) / 2,
    // E(0) = π, E(b) = 2i/b for odd b, 0 for even b ≠ 0.
    let e = |b: i64| -> (f64, f64) {
        if b == 0 {
            (std::f64::consts::PI, 0.0)
        } else if b.rem_euclid(2) == 1 {
            (0.0, 2.0 / b as f64)
        } else {
            (0.0, 0.0)
        }
    };
    let mut re = 0.0;
    let mut im = 0.0;
    let mut binom = 1.0;
    for p in 0..=m {
        if p > 0 {
            binom *= (m - p + 1) as f64 / p as f64;
        }
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        let q = m as i64 - 2 * p as i64;
        let (a_re, a_im) = e(q + j as i64);
        let (b_re, b_im) = e(q - j as i64);
        re += sign * binom * 0.5 * (a_re + b_re);
        im += sign * binom * 0.5 * (a_im + b_im);
    }
    // multiply by (2i)^{-m} = 2^{-m} (-i)^m
    let scale = 0.5f64.powi(m as i32);
    let real = match m % 4 {
        0 => re,
        1 => im,
        2 => -re,
        _ => -im,
    };
    real * scale
}

/// Weights `w_i` with `Σ w_i g(θ_i) ≈ ∫_0^π g(θ) sin^m θ dθ` on the grid
/// `θ_i = iπ/N`, `i = 0..=N`.
///
/// `g` is interpolated by its cosine series through the samples (the
/// Chebyshev interpolant in `x = cos θ`) and each mode integrated exactly.
/// For `m = 1` this is Clenshaw–Curtis. Convergence is spectral for
/// integrands that are smooth even functions of θ, which is the case for
/// every pole-regular profile quantity.
pub fn polar_weights(n_intervals: usize, m: usize) -> Vec<f64> {
    let n = n_intervals;
    assert!(n >= 1, "polar grid needs at least one interval");
    let table: Vec<f64> = (0..2 * n)
        .map(|k| (std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    let moments: Vec<f64> = (0..=n).map(|j| cos_sin_moment(j, m)).collect();
    let half_ends = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    (0..=n)
        .map(|i| {
            let s: f64 = (0..=n)
                .map(|j| half_ends(j) * table[(i * j) % (2 * n)] * moments[j])
                .sum();
            2.0 / n as f64 * half_ends(i) * s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kronrod_polynomial_exact() {
        let v = integrate_default(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn kronrod_adapts_to_peaks() {
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-15).unwrap();
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn legendre_rule_matches_known_integral() {
        let v = gauss_legendre(|x: f64| x.exp(), 0.0, 1.0, 20);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn moments_match_closed_forms() {
        // m = 1: 2/(1-j^2) for even j, 0 for odd j
        for j in 0..12 {
            let expect = if j % 2 == 0 { 2.0 / (1.0 - (j * j) as f64) } else { 0.0 };
            assert!((cos_sin_moment(j, 1) - expect).abs() < 1e-15, "j={j}");
        }
        // m = 2: π/2 δ_j0 − π/4 δ_j2
        assert!((cos_sin_moment(0, 2) - PI / 2.0).abs() < 1e-15);
        assert!((cos_sin_moment(2, 2) + PI / 4.0).abs() < 1e-15);
        assert!(cos_sin_moment(1, 2).abs() < 1e-15);
        assert!(cos_sin_moment(4, 2).abs() < 1e-15);
        // m = 0
        assert!((cos_sin_moment(0, 0) - PI).abs() < 1e-15);
        assert!(cos_sin_moment(3, 0).abs() < 1e-15);
    }

    #[test]
    fn moments_agree_with_gauss_legendre() {
        for m in 0..6 {
            for j in 0..9 {
                let gl = gauss_legendre(|t: f64| (j as f64 * t).cos() * t.sin().powi(m as i32), 0.0, PI, 40);
                assert!((cos_sin_moment(j, m) - gl).abs() < 1e-13, "m={m} j={j}");
            }
        }
    }

    #[test]
    fn polar_weights_integrate_smooth_even_functions() {
        for m in 1..5 {
            let w = polar_weights(64, m);
            let g = |t: f64| (0.3 * t.cos()).exp() * (1.0 + 0.2 * (2.0 * t).cos());
            let approx: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * g(PI * i as f64 / 64.0))
                .sum();
            let exact = gauss_legendre(|t: f64| g(t) * t.sin().powi(m as i32), 0.0, PI, 80);
            assert!((approx - exact).abs() < 1e-13 * exact.abs(), "m={m}");
        }
    }
}

//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Γ(n/2) for a positive integer n, from Γ(1) = 1 and Γ(1/2) = √π.
pub fn gamma_half(n: u32) -> f64 {
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut k = if n % 2 == 0 { 2 } else { 1 };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, 1e-13, 50)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn t_pdf(x: f64, df: u32) -> f64 {
    let v = df as f64;
    gamma_half(df + 1) / ((v * PI).sqrt() * gamma_half(df)) * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0)
}

pub fn chi2_pdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = df as f64 / 2.0;
    x.powf(k - 1.0) * (-x / 2.0).exp() / (2f64.powf(k) * gamma_half(df))
}

pub fn f_pdf(x: f64, d1: u32, d2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let beta = gamma_half(d1) * gamma_half(d2) / gamma_half(d1 + d2);
    ((a * x).powf(a) * b.powf(b) / (a * x + b).powf(a + b)).sqrt() / (x * beta)
}

/// Normal CDF by quadrature from the median.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 + integrate(&normal_pdf, 0.0, x)
}

pub fn t_cdf(x: f64, df: u32) -> f64 {
    0.5 + integrate(&|u| t_pdf(u, df), 0.0, x)
}

pub fn chi2_cdf(x: f64, df: u32) -> f64 {
    integrate(&|u| chi2_pdf(u, df), 0.0, x)
}

pub fn f_cdf(x: f64, d1: u32, d2: u32) -> f64 {
    integrate(&|u| f_pdf(u, d1, d2), 0.0, x)
}

/// Central moments by two passes: mean first, then deviations.
pub fn two_pass_moments(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m = |p: i32| v.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    let sd = (m2 * n / (n - 1.0)).sqrt();
    (mean, sd, m3 / m2.powf(1.5), m4 / (m2 * m2))
}

/// Evenly spaced grid of `n` points on `[a, b]`.
pub fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

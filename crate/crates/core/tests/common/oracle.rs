//! Straight-from-the-formula evaluators, written without reference to the
//! library code paths.

use std::f64::consts::{E, LN_2};

pub fn l1(d: f64, r: f64, delta: f64, c: f64) -> f64 {
    let m = if c * c > 1.0 { c * c } else { 1.0 };
    64.0 * E * d * r * r * r * r * m * (4.0 / delta).ln() / (delta * delta)
}

pub fn l2(d: f64, sigma2: f64, delta: f64, c: f64) -> f64 {
    let m = if c * c > 1.0 { c * c } else { 1.0 };
    512.0 * E * E * d * d * sigma2 * m * (4.0 / delta).ln() / (delta * delta * delta * delta)
}

pub fn c1(d: f64, delta: f64, c: f64, lambda1: f64, l: f64) -> f64 {
    let base = 4.0 * E * d / (delta * delta);
    0.5 * (5.0 / (2.0 * LN_2) * base.ln()).exp() * (2.0 * c * c * lambda1 * lambda1 / l).exp()
}

pub fn c2(c: f64, c0: f64, lambda1: f64, l: f64) -> f64 {
    8.0 * c * c * ((c0 + 2.0 * c * c * lambda1 * lambda1) / l).exp() / (c0 - 2.0)
}

#[allow(clippy::too_many_arguments)]
pub fn bound(
    t: f64,
    d: f64,
    delta: f64,
    c: f64,
    gap: f64,
    lambda1: f64,
    l: f64,
    sigma2: f64,
) -> f64 {
    let c0 = 2.0 * c * gap;
    c1(d, delta, c, lambda1, l) * ((l + 1.0) / (t + l + 1.0)).powf(c0 / 2.0)
        + c2(c, c0, lambda1, l) * sigma2 / (t + l + 1.0)
}

/// Epoch ladder by direct recursion.
pub fn epochs(delta: f64, d: f64, c0: f64, l: f64) -> Vec<(u64, f64)> {
    let mut eps = delta * delta / (8.0 * E * d);
    let j_max = (1.0 / (2.0 * eps)).log2().ceil() as usize;
    let mut out = vec![(0u64, eps)];
    let mut t = 0u64;
    for _ in 0..j_max {
        eps *= 2.0;
        let need = (5.0 / c0).exp() * (t as f64 + l + 1.0) - l - 1.0;
        let mut cand = need.ceil() as u64;
        if cand <= t {
            cand = t + 1;
        }
        t = cand;
        out.push((t, eps));
    }
    out
}

pub fn closed_form(delta: f64, d: f64, c0: f64, l: f64) -> f64 {
    (l + 1.0) * (4.0 * E * d / (delta * delta)).powf(5.0 / (c0 * LN_2)) - (l + 1.0)
}

/// Largest integer `B` with `B^{c₀} ≤ T^{c₀−2}`, checked in log space.
pub fn max_b(t: u64, c0: f64) -> u64 {
    let target = (t as f64).ln() * (c0 - 2.0) / c0;
    let slack = 1e-15 * target.abs().max(1.0);
    let mut b = target.exp().floor() as u64;
    while ((b + 1) as f64).ln() <= target + slack {
        b += 1;
    }
    while b > 1 && (b as f64).ln() > target + slack {
        b -= 1;
    }
    b
}

/// Finite-sample bound with discards.
#[allow(clippy::too_many_arguments)]
pub fn finite(
    t: f64,
    b: f64,
    mu: f64,
    d: f64,
    delta: f64,
    gap: f64,
    lambda1: f64,
    sigma2: f64,
    c0: f64,
    l1p: f64,
    l2p: f64,
) -> f64 {
    let c = c0 / (2.0 * gap);
    let l = l1p + sigma2 / b * l2p;
    let k1 = c1(d, delta, c, lambda1, l);
    let k2 = c2(c, c0, lambda1, l);
    let h = c0 / 2.0;
    c0 * k1 * ((b + mu) * l1p / t).powf(h)
        + c0 * k1 * ((b + mu) * sigma2 * l2p / (b * t)).powf(h)
        + k2 * sigma2 * (b + mu) / (b * t)
}

/// Initial-epoch lower bound on `L`; `with_d` selects ε = δ²/8e with d, d²
/// factors, otherwise ε₀ = δ²/(8ed) without them.
pub fn l_initial(d: f64, r: f64, sigma2: f64, delta: f64, c: f64, with_d: bool) -> f64 {
    let m = if c * c > 1.0 { c * c } else { 1.0 };
    let lg = (4.0 / delta).ln();
    if with_d {
        let eps = delta * delta / (8.0 * E);
        8.0 * d * r.powi(4) * m * lg / eps + 8.0 * d * d * sigma2 * m * lg / (eps * eps)
    } else {
        let eps = delta * delta / (8.0 * E * d);
        8.0 * r.powi(4) * m * lg / eps + 8.0 * sigma2 * m * lg / (eps * eps)
    }
}

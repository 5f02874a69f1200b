//! Step-size rule and the computable side of the convergence analysis:
//! lower bounds on `L`, the expected-error bound, the epoch ladder and the
//! finite-sample mini-batch planner.

use std::f64::consts::{E, LN_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `γ_t = c / (L + t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c: f64,
    pub l: f64,
    pub eigengap: f64,
}

impl StepSchedule {
    /// Schedule with an explicit constant `c`; `eigengap` only matters for
    /// [`StepSchedule::c0`].
    pub fn from_c(c: f64, l: f64, eigengap: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!(
                "step constant c must be > 0, got {c}"
            )));
        }
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::domain(format!("L must be >= 0, got {l}")));
        }
        if !(eigengap > 0.0 && eigengap.is_finite()) {
            return Err(Error::domain(format!(
                "eigengap must be > 0, got {eigengap}"
            )));
        }
        Ok(Self { c, l, eigengap })
    }

    /// `c = c₀ / (2(λ₁ − λ₂))`; requires `c₀ > 2`.
    pub fn from_c0(c0: f64, eigengap: f64, l: f64) -> Result<Self> {
        check_c0(c0)?;
        if !(eigengap > 0.0 && eigengap.is_finite()) {
            return Err(Error::domain(format!(
                "eigengap must be > 0, got {eigengap}"
            )));
        }
        Self::from_c(c0 / (2.0 * eigengap), l, eigengap)
    }

    pub fn c0(&self) -> f64 {
        2.0 * self.c * self.eigengap
    }

    pub fn with_l(mut self, l: f64) -> Self {
        self.l = l;
        self
    }
}

fn check_c0(c0: f64) -> Result<()> {
    if c0 > 2.0 && c0.is_finite() {
        Ok(())
    } else {
        Err(Error::UnsupportedRegime { c0 })
    }
}

/// `c / (L + t)`. With `L = 0` the first iteration to use is `t = 1`.
pub fn step_size(t: u64, sched: &StepSchedule) -> f64 {
    sched.c / (sched.l + t as f64)
}

/// Problem constants entering the bounds. `sigma2_eff` is σ², σ_N² = σ²/N
/// or σ_B² = σ²/B depending on which setting is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub d: usize,
    pub r: f64,
    pub sigma2_eff: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub eigengap: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::domain(format!(
                "norm bound r must be >= 1, got {}",
                self.r
            )));
        }
        if !(self.sigma2_eff >= 0.0 && self.sigma2_eff.is_finite()) {
            return Err(Error::domain(format!(
                "variance must be >= 0, got {}",
                self.sigma2_eff
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.eigengap > 0.0 && self.eigengap <= self.lambda1) {
            return Err(Error::domain(format!(
                "eigengap must lie in (0, lambda1], got {} with lambda1 = {}",
                self.eigengap, self.lambda1
            )));
        }
        Ok(())
    }

    pub fn with_sigma2(mut self, sigma2_eff: f64) -> Self {
        self.sigma2_eff = sigma2_eff;
        self
    }
}

/// The two terms of the main lower bound on `L` and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LBound {
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
}

/// `L₁ = 64 e d r⁴ max(1,c²)/δ² · ln(4/δ)`, `L₂ = 512 e² d² σ² max(1,c²)/δ⁴ · ln(4/δ)`.
pub fn l_lower_bound_main(p: &BoundParams, c: f64) -> Result<LBound> {
    p.validate()?;
    let d = p.d as f64;
    let m = c.powi(2).max(1.0);
    let log_term = (4.0 / p.delta).ln();
    let l1 = 64.0 * E * d * p.r.powi(4) * m / p.delta.powi(2) * log_term;
    let l2 = 512.0 * E * E * d * d * p.sigma2_eff * m / p.delta.powi(4) * log_term;
    Ok(LBound { l1, l2, l: l1 + l2 })
}

/// Which initial-epoch lower bound on `L` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialBoundVariant {
    /// With `ε = δ²/8e` and explicit `d`, `d²` factors.
    #[default]
    WithDimension,
    /// The intermediate-epoch form with `ε₀ = δ²/(8ed)` and no extra `d` factors.
    EpochZero,
}

/// `ε = δ² / 8e`.
pub fn initial_epsilon(delta: f64) -> f64 {
    delta * delta / (8.0 * E)
}

/// `ε₀ = δ² / (8 e d)`.
pub fn epoch_epsilon0(delta: f64, d: usize) -> f64 {
    delta * delta / (8.0 * E * d as f64)
}

/// Lower bound on `L` for the initial epoch.
pub fn l_lower_bound_initial(
    d: usize,
    r: f64,
    sigma2_eff: f64,
    delta: f64,
    c: f64,
    variant: InitialBoundVariant,
) -> Result<f64> {
    BoundParams {
        d,
        r,
        sigma2_eff,
        delta,
        lambda1: 1.0,
        eigengap: 1.0,
    }
    .validate()?;
    let m = c.powi(2).max(1.0);
    let log_term = (4.0 / delta).ln();
    let (eps, d1, d2) = match variant {
        InitialBoundVariant::WithDimension => (initial_epsilon(delta), d as f64, (d * d) as f64),
        InitialBoundVariant::EpochZero => (epoch_epsilon0(delta, d), 1.0, 1.0),
    };
    Ok(8.0 * d1 * r.powi(4) * m / eps * log_term
        + 8.0 * d2 * sigma2_eff * m / (eps * eps) * log_term)
}

/// Constants of the expected-error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
}

/// `C₁ = ½(4ed/δ²)^{5/(2 ln 2)} e^{2c²λ₁²/L}`, `C₂ = 8c² e^{(c₀+2c²λ₁²)/L}/(c₀−2)`.
pub fn bound_constants(p: &BoundParams, c: f64, c0: f64, l: f64) -> Result<BoundConstants> {
    p.validate()?;
    check_c0(c0)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::domain(format!(
            "bound constants need L > 0, got {l}"
        )));
    }
    let d = p.d as f64;
    let cl = 2.0 * c * c * p.lambda1 * p.lambda1;
    let c1 = 0.5 * (4.0 * E * d / (p.delta * p.delta)).powf(5.0 / (2.0 * LN_2)) * (cl / l).exp();
    let c2 = 8.0 * c * c * ((c0 + cl) / l).exp() / (c0 - 2.0);
    Ok(BoundConstants { c1, c2 })
}

/// Expected-error bound `C₁((L+1)/(t+L+1))^{c₀/2} + C₂ σ²_eff/(t+L+1)`.
pub fn theoretical_bound(t: u64, p: &BoundParams, sched: &StepSchedule) -> Result<f64> {
    let c0 = sched.c0();
    let k = bound_constants(p, sched.c, c0, sched.l)?;
    let l = sched.l;
    let tt = t as f64 + l + 1.0;
    Ok(k.c1 * ((l + 1.0) / tt).powf(c0 / 2.0) + k.c2 * p.sigma2_eff / tt)
}

/// Epoch ladder `(t_j, ε_j)`, `j = 0…J`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSchedule {
    pub pairs: Vec<(u64, f64)>,
    pub l: f64,
    pub c0: f64,
}

impl EpochSchedule {
    pub fn final_time(&self) -> u64 {
        self.pairs.last().map(|p| p.0).unwrap_or(0)
    }

    pub fn epochs(&self) -> usize {
        self.pairs.len() - 1
    }

    /// Ratio and growth conditions between consecutive pairs, plus the
    /// start and end of the ε ladder. Returns the first violation found.
    pub fn check_conditions(&self, delta: f64, d: usize) -> std::result::Result<(), String> {
        let eps0 = epoch_epsilon0(delta, d);
        let (t0, e0) = self.pairs[0];
        if t0 != 0 || e0 != eps0 {
            return Err(format!("first pair must be (0, {eps0}), got ({t0}, {e0})"));
        }
        let growth = (5.0 / self.c0).exp();
        for w in self.pairs.windows(2) {
            let ((ta, ea), (tb, eb)) = (w[0], w[1]);
            if !(1.5 * ea <= eb && eb <= 2.0 * ea) {
                return Err(format!("eps ratio violated between {ea} and {eb}"));
            }
            if (tb as f64 + self.l + 1.0) < growth * (ta as f64 + self.l + 1.0) {
                return Err(format!(
                    "growth condition violated between t={ta} and t={tb}"
                ));
            }
        }
        let j = self.pairs.len() - 1;
        let last = self.pairs[j].1;
        if last < 0.5 {
            return Err(format!("final eps {last} < 1/2"));
        }
        if j > 0 && self.pairs[j - 1].1 >= 0.5 {
            return Err("J is not the smallest index reaching 1/2".into());
        }
        Ok(())
    }
}

/// Builds the epoch ladder: `ε₀ = δ²/(8ed)`, `ε_{j+1} = 2ε_j`,
/// `J = ⌈log₂(1/(2ε₀))⌉`, and each `t_{j+1}` the smallest integer with
/// `t_{j+1}+L+1 ≥ e^{5/c₀}(t_j+L+1)`.
pub fn epoch_schedule(delta: f64, d: usize, c0: f64, l: f64) -> Result<EpochSchedule> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    if d < 1 {
        return Err(Error::domain("dimension must be >= 1"));
    }
    check_c0(c0)?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::domain(format!("L must be >= 0, got {l}")));
    }
    let eps0 = epoch_epsilon0(delta, d);
    let growth = (5.0 / c0).exp();
    let mut pairs = vec![(0u64, eps0)];
    let mut eps = eps0;
    let mut t = 0u64;
    while eps < 0.5 {
        eps *= 2.0;
        let target = growth * (t as f64 + l + 1.0) - l - 1.0;
        let mut next = target.ceil().max(t as f64 + 1.0);
        if !(next < u64::MAX as f64) {
            return Err(Error::domain("epoch time exceeds u64 range"));
        }
        // Correct the rounding of `target` by at most a step or two; above
        // 2^53 consecutive integers are no longer representable.
        if next < EXACT_INT_LIMIT {
            let need = growth * (t as f64 + l + 1.0);
            while next + l + 1.0 < need {
                next += 1.0;
            }
            while next - 1.0 > t as f64 && next - 1.0 + l + 1.0 >= need {
                next -= 1.0;
            }
        }
        t = next as u64;
        pairs.push((t, eps));
    }
    Ok(EpochSchedule { pairs, l, c0 })
}

const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

/// Closed form `(L+1)(4ed/δ²)^{5/(c₀ ln 2)} − L − 1` for the final epoch time
/// with a real-valued number of epochs.
pub fn closed_form_final_time(delta: f64, d: usize, c0: f64, l: f64) -> f64 {
    (l + 1.0) * (4.0 * E * d as f64 / (delta * delta)).powf(5.0 / (c0 * LN_2)) - l - 1.0
}

/// Largest `B` with `B ≤ T^{1−2/c₀}`.
pub fn max_minibatch(total: u64, c0: f64) -> Result<u64> {
    check_c0(c0)?;
    if total < 1 {
        return Err(Error::domain("total sample count must be >= 1"));
    }
    let exponent = 1.0 - 2.0 / c0;
    let limit = (total as f64).powf(exponent);
    // powf may land a few ulps below an exact integer power (e.g. 10^6^0.5).
    let mut b = limit.floor();
    if (b + 1.0) <= limit * (1.0 + 4.0 * f64::EPSILON) {
        b += 1.0;
    }
    Ok(b as u64)
}

/// The three terms of the finite-sample bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSampleBound {
    pub initial: f64,
    pub variance_transient: f64,
    pub variance: f64,
    pub total: f64,
    pub iterations: f64,
    pub constants: BoundConstants,
}

fn check_finite_sample(total: u64, batch: u64, mu: u64, l1p: f64, l2p: f64) -> Result<()> {
    if batch < 1 {
        return Err(Error::domain("mini-batch size must be >= 1"));
    }
    if total < batch + mu {
        return Err(Error::domain(format!(
            "T = {total} must be >= B + mu = {}",
            batch + mu
        )));
    }
    if !(l1p > 0.0 && l2p >= 0.0 && l1p.is_finite() && l2p.is_finite()) {
        return Err(Error::domain("L1' must be > 0 and L2' >= 0"));
    }
    Ok(())
}

/// Constants for the finite-sample bounds, evaluated at `L = L₁′ + (σ²/B) L₂′`.
fn finite_constants(
    p: &BoundParams,
    c0: f64,
    batch: u64,
    l1p: f64,
    l2p: f64,
) -> Result<BoundConstants> {
    let c = c0 / (2.0 * p.eigengap);
    let l = l1p + p.sigma2_eff / batch as f64 * l2p;
    bound_constants(p, c, c0, l)
}

/// Finite-sample bound with `μ` discards per iteration (`p.sigma2_eff` is the
/// single-sample σ²):
/// `c₀C₁((B+μ)L₁′/T)^{c₀/2} + c₀C₁((B+μ)σ²L₂′/(BT))^{c₀/2} + C₂σ²(B+μ)/(BT)`.
pub fn finite_sample_bound(
    total: u64,
    batch: u64,
    mu: u64,
    p: &BoundParams,
    c0: f64,
    l1p: f64,
    l2p: f64,
) -> Result<FiniteSampleBound> {
    check_finite_sample(total, batch, mu, l1p, l2p)?;
    let k = finite_constants(p, c0, batch, l1p, l2p)?;
    let t = total as f64;
    let b = batch as f64;
    let received = (batch + mu) as f64;
    let inflation = received / b;
    let sigma2 = p.sigma2_eff;
    let initial = c0 * k.c1 * (received * l1p / t).powf(c0 / 2.0);
    let variance_transient = c0 * k.c1 * (inflation * (sigma2 * l2p / t)).powf(c0 / 2.0);
    let variance = k.c2 * sigma2 / t * inflation;
    Ok(FiniteSampleBound {
        initial,
        variance_transient,
        variance,
        total: initial + variance_transient + variance,
        iterations: t / received,
        constants: k,
    })
}

/// Lossless finite-sample bound:
/// `c₀C₁(BL₁′/T)^{c₀/2} + c₀C₁(σ²L₂′/T)^{c₀/2} + C₂σ²/T`.
pub fn minibatch_bound(
    total: u64,
    batch: u64,
    p: &BoundParams,
    c0: f64,
    l1p: f64,
    l2p: f64,
) -> Result<FiniteSampleBound> {
    check_finite_sample(total, batch, 0, l1p, l2p)?;
    let k = finite_constants(p, c0, batch, l1p, l2p)?;
    let t = total as f64;
    let b = batch as f64;
    let sigma2 = p.sigma2_eff;
    let initial = c0 * k.c1 * (b * l1p / t).powf(c0 / 2.0);
    let variance_transient = c0 * k.c1 * (sigma2 * l2p / t).powf(c0 / 2.0);
    let variance = k.c2 * sigma2 / t;
    Ok(FiniteSampleBound {
        initial,
        variance_transient,
        variance,
        total: initial + variance_transient + variance,
        iterations: t / b,
        constants: k,
    })
}

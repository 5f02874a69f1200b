//! Krasulina and Oja update kernels.
//!
//! Everything here is matrix-free: the batch covariance `Ā = mean(x xᵀ)` is
//! only ever applied to a vector as `mean((xᵀv) x)`, so one update costs
//! O(d·m) time and O(d) extra memory.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_sum::ExactAccumulator;
use crate::linalg::{dot, norm2, norm_sq};

/// A single streaming sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector(Vec<f64>);

impl DataVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidDimension(entries.len()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidBatch("non-finite sample entry".into()));
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// An ordered set of samples of common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    data: Vec<f64>,
}

impl SampleBatch {
    /// An empty batch, usable as a reusable buffer.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidBatch("empty batch".into()))?;
        let mut batch = Self::with_dim(first.as_ref().len());
        batch.data.reserve(rows.len() * batch.dim);
        for r in rows {
            batch.push(r.as_ref())?;
        }
        Ok(batch)
    }

    pub fn from_vectors(samples: &[DataVector]) -> Result<Self> {
        Self::from_rows(&samples.iter().map(|s| s.as_slice()).collect::<Vec<_>>())
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidBatch(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidBatch("non-finite sample entry".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidBatch("non-finite sample entry".into()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }
}

/// The update direction ξ produced from an iterate and a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDirection {
    pub xi: Vec<f64>,
}

/// Which stochastic rule produces the direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    #[default]
    Krasulina,
    Oja,
}

impl std::str::FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "krasulina" => Ok(Self::Krasulina),
            "oja" => Ok(Self::Oja),
            other => Err(format!(
                "unknown algorithm `{other}` (expected krasulina or oja)"
            )),
        }
    }
}

/// Current eigenvector estimate with its counters.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenEstimate {
    pub v: Vec<f64>,
    pub iterations: u64,
    pub samples_processed: u64,
    pub normalized: bool,
}

impl EigenEstimate {
    pub fn new(v: Vec<f64>, normalized: bool) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::InvalidDimension(v.len()));
        }
        let n = norm2(&v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateIterate);
        }
        let v = if normalized {
            v.iter().map(|x| x / n).collect()
        } else {
            v
        };
        Ok(Self {
            v,
            iterations: 0,
            samples_processed: 0,
            normalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Switches off per-step renormalization (used for norm-recursion checks).
    pub fn unnormalized(mut self) -> Self {
        self.normalized = false;
        self
    }

    /// `v ← v + γ ξ`, renormalizing if requested, and advances the counters.
    pub(crate) fn apply(&mut self, xi: &[f64], gamma: f64, consumed: usize) -> Result<()> {
        check_gamma(gamma)?;
        let mut next: Vec<f64> = self.v.iter().zip(xi).map(|(v, x)| v + gamma * x).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow { gamma });
        }
        let n = norm2(&next);
        if !n.is_finite() {
            return Err(Error::NumericOverflow { gamma });
        }
        if !(n > 0.0) {
            return Err(Error::DegenerateIterate);
        }
        if self.normalized {
            for x in &mut next {
                *x /= n;
            }
        }
        self.v = next;
        self.iterations += 1;
        self.samples_processed += consumed as u64;
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "step size must be finite and >= 0, got {gamma}"
        )))
    }
}

fn checked_norm_sq(v: &[f64]) -> Result<f64> {
    let n2 = norm_sq(v);
    if n2 > 0.0 && n2.is_finite() {
        Ok(n2)
    } else {
        Err(Error::DegenerateIterate)
    }
}

fn check_batch(v: &[f64], batch: &SampleBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if batch.dim() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: batch.dim(),
        });
    }
    Ok(())
}

/// Draws v₀ uniformly on the unit sphere (normalized standard-normal vector).
pub fn random_unit_init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<EigenEstimate> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if norm2(&g) > 0.0 {
            return EigenEstimate::new(g, true);
        }
    }
}

/// `vᵀĀv / ‖v‖²` with `Ā` the batch mean of `x xᵀ`.
pub fn rayleigh_quotient(v: &[f64], batch: &SampleBatch) -> Result<f64> {
    let n2 = checked_norm_sq(v)?;
    check_batch(v, batch)?;
    let s: f64 = batch.rows().map(|x| dot(x, v).powi(2)).sum();
    Ok(s / batch.len() as f64 / n2)
}

/// Gradient of the Rayleigh quotient at `v`, returned with the sign convention
/// `(1/‖v‖²)(−Āv + (vᵀĀv/‖v‖²) v)` (i.e. the gradient of its negation).
pub fn gradient_f(v: &[f64], batch: &SampleBatch) -> Result<Vec<f64>> {
    let n2 = checked_norm_sq(v)?;
    check_batch(v, batch)?;
    let m = batch.len() as f64;
    let mut av = vec![0.0; v.len()];
    for x in batch.rows() {
        let a = dot(x, v);
        for (o, xi) in av.iter_mut().zip(x) {
            *o += a * xi;
        }
    }
    for o in &mut av {
        *o /= m;
    }
    let q = dot(v, &av) / n2;
    Ok(av.iter().zip(v).map(|(w, vi)| (-w + q * vi) / n2).collect())
}

/// Adds the per-sample directions of every row of `batch` into `acc`.
pub(crate) fn accumulate_directions<'a, I>(
    rule: UpdateRule,
    v: &[f64],
    v_norm_sq: f64,
    rows: I,
    acc: &mut ExactAccumulator,
    scratch: &mut [f64],
) where
    I: IntoIterator<Item = &'a [f64]>,
{
    for x in rows {
        let a = dot(x, v);
        let coeff = match rule {
            UpdateRule::Krasulina => a * a / v_norm_sq,
            UpdateRule::Oja => a * a,
        };
        for ((s, xi), vi) in scratch.iter_mut().zip(x).zip(v) {
            *s = a * xi - coeff * vi;
        }
        acc.add(scratch);
    }
}

/// Rounds an exact direction sum and divides by the number of samples.
pub(crate) fn finish_direction(acc: &ExactAccumulator, count: usize, out: &mut [f64]) {
    acc.round_into(out);
    let m = count as f64;
    for o in out.iter_mut() {
        *o /= m;
    }
}

/// Batch direction for either rule.
pub fn direction(rule: UpdateRule, v: &[f64], batch: &SampleBatch) -> Result<UpdateDirection> {
    let n2 = checked_norm_sq(v)?;
    check_batch(v, batch)?;
    let mut acc = ExactAccumulator::new(v.len());
    let mut scratch = vec![0.0; v.len()];
    accumulate_directions(rule, v, n2, batch.rows(), &mut acc, &mut scratch);
    let mut xi = vec![0.0; v.len()];
    finish_direction(&acc, batch.len(), &mut xi);
    Ok(UpdateDirection { xi })
}

/// `ξ = Āv − (vᵀĀv/‖v‖²) v`, averaged over per-sample terms.
pub fn krasulina_direction(v: &[f64], batch: &SampleBatch) -> Result<UpdateDirection> {
    direction(UpdateRule::Krasulina, v, batch)
}

/// `ξ = Āv − (vᵀĀv) v`.
pub fn oja_direction(v: &[f64], batch: &SampleBatch) -> Result<UpdateDirection> {
    direction(UpdateRule::Oja, v, batch)
}

pub fn step(
    rule: UpdateRule,
    est: &EigenEstimate,
    batch: &SampleBatch,
    gamma: f64,
) -> Result<EigenEstimate> {
    check_gamma(gamma)?;
    let xi = direction(rule, &est.v, batch)?;
    let mut next = est.clone();
    next.apply(&xi.xi, gamma, batch.len())?;
    Ok(next)
}

pub fn krasulina_step(
    est: &EigenEstimate,
    batch: &SampleBatch,
    gamma: f64,
) -> Result<EigenEstimate> {
    step(UpdateRule::Krasulina, est, batch, gamma)
}

pub fn oja_step(est: &EigenEstimate, batch: &SampleBatch, gamma: f64) -> Result<EigenEstimate> {
    step(UpdateRule::Oja, est, batch, gamma)
}

fn check_unit(q_star: &[f64]) -> Result<()> {
    let n = norm2(q_star);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!("q* must have unit norm, got {n}")));
    }
    Ok(())
}

/// Ψ = 1 − (vᵀq*)²/‖v‖², the squared sine of the angle between `v` and `q*`.
pub fn potential(v: &[f64], q_star: &[f64]) -> Result<f64> {
    let n2 = checked_norm_sq(v)?;
    check_unit(q_star)?;
    if q_star.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: q_star.len(),
        });
    }
    // Perpendicular-component form; avoids cancellation near convergence.
    let p = dot(v, q_star);
    let perp: f64 = v
        .iter()
        .zip(q_star)
        .map(|(vi, qi)| (vi - p * qi).powi(2))
        .sum();
    Ok((perp / n2).clamp(0.0, 1.0))
}

/// `z_t = 2γ (v_{t−1}ᵀq*)(ξᵀq*)/‖v_{t−1}‖²`.
pub fn z_statistic(
    v_prev: &[f64],
    xi: &UpdateDirection,
    gamma: f64,
    q_star: &[f64],
) -> Result<f64> {
    let n2 = checked_norm_sq(v_prev)?;
    Ok(2.0 * gamma * dot(v_prev, q_star) * dot(&xi.xi, q_star) / n2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(rows: &[&[f64]]) -> SampleBatch {
        SampleBatch::from_rows(rows).unwrap()
    }

    #[test]
    fn init_is_unit_and_deterministic() {
        let a = random_unit_init(5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = random_unit_init(5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((norm2(&a.v) - 1.0).abs() <= 1e-12);
        assert_eq!(a, b);
        assert_eq!(a.iterations, 0);
        assert!(matches!(
            random_unit_init(1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidDimension(1))
        ));
    }

    #[test]
    fn rayleigh_examples() {
        let e1 = [1.0, 0.0];
        assert_eq!(rayleigh_quotient(&e1, &batch(&[&[1.0, 0.0]])).unwrap(), 1.0);
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((rayleigh_quotient(&[1.0, 1.0], &b).unwrap() - 0.5).abs() < 1e-15);
        let b = batch(&[&[0.3, -1.2], &[2.0, 0.5]]);
        let r1 = rayleigh_quotient(&[0.4, 0.7], &b).unwrap();
        let r2 = rayleigh_quotient(&[-1.2, -2.1], &b).unwrap();
        assert!((r1 - r2).abs() < 1e-14);
        assert!(matches!(
            rayleigh_quotient(&[0.0, 0.0], &b),
            Err(Error::DegenerateIterate)
        ));
    }

    #[test]
    fn gradient_vanishes_at_eigenvector() {
        let b = batch(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let g = gradient_f(&[3.0, 0.0], &b).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn krasulina_direction_examples() {
        let xi = krasulina_direction(&[1.0, 0.0], &batch(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(xi.xi, vec![0.0, 1.0]);
        let xi = krasulina_direction(&[2.0, 1.0], &batch(&[&[4.0, 2.0]])).unwrap();
        assert!(xi.xi.iter().all(|x| x.abs() < 1e-14));
        assert!(matches!(
            krasulina_direction(&[1.0, 0.0], &SampleBatch::with_dim(2)),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn zero_step_leaves_iterate() {
        let est = EigenEstimate::new(vec![0.6, 0.8], true).unwrap();
        let b = batch(&[&[1.0, 2.0], &[0.5, -1.0]]);
        for next in [
            krasulina_step(&est, &b, 0.0).unwrap(),
            oja_step(&est, &b, 0.0).unwrap(),
        ] {
            assert_eq!(next.v, est.v);
            assert_eq!(next.iterations, 1);
            assert_eq!(next.samples_processed, 2);
        }
        assert!(krasulina_step(&est, &b, -1.0).is_err());
    }

    #[test]
    fn oja_hand_example() {
        let est = EigenEstimate::new(vec![1.0, 0.0], false).unwrap();
        let next = oja_step(&est, &batch(&[&[1.0, 1.0]]), 0.5).unwrap();
        assert_eq!(next.v, vec![1.0, 0.5]);
    }

    #[test]
    fn overflow_is_reported() {
        let est = EigenEstimate::new(vec![1.0, 0.0], false).unwrap();
        let r = krasulina_step(&est, &batch(&[&[1.0, 1.0]]), f64::MAX);
        assert!(matches!(r, Err(Error::NumericOverflow { .. })));
    }

    #[test]
    fn potential_examples() {
        let q = [1.0, 0.0];
        assert_eq!(potential(&[2.0, 0.0], &q).unwrap(), 0.0);
        assert_eq!(potential(&[0.0, -3.0], &q).unwrap(), 1.0);
        let s = 1.0 / 2f64.sqrt();
        assert!((potential(&[s, s], &q).unwrap() - 0.5).abs() < 1e-15);
        assert!(potential(&[1.0, 0.0], &[2.0, 0.0]).is_err());
        assert!(potential(&[0.0, 0.0], &q).is_err());
    }

    #[test]
    fn z_statistic_examples() {
        let q = [0.6, 0.8];
        let xi = krasulina_direction(&q, &batch(&[&[1.0, -2.0]])).unwrap();
        assert_eq!(z_statistic(&[0.3, 0.1], &xi, 0.0, &q).unwrap(), 0.0);
        assert!(z_statistic(&q, &xi, 0.7, &q).unwrap().abs() < 1e-15);
    }
}

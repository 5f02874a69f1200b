//! Synthetic data with a prescribed spectrum, the Monte-Carlo variance
//! estimator, centering, and the batch ground-truth eigenvector oracle.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::SampleBatch;
use crate::linalg::{dot, norm2, normalize};
use crate::network::SampleSource;

/// Human-readable description of the tail-spectrum rule used by
/// [`make_covariance`]; recorded in run metadata.
pub const SPECTRUM_RULE: &str =
    "lambda_2 = lambda_1 - gap; lambda_2..lambda_d equally spaced from lambda_2 down to lambda_2/2";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionKind {
    Gaussian,
    /// `x = C u` with `u_i ~ Uniform(−a, a)` and `C = Q diag(√(3λ)/a)`.
    BoundedUniform {
        half_range: f64,
    },
}

/// Ground-truth covariance: spectrum, orthonormal eigenbasis and the
/// sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub basis: Vec<Vec<f64>>,
    pub kind: DistributionKind,
}

/// Top eigenpair (and second eigenvalue) of a covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub q_star: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma2: Option<f64>,
}

/// Spectrum `(λ₁, λ₁−gap, …, (λ₁−gap)/2)` with a random orthonormal basis.
pub fn make_covariance(d: usize, lambda1: f64, eigengap: f64, seed: u64) -> Result<CovarianceSpec> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(Error::domain(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if !(eigengap > 0.0 && eigengap < lambda1) {
        return Err(Error::domain(format!(
            "eigengap must lie in (0, lambda1) = (0, {lambda1}), got {eigengap}"
        )));
    }
    let lambda2 = lambda1 - eigengap;
    let mut eigenvalues = vec![lambda1];
    if d == 2 {
        eigenvalues.push(lambda2);
    } else {
        let steps = (d - 2) as f64;
        eigenvalues.extend((0..d - 1).map(|k| lambda2 - k as f64 / steps * (lambda2 / 2.0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal_basis(d, &mut rng);
    CovarianceSpec::new(eigenvalues, basis, DistributionKind::Gaussian)
}

fn random_orthonormal_basis<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    (0..d)
        .map(|k| q.column(k).iter().copied().collect())
        .collect()
}

impl CovarianceSpec {
    pub fn new(
        eigenvalues: Vec<f64>,
        basis: Vec<Vec<f64>>,
        kind: DistributionKind,
    ) -> Result<Self> {
        let d = eigenvalues.len();
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if basis.len() != d || basis.iter().any(|c| c.len() != d) {
            return Err(Error::domain("basis must be d vectors of length d"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues[d - 1] < 0.0 {
            return Err(Error::domain("eigenvalues must be non-increasing and >= 0"));
        }
        if !(eigenvalues[0] > eigenvalues[1]) {
            return Err(Error::domain("need a strict gap lambda_1 > lambda_2"));
        }
        if let DistributionKind::BoundedUniform { half_range } = kind {
            if !(half_range > 0.0 && half_range.is_finite()) {
                return Err(Error::domain("uniform half-range must be > 0"));
            }
        }
        let spec = Self {
            eigenvalues,
            basis,
            kind,
        };
        let residual = spec.orthonormality_residual();
        if residual > 1e-10 {
            return Err(Error::domain(format!(
                "basis is not orthonormal (residual {residual:e})"
            )));
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[1]
    }

    pub fn eigengap(&self) -> f64 {
        self.lambda1() - self.lambda2()
    }

    pub fn q_star(&self) -> &[f64] {
        &self.basis[0]
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }

    /// Same basis and distribution with every eigenvalue multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.eigenvalues.iter().map(|l| l * factor).collect(),
            self.basis.clone(),
            self.kind,
        )
    }

    /// Rescales the spectrum so the bounded kind satisfies `‖x‖ ≤ r` with
    /// equality at the cube corners. The relative eigengap is preserved.
    pub fn scaled_to_norm_bound(&self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::domain(format!("norm bound must be > 0, got {r}")));
        }
        self.scaled(r * r / (3.0 * self.trace()))
    }

    pub fn with_kind(mut self, kind: DistributionKind) -> Result<Self> {
        self.kind = kind;
        Self::new(self.eigenvalues, self.basis, self.kind)
    }

    /// `max |QᵀQ − I|` entrywise.
    pub fn orthonormality_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&self.basis[i], &self.basis[j]) - target).abs());
            }
        }
        worst
    }

    /// Almost-sure bound on `‖x‖` for the bounded kind: `√(3 tr Σ)`, attained
    /// at the corners of the cube since `Q` is orthogonal.
    pub fn norm_bound(&self) -> Option<f64> {
        match self.kind {
            DistributionKind::Gaussian => None,
            DistributionKind::BoundedUniform { .. } => Some((3.0 * self.trace()).sqrt()),
        }
    }

    /// `xᵀ Σ x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.basis)
            .map(|(l, q)| l * dot(q, x).powi(2))
            .sum()
    }

    /// Closed-form `E‖x xᵀ − Σ‖_F²` for the two supported distributions.
    pub fn exact_sigma2(&self) -> f64 {
        let tr = self.trace();
        let fro = self.frobenius_sq();
        match self.kind {
            // E‖x‖⁴ = (tr Σ)² + 2‖Σ‖²
            DistributionKind::Gaussian => tr * tr + fro,
            // E‖x‖⁴ = (tr Σ)² + (9/5 − 1)‖Σ‖²
            DistributionKind::BoundedUniform { .. } => tr * tr - 0.2 * fro,
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            q_star: self.q_star().to_vec(),
            lambda1: self.lambda1(),
            lambda2: self.lambda2(),
            sigma2: Some(self.exact_sigma2()),
        }
    }

    /// Writes one draw into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self.kind {
            DistributionKind::Gaussian => {
                for (l, q) in self.eigenvalues.iter().zip(&self.basis) {
                    let g: f64 = rng.sample(StandardNormal);
                    let s = l.sqrt() * g;
                    for (o, qi) in out.iter_mut().zip(q) {
                        *o += s * qi;
                    }
                }
            }
            DistributionKind::BoundedUniform { half_range } => {
                let unif = Uniform::new_inclusive(-half_range, half_range)
                    .expect("half-range validated at construction");
                for (l, q) in self.eigenvalues.iter().zip(&self.basis) {
                    let u: f64 = rng.sample(unif);
                    let s = (3.0 * l).sqrt() / half_range * u;
                    for (o, qi) in out.iter_mut().zip(q) {
                        *o += s * qi;
                    }
                }
            }
        }
    }
}

/// `n` i.i.d. draws from `spec`.
pub fn sample_stream<R: Rng + ?Sized>(
    spec: &CovarianceSpec,
    n: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    if n < 1 {
        return Err(Error::domain("sample count must be >= 1"));
    }
    let d = spec.dim();
    let mut data = vec![0.0; n * d];
    for row in data.chunks_exact_mut(d) {
        spec.draw_into(rng, row);
    }
    SampleBatch::from_flat(d, data)
}

/// Endless stream of draws from a covariance spec.
pub struct SyntheticSource<'a, R> {
    pub spec: &'a CovarianceSpec,
    pub rng: R,
}

impl<R: Rng> SampleSource for SyntheticSource<'_, R> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn next_into(&mut self, out: &mut [f64]) -> bool {
        self.spec.draw_into(&mut self.rng, out);
        true
    }
}

/// Rows of a fixed dataset in a given order; exhausts after one pass.
pub struct PermutedSource<'a> {
    pub samples: &'a SampleBatch,
    pub order: Vec<usize>,
    pub pos: usize,
}

impl SampleSource for PermutedSource<'_> {
    fn dim(&self) -> usize {
        self.samples.dim()
    }

    fn next_into(&mut self, out: &mut [f64]) -> bool {
        match self.order.get(self.pos) {
            Some(&i) => {
                out.copy_from_slice(self.samples.row(i));
                self.pos += 1;
                true
            }
            None => false,
        }
    }
}

/// Where the reference covariance for [`estimate_sigma2`] comes from.
#[derive(Debug, Clone, Copy)]
pub enum VarianceSource<'a> {
    /// Draw from the spec and compare against its exact Σ.
    Spec(&'a CovarianceSpec),
    /// Resample rows of a dataset and compare against its sample covariance.
    Samples(&'a SampleBatch),
}

/// Monte-Carlo estimate of `E‖(1/N) Σᵢ xᵢxᵢᵀ − Σ‖_F²` over `m` groups of
/// `group` samples (`group = 1` gives σ², `group = N` gives σ_N²).
///
/// Uses `‖A − Σ‖² = ‖A‖² − 2 tr(AΣ) + ‖Σ‖²` with `‖A‖² = N⁻² Σᵢⱼ (xᵢᵀxⱼ)²`
/// and `tr(AΣ) = N⁻¹ Σᵢ xᵢᵀΣxᵢ`, so the group matrix is never formed.
pub fn estimate_sigma2<R: Rng + ?Sized>(
    source: VarianceSource<'_>,
    group: usize,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m < 100 {
        return Err(Error::domain(format!(
            "need at least 100 Monte-Carlo groups, got {m}"
        )));
    }
    if group < 1 {
        return Err(Error::domain("group size must be >= 1"));
    }
    match source {
        VarianceSource::Spec(spec) => {
            let d = spec.dim();
            let fro = spec.frobenius_sq();
            let mut xs = vec![0.0; group * d];
            let mut total = 0.0;
            for _ in 0..m {
                for row in xs.chunks_exact_mut(d) {
                    spec.draw_into(rng, row);
                }
                total += group_deviation(&xs, d, fro, |x| spec.quadratic_form(x));
            }
            Ok(total / m as f64)
        }
        VarianceSource::Samples(samples) => {
            if samples.is_empty() {
                return Err(Error::InvalidBatch("empty dataset".into()));
            }
            let d = samples.dim();
            let n = samples.len();
            let sigma = sample_covariance(samples);
            let fro = sigma.iter().map(|x| x * x).sum::<f64>();
            let mut xs = vec![0.0; group * d];
            let mut total = 0.0;
            for _ in 0..m {
                for row in xs.chunks_exact_mut(d) {
                    row.copy_from_slice(samples.row(rng.random_range(0..n)));
                }
                total += group_deviation(&xs, d, fro, |x| {
                    let xv = nalgebra::DVectorView::from_slice(x, d);
                    xv.dot(&(&sigma * xv))
                });
            }
            Ok(total / m as f64)
        }
    }
}

fn group_deviation(xs: &[f64], d: usize, sigma_fro_sq: f64, quad: impl Fn(&[f64]) -> f64) -> f64 {
    let rows: Vec<&[f64]> = xs.chunks_exact(d).collect();
    let n = rows.len() as f64;
    let mut gram = 0.0;
    for (i, a) in rows.iter().enumerate() {
        gram += dot(a, a).powi(2);
        for b in &rows[i + 1..] {
            gram += 2.0 * dot(a, b).powi(2);
        }
    }
    let cross: f64 = rows.iter().map(|x| quad(x)).sum();
    gram / (n * n) - 2.0 * cross / n + sigma_fro_sq
}

/// `(1/n) Σ x xᵀ` as a dense matrix.
pub fn sample_covariance(samples: &SampleBatch) -> DMatrix<f64> {
    let d = samples.dim();
    let n = samples.len();
    let x = DMatrix::from_row_slice(n, d, samples.as_flat());
    (x.transpose() * &x) / n as f64
}

/// Subtracts the empirical mean from every row.
pub fn center_dataset(samples: &SampleBatch) -> Result<SampleBatch> {
    if samples.is_empty() {
        return Err(Error::InvalidBatch("cannot center an empty dataset".into()));
    }
    let d = samples.dim();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for row in samples.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut out = samples.as_flat().to_vec();
    for row in out.chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    SampleBatch::from_flat(d, out)
}

/// Input for [`batch_top_eigenvector`].
#[derive(Debug, Clone, Copy)]
pub enum EigenInput<'a> {
    Samples(&'a SampleBatch),
    Spec(&'a CovarianceSpec),
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_RESIDUAL_TOL: f64 = 1e-10;
const POWER_POTENTIAL_TOL: f64 = 1e-12;
const POWER_RAYLEIGH_TOL: f64 = 1e-12;

/// `Āv` for the sample covariance of `samples`, matrix-free.
fn apply_sample_cov(samples: &SampleBatch, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for x in samples.rows() {
        let a = dot(x, v);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += a * xi;
        }
    }
    let n = samples.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
}

fn sin_sq(a: &[f64], b: &[f64]) -> f64 {
    let p = dot(a, b);
    a.iter().zip(b).map(|(x, y)| (x - p * y).powi(2)).sum()
}

/// Top eigenpair of the sample covariance via matrix-free power iteration,
/// then one deflation step for `λ₂`. A spec input returns its stored values.
///
/// Stops once successive iterates differ by less than 1e-12 in potential and
/// the eigen-residual `‖Āq − ρq‖` is at most 1e-10·ρ.
pub fn batch_top_eigenvector(input: EigenInput<'_>) -> Result<GroundTruth> {
    let samples = match input {
        EigenInput::Spec(spec) => return Ok(spec.ground_truth()),
        EigenInput::Samples(s) => s,
    };
    if samples.is_empty() {
        return Err(Error::InvalidBatch("empty dataset".into()));
    }
    let d = samples.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (q, lambda1) = power_iterate(d, &mut rng, Stop::Residual, |v, out| {
        apply_sample_cov(samples, v, out)
    })?;
    let (_, lambda2) = power_iterate(d, &mut rng, Stop::RayleighChange, |v, out| {
        apply_sample_cov(samples, v, out);
        let p = lambda1 * dot(&q, v);
        for (o, qi) in out.iter_mut().zip(&q) {
            *o -= p * qi;
        }
    })?;
    Ok(GroundTruth {
        q_star: q,
        lambda1,
        lambda2: lambda2.max(0.0),
        sigma2: None,
    })
}

#[derive(Clone, Copy)]
enum Stop {
    /// Eigen-residual and successive-potential test (top eigenvector).
    Residual,
    /// Relative change of the Rayleigh quotient (deflated λ₂ only).
    RayleighChange,
}

fn power_iterate<R: Rng>(
    d: usize,
    rng: &mut R,
    stop: Stop,
    apply: impl Fn(&[f64], &mut [f64]),
) -> Result<(Vec<f64>, f64)> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    let mut w = vec![0.0; d];
    let mut residual = f64::INFINITY;
    let mut prev_rho = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        apply(&v, &mut w);
        let rho = dot(&v, &w);
        residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| (wi - rho * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let n = norm2(&w);
        if n == 0.0 {
            // v lies in the null space; the operator is zero on it.
            return Ok((v, 0.0));
        }
        let next: Vec<f64> = w.iter().map(|x| x / n).collect();
        let done = match stop {
            Stop::Residual => {
                residual <= POWER_RESIDUAL_TOL * rho.abs()
                    && sin_sq(&next, &v) < POWER_POTENTIAL_TOL
            }
            Stop::RayleighChange => {
                (rho - prev_rho).abs() <= POWER_RAYLEIGH_TOL * rho.abs()
                    || residual <= POWER_RESIDUAL_TOL * rho.abs()
            }
        };
        if done {
            return Ok((v, rho));
        }
        prev_rho = rho;
        v = next;
    }
    Err(Error::NonConvergence {
        iterations: POWER_MAX_ITERS,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_rule() {
        let spec = make_covariance(5, 1.0, 0.2, 7).unwrap();
        let want = [1.0, 0.8, 0.8 - 0.4 / 3.0, 0.8 - 0.8 / 3.0, 0.4];
        for (a, b) in spec.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(spec.orthonormality_residual() <= 1e-10);
        assert!(make_covariance(5, 1.0, 1.0, 0).is_err());
        assert!(make_covariance(1, 1.0, 0.5, 0).is_err());
        let two = make_covariance(2, 1.0, 0.3, 0).unwrap();
        assert_eq!(two.eigenvalues.len(), 2);
        assert!((two.eigenvalues[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn spec_ground_truth_is_exact() {
        let spec = make_covariance(4, 2.0, 0.5, 1).unwrap();
        let gt = batch_top_eigenvector(EigenInput::Spec(&spec)).unwrap();
        assert_eq!(gt.q_star, spec.basis[0]);
        assert_eq!(gt.lambda1, 2.0);
        assert_eq!(gt.lambda2, 1.5);
    }

    #[test]
    fn rank_one_data() {
        let rows: Vec<[f64; 3]> = [1.0, -2.0, 0.5, 3.0]
            .iter()
            .map(|s| [*s, 0.0, 0.0])
            .collect();
        let batch = SampleBatch::from_rows(&rows).unwrap();
        let gt = batch_top_eigenvector(EigenInput::Samples(&batch)).unwrap();
        assert!((gt.q_star[0].abs() - 1.0).abs() < 1e-12);
        assert!(gt.lambda2.abs() < 1e-12);
    }

    #[test]
    fn centering() {
        let batch = SampleBatch::from_rows(&[[1.0, 2.0], [3.0, -4.0], [5.0, 8.0]]).unwrap();
        let c = center_dataset(&batch).unwrap();
        for k in 0..2 {
            let m: f64 = c.rows().map(|r| r[k]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
        }
        let again = center_dataset(&c).unwrap();
        for (a, b) in again.as_flat().iter().zip(c.as_flat()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let constant = SampleBatch::from_rows(&[[2.5, -1.0]; 4]).unwrap();
        assert!(center_dataset(&constant)
            .unwrap()
            .as_flat()
            .iter()
            .all(|x| *x == 0.0));
    }

    #[test]
    fn deterministic_sample_has_zero_variance() {
        // Σ = x xᵀ with x = (1, 0): every draw reproduces Σ exactly.
        let batch = SampleBatch::from_rows(&[[1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = estimate_sigma2(VarianceSource::Samples(&batch), 1, 100, &mut rng).unwrap();
        assert!(s.abs() < 1e-15);
        assert!(estimate_sigma2(VarianceSource::Samples(&batch), 1, 99, &mut rng).is_err());
    }
}

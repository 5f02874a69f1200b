//! Monte-Carlo experiment runner: trials, traces, aggregation, slope fits
//! and bound comparison.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    batch_top_eigenvector, center_dataset, CovarianceSpec, EigenInput, GroundTruth, PermutedSource,
    SyntheticSource,
};
use crate::error::{Error, Result};
use crate::estimator::{potential, random_unit_init, EigenEstimate, SampleBatch, UpdateRule};
use crate::network::{DmkRunner, Network, SampleSource};
use crate::schedule::{step_size, theoretical_bound, BoundParams, StepSchedule};

/// Which algorithm topology to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One node, mini-batch `B = b` (plain Krasulina/Oja when `b = 1`).
    #[default]
    Single,
    /// `N` nodes, one sample each.
    Dk,
    /// `N` nodes, `b` samples each.
    Dmk,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Self::Single),
            "dk" => Ok(Self::Dk),
            "dmk" => Ok(Self::Dmk),
            other => Err(format!(
                "unknown variant `{other}` (expected single, dk or dmk)"
            )),
        }
    }
}

/// When to record Ψ along a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TraceSpacing {
    /// About `points` geometrically spaced iterations.
    Log { points: usize },
    /// Every `every`-th iteration.
    Stride { every: u64 },
}

impl Default for TraceSpacing {
    fn default() -> Self {
        Self::Log { points: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rule: UpdateRule,
    pub variant: Variant,
    /// `N`.
    pub nodes: usize,
    /// `b`; for [`Variant::Single`] this is the mini-batch `B`.
    pub local_batch: usize,
    /// Samples dropped after every iteration.
    pub mu: u64,
    pub c: f64,
    pub l: f64,
    /// `T`: samples that arrive at the system over the whole run.
    pub total_samples: u64,
    pub trials: usize,
    pub seed: u64,
    pub trace: TraceSpacing,
    pub normalize: bool,
}

impl ExperimentConfig {
    /// Single-node mini-batch run with `γ_t = c/t`.
    pub fn single(batch: usize, c: f64, total_samples: u64) -> Self {
        Self {
            rule: UpdateRule::Krasulina,
            variant: Variant::Single,
            nodes: 1,
            local_batch: batch,
            mu: 0,
            c,
            l: 0.0,
            total_samples,
            trials: 1,
            seed: 0,
            trace: TraceSpacing::default(),
            normalize: true,
        }
    }

    pub fn dk(nodes: usize, c: f64, total_samples: u64) -> Self {
        Self {
            variant: Variant::Dk,
            nodes,
            local_batch: 1,
            ..Self::single(1, c, total_samples)
        }
    }

    pub fn dmk(nodes: usize, local_batch: usize, c: f64, total_samples: u64) -> Self {
        Self {
            variant: Variant::Dmk,
            nodes,
            local_batch,
            ..Self::single(1, c, total_samples)
        }
    }

    pub fn network_batch(&self) -> u64 {
        (self.nodes * self.local_batch) as u64
    }

    pub fn block_len(&self) -> u64 {
        self.network_batch() + self.mu
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 1 || self.local_batch < 1 {
            return Err(Error::InvalidBatch(format!(
                "need N >= 1 and b >= 1, got N={} b={}",
                self.nodes, self.local_batch
            )));
        }
        match self.variant {
            Variant::Single if self.nodes != 1 => {
                return Err(Error::InvalidBatch("variant single requires N = 1".into()))
            }
            Variant::Dk if self.local_batch != 1 => {
                return Err(Error::InvalidBatch("variant dk requires b = 1".into()))
            }
            _ => {}
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!(
                "step constant c must be > 0, got {}",
                self.c
            )));
        }
        if !(self.l >= 0.0 && self.l.is_finite()) {
            return Err(Error::domain(format!("L must be >= 0, got {}", self.l)));
        }
        if self.total_samples < self.block_len() {
            return Err(Error::domain(format!(
                "T = {} is smaller than one block B + mu = {}",
                self.total_samples,
                self.block_len()
            )));
        }
        if self.trials < 1 {
            return Err(Error::domain("trials must be >= 1"));
        }
        match self.trace {
            TraceSpacing::Log { points } if points < 2 => {
                Err(Error::domain("log trace spacing needs at least 2 points"))
            }
            TraceSpacing::Stride { every: 0 } => Err(Error::domain("trace stride must be >= 1")),
            _ => Ok(()),
        }
    }

    fn schedule(&self) -> StepSchedule {
        // The eigengap only matters for c₀, which the runner never uses.
        StepSchedule {
            c: self.c,
            l: self.l,
            eigengap: 0.0,
        }
    }
}

/// A centered dataset together with its cached ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: SampleBatch,
    pub truth: GroundTruth,
}

impl Dataset {
    /// Centers `raw` and computes its top eigenvector.
    pub fn prepare(raw: &SampleBatch) -> Result<Self> {
        let samples = center_dataset(raw)?;
        let truth = batch_top_eigenvector(EigenInput::Samples(&samples))?;
        Ok(Self { samples, truth })
    }
}

/// Where trial samples come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh i.i.d. draws each trial.
    Synthetic(Arc<CovarianceSpec>),
    /// One random shuffle of the rows per trial, single pass.
    Dataset(Arc<Dataset>),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            Self::Synthetic(s) => s.dim(),
            Self::Dataset(d) => d.samples.dim(),
        }
    }

    pub fn truth(&self) -> GroundTruth {
        match self {
            Self::Synthetic(s) => s.ground_truth(),
            Self::Dataset(d) => d.truth.clone(),
        }
    }

    /// Samples available in one pass, if finite.
    pub fn capacity(&self) -> Option<u64> {
        match self {
            Self::Synthetic(_) => None,
            Self::Dataset(d) => Some(d.samples.len() as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Samples that have arrived at the system, processed or not.
    pub samples: u64,
    pub processed: u64,
    pub discarded: u64,
    pub iteration: u64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub trial: u64,
    pub points: Vec<TracePoint>,
    pub final_v: Vec<f64>,
    /// The tail of the stream was shorter than `B` and was dropped.
    pub partial_block_discarded: bool,
    /// The data ran out before `T` samples arrived.
    pub stream_exhausted: bool,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Iterations at which Ψ is recorded (always includes `0` and `last`).
fn checkpoints(spacing: TraceSpacing, last: u64) -> Vec<u64> {
    let mut out = vec![0];
    match spacing {
        TraceSpacing::Log { points } => {
            let lmax = (last.max(1) as f64).ln();
            let steps = (points - 1).max(1);
            for i in 0..=steps {
                let t = (lmax * i as f64 / steps as f64).exp().round() as u64;
                out.push(t.clamp(1, last.max(1)));
            }
        }
        TraceSpacing::Stride { every } => out.extend((1..=last / every).map(|k| k * every)),
    }
    out.push(last);
    out.retain(|&t| t <= last);
    out.sort_unstable();
    out.dedup();
    out
}

/// Runs one trial. Deterministic in `(cfg.seed, trial)`.
pub fn run_trial(cfg: &ExperimentConfig, source: &DataSource, trial: u64) -> Result<TraceRecord> {
    cfg.validate()?;
    let d = source.dim();
    let truth = source.truth();
    let mut rng = trial_rng(cfg.seed, trial);
    let mut est = random_unit_init(d, &mut rng)?;
    if !cfg.normalize {
        est = est.unnormalized();
    }

    let total = match source.capacity() {
        Some(n) => cfg.total_samples.min(n),
        None => cfg.total_samples,
    };
    let stream_exhausted = total < cfg.total_samples;
    match source {
        DataSource::Synthetic(spec) => {
            let mut src = SyntheticSource { spec, rng };
            drive(
                cfg,
                &truth,
                &mut est,
                &mut src,
                total,
                trial,
                stream_exhausted,
            )
        }
        DataSource::Dataset(ds) => {
            let mut order: Vec<usize> = (0..ds.samples.len()).collect();
            order.shuffle(&mut rng);
            let mut src = PermutedSource {
                samples: &ds.samples,
                order,
                pos: 0,
            };
            drive(
                cfg,
                &truth,
                &mut est,
                &mut src,
                total,
                trial,
                stream_exhausted,
            )
        }
    }
}

fn drive<S: SampleSource>(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    est: &mut EigenEstimate,
    src: &mut S,
    total: u64,
    trial: u64,
    mut stream_exhausted: bool,
) -> Result<TraceRecord> {
    if total < cfg.network_batch() {
        return Err(Error::EndOfStream {
            received: 0,
            processed: 0,
            discarded: 0,
        });
    }
    let network = Network::new(cfg.nodes, cfg.local_batch, src.dim(), cfg.rule)?;
    let mut runner = DmkRunner::new(network, cfg.mu);
    let sched = cfg.schedule();
    let batch = cfg.network_batch();
    let block = cfg.block_len();
    let full_blocks = total / block;
    let remainder = total - full_blocks * block;
    let tail_processed = remainder >= batch;
    let iterations = full_blocks + u64::from(tail_processed);
    let marks = checkpoints(cfg.trace, iterations);
    let mut next_mark = 0;

    let mut points = Vec::with_capacity(marks.len() + 1);
    let point = |runner: &DmkRunner, est: &EigenEstimate| -> Result<TracePoint> {
        let c = runner.cursor;
        Ok(TracePoint {
            samples: c.received,
            processed: c.processed,
            discarded: c.discarded,
            iteration: c.iteration,
            psi: potential(&est.v, &truth.q_star)?,
        })
    };
    points.push(point(&runner, est)?);
    next_mark += 1;

    for t in 1..=iterations {
        let mu = if t > full_blocks {
            remainder - batch
        } else {
            cfg.mu
        };
        let gamma = step_size(t, &sched);
        match runner.step_with_discards(est, src, gamma, mu) {
            Ok(_) => {}
            Err(Error::EndOfStream { .. }) => {
                stream_exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if marks.get(next_mark) == Some(&t) {
            points.push(point(&runner, est)?);
            next_mark += 1;
        }
    }

    let mut partial_block_discarded = false;
    if !tail_processed && remainder > 0 && !stream_exhausted {
        let mut row = vec![0.0; src.dim()];
        let mut pulled = 0;
        while pulled < remainder && src.next_into(&mut row) {
            pulled += 1;
        }
        runner.cursor.drop_unprocessed(pulled);
        partial_block_discarded = true;
    }
    let last = point(&runner, est)?;
    if points.last().map(|p| p.samples) != Some(last.samples) {
        points.push(last);
    }
    Ok(TraceRecord {
        trial,
        points,
        final_v: est.v.clone(),
        partial_block_discarded,
        stream_exhausted,
    })
}

/// Per-abscissa statistics over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTrace {
    pub samples: Vec<u64>,
    pub iterations: Vec<u64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub p10: Vec<f64>,
    pub p90: Vec<f64>,
    /// Standard error of the mean.
    pub stderr: Vec<f64>,
    pub trials: usize,
    pub partial_block_discarded: bool,
    pub stream_exhausted: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl AggregateTrace {
    /// Folds trials in the given order (callers pass them sorted by index).
    pub fn from_trials(trials: &[TraceRecord]) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| Error::domain("no trials to aggregate"))?;
        let n = first.points.len();
        if trials.iter().any(|t| {
            t.points.len() != n
                || t.points
                    .iter()
                    .zip(&first.points)
                    .any(|(a, b)| a.samples != b.samples)
        }) {
            return Err(Error::ModelInconsistency(
                "trials recorded different abscissas".into(),
            ));
        }
        let mut out = Self {
            samples: first.points.iter().map(|p| p.samples).collect(),
            iterations: first.points.iter().map(|p| p.iteration).collect(),
            mean: Vec::with_capacity(n),
            median: Vec::with_capacity(n),
            p10: Vec::with_capacity(n),
            p90: Vec::with_capacity(n),
            stderr: Vec::with_capacity(n),
            trials: trials.len(),
            partial_block_discarded: trials.iter().any(|t| t.partial_block_discarded),
            stream_exhausted: trials.iter().any(|t| t.stream_exhausted),
        };
        let k = trials.len() as f64;
        let mut col = Vec::with_capacity(trials.len());
        for i in 0..n {
            col.clear();
            col.extend(trials.iter().map(|t| t.points[i].psi));
            let mean = col.iter().sum::<f64>() / k;
            let var = if trials.len() > 1 {
                col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            col.sort_by(f64::total_cmp);
            out.mean.push(mean);
            out.stderr.push((var / k).sqrt());
            out.median.push(quantile(&col, 0.5));
            out.p10.push(quantile(&col, 0.1));
            out.p90.push(quantile(&col, 0.9));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("aggregate has at least one point")
    }

    /// `samples,mean_psi,median_psi,p10,p90`, one row per abscissa.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("<trace>", std::io::Error::other(e));
        w.write_record(["samples", "mean_psi", "median_psi", "p10", "p90"])
            .map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                self.samples[i].to_string(),
                format!("{:e}", self.mean[i]),
                format!("{:e}", self.median[i]),
                format!("{:e}", self.p10[i]),
                format!("{:e}", self.p90[i]),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub aggregate: AggregateTrace,
    pub trials: Vec<TraceRecord>,
}

/// Runs all trials on the current rayon pool and aggregates them in trial
/// order, so the result does not depend on scheduling.
pub fn run_monte_carlo(cfg: &ExperimentConfig, source: &DataSource) -> Result<MonteCarloResult> {
    cfg.validate()?;
    let trials = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(cfg, source, i))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateTrace::from_trials(&trials)?;
    Ok(MonteCarloResult { aggregate, trials })
}

/// Least-squares slope of `ln(mean Ψ)` against `ln(samples)` over the points
/// with `samples ≥ s_max · 10^(−window)` (`window = 1`: the final decade).
pub fn fit_loglog_slope(trace: &AggregateTrace, window: f64) -> Result<f64> {
    const MIN_POINTS: usize = 10;
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::domain(format!("window must be > 0, got {window}")));
    }
    let s_max = trace.samples.iter().copied().max().unwrap_or(0) as f64;
    let lo = s_max * 10f64.powf(-window);
    let pts: Vec<(f64, f64)> = trace
        .samples
        .iter()
        .zip(&trace.mean)
        .filter(|(s, _)| **s > 0 && **s as f64 >= lo)
        .map(|(s, m)| ((*s as f64).ln(), *m))
        .collect();
    if pts.len() < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_POINTS,
            found: pts.len(),
        });
    }
    if pts.iter().any(|(_, m)| !(*m > 0.0)) {
        return Err(Error::domain("mean psi must be > 0 inside the fit window"));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, m)| (a + x / n, b + m.ln() / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, m)| {
        (a + (x - mx) * (m.ln() - my), b + (x - mx).powi(2))
    });
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            found: 1,
        });
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub samples: u64,
    pub iteration: u64,
    pub empirical: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Rows where the bound falls below the empirical mean.
    pub violations: usize,
}

/// Evaluates the iteration-indexed error bound at every recorded point.
pub fn compare_bound(
    trace: &AggregateTrace,
    p: &BoundParams,
    sched: &StepSchedule,
) -> Result<BoundReport> {
    let mut rows = Vec::with_capacity(trace.len());
    for i in 0..trace.len() {
        let bound = theoretical_bound(trace.iterations[i], p, sched)?;
        let empirical = trace.mean[i];
        rows.push(BoundRow {
            samples: trace.samples[i],
            iteration: trace.iterations[i],
            empirical,
            bound,
            ratio: bound / empirical,
        });
    }
    let violations = rows.iter().filter(|r| r.bound < r.empirical).count();
    Ok(BoundReport { rows, violations })
}

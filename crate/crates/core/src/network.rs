//! In-process simulation of the splitter, the `N`-node network and the
//! distributed vector sum, executing the D-K and DM-K iterations.
//!
//! Node partial sums are kept as exact accumulators and reduced in ascending
//! node order, so a distributed iteration reproduces the centralized
//! mini-batch update bit for bit regardless of how samples are split across
//! nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    accumulate_directions, finish_direction, EigenEstimate, SampleBatch, UpdateRule,
};
use crate::exact_sum::ExactAccumulator;
use crate::linalg::norm_sq;

/// Whether the network keeps up with the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Resourceful,
    Constrained,
}

/// Data, processing and summation rates (samples/s, samples/s, sums/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub stream: f64,
    pub process: f64,
    pub comm: f64,
}

/// Static system description: nodes, per-node batch and either rates or a
/// fixed discard count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub nodes: usize,
    pub local_batch: usize,
    pub rates: Option<Rates>,
    pub mu_override: Option<u64>,
}

impl SystemModel {
    pub fn new(nodes: usize, local_batch: usize) -> Result<Self> {
        if nodes < 1 || local_batch < 1 {
            return Err(Error::domain(format!(
                "need N >= 1 and b >= 1, got N = {nodes}, b = {local_batch}"
            )));
        }
        Ok(Self {
            nodes,
            local_batch,
            rates: None,
            mu_override: None,
        })
    }

    pub fn with_rates(mut self, rates: Rates) -> Self {
        self.rates = Some(rates);
        self
    }

    pub fn with_mu(mut self, mu: u64) -> Self {
        self.mu_override = Some(mu);
        self
    }

    /// Network-wide mini-batch `B = bN`.
    pub fn network_batch(&self) -> usize {
        self.nodes * self.local_batch
    }
}

/// Classifies the regime and returns the per-iteration discard count.
///
/// Resourceful iff `N ≥ R_s/R_p + R_s/(b R_c)`; otherwise
/// `μ = ⌈(b R_s/R_p + R_s/R_c) − B⌉`. An explicit override wins.
pub fn classify_and_mu(model: &SystemModel) -> Result<(Scenario, u64)> {
    let rates = match (model.rates, model.mu_override) {
        (_, Some(mu)) => {
            let scenario = if mu == 0 {
                Scenario::Resourceful
            } else {
                Scenario::Constrained
            };
            return Ok((scenario, mu));
        }
        (Some(r), None) => r,
        (None, None) => return Ok((Scenario::Resourceful, 0)),
    };
    if !(rates.stream > 0.0 && rates.process > 0.0 && rates.comm > 0.0) {
        return Err(Error::domain("rates must all be > 0"));
    }
    let n = model.nodes as f64;
    let b = model.local_batch as f64;
    let needed = rates.stream / rates.process + rates.stream / (b * rates.comm);
    if n >= needed {
        return Ok((Scenario::Resourceful, 0));
    }
    let mu = (b * rates.stream / rates.process + rates.stream / rates.comm
        - model.network_batch() as f64)
        .ceil();
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::ModelInconsistency(format!(
            "constrained regime produced discard count {mu}"
        )));
    }
    Ok((Scenario::Constrained, mu as u64))
}

/// D-K arrival index `t′ = i + (t−1)N` (all indices 1-based).
pub fn reindex_dk(node: u64, iteration: u64, nodes: u64) -> Result<u64> {
    if nodes < 1 || node < 1 || node > nodes || iteration < 1 {
        return Err(Error::IndexOutOfRange(format!(
            "node {node} of {nodes}, iteration {iteration}"
        )));
    }
    Ok(node + (iteration - 1) * nodes)
}

/// DM-K arrival index `t′ = j + (i−1)b + (t−1)·block`. `block` is the number of
/// samples the system receives per iteration: `B`, or `B + μ` with discards.
pub fn reindex_dmk(node: u64, j: u64, iteration: u64, local_batch: u64, block: u64) -> Result<u64> {
    if local_batch < 1 || j < 1 || j > local_batch || node < 1 || iteration < 1 {
        return Err(Error::IndexOutOfRange(format!(
            "sample {j} of {local_batch} on node {node}, iteration {iteration}"
        )));
    }
    let base = (node - 1) * local_batch;
    if base + local_batch > block {
        return Err(Error::IndexOutOfRange(format!(
            "node {node} with b = {local_batch} exceeds block of {block}"
        )));
    }
    Ok(j + base + (iteration - 1) * block)
}

/// Sums node vectors in ascending node order. The sum is exact before the
/// final rounding, so repeated calls are bitwise identical.
pub fn distributed_vector_sum<V: AsRef<[f64]>>(parts: &[V]) -> Result<Vec<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidBatch("vector sum over zero nodes".into()))?;
    let dim = first.as_ref().len();
    let mut acc = ExactAccumulator::new(dim);
    for p in parts {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        acc.add(p);
    }
    Ok(acc.round())
}

/// One processing node: its id and its local direction accumulator.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    accumulator: ExactAccumulator,
    scratch: Vec<f64>,
}

impl NodeState {
    fn new(node_id: usize, dim: usize) -> Self {
        Self {
            node_id,
            accumulator: ExactAccumulator::new(dim),
            scratch: vec![0.0; dim],
        }
    }

    /// Rounded local sum `ξ_{i,t}` (before the network-wide average).
    pub fn local_direction(&self) -> Vec<f64> {
        self.accumulator.round()
    }
}

/// Simulated network of `N` nodes, each with a local mini-batch of `b`.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<NodeState>,
    local_batch: usize,
    dim: usize,
    rule: UpdateRule,
    parallel: bool,
    reduced: ExactAccumulator,
    xi: Vec<f64>,
}

impl Network {
    pub fn new(nodes: usize, local_batch: usize, dim: usize, rule: UpdateRule) -> Result<Self> {
        SystemModel::new(nodes, local_batch)?;
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self {
            nodes: (1..=nodes).map(|i| NodeState::new(i, dim)).collect(),
            local_batch,
            dim,
            rule,
            parallel: false,
            reduced: ExactAccumulator::new(dim),
            xi: vec![0.0; dim],
        })
    }

    /// Computes per-node directions on rayon worker threads. Results are
    /// identical to the serial path.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_batch(&self) -> usize {
        self.local_batch
    }

    pub fn network_batch(&self) -> usize {
        self.nodes.len() * self.local_batch
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// The last reduced network direction `ξ_t`.
    pub fn last_direction(&self) -> &[f64] {
        &self.xi
    }

    /// One DM-K iteration over a block of exactly `B` samples laid out by
    /// the reindex map: node `i` owns rows `(i−1)b .. i·b`.
    pub fn iterate(
        &mut self,
        est: &mut EigenEstimate,
        block: &SampleBatch,
        gamma: f64,
    ) -> Result<()> {
        let expected = self.network_batch();
        if block.len() != expected {
            return Err(Error::SampleCount {
                expected,
                got: block.len(),
            });
        }
        if block.dim() != self.dim || est.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: block.dim(),
            });
        }
        let v_norm_sq = norm_sq(&est.v);
        if !(v_norm_sq > 0.0 && v_norm_sq.is_finite()) {
            return Err(Error::DegenerateIterate);
        }
        let (rule, b, dim) = (self.rule, self.local_batch, self.dim);
        let v = &est.v;
        let flat = block.as_flat();
        let local = |node: &mut NodeState| {
            node.accumulator.reset();
            let start = (node.node_id - 1) * b * dim;
            let rows = flat[start..start + b * dim].chunks_exact(dim);
            accumulate_directions(
                rule,
                v,
                v_norm_sq,
                rows,
                &mut node.accumulator,
                &mut node.scratch,
            );
        };
        if self.parallel {
            self.nodes.par_iter_mut().for_each(local);
        } else {
            self.nodes.iter_mut().for_each(local);
        }
        self.reduced.reset();
        for node in &self.nodes {
            self.reduced.merge(&node.accumulator);
        }
        finish_direction(&self.reduced, expected, &mut self.xi);
        est.apply(&self.xi, gamma, expected)
    }
}

/// One D-K iteration: exactly `N` samples, one per node.
pub fn run_dk_iteration(
    est: &EigenEstimate,
    samples: &SampleBatch,
    gamma: f64,
    rule: UpdateRule,
) -> Result<EigenEstimate> {
    let mut net = Network::new(samples.len().max(1), 1, est.dim(), rule)?;
    let mut next = est.clone();
    net.iterate(&mut next, samples, gamma)?;
    Ok(next)
}

/// One DM-K iteration over `N` local batches of `b` samples each.
pub fn run_dmk_iteration(
    est: &EigenEstimate,
    batches: &[SampleBatch],
    gamma: f64,
    rule: UpdateRule,
) -> Result<EigenEstimate> {
    let b = batches.first().map(|x| x.len()).unwrap_or(0);
    if b == 0 {
        return Err(Error::InvalidBatch("empty local batch".into()));
    }
    let mut block = SampleBatch::with_dim(est.dim());
    for batch in batches {
        if batch.len() != b {
            return Err(Error::SampleCount {
                expected: b,
                got: batch.len(),
            });
        }
        if batch.dim() != est.dim() {
            return Err(Error::DimensionMismatch {
                expected: est.dim(),
                got: batch.dim(),
            });
        }
        block.data_mut().extend_from_slice(batch.as_flat());
    }
    let mut net = Network::new(batches.len(), b, est.dim(), rule)?;
    let mut next = est.clone();
    net.iterate(&mut next, &block, gamma)?;
    Ok(next)
}

/// A source of streaming samples.
pub trait SampleSource {
    fn dim(&self) -> usize;

    /// Writes the next sample into `out`; returns `false` when exhausted.
    fn next_into(&mut self, out: &mut [f64]) -> bool;
}

/// Tracks the global arrival index and per-iteration accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamCursor {
    /// Samples that have arrived at the system (next arrival index is `received + 1`).
    pub received: u64,
    pub processed: u64,
    pub discarded: u64,
    pub iteration: u64,
}

impl StreamCursor {
    /// Records samples that arrived but will never be processed.
    pub fn drop_unprocessed(&mut self, count: u64) {
        self.received += count;
        self.discarded += count;
    }
}

/// Splitter + network: pulls `(B + μ)`-sample blocks from a source, feeds the
/// leading `B` to the nodes and drops the trailing `μ`.
#[derive(Debug)]
pub struct DmkRunner {
    pub network: Network,
    pub mu: u64,
    pub cursor: StreamCursor,
    block: SampleBatch,
    row: Vec<f64>,
}

impl DmkRunner {
    pub fn new(network: Network, mu: u64) -> Self {
        let dim = network.dim;
        Self {
            network,
            mu,
            cursor: StreamCursor::default(),
            block: SampleBatch::with_dim(dim),
            row: vec![0.0; dim],
        }
    }

    /// Samples the system receives per iteration.
    pub fn block_len(&self) -> u64 {
        self.network.network_batch() as u64 + self.mu
    }

    /// Runs one iteration with up to `mu` trailing discards (`mu` may be
    /// smaller than the configured value for a final short block).
    /// Returns the number of discarded samples.
    pub fn step_with_discards<S: SampleSource + ?Sized>(
        &mut self,
        est: &mut EigenEstimate,
        source: &mut S,
        gamma: f64,
        mu: u64,
    ) -> Result<u64> {
        let batch = self.network.network_batch();
        self.block.clear();
        for k in 0..batch {
            if !source.next_into(&mut self.row) {
                self.cursor.drop_unprocessed(k as u64);
                return Err(self.end_of_stream());
            }
            self.block.push(&self.row)?;
        }
        self.network.iterate(est, &self.block, gamma)?;
        self.cursor.received += batch as u64;
        self.cursor.processed += batch as u64;
        self.cursor.iteration += 1;
        for k in 0..mu {
            if !source.next_into(&mut self.row) {
                self.cursor.drop_unprocessed(k);
                return Err(self.end_of_stream());
            }
        }
        self.cursor.drop_unprocessed(mu);
        Ok(mu)
    }

    pub fn step<S: SampleSource + ?Sized>(
        &mut self,
        est: &mut EigenEstimate,
        source: &mut S,
        gamma: f64,
    ) -> Result<u64> {
        let mu = self.mu;
        self.step_with_discards(est, source, gamma, mu)
    }

    fn end_of_stream(&self) -> Error {
        Error::EndOfStream {
            received: self.cursor.received,
            processed: self.cursor.processed,
            discarded: self.cursor.discarded,
        }
    }
}

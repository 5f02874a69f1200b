//! Layered run settings: preset, then config file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streampca::harness::{ExperimentConfig, TraceSpacing, Variant};
use streampca::network::{classify_and_mu, Rates, Scenario, SystemModel};
use streampca::UpdateRule;

use crate::args::PresetName;
use crate::error::{CliError, CliResult};

/// Flat keys mirroring the experiment configuration plus the data source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub rule: Option<UpdateRule>,
    pub variant: Option<Variant>,
    pub nodes: Option<usize>,
    pub local_batch: Option<usize>,
    pub minibatch: Option<usize>,
    pub mu: Option<u64>,
    pub c: Option<f64>,
    pub l: Option<f64>,
    pub total_samples: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub trace_points: Option<usize>,
    pub normalize: Option<bool>,
    pub data: Option<PathBuf>,
    pub dim: Option<usize>,
    pub lambda1: Option<f64>,
    pub eigengap: Option<f64>,
    pub half_range: Option<f64>,
    pub norm_bound: Option<f64>,
    pub spec_seed: Option<u64>,
    pub rate_stream: Option<f64>,
    pub rate_process: Option<f64>,
    pub rate_comm: Option<f64>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunSettings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunSettings {
    /// Values in `top` win over values in `self`.
    pub fn overlay(self, top: RunSettings) -> RunSettings {
        let base = self;
        overlay_fields!(base, top; rule, variant, nodes, local_batch, minibatch, mu, c, l,
            total_samples, trials, seed, trace_points, normalize, data, dim, lambda1, eigengap,
            half_range, norm_bound, spec_seed, rate_stream, rate_process, rate_comm)
    }

    pub fn from_toml(path: &Path, text: &str) -> CliResult<Self> {
        let mut s: RunSettings = toml::from_str(text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        // Relative dataset paths are taken relative to the config file.
        if let (Some(data), Some(dir)) = (&s.data, path.parent()) {
            if data.is_relative() {
                s.data = Some(dir.join(data));
            }
        }
        Ok(s)
    }
}

/// Step constants reported for each preset's selector value.
fn lookup(table: &[(f64, f64)], key: f64, what: &str, preset: &str) -> CliResult<f64> {
    table
        .iter()
        .find(|(k, _)| (k - key).abs() <= 1e-9 * k.abs().max(1.0))
        .map(|p| p.1)
        .ok_or_else(|| {
            let keys: Vec<String> = table.iter().map(|p| p.0.to_string()).collect();
            CliError::config(format!(
                "preset {preset} has no step constant for {what} = {key} (known: {}); pass --step-c",
                keys.join(", ")
            ))
        })
}

fn scaled_total(reported_total: f64, scale: f64) -> CliResult<u64> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(CliError::config(format!(
            "--scale must be >= 1, got {scale}"
        )));
    }
    Ok((reported_total / scale).round().max(1.0) as u64)
}

/// Baseline settings of a preset. `sel` carries the user's selector values
/// (mini-batch, eigengap, dimension, half range) so the matching step
/// constant can be filled in.
pub fn preset_settings(name: PresetName, scale: f64, sel: &RunSettings) -> CliResult<RunSettings> {
    let synthetic = |total: f64| -> CliResult<RunSettings> {
        Ok(RunSettings {
            total_samples: Some(scaled_total(total, scale)?),
            trials: Some(200),
            dim: Some(5),
            lambda1: Some(1.0),
            eigengap: Some(0.2),
            ..Default::default()
        })
    };
    let need_c = sel.c.is_none();
    let mut s = match name {
        PresetName::Fig1a => {
            let b = sel.minibatch.unwrap_or(100);
            let table = [
                (1.0, 70.0),
                (10.0, 80.0),
                (100.0, 80.0),
                (500.0, 90.0),
                (1000.0, 110.0),
                (2000.0, 100.0),
            ];
            RunSettings {
                minibatch: Some(b),
                c: if need_c {
                    Some(lookup(&table, b as f64, "B", "fig1a")?)
                } else {
                    None
                },
                ..synthetic(1e6)?
            }
        }
        PresetName::Fig1b => RunSettings {
            nodes: Some(10),
            local_batch: Some(10),
            mu: Some(0),
            c: Some(80.0),
            ..synthetic(1e6)?
        },
        PresetName::Eigengap => {
            let gap = sel.eigengap.unwrap_or(0.2);
            let table = [
                (0.1, 180.0),
                (0.2, 110.0),
                (0.3, 90.0),
                (0.4, 70.0),
                (0.5, 60.0),
            ];
            RunSettings {
                minibatch: Some(1000),
                eigengap: Some(gap),
                c: if need_c {
                    Some(lookup(&table, gap, "eigengap", "eigengap")?)
                } else {
                    None
                },
                ..synthetic(1e6)?
            }
        }
        PresetName::Dims => {
            let d = sel.dim.unwrap_or(5);
            let table = [(5.0, 110.0), (10.0, 110.0), (15.0, 100.0), (20.0, 100.0)];
            RunSettings {
                minibatch: Some(1000),
                dim: Some(d),
                c: if need_c {
                    Some(lookup(&table, d as f64, "d", "dims")?)
                } else {
                    None
                },
                ..synthetic(1e6)?
            }
        }
        PresetName::Normbound => {
            let a = sel.half_range.unwrap_or(1.0);
            let table = [(1.0, 8.0), (2.0, 2.0), (3.0, 1.0), (10.0, 0.08)];
            RunSettings {
                minibatch: Some(1),
                half_range: Some(a),
                norm_bound: Some(1.45 * a),
                c: if need_c {
                    Some(lookup(&table, a, "a", "normbound")?)
                } else {
                    None
                },
                ..synthetic(1e6)?
            }
        }
        PresetName::Mnist => {
            let b = sel.minibatch.unwrap_or(100);
            let table = [
                (1.0, 0.6),
                (10.0, 0.9),
                (100.0, 1.1),
                (300.0, 1.5),
                (1000.0, 1.6),
            ];
            RunSettings {
                minibatch: Some(b),
                c: if need_c {
                    Some(lookup(&table, b as f64, "B", "mnist")?)
                } else {
                    None
                },
                total_samples: Some(scaled_total(6e4, scale)?),
                trials: Some(200),
                ..Default::default()
            }
        }
        PresetName::Higgs => RunSettings {
            minibatch: Some(sel.minibatch.unwrap_or(1)),
            c: Some(0.07),
            total_samples: Some(scaled_total(1.1e7, scale)?),
            trials: Some(200),
            ..Default::default()
        },
    };
    if !need_c {
        s.c = None;
    }
    if matches!(name, PresetName::Mnist | PresetName::Higgs) && sel.data.is_none() {
        return Err(CliError::config(format!(
            "preset {} needs a dataset file (--data)",
            format!("{name:?}").to_lowercase()
        )));
    }
    Ok(s)
}

/// Topology and discard count after resolving `B`, `N`, `b` and rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
}

fn positive(v: usize, what: &str) -> CliResult<usize> {
    if v == 0 {
        Err(CliError::config(format!("{what} must be >= 1")))
    } else {
        Ok(v)
    }
}

fn split_batch(total: usize, nodes: usize) -> CliResult<usize> {
    if !total.is_multiple_of(nodes) {
        return Err(CliError::config(format!(
            "mini-batch {total} is not divisible by {nodes} nodes"
        )));
    }
    Ok(total / nodes)
}

/// Turns merged settings into a validated experiment configuration.
pub fn resolve(s: &RunSettings) -> CliResult<Resolved> {
    let c =
        s.c.ok_or_else(|| CliError::config("step constant c is required (--step-c or a preset)"))?;
    let total = s.total_samples.ok_or_else(|| {
        CliError::config("total sample count is required (--samples or a preset)")
    })?;
    let (variant, nodes, local_batch) = match (s.variant, s.nodes, s.local_batch, s.minibatch) {
        (Some(Variant::Single), n, b, m) => {
            if n.unwrap_or(1) != 1 {
                return Err(CliError::config("variant single runs on one node"));
            }
            (
                Variant::Single,
                1,
                positive(m.or(b).unwrap_or(1), "mini-batch")?,
            )
        }
        (Some(Variant::Dk), n, b, m) => {
            if b.unwrap_or(1) != 1 {
                return Err(CliError::config("variant dk uses one sample per node"));
            }
            let n = positive(
                n.or(m)
                    .ok_or_else(|| CliError::config("variant dk needs --nodes"))?,
                "nodes",
            )?;
            if m.is_some_and(|m| m != n) {
                return Err(CliError::config("variant dk needs B = N"));
            }
            (Variant::Dk, n, 1)
        }
        (Some(Variant::Dmk), n, b, m) => {
            let n = positive(
                n.ok_or_else(|| CliError::config("variant dmk needs --nodes"))?,
                "nodes",
            )?;
            let b = match (b, m) {
                (Some(b), Some(m)) if b * n != m => {
                    return Err(CliError::config(format!(
                        "B = {m} does not equal N x b = {}",
                        n * b
                    )))
                }
                (Some(b), _) => b,
                (None, Some(m)) => split_batch(m, n)?,
                (None, None) => {
                    return Err(CliError::config(
                        "variant dmk needs --local-batch or --minibatch",
                    ))
                }
            };
            (Variant::Dmk, n, positive(b, "local batch")?)
        }
        (None, Some(n), b, m) if n > 1 => {
            let b = match (b, m) {
                (Some(b), Some(m)) if b * n != m => {
                    return Err(CliError::config(format!(
                        "B = {m} does not equal N x b = {}",
                        n * b
                    )))
                }
                (Some(b), _) => b,
                (None, Some(m)) => split_batch(m, n)?,
                (None, None) => 1,
            };
            let b = positive(b, "local batch")?;
            (if b == 1 { Variant::Dk } else { Variant::Dmk }, n, b)
        }
        (None, n, b, m) => {
            positive(n.unwrap_or(1), "nodes")?;
            (
                Variant::Single,
                1,
                positive(m.or(b).unwrap_or(1), "mini-batch")?,
            )
        }
    };

    let mut model = SystemModel::new(nodes, local_batch)?;
    match (s.rate_stream, s.rate_process, s.rate_comm) {
        (Some(stream), Some(process), Some(comm)) => {
            model = model.with_rates(Rates {
                stream,
                process,
                comm,
            });
        }
        (None, None, None) => {}
        _ => {
            return Err(CliError::config(
                "rates need all of --rate-stream, --rate-process, --rate-comm",
            ))
        }
    }
    if let Some(mu) = s.mu {
        model = model.with_mu(mu);
    }
    let (scenario, mu) = classify_and_mu(&model)?;

    let config = ExperimentConfig {
        rule: s.rule.unwrap_or_default(),
        variant,
        nodes,
        local_batch,
        mu,
        c,
        l: s.l.unwrap_or(0.0),
        total_samples: total,
        trials: s.trials.unwrap_or(20),
        seed: s.seed.unwrap_or(0),
        trace: TraceSpacing::Log {
            points: s.trace_points.unwrap_or(200),
        },
        normalize: s.normalize.unwrap_or(true),
    };
    config.validate()?;
    Ok(Resolved { config, scenario })
}

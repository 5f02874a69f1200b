use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use streampca::data::{
    make_covariance, sample_stream, CovarianceSpec, DistributionKind, SPECTRUM_RULE,
};
use streampca::harness::{
    fit_loglog_slope, run_monte_carlo, DataSource, Dataset, ExperimentConfig, MonteCarloResult,
};
use streampca::io::{load_dataset, write_samples_csv};
use streampca::network::Scenario;
use streampca::schedule::{
    bound_constants, closed_form_final_time, epoch_schedule, finite_sample_bound,
    l_lower_bound_main, max_minibatch, theoretical_bound, BoundParams, StepSchedule,
};

use crate::args::{BoundArgs, PlanArgs, ProblemArgs, RunArgs, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{
    content_hash, sidecar_path, unix_now, write_all_atomic, InputRecord, OutputRecord, RunManifest,
    Timestamps,
};
use crate::settings::{preset_settings, resolve, RunSettings};

#[derive(Debug, Serialize)]
struct RunConfigRecord {
    preset: Option<String>,
    scale: f64,
    threads: Option<usize>,
    experiment: ExperimentConfig,
    /// Keys given on the command line; they override the preset and file.
    overrides: RunSettings,
}

#[derive(Debug, Serialize)]
struct DataRecord {
    source: &'static str,
    path: Option<PathBuf>,
    rows: Option<usize>,
    dim: usize,
    spectrum_rule: Option<&'static str>,
    spec_seed: Option<u64>,
    distribution: Option<DistributionKind>,
    eigenvalues: Option<Vec<f64>>,
    norm_bound: Option<f64>,
    lambda1: f64,
    lambda2: f64,
    q_star: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RunResultRecord {
    scenario: Scenario,
    mu: u64,
    trials: usize,
    final_samples: u64,
    final_iteration: u64,
    final_mean_psi: f64,
    final_median_psi: f64,
    loglog_slope_last_decade: Option<f64>,
    partial_block_discarded: bool,
    stream_exhausted: bool,
}

fn synthetic_spec(s: &RunSettings) -> CliResult<(CovarianceSpec, u64)> {
    let spec_seed = s.spec_seed.unwrap_or(1);
    let mut spec = make_covariance(
        s.dim.unwrap_or(5),
        s.lambda1.unwrap_or(1.0),
        s.eigengap.unwrap_or(0.2),
        spec_seed,
    )?;
    if let Some(a) = s.half_range {
        spec = spec.with_kind(DistributionKind::BoundedUniform { half_range: a })?;
    }
    if let Some(r) = s.norm_bound {
        if s.half_range.is_none() {
            return Err(CliError::config(
                "norm_bound applies to bounded data; set half_range",
            ));
        }
        spec = spec.scaled_to_norm_bound(r)?;
    }
    Ok((spec, spec_seed))
}

fn build_source(s: &RunSettings) -> CliResult<(DataSource, DataRecord, Vec<InputRecord>)> {
    if let Some(path) = &s.data {
        let bytes =
            fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let raw = load_dataset(path)?;
        if let Some(d) = s.dim {
            if d != raw.dim() {
                return Err(CliError::config(format!(
                    "dimension {d} requested but {} has {} columns",
                    path.display(),
                    raw.dim()
                )));
            }
        }
        let ds = Dataset::prepare(&raw)?;
        let record = DataRecord {
            source: "dataset",
            path: Some(path.clone()),
            rows: Some(ds.samples.len()),
            dim: raw.dim(),
            spectrum_rule: None,
            spec_seed: None,
            distribution: None,
            eigenvalues: None,
            norm_bound: None,
            lambda1: ds.truth.lambda1,
            lambda2: ds.truth.lambda2,
            q_star: ds.truth.q_star.clone(),
        };
        let input = InputRecord {
            role: "dataset".into(),
            path: path.clone(),
            hash: content_hash(&bytes),
        };
        return Ok((DataSource::Dataset(Arc::new(ds)), record, vec![input]));
    }
    let (spec, spec_seed) = synthetic_spec(s)?;
    let record = DataRecord {
        source: "synthetic",
        path: None,
        rows: None,
        dim: spec.dim(),
        spectrum_rule: Some(SPECTRUM_RULE),
        spec_seed: Some(spec_seed),
        distribution: Some(spec.kind),
        eigenvalues: Some(spec.eigenvalues.clone()),
        norm_bound: spec.norm_bound(),
        lambda1: spec.lambda1(),
        lambda2: spec.lambda2(),
        q_star: spec.q_star().to_vec(),
    };
    Ok((DataSource::Synthetic(Arc::new(spec)), record, Vec::new()))
}

fn run_trials(
    cfg: &ExperimentConfig,
    src: &DataSource,
    threads: Option<usize>,
) -> CliResult<MonteCarloResult> {
    match threads {
        Some(0) => Err(CliError::config("--threads must be >= 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::config(format!("cannot start {k} threads: {e}")))?;
            Ok(pool.install(|| run_monte_carlo(cfg, src))?)
        }
        None => Ok(run_monte_carlo(cfg, src)?),
    }
}

pub fn run(args: &RunArgs) -> CliResult<()> {
    let started = unix_now();
    let cli = args.overrides();
    let mut inputs = Vec::new();
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            inputs.push(InputRecord {
                role: "config".into(),
                path: path.clone(),
                hash: content_hash(text.as_bytes()),
            });
            RunSettings::from_toml(path, &text)?
        }
        None => RunSettings::default(),
    };
    let user = file.overlay(cli.clone());
    let preset = match args.preset {
        Some(name) => preset_settings(name, args.scale, &user)?,
        None if args.scale != 1.0 => {
            return Err(CliError::config("--scale only applies to presets"))
        }
        None => RunSettings::default(),
    };
    let merged = preset.overlay(user);
    let resolved = resolve(&merged)?;
    let cfg = &resolved.config;
    let (source, data_record, data_inputs) = build_source(&merged)?;
    inputs.extend(data_inputs);

    let mc = run_trials(cfg, &source, args.threads)?;
    let agg = &mc.aggregate;
    if agg.stream_exhausted {
        eprintln!(
            "warning: dataset exhausted after {} samples (requested {})",
            agg.samples.last().copied().unwrap_or(0),
            cfg.total_samples
        );
    }
    if agg.partial_block_discarded {
        eprintln!("warning: final partial block shorter than B was dropped");
    }
    let mut csv = Vec::new();
    agg.write_csv(&mut csv)?;

    let manifest_path = sidecar_path(&args.out);
    let manifest = RunManifest {
        command: "run".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: unix_now(),
        },
        config: RunConfigRecord {
            preset: args.preset.map(|p| format!("{p:?}").to_lowercase()),
            scale: args.scale,
            threads: args.threads,
            experiment: cfg.clone(),
            overrides: cli,
        },
        data: data_record,
        result: RunResultRecord {
            scenario: resolved.scenario,
            mu: cfg.mu,
            trials: agg.trials,
            final_samples: agg.samples.last().copied().unwrap_or(0),
            final_iteration: agg.iterations.last().copied().unwrap_or(0),
            final_mean_psi: agg.final_mean(),
            final_median_psi: agg.median.last().copied().unwrap_or(f64::NAN),
            loglog_slope_last_decade: fit_loglog_slope(agg, 1.0).ok(),
            partial_block_discarded: agg.partial_block_discarded,
            stream_exhausted: agg.stream_exhausted,
        },
        inputs,
        outputs: vec![OutputRecord {
            path: args.out.clone(),
            hash: content_hash(&csv),
        }],
    };
    let text = manifest.to_toml()?;
    write_all_atomic(&[
        (args.out.clone(), csv),
        (manifest_path.clone(), text.into_bytes()),
    ])?;
    println!(
        "final mean psi {:.4e} after {} samples ({} trials); trace {}, manifest {}",
        agg.final_mean(),
        agg.samples.last().copied().unwrap_or(0),
        agg.trials,
        args.out.display(),
        manifest_path.display()
    );
    Ok(())
}

fn params(p: &ProblemArgs) -> BoundParams {
    BoundParams {
        d: p.dim,
        r: p.r,
        sigma2_eff: p.sigma2,
        delta: p.delta,
        lambda1: p.lambda1,
        eigengap: p.eigengap,
    }
}

fn emit(out: &mut impl Write, key: &str, value: impl std::fmt::Display) -> CliResult<()> {
    writeln!(out, "{key}={value}").map_err(|e| CliError::Output {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

pub fn plan(args: &PlanArgs, out: &mut impl Write) -> CliResult<()> {
    let batch = match (args.minibatch, args.nodes, args.local_batch) {
        (Some(b), _, _) => b,
        (None, Some(n), b) => n * b.unwrap_or(1),
        (None, None, Some(b)) => b,
        (None, None, None) => 1,
    };
    if batch == 0 {
        return Err(CliError::config("mini-batch must be >= 1"));
    }
    let p = params(&args.problem);
    let bmax = max_minibatch(args.samples, args.c0)?;
    let sched = StepSchedule::from_c0(args.c0, p.eigengap, 0.0)?;
    let c = sched.c;
    let sigma2_batch = p.sigma2_eff / batch as f64;
    let lb = l_lower_bound_main(&p.with_sigma2(sigma2_batch), c)?;
    let l1p = lb.l1;
    let l2p = l_lower_bound_main(&p.with_sigma2(1.0), c)?.l2;
    let fsb = finite_sample_bound(args.samples, batch as u64, args.mu, &p, args.c0, l1p, l2p)?;
    let iterations = args.samples / (batch as u64 + args.mu);
    let expected = theoretical_bound(
        iterations,
        &p.with_sigma2(sigma2_batch),
        &sched.with_l(lb.l),
    )?;

    emit(out, "T", args.samples)?;
    emit(out, "c0", args.c0)?;
    emit(out, "c", c)?;
    emit(out, "B", batch)?;
    emit(out, "mu", args.mu)?;
    emit(out, "B_max", bmax)?;
    emit(out, "batch_within_limit", batch as u64 <= bmax)?;
    emit(out, "L1", lb.l1)?;
    emit(out, "L2", lb.l2)?;
    emit(out, "L", lb.l)?;
    emit(out, "C1", fsb.constants.c1)?;
    emit(out, "C2", fsb.constants.c2)?;
    emit(out, "iterations", iterations)?;
    emit(out, "expected_error_bound", expected)?;
    emit(out, "finite_sample_initial_term", fsb.initial)?;
    emit(out, "finite_sample_transient_term", fsb.variance_transient)?;
    emit(out, "finite_sample_variance_term", fsb.variance)?;
    emit(out, "finite_sample_bound", fsb.total)?;
    Ok(())
}

pub fn bound(args: &BoundArgs, out: &mut impl Write) -> CliResult<()> {
    if args.nodes == 0 {
        return Err(CliError::config("--nodes must be >= 1"));
    }
    let p = params(&args.problem);
    let p = p.with_sigma2(p.sigma2_eff / args.nodes as f64);
    let c = match (args.step_c, args.c0) {
        (Some(c), _) => c,
        (None, Some(c0)) => c0 / (2.0 * p.eigengap),
        (None, None) => return Err(CliError::config("need --c0 or --step-c")),
    };
    let l = match args.step_l {
        Some(l) => l,
        None => l_lower_bound_main(&p, c)?.l,
    };
    let sched = StepSchedule::from_c(c, l, p.eigengap)?;
    let c0 = sched.c0();
    let k = bound_constants(&p, c, c0, l)?;
    let epochs = epoch_schedule(p.delta, p.d, c0, l)?;

    emit(out, "c", c)?;
    emit(out, "c0", c0)?;
    emit(out, "L", l)?;
    emit(out, "sigma2_eff", p.sigma2_eff)?;
    emit(out, "C1", k.c1)?;
    emit(out, "C2", k.c2)?;
    emit(out, "epochs", epochs.epochs())?;
    for (j, (t, eps)) in epochs.pairs.iter().enumerate() {
        emit(out, &format!("epoch[{j}]"), format!("t={t} eps={eps}"))?;
    }
    emit(out, "final_epoch_time", epochs.final_time())?;
    emit(
        out,
        "final_epoch_time_closed_form",
        closed_form_final_time(p.delta, p.d, c0, l),
    )?;
    let at: Vec<u64> = if args.at.is_empty() {
        (0..=9).map(|k| 10u64.pow(k)).collect()
    } else {
        args.at.clone()
    };
    for t in at {
        emit(
            out,
            &format!("bound[t={t}]"),
            theoretical_bound(t, &p, &sched)?,
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthConfigRecord {
    dim: usize,
    lambda1: f64,
    eigengap: f64,
    half_range: Option<f64>,
    samples: usize,
    seed: u64,
    spec_seed: u64,
}

#[derive(Debug, Serialize)]
struct SynthDataRecord {
    spectrum_rule: &'static str,
    distribution: DistributionKind,
    eigenvalues: Vec<f64>,
    q_star: Vec<f64>,
    norm_bound: Option<f64>,
    sigma2: f64,
}

#[derive(Debug, Serialize)]
struct SynthResultRecord {
    rows: usize,
    columns: usize,
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let started = unix_now();
    let spec_seed = args.spec_seed.unwrap_or(args.seed);
    let mut spec = make_covariance(args.dim, args.lambda1, args.eigengap, spec_seed)?;
    if let Some(a) = args.half_range {
        spec = spec.with_kind(DistributionKind::BoundedUniform { half_range: a })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let samples = sample_stream(&spec, args.samples, &mut rng)?;
    let mut csv = Vec::new();
    write_samples_csv(&mut csv, &samples)?;

    let manifest_path = sidecar_path(&args.out);
    let manifest = RunManifest {
        command: "synth".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: unix_now(),
        },
        config: SynthConfigRecord {
            dim: args.dim,
            lambda1: args.lambda1,
            eigengap: args.eigengap,
            half_range: args.half_range,
            samples: args.samples,
            seed: args.seed,
            spec_seed,
        },
        data: SynthDataRecord {
            spectrum_rule: SPECTRUM_RULE,
            distribution: spec.kind,
            eigenvalues: spec.eigenvalues.clone(),
            q_star: spec.q_star().to_vec(),
            norm_bound: spec.norm_bound(),
            sigma2: spec.exact_sigma2(),
        },
        result: SynthResultRecord {
            rows: samples.len(),
            columns: samples.dim(),
        },
        inputs: Vec::new(),
        outputs: vec![OutputRecord {
            path: args.out.clone(),
            hash: content_hash(&csv),
        }],
    };
    let text = manifest.to_toml()?;
    write_all_atomic(&[(args.out.clone(), csv), (manifest_path, text.into_bytes())])?;
    println!(
        "wrote {} rows x {} columns to {}",
        samples.len(),
        samples.dim(),
        args.out.display()
    );
    Ok(())
}

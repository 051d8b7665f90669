use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use flame_core::devicesim::{DeviceConfig, DeviceSimulator};
use flame_core::governor::{
    evaluate, govern_loop, steps_from_csv, steps_to_csv, DeadlineSchedule, GovernConfig,
    GovernError, TokenContext,
};
use flame_core::layerfit::EstimatorStore;
use flame_core::modelest::{estimate_model, layer_timings, naive_sum};
use flame_core::profiler::{load_dataset, run_campaign, sidecar_path, CampaignError, SamplingPlan};
use flame_core::{validate_model_spec, Frequency, FrequencyGrid, ModelSpec};
use serde::Serialize;

use crate::error::CliError;
use crate::{usage, Cli, Command};

pub const DATA_DIR_ENV: &str = "FLAME_DATA_DIR";

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenDevice(a) => gen_device(cli, a),
        Command::Profile(a) => profile(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Estimate(a) => estimate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Govern(a) => govern(cli, a),
        Command::Evaluate(a) => evaluate_trace(cli, a),
    }
}

fn require_seed(cli: &Cli, command: &str) -> Result<u64, CliError> {
    cli.seed.ok_or_else(|| {
        usage(format!(
            "{command} is randomized and requires an explicit --seed"
        ))
    })
}

/// Resolves an output path, rooting relative paths at the data directory.
fn output_path(explicit: Option<&Path>, default_name: &str) -> PathBuf {
    let path = explicit.map_or_else(|| PathBuf::from(default_name), Path::to_path_buf);
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path,
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    let context = format!("model {}", path.display());
    let spec = ModelSpec::from_json(&read(path)?).map_err(|e| CliError::invalid(&context, e))?;
    validate_model_spec(spec).map_err(|e| CliError::invalid(context, e))
}

fn load_device(path: &Path) -> Result<DeviceConfig, CliError> {
    let context = format!("device {}", path.display());
    let device =
        DeviceConfig::from_json(&read(path)?).map_err(|e| CliError::invalid(&context, e))?;
    device
        .validate()
        .map_err(|e| CliError::invalid(context, e))?;
    Ok(device)
}

fn load_store(path: &Path) -> Result<EstimatorStore, CliError> {
    Ok(EstimatorStore::load(path)?)
}

fn frequency(value: f64, flag: &str) -> Result<Frequency, CliError> {
    Frequency::new(value).map_err(|e| usage(format!("{flag}: {e}")))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Report documents go to `--out` when given, stdout otherwise.
fn emit_report(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(p) => write_atomic(&output_path(Some(p), ""), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_device(cli: &Cli, a: &crate::GenDeviceArgs) -> Result<(), CliError> {
    let seed = require_seed(cli, "gen-device")?;
    if a.cpu_levels < 2 || a.gpu_levels < 2 {
        return Err(usage("--cpu-levels and --gpu-levels must be at least 2"));
    }
    let grid = FrequencyGrid::linear(
        a.cpu_levels,
        (a.cpu_min_ghz, a.cpu_max_ghz),
        a.gpu_levels,
        (a.gpu_min_ghz, a.gpu_max_ghz),
    )
    .map_err(|e| CliError::invalid("frequency grid", e))?;
    let device = DeviceConfig::generate(seed, grid, a.jitter);
    device
        .validate()
        .map_err(|e| CliError::invalid("device", e))?;
    write_atomic(
        &output_path(cli.out.as_deref(), "device.json"),
        &device.to_json(),
    )
}

fn profile(cli: &Cli, a: &crate::ProfileArgs) -> Result<(), CliError> {
    let seed = require_seed(cli, "profile")?;
    let spec = load_model(&a.model)?;
    let device = load_device(&a.device)?;
    let plan = SamplingPlan {
        cpu_stride: a.cpu_stride,
        gpu_stride: a.gpu_stride,
        context_stride: a.context_stride,
        iterations: a.iters,
        context_max: a.context_max,
    };
    plan.validate().map_err(usage)?;
    let grid = device.grid.clone();
    let mut sim = DeviceSimulator::new(device, seed);
    let out = output_path(cli.out.as_deref(), "profile.csv");
    let ds = match run_campaign(&mut sim, &spec.unique_configs(), &grid, &plan) {
        Ok(ds) => ds,
        Err(CampaignError::InvalidPlan(m)) => return Err(usage(m)),
        Err(CampaignError::Aborted { partial, source }) => {
            write_atomic(&out, &partial.to_csv())?;
            write_atomic(&sidecar_path(&out), &partial.metadata_json())?;
            return Err(CliError::invalid("campaign", source));
        }
    };
    log::info!("{} samples", ds.samples.len());
    write_atomic(&out, &ds.to_csv())?;
    write_atomic(&sidecar_path(&out), &ds.metadata_json())
}

fn fit(cli: &Cli, a: &crate::FitArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.dataset)?;
    let store =
        EstimatorStore::build(&ds, a.regressor).map_err(|e| CliError::Fit(e.to_string()))?;
    for (t, est) in &store.estimators {
        log::info!("{t}: {} training configs", est.training.len());
    }
    let mut text = store.to_json();
    text.push('\n');
    write_atomic(&output_path(cli.out.as_deref(), "estimators.json"), &text)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    model: &'a str,
    f_c_ghz: f64,
    f_g_ghz: f64,
    total_ms: f64,
    naive_sum_ms: f64,
    layers: usize,
}

fn estimate(cli: &Cli, a: &crate::EstimateArgs) -> Result<(), CliError> {
    let store = load_store(&a.estimators)?;
    let spec = load_model(&a.model)?;
    let (f_c, f_g) = (frequency(a.fc, "--fc")?, frequency(a.fg, "--fg")?);
    if let Err(e) = store.grid.check_on_grid(f_c, f_g) {
        log::warn!("{e}; estimating off-grid");
    }
    let timings =
        layer_timings(&store, &spec, f_c, f_g).map_err(|e| CliError::invalid("estimate", e))?;
    let (total, timeline) =
        estimate_model(&store, &spec, f_c, f_g).map_err(|e| CliError::invalid("estimate", e))?;
    if let Some(p) = &a.timeline {
        write_atomic(&output_path(Some(p), ""), &timeline.to_csv())?;
    }
    emit_report(
        cli,
        &json(&EstimateReport {
            model: &spec.name,
            f_c_ghz: f_c.ghz(),
            f_g_ghz: f_g.ghz(),
            total_ms: total,
            naive_sum_ms: naive_sum(&timings),
            layers: spec.layers.len(),
        }),
    )
}

fn sweep(cli: &Cli, a: &crate::SweepArgs) -> Result<(), CliError> {
    let store = load_store(&a.estimators)?;
    let spec = load_model(&a.model)?;
    let mut sim = match &a.device {
        Some(p) => Some(DeviceSimulator::new(load_device(p)?, 0)),
        None => None,
    };
    let mut csv = String::from("f_c,f_g,estimate_ms");
    if sim.is_some() {
        csv.push_str(",ground_truth_ms,err_pct");
    }
    csv.push('\n');
    for (f_c, f_g) in store.grid.pairs() {
        let (est, _) = estimate_model(&store, &spec, f_c, f_g)
            .map_err(|e| CliError::invalid("estimate", e))?;
        write!(csv, "{},{},{est}", f_c.ghz(), f_g.ghz()).unwrap();
        if let Some(sim) = sim.as_mut() {
            let truth = sim
                .noiseless_latency(&spec, f_c, f_g)
                .map_err(|e| CliError::invalid("ground truth", e))?;
            write!(csv, ",{truth},{}", (est - truth) / truth * 100.0).unwrap();
        }
        csv.push('\n');
    }
    write_atomic(&output_path(cli.out.as_deref(), "sweep.csv"), &csv)
}

fn govern(cli: &Cli, a: &crate::GovernArgs) -> Result<(), CliError> {
    let seed = require_seed(cli, "govern")?;
    let store = load_store(&a.estimators)?;
    let device = load_device(&a.device)?;
    let spec = load_model(&a.model)?;
    let deadline = match (&a.deadline_schedule, a.deadline_ms) {
        (Some(p), _) => serde_json::from_str::<DeadlineSchedule>(&read(p)?)
            .map_err(|e| CliError::invalid(format!("deadline schedule {}", p.display()), e))?,
        (None, Some(ms)) => DeadlineSchedule::constant(ms),
        (None, None) => {
            return Err(usage(
                "one of --deadline-ms or --deadline-schedule is required",
            ))
        }
    };
    deadline.validate().map_err(usage)?;
    let tokens = match (a.token_start, a.token_max) {
        (Some(start), Some(max)) => Some(TokenContext { start, max }),
        _ => None,
    };
    let cfg = GovernConfig {
        deadline,
        steps: a.steps,
        policy: a.policy,
        adaptation: !a.no_adapt,
        disturbance: a.disturb,
        tokens,
    };
    let mut sim = DeviceSimulator::new(device, seed);
    let out = output_path(cli.out.as_deref(), "trace.csv");
    let steps = match govern_loop(&store, &mut sim, &spec, &cfg) {
        Ok(steps) => steps,
        Err(GovernError::Config(m)) => return Err(usage(m)),
        Err(GovernError::Simulator {
            step,
            partial,
            source,
        }) => {
            write_atomic(&out, &steps_to_csv(&partial))?;
            return Err(CliError::invalid(format!("step {step}"), source));
        }
        Err(GovernError::Estimate {
            step,
            partial,
            source,
        }) => {
            write_atomic(&out, &steps_to_csv(&partial))?;
            return Err(CliError::invalid(format!("step {step}"), source));
        }
    };
    let infeasible = steps.iter().filter(|s| !s.feasible).count();
    if infeasible > 0 {
        log::warn!("{infeasible} steps had no feasible pair and ran at maximum frequency");
    }
    write_atomic(&out, &steps_to_csv(&steps))
}

fn evaluate_trace(cli: &Cli, a: &crate::EvaluateArgs) -> Result<(), CliError> {
    let context = format!("trace {}", a.trace.display());
    let steps = steps_from_csv(&read(&a.trace)?).map_err(|e| CliError::invalid(&context, e))?;
    let report = evaluate(&steps).map_err(|e| CliError::invalid(context, e))?;
    emit_report(cli, &json(&report))
}

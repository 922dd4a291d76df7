//! `sheafdiff`: generate coordination sheaves, inspect their spectra, run
//! synchronous or partially asynchronous diffusion, and reproduce the
//! experiment suites. All randomness is seeded; identical invocations
//! produce byte-identical outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sheafdiff::diffusion::{run_async, run_sync, DiffusionTrace, StepSizePolicy, StoppingRule};
use sheafdiff::experiments::{
    default_uav_displacements, exp3_b_grid, find_experiment, registry, run_uav_demo,
    ExperimentConfig,
};
use sheafdiff::generators::{
    derive_seed, gaussian_initial_condition, GeneratorConfig, GraphKind, SheafKind,
};
use sheafdiff::io::{load_sheaf, save_sheaf, save_trace_csv};
use sheafdiff::potentials::{EdgePotential, PotentialSet};
use sheafdiff::spectral::{spectral_report, DEFAULT_ZERO_THRESHOLD};
use sheafdiff::CellularSheaf;

#[derive(Parser)]
#[command(name = "sheafdiff", version, about = "Asynchronous sheaf diffusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a sheaf from a config file and write it as JSON.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output path for the sheaf JSON document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print spectral constants (lambda_max, lambda_2, sigma_2, K, kappa).
    Spectrum {
        /// Sheaf JSON document; alternatively derive one from --config.
        #[arg(long, conflicts_with = "config")]
        sheaf: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run diffusion and write a trace CSV plus summary and metadata.
    Diffuse(DiffuseArgs),
    /// Run a registered experiment suite.
    Experiment {
        /// Experiment id; use --list to enumerate.
        #[arg(long, required_unless_present = "list")]
        id: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated delay bounds, overriding the default grid.
        #[arg(long, value_delimiter = ',')]
        b_values: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        initial_conditions: Option<usize>,
        #[arg(long)]
        max_ticks: Option<usize>,
        /// Extend the exp3 delay grid to 2^EXP (default 10).
        #[arg(long)]
        exp3_max_exponent: Option<u32>,
        /// exp3 alternate reading: average trial distances instead of
        /// averaging iterates first.
        #[arg(long)]
        average_distances: bool,
        /// List available experiment ids and exit.
        #[arg(long)]
        list: bool,
    },
    /// Two-team UAV formation demo.
    UavDemo {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        delay_bound: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        max_ticks: usize,
    },
}

#[derive(Args)]
struct DiffuseArgs {
    /// Config file (TOML or JSON) with [graph], [sheaf], [potentials],
    /// [schedule], [run] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sheaf JSON document, overriding [graph]/[sheaf]/[potentials].
    #[arg(long)]
    sheaf: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Delay bound B; overrides [schedule].
    #[arg(long, short = 'B')]
    delay_bound: Option<usize>,
    /// Run the exact synchronous iteration instead of a sampled schedule.
    #[arg(long)]
    sync: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed step size; otherwise gamma = safety / (K * (B + 1)).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_ticks: Option<usize>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Variance of the Gaussian initial condition.
    #[arg(long)]
    variance: Option<f64>,
}

/// On-disk run configuration. Every section is optional; CLI flags override.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    graph: Option<GraphKind>,
    sheaf: Option<SheafKind>,
    potentials: Option<PotentialsSection>,
    schedule: Option<ScheduleSection>,
    run: Option<RunSection>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialsSection {
    /// "quadratic" (the default) applies it uniformly to every edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    /// Explicit per-edge potentials in canonical edge order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_edge: Option<Vec<EdgePotential>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScheduleSection {
    delay_bound: usize,
    sync: bool,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    seed: u64,
    gamma: Option<f64>,
    safety: f64,
    max_ticks: usize,
    residual_tol: f64,
    record_every: usize,
    variance: f64,
    init_seed: Option<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: None,
            safety: 0.9,
            max_ticks: 100_000,
            residual_tol: 1e-8,
            record_every: 1,
            variance: 1.0,
            init_seed: None,
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let cfg = if is_json {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(cfg)
}

fn build_sheaf(
    cfg: &FileConfig,
    sheaf_path: Option<&Path>,
) -> anyhow::Result<(CellularSheaf, PotentialSet)> {
    let (sheaf, potentials) = match sheaf_path {
        Some(path) => load_sheaf(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let (graph, kind) = match (cfg.graph.clone(), cfg.sheaf.clone()) {
                (Some(g), Some(s)) => (g, s),
                _ => bail!("need either --sheaf or [graph] and [sheaf] config sections"),
            };
            let seed = cfg.run.clone().unwrap_or_default().seed;
            let gen = GeneratorConfig { graph, sheaf: kind, seed };
            (gen.build()?, None)
        }
    };
    let potentials = match potentials {
        Some(p) => p,
        None => match &cfg.potentials {
            Some(PotentialsSection { per_edge: Some(list), .. }) => {
                PotentialSet::new(list.clone())?
            }
            Some(PotentialsSection { kind: Some(k), .. }) if k != "quadratic" => {
                bail!("unknown potentials kind '{k}'")
            }
            _ => PotentialSet::quadratic(&sheaf),
        },
    };
    Ok((sheaf, potentials))
}

struct DiffuseOutcome {
    trace: DiffusionTrace,
    delay_bound: usize,
    sync: bool,
    schedule_seed: Option<u64>,
}

fn run_diffuse(args: &DiffuseArgs) -> anyhow::Result<()> {
    let cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let (sheaf, potentials) = build_sheaf(&cfg, args.sheaf.as_deref())?;
    let run = cfg.run.clone().unwrap_or_default();
    let schedule = cfg.schedule.clone().unwrap_or_default();

    let stop = StoppingRule {
        max_ticks: args.max_ticks.unwrap_or(run.max_ticks),
        residual_tol: args.residual_tol.unwrap_or(run.residual_tol),
        record_every: args.record_every.unwrap_or(run.record_every),
    };
    let policy = match args.gamma.or(run.gamma) {
        Some(g) => StepSizePolicy::Fixed(g),
        None => StepSizePolicy::Auto { safety: run.safety },
    };
    let master = args.seed.unwrap_or(run.seed);
    let init_seed = run.init_seed.unwrap_or_else(|| derive_seed(master, 3, 0));
    let x0 = gaussian_initial_condition(&sheaf, args.variance.unwrap_or(run.variance), init_seed)?;

    let sync = args.sync || (schedule.sync && args.delay_bound.is_none());
    let outcome = if sync {
        DiffuseOutcome {
            trace: run_sync(&sheaf, &potentials, &x0, policy, &stop)?,
            delay_bound: 0,
            sync: true,
            schedule_seed: None,
        }
    } else {
        let b = args.delay_bound.unwrap_or(schedule.delay_bound);
        let seed = schedule.seed.unwrap_or_else(|| derive_seed(master, 2, 0));
        DiffuseOutcome {
            trace: run_async(&sheaf, &potentials, &x0, b, policy, &stop, seed)?,
            delay_bound: b,
            sync: false,
            schedule_seed: Some(seed),
        }
    };
    write_diffuse_outputs(&args.out_dir, &cfg, &outcome)?;
    let last = outcome.trace.records.last().unwrap();
    println!(
        "ticks={} converged_at={:?} gamma={:.6e} energy={:.6e} rel_error={:.6e}",
        outcome.trace.ticks_run,
        outcome.trace.converged_at,
        outcome.trace.gamma,
        last.energy,
        last.rel_error
    );
    Ok(())
}

fn write_diffuse_outputs(
    out_dir: &Path,
    cfg: &FileConfig,
    outcome: &DiffuseOutcome,
) -> anyhow::Result<()> {
    let trace_dir = out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    save_trace_csv(&trace_dir.join("diffuse.csv"), &outcome.trace)?;

    let trace = &outcome.trace;
    let last = trace.records.last().unwrap();
    let summary = format!(
        "delay_bound,sync,ticks_run,converged_at,gamma,halvings,final_energy,final_alpha,final_rel_error\n\
         {},{},{},{},{:.12e},{},{:.12e},{:.12e},{:.12e}\n",
        outcome.delay_bound,
        outcome.sync,
        trace.ticks_run,
        trace.converged_at.map_or(String::new(), |t| t.to_string()),
        trace.gamma,
        trace.halvings,
        last.energy,
        last.alpha,
        last.rel_error,
    );
    std::fs::write(out_dir.join("summary.csv"), summary)?;

    let meta = serde_json::json!({
        "config": cfg,
        "sync": outcome.sync,
        "delay_bound": outcome.delay_bound,
        "schedule_seed": outcome.schedule_seed,
        "gamma": trace.gamma,
        "halvings": trace.halvings,
        "f_star": trace.f_star,
        "audit": {
            "max_staleness": trace.audit.max_staleness,
            "max_update_gap": trace.audit.max_update_gap,
            "max_broadcast_gap": trace.audit.max_broadcast_gap,
            "satisfies_delay_bound": trace.audit.satisfies(outcome.delay_bound),
        },
    });
    std::fs::write(out_dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_experiment_cmd(
    id: Option<String>,
    config: Option<PathBuf>,
    out_dir: PathBuf,
    seed: Option<u64>,
    b_values: Option<Vec<usize>>,
    trials: Option<usize>,
    instances: Option<usize>,
    initial_conditions: Option<usize>,
    max_ticks: Option<usize>,
    exp3_max_exponent: Option<u32>,
    average_distances: bool,
    list: bool,
) -> anyhow::Result<()> {
    if list {
        for exp in registry() {
            println!("{:<6} {}", exp.id(), exp.description());
        }
        return Ok(());
    }
    let id = id.expect("clap enforces --id unless --list");
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str::<ExperimentConfig>(&text)?
            } else {
                toml::from_str::<ExperimentConfig>(&text)?
            }
        }
        None => ExperimentConfig::defaults_for(&id, seed.unwrap_or(0)),
    };
    cfg.id = id.clone();
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(exp) = exp3_max_exponent {
        cfg.b_values = exp3_b_grid(exp);
    }
    if let Some(b) = b_values {
        cfg.b_values = b;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(i) = instances {
        cfg.instances = i;
    }
    if let Some(i) = initial_conditions {
        cfg.initial_conditions = i;
    }
    if let Some(m) = max_ticks {
        cfg.stop.max_ticks = m;
    }
    if average_distances {
        cfg.average_distances = true;
    }
    std::fs::create_dir_all(&out_dir)?;
    find_experiment(&id)?.run(&cfg, &out_dir)?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn run_uav_cmd(out_dir: &Path, delay_bound: usize, seed: u64, max_ticks: usize) -> anyhow::Result<()> {
    let stop = StoppingRule { max_ticks, residual_tol: 1e-10, record_every: delay_bound + 1 };
    let res = run_uav_demo(
        &default_uav_displacements(),
        delay_bound,
        seed,
        StepSizePolicy::default(),
        &stop,
    )?;
    let trace_dir = out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    save_trace_csv(&trace_dir.join("uav.csv"), &res.trace)?;
    let summary = format!(
        "final_energy,velocity_gap,displacement_errors\n{:.12e},{:.12e},{}\n",
        res.final_energy,
        res.velocity_gap,
        res.displacement_errors.map(|e| format!("{e:.12e}")).join(";"),
    );
    std::fs::write(out_dir.join("summary.csv"), &summary)?;
    let meta = serde_json::json!({
        "delay_bound": delay_bound,
        "seed": seed,
        "final_energy": res.final_energy,
        "velocity_gap": res.velocity_gap,
        "displacement_errors": res.displacement_errors.to_vec(),
        "converged_at": res.trace.converged_at,
    });
    std::fs::write(out_dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    println!(
        "final_energy={:.3e} velocity_gap={:.3e} max_displacement_error={:.3e}",
        res.final_energy,
        res.velocity_gap,
        res.displacement_errors.iter().cloned().fold(0.0, f64::max),
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Generate { config, out } => {
            let cfg = load_config(&config)?;
            let (sheaf, potentials) = build_sheaf(&cfg, None)?;
            save_sheaf(&out, &sheaf, Some(&potentials))?;
            println!(
                "wrote {} ({} vertices, {} edges)",
                out.display(),
                sheaf.graph().vertex_count(),
                sheaf.graph().edge_count()
            );
            Ok(())
        }
        Command::Spectrum { sheaf, config, out } => {
            let cfg = match &config {
                Some(p) => load_config(p)?,
                None => FileConfig::default(),
            };
            let (sheaf, potentials) = build_sheaf(&cfg, sheaf.as_deref())?;
            let report = spectral_report(&sheaf, &potentials, DEFAULT_ZERO_THRESHOLD);
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Diffuse(args) => run_diffuse(&args),
        Command::Experiment {
            id,
            config,
            out_dir,
            seed,
            b_values,
            trials,
            instances,
            initial_conditions,
            max_ticks,
            exp3_max_exponent,
            average_distances,
            list,
        } => run_experiment_cmd(
            id,
            config,
            out_dir,
            seed,
            b_values,
            trials,
            instances,
            initial_conditions,
            max_ticks,
            exp3_max_exponent,
            average_distances,
            list,
        ),
        Command::UavDemo { out_dir, delay_bound, seed, max_ticks } => {
            run_uav_cmd(&out_dir, delay_bound, seed, max_ticks)
        }
    }
}

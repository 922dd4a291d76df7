//! Experiment harness: seeded trial orchestration for the four delay-bound
//! studies and the UAV formation demo, contraction-rate fitting, and rank
//! statistics. Each experiment sits behind the [`Experiment`] trait and is
//! selected by id at runtime.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diffusion::{run_async, DiffusionTrace, StepSizePolicy, StoppingRule};
use crate::error::{Result, SheafError};
use crate::generators::{
    derive_seed, erdos_renyi, gaussian_initial_condition, matrix_weighted_sheaf,
    random_regular_graph, random_restriction_sheaf, uav_formation_sheaf, GeneratorConfig,
};
use crate::generators::constant_sheaf;
use crate::potentials::PotentialSet;
use crate::sheaf::{CellularSheaf, Cochain0};
use crate::spectral::{project_onto_minimizers, spectrum, DEFAULT_ZERO_THRESHOLD};

// Seed streams derived from the master seed.
const STREAM_GRAPH: u64 = 0;
const STREAM_SHEAF: u64 = 1;
const STREAM_SCHEDULE: u64 = 2;
const STREAM_INIT: u64 = 3;

/// Resolved experiment parameters. `stop.record_every == 0` means
/// "auto": record every B+1 ticks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    pub b_values: Vec<usize>,
    pub trials: usize,
    pub variance: f64,
    #[serde(default)]
    pub policy: StepSizePolicy,
    #[serde(default)]
    pub stop: StoppingRule,
    pub master_seed: u64,
    /// Number of random sheaf instances (experiment 4).
    pub instances: usize,
    /// Number of initial conditions (experiment 2).
    pub initial_conditions: usize,
    /// Experiment 3 alternate reading: average distances instead of
    /// averaging iterates before measuring.
    #[serde(default)]
    pub average_distances: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults reproducing the published setups.
    pub fn defaults_for(id: &str, master_seed: u64) -> Self {
        let base = Self {
            id: id.to_string(),
            generator: None,
            b_values: vec![0, 10, 50, 200],
            trials: 1,
            variance: 10.0,
            policy: StepSizePolicy::default(),
            stop: StoppingRule { max_ticks: 3_000_000, residual_tol: 1e-8, record_every: 0 },
            master_seed,
            instances: 30,
            initial_conditions: 100,
            average_distances: false,
        };
        match id {
            "exp2" => Self { b_values: vec![50], ..base },
            "exp3" => Self {
                b_values: exp3_b_grid(10),
                trials: 3,
                stop: StoppingRule { max_ticks: 250_000_000, residual_tol: 1e-8, record_every: 0 },
                ..base
            },
            "exp4" => Self {
                b_values: vec![50],
                stop: StoppingRule { max_ticks: 40_000_000, residual_tol: 1e-8, record_every: 0 },
                ..base
            },
            "uav" => Self { b_values: vec![20], ..base },
            _ => base,
        }
    }

    fn stop_for(&self, delay_bound: usize) -> StoppingRule {
        let mut stop = self.stop;
        if stop.record_every == 0 {
            stop.record_every = delay_bound + 1;
        }
        stop
    }
}

/// Geometric grid {0, 1, 2, 4, ..., 2^max_exponent}.
pub fn exp3_b_grid(max_exponent: u32) -> Vec<usize> {
    let mut grid = vec![0];
    grid.extend((0..=max_exponent).map(|e| 1usize << e));
    grid
}

/// Geometric contraction fit `alpha_r ~= a * rho^r` over the pre-floor
/// segment of a per-period alpha sequence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContractionFit {
    pub intercept: f64,
    pub rho: f64,
    pub r_squared: f64,
    /// Number of periods used in the fit.
    pub periods: usize,
}

/// Floor below which alpha values are considered numerical noise.
pub fn contraction_floor(alpha0: f64) -> f64 {
    1e3 * f64::EPSILON * alpha0
}

/// Least-squares fit of `log alpha(r)` against `r`, keeping only the leading
/// segment above the floor. Needs at least 5 usable periods.
pub fn fit_contraction(alpha_periods: &[f64], floor: f64) -> Option<ContractionFit> {
    let usable: Vec<f64> = alpha_periods
        .iter()
        .copied()
        .take_while(|&a| a > floor && a > 0.0)
        .collect();
    let n = usable.len();
    if n < 5 {
        return None;
    }
    let logs: Vec<f64> = usable.iter().map(|a| a.ln()).collect();
    let nf = n as f64;
    let mean_r = (nf - 1.0) / 2.0;
    let mean_y: f64 = logs.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (r, &y) in logs.iter().enumerate() {
        let dx = r as f64 - mean_r;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Some(ContractionFit {
        intercept: (mean_y - slope * mean_r).exp(),
        rho: slope.exp(),
        r_squared,
        periods: n,
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with tie-averaged ranks. `None` when either
/// variable is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One row of an experiment summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub delay_bound: usize,
    pub trial: usize,
    pub converged_at: Option<usize>,
    pub gamma: f64,
    pub final_alpha: f64,
    pub final_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<ContractionFit>,
}

fn summarize(label: &str, delay_bound: usize, trial: usize, trace: &DiffusionTrace) -> RunSummary {
    let floor = contraction_floor(trace.alpha_periods.first().copied().unwrap_or(0.0));
    let last = trace.records.last().expect("trace records nonempty");
    RunSummary {
        label: label.to_string(),
        delay_bound,
        trial,
        converged_at: trace.converged_at,
        gamma: trace.gamma,
        final_alpha: last.alpha,
        final_rel_error: last.rel_error,
        fit: fit_contraction(&trace.alpha_periods, floor),
    }
}

/// The fixed experiment topology: a 20-node 4-regular graph.
fn experiment_graph(master_seed: u64) -> Result<crate::graph::Graph> {
    random_regular_graph(20, 4, derive_seed(master_seed, STREAM_GRAPH, 0))
}

/// The fixed random-restriction sheaf shared by experiments 2 and 3.
fn experiment_sheaf(master_seed: u64) -> Result<CellularSheaf> {
    let graph = experiment_graph(master_seed)?;
    random_restriction_sheaf(&graph, 4, 1, derive_seed(master_seed, STREAM_SHEAF, 0))
}

pub struct Experiment1Result {
    pub traces: Vec<(String, DiffusionTrace)>,
    pub summaries: Vec<RunSummary>,
}

/// Asynchronous diffusion over three sheaf families on one 4-regular graph,
/// sweeping the delay bound. One fixed initial condition per sheaf.
pub fn run_experiment1(cfg: &ExperimentConfig) -> Result<Experiment1Result> {
    let graph = experiment_graph(cfg.master_seed)?;
    let kinds: Vec<(String, CellularSheaf)> = vec![
        ("constant_r4".into(), constant_sheaf(&graph, 4)?),
        (
            "random_1x4".into(),
            random_restriction_sheaf(&graph, 4, 1, derive_seed(cfg.master_seed, STREAM_SHEAF, 1))?,
        ),
        (
            "matrix_weighted".into(),
            matrix_weighted_sheaf(&graph, 4, 0.2, derive_seed(cfg.master_seed, STREAM_SHEAF, 2))?.0,
        ),
    ];
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    for (kind_idx, (label, sheaf)) in kinds.iter().enumerate() {
        let potentials = PotentialSet::quadratic(sheaf);
        let x0 = gaussian_initial_condition(
            sheaf,
            cfg.variance,
            derive_seed(cfg.master_seed, STREAM_INIT, kind_idx as u64),
        )?;
        for (b_idx, &b) in cfg.b_values.iter().enumerate() {
            let seed = derive_seed(cfg.master_seed, STREAM_SCHEDULE, (kind_idx * 1000 + b_idx) as u64);
            let stop = cfg.stop_for(b);
            let trace = run_async(sheaf, &potentials, &x0, b, cfg.policy, &stop, seed)?;
            summaries.push(summarize(label, b, 0, &trace));
            traces.push((format!("{label}_B{b}"), trace));
        }
    }
    Ok(Experiment1Result { traces, summaries })
}

pub struct Experiment2Result {
    pub traces: Vec<(String, DiffusionTrace)>,
    pub summaries: Vec<RunSummary>,
    pub converged_count: usize,
    pub rho_median: Option<f64>,
    pub rho_iqr: Option<(f64, f64)>,
}

/// One fixed sheaf, B = 50, many random initial conditions.
pub fn run_experiment2(cfg: &ExperimentConfig) -> Result<Experiment2Result> {
    let sheaf = experiment_sheaf(cfg.master_seed)?;
    let potentials = PotentialSet::quadratic(&sheaf);
    let b = cfg.b_values.first().copied().unwrap_or(50);
    let stop = cfg.stop_for(b);
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    let mut rhos = Vec::new();
    let mut converged_count = 0;
    for trial in 0..cfg.initial_conditions {
        let x0 = gaussian_initial_condition(
            &sheaf,
            cfg.variance,
            derive_seed(cfg.master_seed, STREAM_INIT, trial as u64),
        )?;
        let seed = derive_seed(cfg.master_seed, STREAM_SCHEDULE, trial as u64);
        let trace = run_async(&sheaf, &potentials, &x0, b, cfg.policy, &stop, seed)?;
        let summary = summarize("random_1x4", b, trial, &trace);
        if summary.converged_at.is_some() {
            converged_count += 1;
        }
        if let Some(fit) = &summary.fit {
            rhos.push(fit.rho);
        }
        traces.push((format!("trial{trial:03}"), trace));
        summaries.push(summary);
    }
    rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> Option<f64> {
        if rhos.is_empty() {
            None
        } else {
            let pos = q * (rhos.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            Some(rhos[lo] + (rhos[hi] - rhos[lo]) * (pos - lo as f64))
        }
    };
    Ok(Experiment2Result {
        rho_median: quantile(0.5),
        rho_iqr: quantile(0.25).zip(quantile(0.75)),
        traces,
        summaries,
        converged_count,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Experiment3Row {
    pub delay_bound: usize,
    /// Distance between the (averaged) final iterate and the orthogonal
    /// projection of the initial condition onto the minimizer set.
    pub distance: f64,
    pub all_converged: bool,
}

pub struct Experiment3Result {
    pub rows: Vec<Experiment3Row>,
    pub spearman: Option<f64>,
    pub summaries: Vec<RunSummary>,
}

/// Drift of the asynchronous limit from the synchronous projection as the
/// delay bound grows. Final iterates are averaged over trials before the
/// distance is measured (set `average_distances` for the alternate reading).
pub fn run_experiment3(cfg: &ExperimentConfig) -> Result<Experiment3Result> {
    let sheaf = experiment_sheaf(cfg.master_seed)?;
    let potentials = PotentialSet::quadratic(&sheaf);
    let x0 = gaussian_initial_condition(
        &sheaf,
        cfg.variance,
        derive_seed(cfg.master_seed, STREAM_INIT, 0),
    )?;
    let projection = project_onto_minimizers(&sheaf, &potentials, &x0)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (b_idx, &b) in cfg.b_values.iter().enumerate() {
        let stop = cfg.stop_for(b);
        let mut all_converged = true;
        let mut mean_final: Option<Cochain0> = None;
        let mut distance_sum = 0.0;
        for trial in 0..cfg.trials {
            let seed = derive_seed(
                cfg.master_seed,
                STREAM_SCHEDULE,
                (b_idx * 1000 + trial + 1) as u64,
            );
            let trace = run_async(&sheaf, &potentials, &x0, b, cfg.policy, &stop, seed)?;
            all_converged &= trace.converged_at.is_some();
            distance_sum += trace.final_state.sub(&projection).norm();
            mean_final = Some(match mean_final {
                None => trace.final_state.clone(),
                Some(acc) => acc.add(&trace.final_state),
            });
            summaries.push(summarize("exp3", b, trial, &trace));
        }
        let distance = if cfg.average_distances {
            distance_sum / cfg.trials as f64
        } else {
            let mean = mean_final.expect("trials >= 1").scale(1.0 / cfg.trials as f64);
            mean.sub(&projection).norm()
        };
        rows.push(Experiment3Row { delay_bound: b, distance, all_converged });
    }
    let converged_rows: Vec<&Experiment3Row> = rows.iter().filter(|r| r.all_converged).collect();
    let bs: Vec<f64> = converged_rows.iter().map(|r| r.delay_bound as f64).collect();
    let ds: Vec<f64> = converged_rows.iter().map(|r| r.distance).collect();
    Ok(Experiment3Result { spearman: spearman(&bs, &ds), rows, summaries })
}

#[derive(Debug, Clone, Serialize)]
pub struct Experiment4Point {
    pub instance: usize,
    pub lambda_2: Option<f64>,
    pub t_star: Option<usize>,
    pub connected: bool,
    pub excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub struct Experiment4Result {
    pub points: Vec<Experiment4Point>,
    pub spearman: Option<f64>,
}

/// lambda_2 versus iterations-to-convergence over random Erdos-Renyi sheaves
/// at a fixed delay bound.
pub fn run_experiment4(cfg: &ExperimentConfig) -> Result<Experiment4Result> {
    let b = cfg.b_values.first().copied().unwrap_or(50);
    let stop = cfg.stop_for(b);
    let mut points = Vec::new();
    for instance in 0..cfg.instances {
        let graph = erdos_renyi(20, 0.3, derive_seed(cfg.master_seed, STREAM_GRAPH, instance as u64 + 1))?;
        let sheaf = random_restriction_sheaf(
            &graph,
            4,
            1,
            derive_seed(cfg.master_seed, STREAM_SHEAF, instance as u64 + 10),
        )?;
        let potentials = PotentialSet::quadratic(&sheaf);
        let spec = spectrum(&sheaf, DEFAULT_ZERO_THRESHOLD);
        let connected = graph.is_connected();
        let x0 = gaussian_initial_condition(
            &sheaf,
            cfg.variance,
            derive_seed(cfg.master_seed, STREAM_INIT, instance as u64 + 100),
        )?;
        let seed = derive_seed(cfg.master_seed, STREAM_SCHEDULE, instance as u64 + 100);
        let trace = run_async(&sheaf, &potentials, &x0, b, cfg.policy, &stop, seed)?;
        let mut note = None;
        let mut excluded = false;
        if !connected {
            excluded = true;
            note = Some("disconnected graph".to_string());
        }
        if trace.converged_at.is_none() {
            excluded = true;
            note = Some("did not converge within max_ticks".to_string());
        }
        if spec.lambda_2.is_none() {
            excluded = true;
            note = Some("lambda_2 undefined".to_string());
        }
        points.push(Experiment4Point {
            instance,
            lambda_2: spec.lambda_2,
            t_star: trace.converged_at,
            connected,
            excluded,
            note,
        });
    }
    let included: Vec<&Experiment4Point> = points.iter().filter(|p| !p.excluded).collect();
    let l2: Vec<f64> = included.iter().map(|p| p.lambda_2.unwrap()).collect();
    let ts: Vec<f64> = included.iter().map(|p| p.t_star.unwrap() as f64).collect();
    Ok(Experiment4Result { spearman: spearman(&l2, &ts), points })
}

pub struct UavDemoResult {
    pub trace: DiffusionTrace,
    pub final_energy: f64,
    /// `||p_i - p_j - displacement||` per leader-follower edge, in the order
    /// (1,2), (1,3), (4,5), (4,6).
    pub displacement_errors: [f64; 4],
    /// `||v_1 - v_4||` between the leaders.
    pub velocity_gap: f64,
}

/// Runs the UAV formation demo from a random start via asynchronous
/// diffusion.
pub fn run_uav_demo(
    displacements: &[DVector<f64>; 4],
    delay_bound: usize,
    master_seed: u64,
    policy: StepSizePolicy,
    stop: &StoppingRule,
) -> Result<UavDemoResult> {
    let (sheaf, potentials) = uav_formation_sheaf(displacements)?;
    let x0 = gaussian_initial_condition(&sheaf, 10.0, derive_seed(master_seed, STREAM_INIT, 0))?;
    let trace = run_async(
        &sheaf,
        &potentials,
        &x0,
        delay_bound,
        policy,
        stop,
        derive_seed(master_seed, STREAM_SCHEDULE, 0),
    )?;
    let x = &trace.final_state;
    let p = |i: usize| x.blocks[i].rows(0, 3).into_owned();
    let v = |i: usize| x.blocks[i].rows(3, 3).into_owned();
    let pairs = [(0usize, 1usize), (0, 2), (3, 4), (3, 5)];
    let displacement_errors = std::array::from_fn(|k| {
        let (i, j) = pairs[k];
        (p(i) - p(j) - &displacements[k]).norm()
    });
    let velocity_gap = (v(0) - v(3)).norm();
    let final_energy = crate::potentials::dirichlet_energy(&sheaf, &potentials, x)?;
    Ok(UavDemoResult { trace, final_energy, displacement_errors, velocity_gap })
}

/// Default displacement set used by the `uav` experiment id and the CLI demo:
/// a unit triangle behind each leader.
pub fn default_uav_displacements() -> [DVector<f64>; 4] {
    [
        DVector::from_vec(vec![1.0, 1.0, 0.0]),
        DVector::from_vec(vec![-1.0, 1.0, 0.0]),
        DVector::from_vec(vec![1.0, 1.0, 0.0]),
        DVector::from_vec(vec![-1.0, 1.0, 0.0]),
    ]
}

/// A runnable experiment, registered by id and selected at runtime.
pub trait Experiment {
    fn id(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Runs the experiment and writes `traces/*.csv`, `summary.csv`, and
    /// `run_meta.json` under `out_dir`.
    fn run(&self, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()>;
}

fn write_outputs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    traces: &[(String, DiffusionTrace)],
    summary_header: &str,
    summary_rows: &[String],
    extra_meta: serde_json::Value,
) -> Result<()> {
    let trace_dir = out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    for (name, trace) in traces {
        crate::io::save_trace_csv(&trace_dir.join(format!("{name}.csv")), trace)?;
    }
    let mut summary = String::from(summary_header);
    summary.push('\n');
    for row in summary_rows {
        summary.push_str(row);
        summary.push('\n');
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;
    let meta = serde_json::json!({
        "config": cfg,
        "broadcast_order": "broadcast-then-compute within each tick",
        "mixture_std": "0.1*(center+1)",
        "results": extra_meta,
    });
    std::fs::write(out_dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn summary_csv_rows(summaries: &[RunSummary]) -> (String, Vec<String>) {
    let header = "label,delay_bound,trial,converged_at,gamma,final_alpha,final_rel_error,rho,fit_r_squared".to_string();
    let rows = summaries
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{:.6e},{:.6e},{:.6e},{},{}",
                s.label,
                s.delay_bound,
                s.trial,
                s.converged_at.map_or(String::from(""), |t| t.to_string()),
                s.gamma,
                s.final_alpha,
                s.final_rel_error,
                s.fit.map_or(String::from(""), |f| format!("{:.6e}", f.rho)),
                s.fit.map_or(String::from(""), |f| format!("{:.4}", f.r_squared)),
            )
        })
        .collect();
    (header, rows)
}

macro_rules! experiment_impl {
    ($name:ident, $id:literal, $desc:literal, $body:expr) => {
        struct $name;
        impl Experiment for $name {
            fn id(&self) -> &'static str {
                $id
            }
            fn description(&self) -> &'static str {
                $desc
            }
            fn run(&self, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
                let f: fn(&ExperimentConfig, &Path) -> Result<()> = $body;
                f(cfg, out_dir)
            }
        }
    };
}

experiment_impl!(
    Exp1,
    "exp1",
    "three sheaf families over one 4-regular graph, sweeping the delay bound",
    |cfg, out| {
        let res = run_experiment1(cfg)?;
        let (header, rows) = summary_csv_rows(&res.summaries);
        write_outputs(out, cfg, &res.traces, &header, &rows, serde_json::json!({}))
    }
);

experiment_impl!(
    Exp2,
    "exp2",
    "one sheaf, B=50, many random initial conditions",
    |cfg, out| {
        let res = run_experiment2(cfg)?;
        let (header, rows) = summary_csv_rows(&res.summaries);
        write_outputs(
            out,
            cfg,
            &res.traces,
            &header,
            &rows,
            serde_json::json!({
                "converged": res.converged_count,
                "total": cfg.initial_conditions,
                "rho_median": res.rho_median,
                "rho_iqr": res.rho_iqr,
            }),
        )
    }
);

experiment_impl!(
    Exp3,
    "exp3",
    "drift from the synchronous projection as the delay bound grows",
    |cfg, out| {
        let res = run_experiment3(cfg)?;
        let (_, srows) = summary_csv_rows(&res.summaries);
        let mut rows = vec![String::from("# delay_bound,distance,all_converged")];
        rows.extend(
            res.rows
                .iter()
                .map(|r| format!("{},{:.12e},{}", r.delay_bound, r.distance, r.all_converged)),
        );
        rows.push(String::from("# per-run summaries follow"));
        rows.extend(srows);
        write_outputs(
            out,
            cfg,
            &[],
            "delay_bound,distance,all_converged",
            &rows[1..],
            serde_json::json!({ "spearman_b_vs_distance": res.spearman }),
        )
    }
);

experiment_impl!(
    Exp4,
    "exp4",
    "lambda_2 versus iterations-to-convergence over Erdos-Renyi sheaves",
    |cfg, out| {
        let res = run_experiment4(cfg)?;
        let rows: Vec<String> = res
            .points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{}",
                    p.instance,
                    p.lambda_2.map_or(String::new(), |l| format!("{l:.12e}")),
                    p.t_star.map_or(String::new(), |t| t.to_string()),
                    p.connected,
                    p.excluded,
                    p.note.clone().unwrap_or_default(),
                )
            })
            .collect();
        write_outputs(
            out,
            cfg,
            &[],
            "instance,lambda_2,t_star,connected,excluded,note",
            &rows,
            serde_json::json!({ "spearman_lambda2_vs_tstar": res.spearman }),
        )
    }
);

experiment_impl!(
    Uav,
    "uav",
    "two-team UAV formation demo under asynchronous diffusion",
    |cfg, out| {
        let b = cfg.b_values.first().copied().unwrap_or(20);
        let res = run_uav_demo(
            &default_uav_displacements(),
            b,
            cfg.master_seed,
            cfg.policy,
            &cfg.stop_for(b),
        )?;
        let traces = vec![("uav".to_string(), res.trace.clone())];
        let rows = vec![format!(
            "{:.6e},{:.6e},{}",
            res.final_energy,
            res.velocity_gap,
            res.displacement_errors.map(|e| format!("{e:.6e}")).join(";")
        )];
        write_outputs(
            out,
            cfg,
            &traces,
            "final_energy,velocity_gap,displacement_errors",
            &rows,
            serde_json::json!({}),
        )
    }
);

/// All registered experiments.
pub fn registry() -> Vec<Box<dyn Experiment>> {
    vec![
        Box::new(Exp1),
        Box::new(Exp2),
        Box::new(Exp3),
        Box::new(Exp4),
        Box::new(Uav),
    ]
}

pub fn find_experiment(id: &str) -> Result<Box<dyn Experiment>> {
    registry()
        .into_iter()
        .find(|e| e.id() == id)
        .ok_or_else(|| SheafError::Config(format!("unknown experiment id '{id}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::run_sync;
    use crate::graph::Graph;
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn fit_on_exact_geometric_sequence() {
        let alphas: Vec<f64> = (0..12).map(|r| 4.0 * 0.5_f64.powi(r)).collect();
        let fit = fit_contraction(&alphas, 0.0).unwrap();
        assert!((fit.intercept - 4.0).abs() < 1e-10);
        assert!((fit.rho - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        // Too few periods above the floor: no fit.
        assert!(fit_contraction(&alphas[..4], 0.0).is_none());
    }

    #[test]
    fn fit_matches_closed_form_linear_dynamics() {
        // Constant sheaf on one edge, gamma = 0.25, lambda_2 = 2:
        // alpha contracts by (1 - gamma*lambda_2)^2 = 0.25 per step.
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let sheaf = CellularSheaf::new(
            g,
            vec![1, 1],
            vec![1],
            vec![(DMatrix::identity(1, 1), DMatrix::identity(1, 1))],
        )
        .unwrap();
        let pots = PotentialSet::quadratic(&sheaf);
        let x0 = Cochain0::new(vec![dvector![5.0], dvector![2.0]]);
        let stop = StoppingRule { max_ticks: 20, residual_tol: 0.0, record_every: 1 };
        let trace = run_sync(&sheaf, &pots, &x0, StepSizePolicy::Fixed(0.25), &stop).unwrap();
        let fit = fit_contraction(
            &trace.alpha_periods,
            contraction_floor(trace.alpha_periods[0]),
        )
        .unwrap();
        assert!((fit.rho - 0.25).abs() < 1e-8, "rho = {}", fit.rho);
    }

    #[test]
    fn spearman_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [2.0, 3.0, 9.0, 11.0];
        let down = [5.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&xs, &[1.0, 1.0, 1.0, 1.0]).is_none());
        // Ties get averaged ranks.
        let tied = [1.0, 1.0, 2.0, 3.0];
        let r = spearman(&tied, &xs).unwrap();
        assert!(r > 0.9 && r <= 1.0);
    }

    #[test]
    fn exp3_grid_shape() {
        let grid = exp3_b_grid(4);
        assert_eq!(grid, vec![0, 1, 2, 4, 8, 16]);
    }

    #[test]
    fn registry_ids() {
        let ids: Vec<&str> = registry().iter().map(|e| e.id()).collect();
        assert_eq!(ids, vec!["exp1", "exp2", "exp3", "exp4", "uav"]);
        assert!(find_experiment("exp2").is_ok());
        assert!(find_experiment("nope").is_err());
    }

    #[test]
    fn seed_derivation_streams_are_independent() {
        let a = derive_seed(7, 0, 0);
        let b = derive_seed(7, 1, 0);
        let c = derive_seed(7, 0, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0, 0));
    }
}

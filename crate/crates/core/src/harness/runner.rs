use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{Engine, ExperimentConfig};
use super::output::{write_atomic, Table};
use crate::analytic::{
    binomial_steady, gamma_bar_windowed, master_equation_solve, AnalyticModel,
    DistributionOverCounts,
};
use crate::error::{Error, Result};
use crate::meanfield::{
    integrate_delay_ode, phenomenological_ensemble, DelayModel, PhenomenologicalModel,
};
use crate::microsim::{derive_seed, ensemble, histogram_window};
use crate::series::{uniform_grid, Ensemble, TimeSeries};
use crate::stats::{chi_square, ChiSquareTest, Histogram};

pub const SEED_DERIVATION: &str =
    "run i is seeded with splitmix64(master_seed + 0x9E3779B97F4A7C15 * (i + 1))";

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "TASKALLOC_OUTPUT_ROOT";

/// In-memory result of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub mean: TimeSeries,
    pub series: Table,
    /// Per-run values for stochastic engines.
    pub runs: Option<Table>,
    pub histogram: Option<HistogramReport>,
    pub run_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramReport {
    pub histogram: Histogram,
    pub overlay: DistributionOverCounts,
    pub mean_fraction: f64,
    pub chi_square: ChiSquareTest,
    pub window: (f64, f64),
}

impl HistogramReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(vec![
            "n".into(),
            "observed_count".into(),
            "observed_frequency".into(),
            "binomial_p".into(),
        ]);
        let freq = self.histogram.frequencies();
        for (n, (&count, &p)) in self
            .histogram
            .counts
            .iter()
            .zip(self.overlay.probs())
            .enumerate()
        {
            t.push(vec![n as f64, count as f64, freq[n], p])
                .expect("finite histogram row");
        }
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seed_derivation: String,
    pub run_seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
    pub created_unix: u64,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub series_csv: PathBuf,
    pub runs_csv: Option<PathBuf>,
    pub histogram_csv: Option<PathBuf>,
    pub manifest: PathBuf,
    pub output: ExperimentOutput,
}

fn ensemble_tables(e: &Ensemble) -> Result<(Table, Table)> {
    let mut series = Table::new(vec!["time".into(), "mean".into(), "std".into()]);
    let mut header = vec!["time".to_string()];
    header.extend((0..e.run_count()).map(|i| format!("run_{i}")));
    let mut runs = Table::new(header);
    for (k, &t) in e.times.iter().enumerate() {
        series.push(vec![t, e.mean[k], e.std[k]])?;
        let mut row = vec![t];
        row.extend(e.runs.iter().map(|r| r[k]));
        runs.push(row)?;
    }
    Ok((series, runs))
}

fn deterministic_table(cfg: &ExperimentConfig, mean: &TimeSeries) -> Result<Table> {
    let mut t = Table::new(vec!["time".into(), "mean".into(), "mu_r".into()]);
    for (&time, &v) in mean.times.iter().zip(&mean.values) {
        t.push(vec![time, v, cfg.schedule.mu_unchecked(time)])?;
    }
    Ok(t)
}

/// Runs the configured engine without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let seeds = || -> Vec<u64> {
        (0..cfg.runs as u64)
            .map(|i| derive_seed(cfg.master_seed, i))
            .collect()
    };
    match cfg.engine {
        Engine::Microsim => {
            let params = cfg.sim_params().expect("validated");
            let e = ensemble(&params, &cfg.schedule, cfg.master_seed, cfg.runs)?;
            let (series, runs) = ensemble_tables(&e)?;
            let histogram = match &cfg.histogram {
                Some(h) => Some(histogram_report(
                    &e,
                    params.n_agents,
                    h.t_start,
                    h.t_end.unwrap_or(cfg.t_end),
                )?),
                None => None,
            };
            Ok(ExperimentOutput {
                mean: e.mean_series(),
                series,
                runs: Some(runs),
                histogram,
                run_seeds: seeds(),
            })
        }
        Engine::Analytic => {
            let a = cfg.analytic.as_ref().expect("validated");
            let model = AnalyticModel {
                alpha: a.alpha,
                h: a.history_length,
                epsilon: a.epsilon,
                p0: a.initial_red_fraction,
            };
            let mean = model.trajectory(&cfg.schedule, cfg.t_end, cfg.sample_dt)?;
            Ok(ExperimentOutput {
                series: deterministic_table(&cfg, &mean)?,
                mean,
                runs: None,
                histogram: None,
                run_seeds: vec![],
            })
        }
        Engine::MeanfieldOde | Engine::MeanfieldStochastic => {
            let m = cfg.meanfield.as_ref().expect("validated");
            let scale = cfg.time_scale;
            let model_schedule = cfg.schedule.rescaled(scale)?;
            let delay = DelayModel {
                family: m.family,
                epsilon: m.epsilon,
                h: m.history_length,
                p0: m.initial_red_fraction,
            };
            let dt = m.dt.expect("resolved");
            let grid = uniform_grid(cfg.t_end, cfg.sample_dt);
            let to_seconds = |s: &TimeSeries| -> Result<Vec<f64>> {
                grid.iter()
                    .map(|&t| {
                        s.interpolate(t / scale)
                            .ok_or_else(|| Error::IntegrationFailure {
                                time: t,
                                reason: "output grid outside the solution range".into(),
                            })
                    })
                    .collect()
            };
            // Integrate one extra step so the last output point is covered.
            let t_model = cfg.t_end / scale + dt;
            if cfg.engine == Engine::MeanfieldOde {
                let sol = integrate_delay_ode(&model_schedule, &delay, t_model, dt)?;
                let mean = TimeSeries::new(grid.clone(), to_seconds(&sol)?)?;
                Ok(ExperimentOutput {
                    series: deterministic_table(&cfg, &mean)?,
                    mean,
                    runs: None,
                    histogram: None,
                    run_seeds: vec![],
                })
            } else {
                let pm = PhenomenologicalModel {
                    delay,
                    n_agents: m.n_agents.expect("validated"),
                    dt,
                };
                let raw = phenomenological_ensemble(
                    &model_schedule,
                    &pm,
                    cfg.master_seed,
                    cfg.runs,
                    t_model,
                )?;
                let runs = (0..raw.run_count())
                    .map(|i| to_seconds(&raw.run_series(i).expect("index in range")))
                    .collect::<Result<Vec<_>>>()?;
                let e = Ensemble::from_runs(grid, runs)?;
                let (series, runs) = ensemble_tables(&e)?;
                Ok(ExperimentOutput {
                    mean: e.mean_series(),
                    series,
                    runs: Some(runs),
                    histogram: None,
                    run_seeds: seeds(),
                })
            }
        }
        Engine::MasterEquation => {
            let m = cfg.master_equation.as_ref().expect("validated");
            let dt = m.dt.expect("resolved");
            let n = m.n_agents;
            let start = (m.initial_red_fraction * n as f64).round() as usize;
            let init = DistributionOverCounts::point_mass(n, start)?;
            let schedule = &cfg.schedule;
            let traj = master_equation_solve(
                n,
                |t| gamma_bar_windowed(schedule, m.alpha, m.history_length, t),
                m.epsilon,
                &init,
                cfg.t_end,
                dt,
            )?;
            let mut header = vec!["time".to_string(), "mean".into(), "std".into()];
            header.extend((0..=n).map(|k| format!("p_{k}")));
            let mut table = Table::new(header);
            let (mut times, mut means) = (Vec::new(), Vec::new());
            let stride = ((cfg.sample_dt / dt).round() as usize).max(1);
            let nf = n as f64;
            for (i, (t, d)) in traj.times.iter().zip(&traj.dists).enumerate() {
                if i % stride != 0 && i + 1 != traj.times.len() {
                    continue;
                }
                let mut row = vec![*t, d.mean() / nf, d.variance().max(0.0).sqrt() / nf];
                row.extend_from_slice(d.probs());
                table.push(row)?;
                times.push(*t);
                means.push(d.mean() / nf);
            }
            Ok(ExperimentOutput {
                mean: TimeSeries::new(times, means)?,
                series: table,
                runs: None,
                histogram: None,
                run_seeds: vec![],
            })
        }
    }
}

fn histogram_report(e: &Ensemble, n_agents: usize, from: f64, to: f64) -> Result<HistogramReport> {
    let runs: Vec<TimeSeries> = (0..e.run_count())
        .map(|i| e.run_series(i).expect("index in range"))
        .collect();
    let histogram = histogram_window(&runs, n_agents, from, to)?;
    let mean_fraction = histogram.mean_fraction();
    let overlay = binomial_steady(n_agents, mean_fraction)?;
    let chi = chi_square(&histogram.counts, overlay.probs(), 1)?;
    Ok(HistogramReport {
        histogram,
        overlay,
        mean_fraction,
        chi_square: chi,
        window: (from, to),
    })
}

/// Pools post-`t_start` samples of a `microsim` experiment and fits the
/// binomial with parameter equal to the empirical mean.
pub fn emit_histogram(cfg: &ExperimentConfig, t_start: f64) -> Result<HistogramReport> {
    if cfg.engine != Engine::Microsim {
        return Err(Error::Config("histogram: engine must be microsim".into()));
    }
    let mut cfg = cfg.clone();
    let t_end = cfg.histogram.as_ref().and_then(|h| h.t_end);
    cfg.histogram = Some(super::config::HistogramSection { t_start, t_end });
    cfg.validate()?;
    execute(&cfg)?
        .histogram
        .ok_or_else(|| Error::Config("histogram section missing".into()))
}

/// Output root: explicit flag, then the environment variable, then the
/// config's `output_dir`, then `results`.
pub fn output_root(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Executes the experiment and writes `series.csv`, `runs.csv` (stochastic
/// engines), `histogram.csv` (when configured) and `manifest.json` under
/// `<root>/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<Artifacts> {
    let started = Instant::now();
    let output = execute(cfg)?;
    let dir = root.join(&cfg.name);
    let series_csv = dir.join("series.csv");
    write_atomic(&series_csv, output.series.to_csv().as_bytes())?;
    let mut outputs = vec!["series.csv".to_string()];
    let runs_csv = match &output.runs {
        Some(t) => {
            let p = dir.join("runs.csv");
            write_atomic(&p, t.to_csv().as_bytes())?;
            outputs.push("runs.csv".into());
            Some(p)
        }
        None => None,
    };
    let histogram_csv = match &output.histogram {
        Some(h) => {
            let p = dir.join("histogram.csv");
            write_atomic(&p, h.table().to_csv().as_bytes())?;
            outputs.push("histogram.csv".into());
            Some(p)
        }
        None => None,
    };
    let manifest = Manifest {
        tool: "taskalloc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.resolved(),
        seed_derivation: SEED_DERIVATION.into(),
        run_seeds: output.run_seeds.clone(),
        outputs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(Artifacts {
        dir,
        series_csv,
        runs_csv,
        histogram_csv,
        manifest: manifest_path,
        output,
    })
}

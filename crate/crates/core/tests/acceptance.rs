//! Acceptance suite. Each criterion prints one `[PASS]` or `[FAIL]` line;
//! the process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use taskalloc_core::analytic::{
    binomial_steady, gamma_bar_constant, gamma_bar_series, master_equation_solve, p_r_constant,
    AnalyticModel, DistributionOverCounts,
};
use taskalloc_core::harness::{
    compare_series, convergence_time, max_overshoot, run_experiment, ConvergenceOptions,
    ExperimentConfig,
};
use taskalloc_core::meanfield::{
    integrate_delay_ode, phenomenological_ensemble, DelayModel, PhenomenologicalModel,
};
use taskalloc_core::microsim::{ensemble, histogram_window, DecisionClock};
use taskalloc_core::stats::chi_square;
use taskalloc_core::{
    EnvironmentSchedule, GFamily, HistoryMode, ObservationMode, SimParams, TimeSeries,
    TransitionFunction,
};

const N: usize = 20;
const M0: u32 = 50;
const ALPHA: f64 = 2.1 / 50.0;
const EPS: f64 = 0.1;

type Outcome = (bool, String);

fn fig2_schedule() -> EnvironmentSchedule {
    EnvironmentSchedule::from_steps(M0, &[(0.0, 0.3), (500.0, 0.8), (1000.0, 0.5)]).unwrap()
}

fn tasks_only(h: f64, alpha: f64, t_end: f64, sample_dt: f64) -> SimParams {
    SimParams {
        n_agents: N,
        alpha,
        epsilon: EPS,
        history: HistoryMode::TimeWindow { length: h },
        mode: ObservationMode::TasksOnly,
        transition: TransitionFunction::Ratio,
        t_end,
        sample_dt,
        initial_red_fraction: 1.0,
        robot_rate: None,
        decision_clock: DecisionClock::Exponential,
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn criterion_1() -> Outcome {
    let sched = fig2_schedule();
    let mut ok = true;
    let mut parts = Vec::new();
    for h in [10.0, 50.0, 100.0] {
        let started = Instant::now();
        let e = ensemble(&tasks_only(h, ALPHA, 1500.0, 1.0), &sched, 1001, 100).unwrap();
        let secs = started.elapsed().as_secs_f64();
        let model = AnalyticModel {
            alpha: ALPHA,
            h,
            epsilon: EPS,
            p0: 1.0,
        };
        let a = model.trajectory(&sched, 1500.0, 1.0).unwrap();
        let r = compare_series(&e.mean_series(), &a, None, ConvergenceOptions::default()).unwrap();
        ok &= r.max_abs_gap <= 0.05 && secs < 30.0;
        parts.push(format!("h={h}: max gap {:.4} in {secs:.2}s", r.max_abs_gap));
    }
    (ok, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let anchors = [(0.3, 0.28), (0.5, 0.47), (0.8, 0.70)];
    let (mut fit_ok, mut anchor_ok) = (true, true);
    let mut parts = Vec::new();
    for (mu0, anchor) in anchors {
        let sched = EnvironmentSchedule::constant(M0, mu0).unwrap();
        let e = ensemble(&tasks_only(10.0, ALPHA, 500.0, 10.0), &sched, 2005, 10).unwrap();
        let runs: Vec<TimeSeries> = (0..e.run_count())
            .map(|i| e.run_series(i).unwrap())
            .collect();
        let hist = histogram_window(&runs, N, 200.0, 500.0).unwrap();
        let mean = hist.mean_fraction();
        let overlay = binomial_steady(N, mean).unwrap();
        let chi = chi_square(&hist.counts, overlay.probs(), 1).unwrap();
        fit_ok &= chi.passes();
        anchor_ok &= (mean - anchor).abs() <= 0.04;
        parts.push(format!(
            "mu0={mu0}: chi2 {:.2} < {:.2}, mean {mean:.3} vs {anchor}",
            chi.statistic, chi.critical_95
        ));
    }
    (
        fit_ok && anchor_ok,
        format!(
            "{} [binomial fit {}, anchors {}]",
            parts.join("; "),
            if fit_ok { "ok" } else { "off" },
            if anchor_ok { "ok" } else { "off" }
        ),
    )
}

fn criterion_3() -> Outcome {
    let (h, mu) = (10.0, 0.37);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let lambda = 0.1 * (500f64).powf(i as f64 / 19.0);
        let alpha = lambda / (h * f64::from(M0));
        let closed = gamma_bar_constant(alpha, h, f64::from(M0), mu).unwrap();
        let series = gamma_bar_series(lambda * mu, lambda * (1.0 - mu), 1e-12).unwrap();
        worst = worst
            .max((closed.gamma_r - series.gamma_r).abs())
            .max((closed.gamma_g - series.gamma_g).abs());
    }
    (
        worst <= 1e-6,
        format!("max |series - closed| {worst:.2e} over lambda in [0.1, 50]"),
    )
}

fn criterion_4() -> Outcome {
    let (h, mu, dt) = (2.0, 0.6, 0.01);
    let rates = gamma_bar_constant(ALPHA, h, f64::from(M0), mu).unwrap();
    let init = DistributionOverCounts::point_mass(N, N).unwrap();
    let traj = master_equation_solve(N, |_| rates, EPS, &init, 400.0, dt).unwrap();
    let stationary = binomial_steady(N, rates.steady_fraction().unwrap()).unwrap();
    let tv = traj.last().total_variation(&stationary);
    let mean = traj.mean_fraction();
    let gap = mean
        .times
        .iter()
        .zip(&mean.values)
        .map(|(&t, &v)| (v - p_r_constant(t, 1.0, mu, ALPHA, h, f64::from(M0), EPS).unwrap()).abs())
        .fold(0.0, f64::max);
    (
        tv <= 1e-6 && gap <= 1e-4,
        format!("stationary TV {tv:.2e}, mean trajectory gap {gap:.2e}"),
    )
}

/// Least-squares decay rate of `target - mean` over `[from, to]`.
fn fitted_rate(s: &TimeSeries, target: f64, from: f64, to: f64) -> f64 {
    let pts: Vec<(f64, f64)> = s
        .window(from, to)
        .map(|(t, v)| (t, (target - v).abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx).powi(2))
    });
    -sxy / sxx
}

fn criterion_5() -> Outcome {
    let sched = fig2_schedule();
    let opts = ConvergenceOptions::default();
    let conv = |h: f64| {
        let e = ensemble(&tasks_only(h, ALPHA, 1500.0, 1.0), &sched, 5005, 100).unwrap();
        convergence_time(&e.mean_series(), 500.0, 1000.0, 0.8, opts).unwrap()
    };
    let (t50, t100) = (conv(50.0), conv(100.0));
    let ratio = t100 / t50;
    let ratio_ok = (ratio - 2.0).abs() <= 0.5;

    // Short window: the claimed rate presumes windows that are rarely empty,
    // so the main check runs at alpha*h*M0 = 10. At the default encounter rate
    // the measured rate is compared with eps * P(window non-empty).
    let rate_at = |alpha: f64| {
        let e = ensemble(&tasks_only(0.5, alpha, 1000.0, 0.5), &sched, 5006, 400).unwrap();
        fitted_rate(&e.mean_series(), 0.8, 501.0, 515.0)
    };
    let fast = rate_at(20.0 / f64::from(M0));
    let slow = rate_at(ALPHA);
    let slow_expected = EPS * -(-ALPHA * 0.5 * f64::from(M0)).exp_m1();
    let fast_ok = (fast / EPS - 1.0).abs() <= 0.2;
    let slow_ok = (slow / slow_expected - 1.0).abs() <= 0.2;
    (
        ratio_ok && fast_ok && slow_ok,
        format!(
            "t_conv h=100/h=50 = {t100}/{t50} = {ratio:.2}; h=0.5 rate {fast:.4} vs eps {EPS} \
             (alpha*M0=20); {slow:.4} vs eps*(1-exp(-alpha*h*M0)) = {slow_expected:.4} (alpha*M0=2.1)"
        ),
    )
}

fn criterion_6() -> Outcome {
    // Plateau check on segments long enough to settle; overshoot on the
    // original timing (model units: steps at 50 and 200).
    let long =
        EnvironmentSchedule::from_steps(M0, &[(0.0, 0.3), (1000.0, 0.8), (2000.0, 0.5)]).unwrap();
    let fig4 =
        EnvironmentSchedule::from_steps(M0, &[(0.0, 0.3), (50.0, 0.8), (200.0, 0.5)]).unwrap();
    let mut worst: f64 = 0.0;
    let mut overshoot = [0.0; 2];
    for (k, family) in [GFamily::Linear, GFamily::Power].into_iter().enumerate() {
        for h in [2.0, 8.0, 16.0] {
            let model = DelayModel {
                family,
                epsilon: 1.0,
                h,
                p0: 1.0,
            };
            let s = integrate_delay_ode(&long, &model, 3000.0, 0.05).unwrap();
            for (t, mu) in [(1000.0, 0.3), (2000.0, 0.8), (3000.0, 0.5)] {
                worst = worst.max((s.interpolate(t).unwrap() - mu).abs());
            }
            if h == 16.0 {
                let s = integrate_delay_ode(&fig4, &model, 350.0, 0.05).unwrap();
                overshoot[k] = max_overshoot(&s, 50.0, 200.0, 0.8, true);
            }
        }
    }
    (
        worst <= 1e-3 && overshoot[0] > overshoot[1],
        format!(
            "max plateau error {worst:.2e}; overshoot at h=16 linear {:.4} > power {:.4}",
            overshoot[0], overshoot[1]
        ),
    )
}

fn criterion_7() -> Outcome {
    let sched =
        EnvironmentSchedule::from_steps(M0, &[(0.0, 0.3), (50.0, 0.8), (200.0, 0.5)]).unwrap();
    let dt = 0.1;
    let mut worst_excess = f64::NEG_INFINITY;
    for family in [GFamily::Linear, GFamily::Power] {
        for h in [2.0, 8.0, 16.0] {
            let delay = DelayModel {
                family,
                epsilon: 1.0,
                h,
                p0: 1.0,
            };
            let pm = PhenomenologicalModel {
                delay,
                n_agents: N,
                dt,
            };
            let e = phenomenological_ensemble(&sched, &pm, 7007, 200, 300.0).unwrap();
            let ode = integrate_delay_ode(&sched, &delay, 300.0, dt.min(delay.max_dt())).unwrap();
            for (t, v) in e.mean_series().window(0.0, 300.0) {
                let p = ode.interpolate(t).unwrap();
                let budget = 3.0 * (p * (1.0 - p) / (20.0 * 200.0)).sqrt() + 0.01;
                worst_excess = worst_excess.max((v - p).abs() - budget);
            }
        }
    }
    (
        worst_excess <= 0.0,
        format!("largest gap minus budget {worst_excess:.4} (dt={dt}, both families, h in 2/8/16)"),
    )
}

fn criterion_8() -> Outcome {
    let names = [
        "fig2_h50",
        "fig2_h50_analytic",
        "fig3_mu50",
        "fig4_power_h8",
        "fig4_linear_h16_ode",
        "master_h50",
    ];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut files = 0;
    for name in names {
        let cfg = ExperimentConfig::load(&configs_dir().join(format!("{name}.toml"))).unwrap();
        let first = run_experiment(&cfg, a.path()).unwrap();
        let second = run_experiment(&cfg, b.path()).unwrap();
        // A third run from the manifest's resolved config.
        let again = ExperimentConfig::load(&first.manifest).unwrap();
        let c = tempfile::tempdir().unwrap();
        let third = run_experiment(&again, c.path()).unwrap();
        for file in ["series.csv", "runs.csv", "histogram.csv"] {
            let pa = first.dir.join(file);
            if !pa.exists() {
                continue;
            }
            let x = std::fs::read(&pa).unwrap();
            if x != std::fs::read(second.dir.join(file)).unwrap()
                || x != std::fs::read(third.dir.join(file)).unwrap()
            {
                return (false, format!("{name}/{file} differs between runs"));
            }
            files += 1;
        }
    }
    (
        true,
        format!("{files} CSV files byte-identical across repeat and manifest re-runs"),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!(
            "[{}] criterion {id}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

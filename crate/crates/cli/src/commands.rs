use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellsurrogate::cycles::{
    build_dataset, constant_current_dataset, random_cycle, read_dataset, write_dataset, DriveCycle, GenConfig, Split,
};
use cellsurrogate::electrochem::{simulate_cycle, ParameterSet};
use cellsurrogate::eval::{bench_compare, kstep_eval, one_step_eval, rollout, EvalReport, Rollout, RolloutStart};
use cellsurrogate::plot::{line_plot, Series};
use cellsurrogate::soh::{estimate_gamma, SohEstimate};
use cellsurrogate::surrogate::{
    load_checkpoint, save_checkpoint, train_samples_with, Normalization, Surrogate, TrainConfig,
};
use serde::Serialize;

use crate::run::Run;
use crate::{BenchArgs, EvalArgs, GenArgs, PlotArgs, RolloutArgs, SohArgs, TrainArgs};

/// A problem with the invocation itself (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn load_params(path: Option<&Path>) -> Result<ParameterSet> {
    match path {
        None => Ok(ParameterSet::bundled()),
        Some(p) => {
            require_file(p, "parameter file")?;
            ParameterSet::load(p).with_context(|| format!("loading {}", p.display()))
        }
    }
}

fn load_model(path: &Path) -> Result<Surrogate> {
    let weights = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Surrogate::new(weights)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

pub fn gen(args: &GenArgs, threads: usize) -> Result<()> {
    let params = load_params(args.params.as_deref())?;
    let (mut n_train, mut n_test) = args.preset.counts();
    if let Some(n) = args.cycles {
        if n < 2 {
            return Err(usage("--cycles needs at least 2 (one train, one test)"));
        }
        n_test = (n / 6).max(1);
        n_train = n - n_test;
    }
    n_train = args.train.unwrap_or(n_train);
    n_test = args.test.unwrap_or(n_test);
    if args.dry_run {
        match &args.constant_current {
            Some(crates) => println!(
                "would simulate {} constant-current discharges x{}",
                crates.len(),
                args.repeats
            ),
            None => println!(
                "would simulate {} cycles ({n_train} train / {n_test} test, {} windows, seed {})",
                n_train + n_test,
                args.windows,
                args.seed
            ),
        }
        return Ok(());
    }
    let run = Run::start(&args.out, "gen", args, threads)?;
    let result = (|| {
        let config = GenConfig {
            n_windows: args.windows,
            threads,
        };
        let dataset = match &args.constant_current {
            Some(crates) => {
                println!(
                    "simulating {} constant-current discharges x{}",
                    crates.len(),
                    args.repeats
                );
                constant_current_dataset(&params, crates, args.repeats, config)?
            }
            None => {
                println!(
                    "simulating {} cycles ({n_train} train / {n_test} test, {} windows, seed {})",
                    n_train + n_test,
                    args.windows,
                    args.seed
                );
                build_dataset(&params, n_train, n_test, args.seed, config)?
            }
        };
        write_dataset(&dataset, &args.out)?;
        let m = &dataset.manifest;
        println!(
            "wrote {}: {} train / {} test samples, {} failure samples ({:.2}%), {} skipped cycles",
            args.out.display(),
            m.n_train_samples,
            m.n_test_samples,
            m.n_failure_samples,
            100.0 * dataset.failure_fraction(),
            m.skipped_cycles
        );
        if m.skipped_cycles > 0 {
            bail!("{} cycles were skipped after simulator errors", m.skipped_cycles);
        }
        Ok(())
    })();
    run.finish(result)
}

pub fn train(args: &TrainArgs, threads: usize) -> Result<()> {
    require_dir(&args.data, "dataset")?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        lr_decay: args.lr_decay,
        voltage_weight: args.voltage_weight,
        failure_weight: args.failure_weight,
        seed: args.seed,
        architecture: cellsurrogate::surrogate::Architecture {
            residual: args.residual,
            ..Default::default()
        },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let run = Run::start(&args.out, "train", args, threads)?;
    let result = (|| {
        let dataset = read_dataset(&args.data)?;
        let samples = dataset.samples_in(Split::Train);
        println!("training on {} samples for {} epochs", samples.len(), config.epochs);
        let norm = Normalization::new(dataset.manifest.v_cut, dataset.manifest.v_full);
        let (weights, history) = train_samples_with(&samples, norm, &config, |e| {
            println!(
                "epoch {}: lr {:.2e}, loss {:.6e} (conc {:.3e}, voltage {:.3e}, failure {:.3e})",
                e.epoch + 1,
                e.learning_rate,
                e.total,
                e.loss.concentration,
                e.loss.voltage,
                e.loss.failure
            );
        })?;
        save_checkpoint(&weights, args.out.join("model.ckpt"))?;
        write_json(&args.out.join("train_config.json"), &config)?;
        write_json(&args.out.join("history.json"), &history)?;
        let mut csv = String::from("epoch,total,concentration,voltage,failure\n");
        for e in &history.epochs {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch + 1,
                e.total,
                e.loss.concentration,
                e.loss.voltage,
                e.loss.failure
            ));
        }
        write(&args.out.join("loss.csv"), csv)?;
        let points = history.epochs.iter().map(|e| ((e.epoch + 1) as f64, e.total)).collect();
        let svg = line_plot(
            "Training loss",
            "epoch",
            "mean loss",
            &[Series { name: "total", points }],
        );
        write(&args.out.join("loss.svg"), svg)?;
        println!("wrote {}", args.out.join("model.ckpt").display());
        Ok(())
    })();
    run.finish(result)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a Path,
    data: &'a Path,
    split: Split,
    one_step: EvalReport,
    k_step: EvalReport,
}

fn trace_plot(title: &str, v_true: &[f64], v_pred: &[f64]) -> String {
    let pts = |v: &[f64]| v.iter().enumerate().map(|(k, &v)| (100.0 * k as f64, v)).collect();
    line_plot(
        title,
        "time (s)",
        "voltage (V)",
        &[
            Series {
                name: "simulator",
                points: pts(v_true),
            },
            Series {
                name: "surrogate",
                points: pts(v_pred),
            },
        ],
    )
}

fn print_report(r: &EvalReport) {
    println!(
        "{:?}: {} cycles, {} intervals; voltage l1 {:.3e} V (l2 {:.3e}, linf {:.3e}); c_n l1 {:.3e}; c_p l1 {:.3e}",
        r.kind,
        r.n_cycles,
        r.n_intervals,
        r.voltage.pooled.l1,
        r.voltage.pooled.l2,
        r.voltage.pooled.linf,
        r.c_n.pooled.l1,
        r.c_p.pooled.l1
    );
    for row in &r.failure {
        println!(
            "  threshold {:>4.0}%: FN {:>6.2}%  FP {:>6.2}%",
            100.0 * row.threshold,
            row.fn_percent,
            row.fp_percent
        );
    }
}

pub fn eval(args: &EvalArgs, threads: usize) -> Result<()> {
    require_file(&args.model, "checkpoint")?;
    require_dir(&args.data, "dataset")?;
    let out = args
        .out
        .clone()
        .or_else(|| args.report.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let run = Run::start(&out, "eval", args, threads)?;
    let result = (|| {
        let model = load_model(&args.model)?;
        let dataset = read_dataset(&args.data)?;
        let split = if args.train_split { Split::Train } else { Split::Test };
        let one_step = one_step_eval(&model, &dataset, split)?;
        let (k_step, traces) = kstep_eval(&model, &dataset, split, &args.thresholds)?;
        one_step.check()?;
        k_step.check()?;
        print_report(&one_step);
        print_report(&k_step);
        for t in traces.iter().take(args.traces) {
            write(&out.join(format!("trace_{}.csv", t.cycle_id)), t.to_csv())?;
            let title = format!("Cycle {}: K-step voltage", t.cycle_id);
            write(
                &out.join(format!("trace_{}.svg", t.cycle_id)),
                trace_plot(&title, &t.v_true, &t.v_pred),
            )?;
        }
        let report = EvalOutput {
            model: &args.model,
            data: &args.data,
            split,
            one_step,
            k_step,
        };
        write_json(&args.report, &report)?;
        println!("wrote {}", args.report.display());
        Ok(())
    })();
    run.finish(result)
}

fn cycle_for(seed: u64, windows: usize, currents: Option<&Vec<f64>>) -> Result<DriveCycle> {
    match currents {
        Some(c) => DriveCycle::new(c.clone(), seed).map_err(|e| usage(e.to_string())),
        None => random_cycle(seed, windows).map_err(|e| usage(e.to_string())),
    }
}

#[derive(Serialize)]
struct RolloutOutput<'a> {
    cycle: &'a DriveCycle,
    true_voltages: Vec<f64>,
    true_failure_window: Option<usize>,
    predicted: &'a Rollout,
}

pub fn rollout_cmd(args: &RolloutArgs, threads: usize) -> Result<()> {
    require_file(&args.model, "checkpoint")?;
    let params = load_params(args.params.as_deref())?;
    let cycle = cycle_for(args.seed, args.windows, args.currents.as_ref())?;
    let run = Run::start(&args.out, "rollout", args, threads)?;
    let result = (|| {
        let model = load_model(&args.model)?;
        let truth = simulate_cycle(&params, &cycle)?;
        let predicted = rollout(&model, &cycle, &RolloutStart::from_state(&truth.trajectory[0]))?;
        let true_voltages = truth.voltages();
        let mut v_pred = vec![truth.trajectory[0].voltage];
        v_pred.extend(&predicted.voltages);
        let mut csv = String::from("t,V_true,V_pred\n");
        for k in 0..true_voltages.len().max(v_pred.len()) {
            let cell = |v: Option<&f64>| v.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{}\n",
                100 * k,
                cell(true_voltages.get(k)),
                cell(v_pred.get(k))
            ));
        }
        write(&args.out.join("rollout.csv"), csv)?;
        write(
            &args.out.join("rollout.svg"),
            trace_plot("K-step voltage prediction", &true_voltages, &v_pred),
        )?;
        println!(
            "simulator: {} windows, failure window {:?}; surrogate: {} windows, failure window {:?}",
            truth.windows(),
            truth.failure_window,
            predicted.len(),
            predicted.failure_window
        );
        write_json(
            &args.out.join("rollout.json"),
            &RolloutOutput {
                cycle: &cycle,
                true_voltages,
                true_failure_window: truth.failure_window,
                predicted: &predicted,
            },
        )
    })();
    run.finish(result)
}

#[derive(Serialize)]
struct SohRow {
    gamma: f64,
    finals: Vec<f64>,
    max_deviation: f64,
    trials: Vec<SohEstimate>,
}

pub fn soh(args: &SohArgs, threads: usize) -> Result<()> {
    require_file(&args.model, "checkpoint")?;
    let params = load_params(args.params.as_deref())?;
    if args.trials == 0 || args.cycles == 0 {
        return Err(usage("--trials and --cycles must be at least 1"));
    }
    let run = Run::start(&args.out, "soh", args, threads)?;
    let result = (|| {
        let model = load_model(&args.model)?;
        let traces = args.out.join("objective");
        fs::create_dir_all(&traces)?;
        let mut rows = Vec::new();
        let mut table = String::from("gamma");
        for t in 0..args.trials {
            table.push_str(&format!(",trial_{}", t + 1));
        }
        table.push('\n');
        for &gamma in &args.gamma {
            let mut trials = Vec::new();
            for t in 0..args.trials {
                let seed = args.seed + (t * args.cycles) as u64;
                let est = estimate_gamma(&model, &params, args.cycles, args.windows, gamma, seed)?;
                for (c, cycle) in est.cycles.iter().enumerate() {
                    write(
                        &traces.join(format!("gamma_{gamma}_trial_{}_cycle_{}.csv", t + 1, c + 1)),
                        cycle.trace_csv(),
                    )?;
                }
                trials.push(est);
            }
            let finals: Vec<f64> = trials.iter().map(|e| e.final_estimate).collect();
            let max_deviation = finals.iter().fold(0.0f64, |m, f| m.max((f - gamma).abs()));
            println!(
                "gamma {gamma:.3}: {}  (max deviation {max_deviation:.4})",
                finals.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(" ")
            );
            table.push_str(&format!("{gamma}"));
            for f in &finals {
                table.push_str(&format!(",{f}"));
            }
            table.push('\n');
            let names: Vec<String> = (1..=trials[0].cycles.len()).map(|c| format!("cycle {c}")).collect();
            let series: Vec<Series> = trials[0]
                .cycles
                .iter()
                .zip(&names)
                .map(|(cycle, name)| Series {
                    name,
                    points: cycle.trace.clone(),
                })
                .collect();
            let title = format!("SOH objective, gamma = {gamma}");
            write(
                &args.out.join(format!("objective_gamma_{gamma}.svg")),
                line_plot(&title, "gamma", "f", &series),
            )?;
            rows.push(SohRow {
                gamma,
                finals,
                max_deviation,
                trials,
            });
        }
        write(&args.out.join("soh_table.csv"), table)?;
        write_json(&args.out.join("soh.json"), &rows)
    })();
    run.finish(result)
}

pub fn bench(args: &BenchArgs, threads: usize) -> Result<()> {
    require_file(&args.model, "checkpoint")?;
    let params = load_params(args.params.as_deref())?;
    let cycle = cycle_for(args.seed, args.windows, None)?;
    let run = Run::start(&args.out, "bench", args, threads)?;
    let result = (|| {
        let model = load_model(&args.model)?;
        let report = bench_compare(&model, &params, &cycle, args.repetitions)?;
        println!(
            "{} windows: simulator {:.4} s, surrogate {:.5} s, ratio {:.1}x",
            report.windows, report.simulator_seconds, report.rollout_seconds, report.ratio
        );
        write_json(&args.out.join("bench.json"), &report)
    })();
    run.finish(result)
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    require_file(&args.csv, "csv file")?;
    let text = fs::read_to_string(&args.csv)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty csv")?.split(',').collect();
    if header.len() < 2 {
        bail!("csv needs an x column and at least one series");
    }
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); header.len() - 1];
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let x: f64 = cells[0]
            .trim()
            .parse()
            .with_context(|| format!("row {}: bad x value", i + 2))?;
        for (s, cell) in cells.iter().skip(1).enumerate().take(series.len()) {
            if let Ok(y) = cell.trim().parse::<f64>() {
                series[s].push((x, y));
            }
        }
    }
    let series: Vec<Series> = header[1..]
        .iter()
        .zip(series)
        .map(|(name, points)| Series { name, points })
        .collect();
    write(&args.out, line_plot(&args.title, header[0], "", &series))
}

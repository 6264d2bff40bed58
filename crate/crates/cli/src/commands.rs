use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use tpgmm::augment::{
    derive_seed, em_config_for, run_algorithm1, AugmentConfig, Method,
};
use tpgmm::dataset::{
    generate_2d_task, load_dataset, load_model, load_situation, save_dataset, save_model,
    save_run_log, Dataset,
};
use tpgmm::frames::limits_from_situations;
use tpgmm::metrics::{CostMode, DTW_VARIANT};
use tpgmm::tpgmm::{fit, Mode, TpGmm};
use tpgmm::{Error, Result};

use crate::{AugmentArgs, EvalArgs, Gen2dArgs, ReproduceArgs, TrainArgs};

fn check_mode(dataset: &Dataset, expected: Option<Mode>) -> Result<()> {
    if let Some(mode) = expected {
        if dataset.mode() != mode {
            return Err(Error::argument(format!(
                "dataset is {}, but --mode {} was given",
                dataset.mode(),
                mode
            )));
        }
    }
    Ok(())
}

pub fn train(args: &TrainArgs, _out: &mut impl Write) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    check_mode(&dataset, args.mode.map(Into::into))?;
    let cfg = em_config_for(dataset.mode(), args.seed);
    let model = fit(dataset.demos(), args.components, &cfg)?;
    save_model(&model, &args.out)
}

pub fn augment(args: &AugmentArgs, out: &mut impl Write) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let validation = args.validation.as_ref().map(load_dataset).transpose()?;
    if let Some(v) = &validation {
        if v.mode() != dataset.mode() {
            return Err(Error::argument(format!(
                "validation dataset is {}, training dataset is {}",
                v.mode(),
                dataset.mode()
            )));
        }
    }

    let method: Method = args.method.into();
    let limits = if method == Method::Noise {
        None
    } else {
        Some(limits_from_situations(&dataset.situations(), args.expansion)?)
    };
    let cfg = AugmentConfig {
        method,
        max_demos: args.max_demos,
        max_iters: args.max_iters,
        snr_db: args.snr_db,
        selection: args.selection.into(),
        components: args.components,
        seed: args.seed,
        limits,
    };
    let outcome = run_algorithm1(
        dataset.demos(),
        validation.as_ref().map(|v| v.demos()),
        &cfg,
    )?;

    save_model(&outcome.model, &args.out)?;
    if let Some(log_path) = &args.log {
        save_run_log(&outcome.log, log_path)?;
    }
    let log = &outcome.log;
    let accepted = log.iterations.iter().filter(|r| r.accepted).count();
    writeln!(out, "initial_cost\t{}", log.initial_cost)?;
    writeln!(out, "final_cost\t{}", log.final_cost)?;
    writeln!(out, "accepted\t{accepted}")?;
    writeln!(out, "discarded\t{}", log.discarded_count)?;
    writeln!(out, "demos\t{}", outcome.demos.len())?;
    Ok(())
}

/// Coordinate column names for up to three spatial dimensions.
pub fn axis_names(p: usize) -> &'static [&'static str] {
    &["x", "y", "z"][..p]
}

fn write_trajectory_csv(
    path: &Path,
    times: Option<&[f64]>,
    traj: &DMatrix<f64>,
) -> Result<()> {
    let mut text = String::new();
    if times.is_some() {
        text.push_str("time,");
    }
    text.push_str(&axis_names(traj.ncols()).join(","));
    text.push('\n');
    for r in 0..traj.nrows() {
        if let Some(times) = times {
            text.push_str(&format!("{},", times[r]));
        }
        let row: Vec<String> = traj.row(r).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn reproduce(args: &ReproduceArgs, _out: &mut impl Write) -> Result<()> {
    let model: TpGmm = load_model(&args.model)?;
    let situation = load_situation(&args.situation)?;
    match model.mode() {
        Mode::TimeBased => {
            if args.start.is_some() || args.steps.is_some() {
                return Err(Error::argument(
                    "--start/--steps apply to trajectory-based models; this one is time-based",
                ));
            }
            let times: Vec<f64> = match (&args.times, args.samples) {
                (Some(times), None) => times.clone(),
                (None, Some(n)) => {
                    if n < 2 {
                        return Err(Error::argument("--samples must be at least 2"));
                    }
                    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
                }
                _ => {
                    return Err(Error::argument(
                        "time-based models need exactly one of --times or --samples",
                    ))
                }
            };
            let traj = model.reproduce_time_based(&situation, &times)?;
            write_trajectory_csv(&args.out, Some(&times), &traj)
        }
        Mode::TrajectoryBased => {
            if args.times.is_some() || args.samples.is_some() {
                return Err(Error::argument(
                    "--times/--samples apply to time-based models; this one is trajectory-based",
                ));
            }
            let (start, steps) = match (&args.start, args.steps) {
                (Some(start), Some(steps)) => (start, steps),
                _ => {
                    return Err(Error::argument(
                        "trajectory-based models need both --start and --steps",
                    ))
                }
            };
            let path = model.reproduce_trajectory_based(
                &situation,
                &DVector::from_column_slice(start),
                steps,
            )?;
            write_trajectory_csv(&args.out, None, &path)
        }
    }
}

pub fn eval(args: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let cost_mode: CostMode = args.cost.into();
    let report = tpgmm::augment::reproduction_cost(&model, dataset.demos(), cost_mode)?;
    writeln!(out, "cost_mode\t{}", report.mode)?;
    if cost_mode == CostMode::Dtw {
        writeln!(out, "variant\t{DTW_VARIANT}")?;
    }
    for (i, cost) in report.per_demo.iter().enumerate() {
        writeln!(out, "demo_{i}\t{cost}")?;
    }
    writeln!(out, "mean\t{}", report.mean)?;
    Ok(())
}

pub fn gen2d(args: &Gen2dArgs, _out: &mut impl Write) -> Result<()> {
    let dataset = generate_2d_task(args.situations, args.samples, args.seed)?;
    save_dataset(&dataset, &args.out)
}

/// Shared by `simulate`: the seed handed to each independent run.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, run as u64)
}

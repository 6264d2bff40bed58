//! Batch protocol behind `tpgmm simulate`: R independent seeded experiments
//! per method/selection combination on generated 2D tasks, aggregated into a
//! cost table, per-trajectory CSV, and an SVG plot.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use tpgmm::augment::{
    derive_seed, em_config_for, reproduction_cost, run_algorithm1, AugmentConfig, Method,
    Selection,
};
use tpgmm::dataset::generate_2d_task;
use tpgmm::frames::limits_from_situations;
use tpgmm::metrics::CostMode;
use tpgmm::tpgmm::{fit, Demonstration, Mode, TpGmm};
use tpgmm::{Error, Result};

use crate::commands::{axis_names, run_seed};
use crate::svg;
use crate::SimulateArgs;

struct ComboResult {
    final_train: f64,
    final_val: f64,
}

struct RunResult {
    initial_train: f64,
    initial_val: f64,
    per_combo: Vec<ComboResult>,
}

/// Trajectories of the first run, kept for the CSV and the plot.
struct RunDetail {
    train: Vec<Demonstration>,
    validation: Vec<Demonstration>,
    initial_repros: Vec<DMatrix<f64>>,
    improved_repros: Vec<Vec<DMatrix<f64>>>,
}

fn reproduce_all(model: &TpGmm, demos: &[Demonstration]) -> Result<Vec<DMatrix<f64>>> {
    demos.iter().map(|d| model.reproduce_like(d)).collect()
}

fn one_run(
    args: &SimulateArgs,
    combos: &[(Method, Selection)],
    run: usize,
    want_detail: bool,
) -> Result<(RunResult, Option<RunDetail>)> {
    let seed = run_seed(args.seed, run);
    let n_total = args.train_situations + args.validation_situations;
    let dataset = generate_2d_task(n_total, args.samples, derive_seed(seed, 11))?;
    let demos = dataset.into_demos();
    let train = &demos[..args.train_situations];
    let validation = &demos[args.train_situations..];

    // Identical to the initial model inside run_algorithm1 (same data, same
    // seed schedule), so the table's "initial" row is every combo's baseline.
    let initial = fit(
        train,
        args.components,
        &em_config_for(Mode::TimeBased, derive_seed(seed, 0)),
    )?;
    let initial_train = reproduction_cost(&initial, train, CostMode::Rms)?.mean;
    let initial_val = reproduction_cost(&initial, validation, CostMode::Rms)?.mean;

    let train_situations: Vec<_> = train.iter().map(|d| d.situation().clone()).collect();
    let limits = limits_from_situations(&train_situations, args.expansion)?;

    let mut per_combo = Vec::with_capacity(combos.len());
    let mut improved_repros = Vec::new();
    for &(method, selection) in combos {
        let cfg = AugmentConfig {
            method,
            max_demos: args.max_demos,
            max_iters: args.max_iters,
            snr_db: args.snr_db,
            selection,
            components: args.components,
            seed,
            limits: (method != Method::Noise).then(|| limits.clone()),
        };
        let outcome = run_algorithm1(train, Some(validation), &cfg)?;
        per_combo.push(ComboResult {
            final_train: reproduction_cost(&outcome.model, train, CostMode::Rms)?.mean,
            final_val: reproduction_cost(&outcome.model, validation, CostMode::Rms)?.mean,
        });
        if want_detail {
            let mut repros = reproduce_all(&outcome.model, train)?;
            repros.extend(reproduce_all(&outcome.model, validation)?);
            improved_repros.push(repros);
        }
    }

    let detail = if want_detail {
        let mut initial_repros = reproduce_all(&initial, train)?;
        initial_repros.extend(reproduce_all(&initial, validation)?);
        Some(RunDetail {
            train: train.to_vec(),
            validation: validation.to_vec(),
            initial_repros,
            improved_repros,
        })
    } else {
        None
    };
    Ok((RunResult { initial_train, initial_val, per_combo }, detail))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn cost_table(
    combos: &[(Method, Selection)],
    results: &[RunResult],
) -> String {
    let initial_train = mean(results.iter().map(|r| r.initial_train));
    let initial_val = mean(results.iter().map(|r| r.initial_val));
    let mut table = String::from(
        "method,selection,training_cost,training_pct,validation_cost,validation_pct\n",
    );
    table.push_str(&format!(
        "initial,-,{initial_train:.6},100.0,{initial_val:.6},100.0\n"
    ));
    for (i, (method, selection)) in combos.iter().enumerate() {
        let train = mean(results.iter().map(|r| r.per_combo[i].final_train));
        let val = mean(results.iter().map(|r| r.per_combo[i].final_val));
        table.push_str(&format!(
            "{method},{selection},{train:.6},{:.1},{val:.6},{:.1}\n",
            100.0 * train / initial_train,
            100.0 * val / initial_val,
        ));
    }
    table
}

fn runs_csv(combos: &[(Method, Selection)], results: &[RunResult]) -> String {
    let mut csv = String::from(
        "method,selection,run,initial_train,final_train,initial_val,final_val\n",
    );
    for (i, (method, selection)) in combos.iter().enumerate() {
        for (run, r) in results.iter().enumerate() {
            csv.push_str(&format!(
                "{method},{selection},{run},{},{},{},{}\n",
                r.initial_train, r.per_combo[i].final_train, r.initial_val,
                r.per_combo[i].final_val,
            ));
        }
    }
    csv
}

fn push_curve_rows(
    csv: &mut String,
    combo: (&str, &str),
    set: &str,
    situation: usize,
    curve: &str,
    times: &DMatrix<f64>,
    traj: &DMatrix<f64>,
) {
    let (method, selection) = combo;
    for r in 0..traj.nrows() {
        let coords: Vec<String> = traj.row(r).iter().map(|v| format!("{v}")).collect();
        csv.push_str(&format!(
            "{method},{selection},{set},{situation},{curve},{r},{},{}\n",
            times[(r, 0)],
            coords.join(","),
        ));
    }
}

fn trajectories_csv(combos: &[(Method, Selection)], detail: &RunDetail) -> String {
    let p = detail.train[0].output_dim();
    let mut csv = format!(
        "method,selection,set,situation,curve,sample,time,{}\n",
        axis_names(p).join(",")
    );
    let all: Vec<(&str, &Demonstration)> = detail
        .train
        .iter()
        .map(|d| ("train", d))
        .chain(detail.validation.iter().map(|d| ("validation", d)))
        .collect();
    for (i, (set, demo)) in all.iter().enumerate() {
        push_curve_rows(&mut csv, ("-", "-"), set, i, "demo", demo.inputs(), demo.outputs());
        push_curve_rows(
            &mut csv,
            ("-", "-"),
            set,
            i,
            "initial",
            demo.inputs(),
            &detail.initial_repros[i],
        );
    }
    for (c, (method, selection)) in combos.iter().enumerate() {
        for (i, (set, demo)) in all.iter().enumerate() {
            push_curve_rows(
                &mut csv,
                (method.as_str(), selection.as_str()),
                set,
                i,
                "improved",
                demo.inputs(),
                &detail.improved_repros[c][i],
            );
        }
    }
    csv
}

fn plot_svg(first_combo: (Method, Selection), detail: &RunDetail) -> String {
    let mut curves = Vec::new();
    for (i, demo) in detail.train.iter().enumerate() {
        curves.push(svg::Curve {
            points: svg::matrix_points(demo.outputs()),
            color: "#1f77b4",
            width: 1.6,
            dashed: false,
            label: if i == 0 { Some("training demo") } else { None },
        });
    }
    for (i, demo) in detail.validation.iter().enumerate() {
        curves.push(svg::Curve {
            points: svg::matrix_points(demo.outputs()),
            color: "#1f77b4",
            width: 1.6,
            dashed: true,
            label: if i == 0 { Some("validation demo") } else { None },
        });
    }
    for (i, repro) in detail.initial_repros.iter().enumerate() {
        curves.push(svg::Curve {
            points: svg::matrix_points(repro),
            color: "#9e9e9e",
            width: 1.2,
            dashed: false,
            label: if i == 0 { Some("initial model") } else { None },
        });
    }
    for (i, repro) in detail.improved_repros[0].iter().enumerate() {
        curves.push(svg::Curve {
            points: svg::matrix_points(repro),
            color: "#ff7f0e",
            width: 1.2,
            dashed: false,
            label: if i == 0 { Some("improved model") } else { None },
        });
    }

    let mut markers = Vec::new();
    for demo in detail.train.iter().chain(&detail.validation) {
        for frame in demo.situation().frames() {
            markers.push(svg::frame_glyph(frame));
        }
    }

    let title = format!(
        "2D task, run 0: initial vs. improved ({} / {})",
        first_combo.0, first_combo.1
    );
    svg::render(&title, &curves, &markers)
}

pub fn simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::argument("--runs must be at least 1"));
    }
    if args.train_situations < 2 || args.validation_situations == 0 {
        return Err(Error::argument(
            "need at least 2 training and 1 validation situations",
        ));
    }
    let methods: Vec<Method> = match args.method {
        Some(m) => vec![m.into()],
        None => vec![Method::Noise, Method::Rf, Method::RfNoise],
    };
    let selections: Vec<Selection> = match args.selection {
        Some(s) => vec![s.into()],
        None => vec![Selection::Original, Selection::Generalization],
    };
    let combos: Vec<(Method, Selection)> = selections
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (m, s)))
        .collect();

    // independently seeded runs; collected in run order so aggregation is
    // identical however they are scheduled
    let outcomes: Vec<(RunResult, Option<RunDetail>)> = (0..args.runs)
        .into_par_iter()
        .map(|run| one_run(args, &combos, run, run == 0))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(outcomes.len());
    let mut detail = None;
    for (result, d) in outcomes {
        results.push(result);
        detail = detail.or(d);
    }
    let detail = detail.expect("run 0 always collects detail");

    std::fs::create_dir_all(&args.out)?;
    let table = cost_table(&combos, &results);
    write_file(&args.out.join("cost_table.csv"), &table)?;
    write_file(&args.out.join("runs.csv"), &runs_csv(&combos, &results))?;
    write_file(
        &args.out.join("trajectories.csv"),
        &trajectories_csv(&combos, &detail),
    )?;
    write_file(&args.out.join("plot.svg"), &plot_svg(combos[0], &detail))?;

    out.write_all(table.as_bytes())?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

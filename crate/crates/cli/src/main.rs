//! Command-line front end: scenario simulation, missingness calibration,
//! one-off weight estimation, balance diagnostics, aggregation of
//! replication files, and the runtime benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use countiptw::data_model::{
    load_scenario_config, read_dataset_csv, MethodId, MissingnessKind,
};
use countiptw::diagnostics::{balance_report, BALANCE_CSV_HEADER};
use countiptw::error::Error;
use countiptw::estimation::diagnostics_for;
use countiptw::harness::{aggregate, bench_runtimes, calibrate_plan, run_scenario, write_perf_csv};
use countiptw::weights::{estimate_weights, winsorise, WeightVector};

#[derive(Parser)]
#[command(
    name = "countiptw",
    about = "Stabilised IPTW for count exposures: simulation pipeline and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulation scenario from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (results are identical for any count).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory for replication/summary CSVs.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Calibrate the missingness plan for a config and write it as text.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate weights for one dataset CSV with one method.
    Weights {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
        /// Cap weights at this percentile of their own distribution.
        #[arg(long)]
        winsorize: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Balance diagnostics for a dataset and a weights CSV.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge replication CSVs into one performance summary CSV.
    Aggregate {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise geometric-mean runtime ratios of the weighting methods.
    Bench {
        #[arg(long, default_value_t = 20)]
        datasets: usize,
        #[arg(long, default_value_t = 5000)]
        n_obs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> countiptw::Result<()> {
    match cli.command {
        Command::Simulate { config, workers, out } => {
            let cfg = load_scenario_config(&config)?;
            let run = run_scenario(&cfg, workers, Some(&out))?;
            let failures: usize = run
                .records
                .iter()
                .filter(|r| r.outcome.is_err())
                .count();
            println!(
                "scenario {} complete: {} records, {} failures, outputs in {}",
                cfg.scenario_id(),
                run.records.len(),
                failures,
                out.display()
            );
            Ok(())
        }
        Command::Calibrate { config, out } => {
            let cfg = load_scenario_config(&config)?;
            if cfg.missingness == MissingnessKind::None {
                return Err(Error::Config(
                    "config has missingness = none; nothing to calibrate".into(),
                ));
            }
            let plan = calibrate_plan(&cfg)?.expect("plan exists for non-none missingness");
            std::fs::write(&out, plan.to_plan_string())
                .map_err(|e| Error::io(out.display().to_string(), e))?;
            println!(
                "calibrated {} plan for phi* = {} -> {}",
                plan.mechanism,
                plan.phi_target,
                out.display()
            );
            Ok(())
        }
        Command::Weights {
            data,
            method,
            winsorize,
            out,
        } => {
            let ds = read_dataset_csv(&data)?;
            if !ds.is_complete() {
                return Err(Error::Validation(
                    "weight estimation requires a complete dataset".into(),
                ));
            }
            let method: MethodId = method.parse()?;
            let mut wv = estimate_weights(&ds, method)?;
            if let Some(p) = winsorize {
                wv = winsorise(&wv, p)?;
            }
            write_weights_csv(&wv, &out)?;
            println!("{} weights for {} rows -> {}", method, ds.n, out.display());
            Ok(())
        }
        Command::Diagnose { data, weights, out } => {
            let ds = read_dataset_csv(&data)?;
            let wv = read_weights_csv(&weights)?;
            if wv.w.len() != ds.n {
                return Err(Error::Validation(format!(
                    "dataset has {} rows but weights file has {}",
                    ds.n,
                    wv.w.len()
                )));
            }
            let diag = diagnostics_for(&ds, &wv)?;
            let rows = balance_report(&[(wv.method, wv.winsorised_at.is_some(), diag.clone())]);
            let mut csv = String::from(BALANCE_CSV_HEADER);
            csv.push('\n');
            for row in &rows {
                csv.push_str(&row.to_csv_row());
                csv.push('\n');
            }
            std::fs::write(&out, csv).map_err(|e| Error::io(out.display().to_string(), e))?;
            println!("ESS {:.1} of {} rows", diag.ess, ds.n);
            println!(
                "mean |rho_w| {:.5} (per covariate: {})",
                diag.mean_abs_rho,
                diag.rho_w
                    .iter()
                    .map(|r| format!("{r:.5}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "D_w {:.6}  eps_A {:.6}  eps_C {:.6}  dcov_w {:.6}",
                diag.d_w, diag.eps_a, diag.eps_c, diag.dcov_w
            );
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::Aggregate { files, out } => {
            if files.is_empty() {
                return Err(Error::Config("aggregate needs at least one input file".into()));
            }
            let rows = aggregate(&files)?;
            write_perf_csv(&rows, &out)?;
            println!("{} summary rows -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Bench {
            datasets,
            n_obs,
            seed,
            out,
        } => {
            let methods = [
                MethodId::Multinomial,
                MethodId::Cbps,
                MethodId::NpCbps,
                MethodId::Gbm,
                MethodId::Energy,
            ];
            let bench = bench_runtimes(datasets, n_obs, &methods, seed)?;
            std::fs::write(&out, bench.to_csv())
                .map_err(|e| Error::io(out.display().to_string(), e))?;
            for (i, m) in bench.methods.iter().enumerate() {
                println!("{m}: mean {:.4}s per fit", bench.mean_seconds[i]);
            }
            for (d, m, e) in &bench.failures {
                eprintln!("note: {m} failed on dataset {d}: {e}");
            }
            println!("ratio matrix -> {}", out.display());
            Ok(())
        }
    }
}

fn write_weights_csv(wv: &WeightVector, path: &PathBuf) -> countiptw::Result<()> {
    let mut out = String::from("row,weight,numerator,denominator\n");
    for i in 0..wv.w.len() {
        let num = wv
            .numerator
            .as_ref()
            .map(|v| v[i].to_string())
            .unwrap_or_default();
        let den = wv
            .denominator
            .as_ref()
            .map(|v| v[i].to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", i, wv.w[i], num, den));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_weights_csv(path: &PathBuf) -> countiptw::Result<WeightVector> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("row,weight,numerator,denominator") => {}
        _ => {
            return Err(Error::Validation(format!(
                "{}: expected weights CSV header 'row,weight,numerator,denominator'",
                path.display()
            )))
        }
    }
    let mut w = Vec::new();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no + 2,
                column: "<row>".into(),
                message: "expected 4 cells".into(),
            });
        }
        let weight: f64 = cells[1].parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: line_no + 2,
            column: "weight".into(),
            message: format!("malformed weight '{}'", cells[1]),
        })?;
        w.push(weight);
        if !cells[2].is_empty() {
            num.push(cells[2].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: line_no + 2,
                column: "numerator".into(),
                message: "malformed numerator".into(),
            })?);
        }
        if !cells[3].is_empty() {
            den.push(cells[3].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: line_no + 2,
                column: "denominator".into(),
                message: "malformed denominator".into(),
            })?);
        }
    }
    let n = w.len();
    Ok(WeightVector {
        w,
        numerator: if num.len() == n { Some(num) } else { None },
        denominator: if den.len() == n { Some(den) } else { None },
        method: MethodId::Cbps, // not recorded in the file; diagnostics do not depend on it
        winsorised_at: None,
    })
}

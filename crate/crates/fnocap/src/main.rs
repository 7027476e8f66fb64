//! Command-line front door: dataset generation, single-model training,
//! capacity and bound reports, the two correlation sweeps, and
//! re-correlation of saved run files.

use clap::{Parser, Subcommand};
use fnocap::activation::Activation;
use fnocap::bounds::corollary2_posterior;
use fnocap::burgers::BurgersSpec;
use fnocap::dataset::{load_dataset_file, make_dataset, save_dataset_file};
use fnocap::experiments::{
    correlate_capacity, correlate_kmax, kmax_study, pq_sweep, read_runs_csv, write_runs_csv,
    write_table_csv, Scale,
};
use fnocap::fno::{load_model_file, save_model_file, FnoConfig, LayerKind};
use fnocap::grf::GrfSpec;
use fnocap::norms::capacity;
use fnocap::train::{dataset_loss, init_model, train, TrainConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fnocap", version, about = "FNO capacity and generalization-bound toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_exponent(s: &str) -> Result<f64, String> {
    let v: f64 = if s == "inf" {
        f64::INFINITY
    } else {
        s.parse().map_err(|_| format!("bad exponent {s:?}"))?
    };
    if v >= 1.0 {
        Ok(v)
    } else {
        Err(format!("exponent must be >= 1, got {s}"))
    }
}

fn parse_layer(s: &str) -> Result<LayerKind, String> {
    match s {
        "dense" => Ok(LayerKind::Dense),
        "cnn" => Ok(LayerKind::Cnn),
        "spectral" => Ok(LayerKind::SpectralOnly),
        other => Err(format!("unknown layer kind {other:?} (dense|cnn|spectral)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Burgers train/test dataset; writes <out>.train and
    /// <out>.test.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        test: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a dataset file and save it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        kmax: usize,
        /// CNN kernel size; ignored for dense and spectral layers.
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        /// Weight decay coefficient.
        #[arg(long, default_value_t = 0.0)]
        wd: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = parse_layer)]
        layer: LayerKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Print the capacity report (per-layer norms and gamma) as JSON.
    Capacity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_exponent)]
        p: f64,
        #[arg(long, value_parser = parse_exponent)]
        q: f64,
    },
    /// Evaluate the posterior generalization bounds on a dataset;
    /// prints a BoundReport as JSON and exits nonzero on any violation.
    CheckBounds {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_exponent)]
        p: f64,
        #[arg(long, value_parser = parse_exponent)]
        q: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Run a correlation study; writes the run records to <out> and the
    /// correlation table to <out with .table.csv>.
    Sweep {
        #[command(subcommand)]
        study: SweepCommand,
    },
    /// Recompute a correlation table from a saved runs CSV and print it.
    Correlate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        against: String,
    },
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Table-1 study: capacity vs gap over the (p, q) grid.
    Pq {
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        scale: Scale,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tables 2-3 study: k_max dependency for spectral-only models.
    Kmax {
        #[arg(long)]
        depth: usize,
        #[arg(long = "runs-per-k")]
        runs_per_k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn table_path(out: &PathBuf) -> PathBuf {
    let mut p = out.clone();
    p.set_extension("table.csv");
    p
}

fn run() -> Result<bool, Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            n,
            train,
            test,
            seed,
            out,
        } => {
            let (tr, te) = make_dataset(
                &GrfSpec::new(n, seed),
                &BurgersSpec::default(),
                train,
                test,
                seed,
            )?;
            let mut train_path = out.clone().into_os_string();
            train_path.push(".train");
            let mut test_path = out.into_os_string();
            test_path.push(".test");
            save_dataset_file(&tr, train_path.as_ref())?;
            save_dataset_file(&te, test_path.as_ref())?;
            eprintln!(
                "wrote {} ({} samples) and {} ({} samples)",
                train_path.to_string_lossy(),
                tr.m(),
                test_path.to_string_lossy(),
                te.m()
            );
        }
        Command::Train {
            data,
            depth,
            kmax,
            kernel,
            wd,
            seed,
            layer,
            out,
            width,
            epochs,
            lr,
        } => {
            let ds = load_dataset_file(&data)?;
            let config = FnoConfig {
                d: 1,
                grid: vec![ds.n()],
                d_a: 1,
                d_v: width,
                d_u: 1,
                depth,
                k_max: vec![kmax],
                layer_kind: layer,
                kernel: if layer == LayerKind::Cnn {
                    vec![kernel]
                } else {
                    vec![]
                },
                activation: Activation::Gelu,
            };
            let mut model = init_model(config, seed)?;
            let cfg = TrainConfig {
                epochs,
                lr,
                weight_decay: wd,
                seed,
                ..Default::default()
            };
            let history = train(&mut model, &ds, &cfg)?;
            save_model_file(&model, &out)?;
            let final_loss = dataset_loss(&model, &ds)?;
            eprintln!(
                "trained {} epochs: first loss {:.6e}, final loss {:.6e}; saved {}",
                history.len(),
                history.first().copied().unwrap_or(f64::NAN),
                final_loss,
                out.display()
            );
        }
        Command::Capacity { model, p, q } => {
            let model = load_model_file(&model)?;
            let report = capacity(&model, p, q);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::CheckBounds {
            model,
            data,
            p,
            q,
            delta,
        } => {
            let model = load_model_file(&model)?;
            let ds = load_dataset_file(&data)?;
            let report = corollary2_posterior(&model, &ds.inputs, &ds.targets, p, q, delta)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.all_pass() {
                return Ok(false);
            }
        }
        Command::Sweep { study } => match study {
            SweepCommand::Pq {
                runs,
                scale,
                seed,
                out,
            } => {
                let (records, table) = pq_sweep(runs, scale, seed)?;
                write_runs_csv(&records, &out)?;
                write_table_csv(&table, &table_path(&out))?;
                eprintln!(
                    "wrote {} runs to {} and table to {}",
                    records.len(),
                    out.display(),
                    table_path(&out).display()
                );
            }
            SweepCommand::Kmax {
                depth,
                runs_per_k,
                seed,
                out,
            } => {
                let k_values: Vec<usize> = (13..=37).step_by(4).collect();
                let (records, table) =
                    kmax_study(&k_values, depth, runs_per_k, Scale::Desk, seed)?;
                write_runs_csv(&records, &out)?;
                write_table_csv(&table, &table_path(&out))?;
                eprintln!(
                    "wrote {} runs to {} and table to {}",
                    records.len(),
                    out.display(),
                    table_path(&out).display()
                );
            }
        },
        Command::Correlate { input, against } => {
            let runs = read_runs_csv(&input)?;
            let table = match against.as_str() {
                "capacity" => correlate_capacity(&runs)?,
                "kmax" => {
                    let depth = runs.first().map(|r| r.depth).unwrap_or(1);
                    correlate_kmax(&runs, depth)?
                }
                other => return Err(format!("unknown target {other:?} (capacity|kmax)").into()),
            };
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let mut header = vec!["q\\p".to_string()];
            for &p in &table.p_values {
                header.push(if p.0.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{}", p.0)
                });
            }
            w.write_record(&header)?;
            for (qi, &q) in table.q_values.iter().enumerate() {
                let mut row = vec![if q.0.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{}", q.0)
                }];
                for c in &table.r[qi] {
                    row.push(match c.value() {
                        Some(r) => format!("{r:.6}"),
                        None => "degenerate".to_string(),
                    });
                }
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

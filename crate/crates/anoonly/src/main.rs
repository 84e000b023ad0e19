//! Experiment CLI.
//!
//! ```text
//! anoonly run      --config cfg.json [--out dir]
//! anoonly sweep    --axis gamma_n --values 0.2,0.5,1.0 --config cfg.json [--out dir]
//! anoonly compare  --a base.json --b variant.json [--out file.json]
//! anoonly gen-data --recipe recipe.json --out dir
//! ```
//!
//! `ANOONLY_WORKERS` caps the number of parallel sweep workers.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use anoonly::data::{generate, DataRecipe};
use anoonly::experiment::{
    aggregate, compare, run_experiment, ExperimentConfig, RunRecord, Sweep, SweepAxis, SweepValue,
};

#[derive(Parser)]
#[command(name = "anoonly", about = "Anomaly-only SSAD experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (sweep included, if any).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config with the sweep axis/values replaced from the command line.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `0.2,0.5,1.0` or `none,ln,bn`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of two experiment configs sharing data seeds.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Write the comparison table as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a dataset pair and export it as CSV plus a recipe sidecar.
    GenData {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> anoonly::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(dir) = out {
        cfg.output_path = Some(dir);
    }
    Ok(cfg)
}

fn print_summary(cfg: &ExperimentConfig, records: &[RunRecord]) {
    let report = aggregate(cfg, records);
    let failed = records.iter().filter(|r| !r.ok()).count();
    let total_ms: u128 = records.iter().map(|r| r.wall_time_ms).sum();
    println!(
        "experiment {} ({}): {} runs, {} failed, {:.1}s",
        report.experiment,
        report.config_hash,
        records.len(),
        failed,
        total_ms as f64 / 1000.0
    );
    println!("{:>14} {:>6} {:>9} {:>9} {:>9}", "value", "n_ok", "aucroc", "pr_anom", "pr_norm");
    for p in &report.points {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>14} {:>6} {:>9} {:>9} {:>9}",
            p.value,
            p.n_ok,
            f(p.mean_aucroc),
            f(p.mean_aucpr_anomaly),
            f(p.mean_aucpr_normal)
        );
    }
    if let Some(dir) = &cfg.output_path {
        println!("outputs written to {}", dir.display());
    }
}

fn real_main() -> anoonly::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(&config, out)?;
            let records = run_experiment(&cfg)?;
            print_summary(&cfg, &records);
        }
        Command::Sweep {
            axis,
            values,
            config,
            out,
        } => {
            let mut cfg = load_config(&config, out)?;
            let axis = SweepAxis::parse(&axis)?;
            let values: Vec<SweepValue> = values
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(SweepValue::parse)
                .collect();
            cfg.sweep = Some(Sweep { axis, values });
            let records = run_experiment(&cfg)?;
            print_summary(&cfg, &records);
        }
        Command::Compare { a, b, out } => {
            let base = load_config(&a, None)?;
            let variant = load_config(&b, None)?;
            let table = compare(&base, &variant)?;
            println!(
                "{:>14} {:>7} {:>10} {:>10} {:>10}",
                "value", "repeat", "baseline", "variant", "delta"
            );
            for row in &table.rows {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:>14} {:>7} {:>10} {:>10} {:>10}",
                    row.value,
                    row.repeat,
                    f(row.baseline_aucroc),
                    f(row.variant_aucroc),
                    f(row.delta_aucroc)
                );
            }
            let s = &table.summary;
            println!(
                "mean delta aucroc {} | +{} / -{} / ={} | sign test p {}",
                s.mean_delta_aucroc
                    .map(|x| format!("{x:.4}"))
                    .unwrap_or_else(|| "-".into()),
                s.positive,
                s.negative,
                s.zero,
                s.sign_test_p
                    .map(|x| format!("{x:.4}"))
                    .unwrap_or_else(|| "-".into()),
            );
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&table)?)?;
                println!("comparison written to {}", path.display());
            }
        }
        Command::GenData { recipe, out } => {
            let text = std::fs::read_to_string(&recipe)?;
            let recipe: DataRecipe = serde_json::from_str(&text)?;
            let (train, test) = generate(&recipe)?;
            std::fs::create_dir_all(&out)?;
            train.write_csv(std::fs::File::create(out.join("train.csv"))?)?;
            test.write_csv(std::fs::File::create(out.join("test.csv"))?)?;
            std::fs::write(
                out.join("recipe.json"),
                serde_json::to_string_pretty(&recipe)?,
            )?;
            println!(
                "wrote {} train rows and {} test rows to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

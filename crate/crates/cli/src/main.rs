//! `stitchlab`: train the Small-ResNet zoo, run stitching sweeps, compute
//! MSE statistics, generate images and plot matrices.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use stitchlab::config::{BudgetProfile, PartialConfig, RunConfig};
use stitchlab::experiments::{
    run_full_sweep, run_image_generation, run_mse_study, zoo_eval, zoo_train, MatrixRegime,
    MseScope, ZooRow,
};
use stitchlab::report::plot_matrix_csv;
use stitchlab::zoo::ArchSpec;
use stitchlab::Result;

#[derive(Parser, Debug)]
#[command(
    name = "stitchlab",
    version,
    about = "Model stitching experiments on Small ResNets"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command. Flags override environment variables,
/// which override the config file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated architectures, e.g. R1111,R2222.
    #[arg(long, global = true, value_delimiter = ',')]
    archs: Option<Vec<ArchSpec>>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<BudgetProfile>,
    /// Comma-separated matrix regimes.
    #[arg(long = "regime", global = true, value_delimiter = ',', value_parser = parse_regime)]
    regimes: Option<Vec<MatrixRegime>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CIFAR-10 binary directory (env: STITCHLAB_DATA_ROOT).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Experiment directory (env: STITCHLAB_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Matrix entries trained concurrently.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train or evaluate zoo networks.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Vanilla-stitch similarity matrices for every ordered pair and regime.
    Sweep,
    /// EV/ES/SV mean-squared-error statistics.
    Stats {
        /// diagonals or all; both when omitted.
        #[arg(long, value_parser = parse_scope)]
        scope: Option<MseScope>,
    },
    /// Stitch intermediate layers into the input and save image pairs.
    Genimg {
        /// Pairs saved per stitch point.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Render a matrix CSV as a heatmap PNG.
    Plot { csv: PathBuf, output: PathBuf },
}

#[derive(Subcommand, Debug)]
enum ZooAction {
    Train,
    Eval {
        /// Evaluate randomly initialized controls instead of checkpoints.
        #[arg(long)]
        control: bool,
    },
}

fn parse_profile(s: &str) -> std::result::Result<BudgetProfile, String> {
    s.parse().map_err(|e: stitchlab::Error| e.to_string())
}

fn parse_regime(s: &str) -> std::result::Result<MatrixRegime, String> {
    s.parse().map_err(|e: stitchlab::Error| e.to_string())
}

fn parse_scope(s: &str) -> std::result::Result<MseScope, String> {
    s.parse().map_err(|e: stitchlab::Error| e.to_string())
}

fn resolve(args: CommonArgs, images_per_point: Option<usize>) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => PartialConfig::from_file(p)?,
        None => PartialConfig::default(),
    };
    let env = PartialConfig::from_env(|k| std::env::var(k).ok());
    let flags = PartialConfig {
        data_root: args.data_root,
        out: args.out,
        profile: args.profile,
        seed: args.seed,
        threads: args.threads,
        archs: args.archs,
        regimes: args.regimes,
        images_per_point,
        ..PartialConfig::default()
    };
    PartialConfig::default()
        .layer(file)
        .layer(env)
        .layer(flags)
        .resolve()
}

fn print_zoo(rows: &[ZooRow]) {
    println!(
        "{:<14} {:<15} {:>9} {:>9}",
        "model", "provenance", "train", "test"
    );
    for r in rows {
        let train = r
            .train_accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        println!(
            "{:<14} {:<15} {:>9} {:>9.4}",
            r.label,
            format!("{:?}", r.provenance),
            train,
            r.test_accuracy
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plot { csv, output } => {
            plot_matrix_csv(&csv, &output)?;
            println!("wrote {}", output.display());
        }
        Command::Zoo { action } => {
            let cfg = resolve(cli.common, None)?;
            match action {
                ZooAction::Train => print_zoo(&zoo_train::<f32>(&cfg)?),
                ZooAction::Eval { control } => print_zoo(&zoo_eval::<f32>(&cfg, control)?),
            }
        }
        Command::Sweep => {
            let cfg = resolve(cli.common, None)?;
            for m in run_full_sweep::<f32>(&cfg)? {
                match m.triangle {
                    Some(t) => println!(
                        "{}: lower {:.4} upper {:.4} gap {:.4} ({} holes) -> {}",
                        m.key,
                        t.lower_mean,
                        t.strict_upper_mean,
                        t.gap,
                        m.holes.len(),
                        m.path.display()
                    ),
                    None => println!("{}: {} holes -> {}", m.key, m.holes.len(), m.path.display()),
                }
            }
        }
        Command::Stats { scope } => {
            let cfg = resolve(cli.common, None)?;
            let scopes =
                scope.map_or_else(|| vec![MseScope::Diagonals, MseScope::All], |s| vec![s]);
            let report = run_mse_study::<f32>(&cfg, &scopes)?;
            for s in scopes {
                if let Some(t) = report.study.table(s) {
                    println!("{s} ({} samples)", t.samples);
                    for (name, v) in [("EV", &t.ev), ("ES", &t.es), ("SV", &t.sv)] {
                        println!(
                            "  {name}: min {:.4e} mean {:.4e} max {:.4e} std {:.4e}",
                            v.min, v.mean, v.max, v.std
                        );
                    }
                }
            }
        }
        Command::Genimg { count } => {
            let cfg = resolve(cli.common, count)?;
            let paths = run_image_generation::<f32>(&cfg)?;
            println!(
                "wrote {} image pairs under {}",
                paths.len(),
                cfg.out.join("images").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "stitchlab",
            "sweep",
            "--archs",
            "R1111,R2222",
            "--regime",
            "trained_trained,random_random",
            "--seed",
            "3",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Sweep));
        assert_eq!(cli.common.archs.unwrap().len(), 2);
        assert_eq!(
            cli.common.regimes.unwrap(),
            vec![MatrixRegime::TrainedTrained, MatrixRegime::RandomRandom]
        );
        assert_eq!(cli.common.seed, Some(3));
    }

    #[test]
    fn rejects_unknown_values() {
        assert!(Cli::try_parse_from(["stitchlab", "sweep", "--profile", "huge"]).is_err());
        assert!(Cli::try_parse_from(["stitchlab", "stats", "--scope", "some"]).is_err());
        assert!(Cli::try_parse_from(["stitchlab", "sweep", "--archs", "R3111"]).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "profile = \"smoke\"\nseed = 5\nthreads = 2\n").unwrap();
        let cli = Cli::try_parse_from([
            "stitchlab",
            "sweep",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .unwrap();
        let cfg = resolve(cli.common, Some(4)).unwrap();
        assert_eq!(
            (cfg.profile, cfg.seed, cfg.threads, cfg.images_per_point),
            (BudgetProfile::Smoke, 9, 2, 4)
        );
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtucb_cli::config::{parse_b_list, parse_seeds, ExperimentConfig, Mode};
use mtucb_cli::{bench_widths, prepare, selfcheck, simulate, CliError, Overrides};

#[derive(Parser)]
#[command(name = "mtucb", version, about = "Multitask UCB and active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online multitask bandit experiment.
    Online(RunArgs),
    /// Multitask active learning experiment.
    Active(RunArgs),
    /// Sweep the confidence widths over a log grid of b.
    #[command(alias = "bench-widths")]
    WidthsBench(BenchArgs),
    /// Run the numerical self-checks and optionally validate a config file.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and MTUCB_OUTPUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. "0,1,2" or "0-4".
    #[arg(long)]
    seeds: Option<String>,
    /// Also write an SVG regret chart.
    #[arg(long)]
    plot: bool,
    /// Maximum number of concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated b values; the best for the first b-dependent policy is used for all.
    #[arg(long)]
    sweep_b: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: bool,
}

fn run_mode(mode: Mode, a: RunArgs) -> Result<(), CliError> {
    let ov = Overrides {
        out: a.out,
        seeds: a.seeds.as_deref().map(parse_seeds).transpose()?,
        plot: a.plot,
        jobs: a.jobs,
        sweep_b: a.sweep_b.as_deref().map(parse_b_list).transpose()?,
    };
    let cfg = prepare(Some(&a.config), mode, &ov)?;
    let summary = simulate(&cfg)?;
    if !summary.b_sweep.is_empty() {
        println!("selected b = {}", summary.chosen_b);
    }
    for p in &summary.policies {
        println!(
            "{:<24} final regret {:>10.2} ± {:.2} ({} runs)",
            p.policy, p.mean_final_regret, p.stderr_final_regret, p.runs
        );
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<(), CliError> {
    let ov = Overrides { out: a.out, plot: a.plot, ..Overrides::default() };
    let cfg = prepare(a.config.as_deref(), Mode::WidthsBench, &ov)?;
    let rows = bench_widths(&cfg)?;
    println!("wrote {} rows to {}", rows.len(), cfg.output_dir.join("widths.csv").display());
    Ok(())
}

fn run_validate(config: Option<PathBuf>) -> Result<bool, CliError> {
    let mut ok = true;
    for c in selfcheck::run_checks()? {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.pass;
    }
    if let Some(path) = config {
        let mut cfg = ExperimentConfig::load(&path)?;
        let mode = cfg
            .mode
            .or_else(|| cfg.policies.first().map(|p| p.kind.mode()))
            .unwrap_or(Mode::WidthsBench);
        cfg.resolve_mode(mode)?;
        cfg.validate()?;
        println!("[PASS] config {}", path.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Online(a) => run_mode(Mode::Online, a).map(|_| true),
        Command::Active(a) => run_mode(Mode::Active, a).map(|_| true),
        Command::WidthsBench(a) => run_bench(a).map(|_| true),
        Command::Validate { config } => run_validate(config),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

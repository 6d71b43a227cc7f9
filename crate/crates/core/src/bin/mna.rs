use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mna::config::RunConfig;
use mna::run::{compare, recognize_layout, run, Artifacts};
use mna::Result;

#[derive(Parser)]
#[command(name = "mna", version, about = "Moving-node topology optimization")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, created on success only.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one configuration (a file or a bundled preset name).
    Run {
        #[arg(long)]
        config: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run several configurations on the same mesh and tabulate them.
    Compare {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Merge and suppress the members of a saved layout.
    Recognize {
        #[arg(long)]
        config: String,
        #[arg(long)]
        layout: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(source: &str, seed: Option<u64>) -> Result<RunConfig> {
    let path = Path::new(source);
    let mut cfg = if path.exists() || source.ends_with(".toml") {
        RunConfig::load(path)?
    } else {
        RunConfig::preset(source)?
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, common } => {
            let cfg = load(&config, common.seed)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            let summary = run(&cfg, &out)?;
            print!("{}", summary.to_text());
            println!("wall_time_s = {:.3}", summary.wall_time.as_secs_f64());
        }
        Command::Compare { configs, common } => {
            let runs = configs
                .iter()
                .map(|c| Ok((c.clone(), load(c, common.seed)?)))
                .collect::<Result<Vec<_>>>()?;
            let (_, table) = compare(&runs)?;
            if let Some(out) = common.out {
                let mut a = Artifacts::default();
                a.add("comparison.csv", table.clone());
                a.write(&out)?;
            }
            print!("{table}");
        }
        Command::Recognize {
            config,
            layout,
            common,
        } => {
            let cfg = load(&config, common.seed)?;
            let text = fs::read_to_string(&layout)?;
            let (_, artifacts) = recognize_layout(&cfg, &text)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            artifacts.write(&out)?;
            print!("{}", artifacts.get("summary.txt").unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

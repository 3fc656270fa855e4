use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coherence_sim::scenario::{load_config, run_scenario, sweep, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "cohsim", version, about = "Chiplet coherence simulator with hardware Trojan attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write the trace here (overrides `trace=` in the config).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_events: Option<u64>,
        #[arg(long, value_enum)]
        monitor: Option<Switch>,
    },
    /// Parse and validate a scenario without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every `*.cfg` in a directory, in parallel.
    Sweep {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, trace, seed, max_events, monitor } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return code(EXIT_CONFIG);
                }
            };
            if trace.is_some() {
                cfg.trace_path = trace;
            }
            if let Some(s) = seed {
                cfg.system.seed = s;
            }
            if let Some(m) = max_events {
                if m == 0 {
                    eprintln!("--max-events must be at least 1");
                    return code(EXIT_CONFIG);
                }
                cfg.system.max_events = m;
            }
            if let Some(m) = monitor {
                cfg.monitor.enabled = matches!(m, Switch::On);
            }
            match run_scenario(&cfg) {
                Ok(out) => {
                    print!("{}", out.text);
                    code(out.exit_code)
                }
                Err(e) => {
                    eprintln!("{e}");
                    code(EXIT_CONFIG)
                }
            }
        }
        Command::Check { config } => match load_config(&config) {
            Ok(cfg) => {
                println!(
                    "{}: ok ({} cores, {} workloads, attack: {})",
                    config.display(),
                    cfg.system.num_cores(),
                    cfg.workloads.len(),
                    cfg.attack.as_ref().map_or("none", |a| a.kind.name())
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}:\n{e}", config.display());
                code(EXIT_CONFIG)
            }
        },
        Command::Sweep { dir } => match sweep(&dir) {
            Ok(entries) => {
                let mut worst = 0;
                for e in entries {
                    match e.result {
                        Ok(c) => {
                            println!("{:<40} exit={c}", e.path.display());
                            worst = worst.max(c);
                        }
                        Err(msg) => {
                            println!("{:<40} error: {}", e.path.display(), msg.replace('\n', "; "));
                            worst = worst.max(EXIT_CONFIG);
                        }
                    }
                }
                code(worst)
            }
            Err(e) => {
                eprintln!("{e}");
                code(EXIT_CONFIG)
            }
        },
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stplan::sim::PlannerKind;
use stplan_cli::{
    cmd_bench, cmd_compare, cmd_plan, cmd_sim, load_scenario, BenchConfig, CliError, CliResult,
    Overrides, RunConfig,
};

#[derive(Parser)]
#[command(name = "stplan", version, about = "Highway trajectory planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan once from a scenario's initial state.
    Plan {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out/plan")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one closed-loop simulation.
    Sim {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out/sim")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Planner::Proposed)]
        planner: Planner,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep obstacle count and time warm and cold solves.
    Bench {
        #[arg(short, long, default_value = "out/bench")]
        out: PathBuf,
        #[command(flatten)]
        bench: BenchConfig,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run both planners over matched seeds.
    Compare {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out/compare")]
        out: PathBuf,
        /// Also write each run's JSON-lines log.
        #[arg(long)]
        logs: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the resolved configuration as JSON.
    PrintConfig {
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Proposed,
    Baseline,
}

fn out_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", p.display())))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Plan {
            scenario,
            out,
            overrides,
        } => {
            let cfg = RunConfig::resolve(RunConfig::for_plan(), &overrides)?;
            let s = load_scenario(&scenario, &cfg)?;
            out_dir(&out)?;
            let r = cmd_plan(&s, &cfg, &out)?;
            let st = &r.stats;
            println!(
                "{:?} after {} iterations, lane {}, terminal speed {:.3} m/s, min clearance {}",
                st.status,
                st.iterations,
                st.target_lane,
                st.terminal_speed,
                st.min_clearance.map_or("n/a".into(), |d| format!("{d:.3} m"))
            );
            if st.fallback {
                return Err(CliError::Planner("no solve succeeded, braking fallback".into()));
            }
        }
        Command::Sim {
            scenario,
            out,
            planner,
            seed,
            overrides,
        } => {
            let cfg = RunConfig::resolve(RunConfig::default(), &overrides)?;
            let s = load_scenario(&scenario, &cfg)?;
            out_dir(&out)?;
            let kind = match planner {
                Planner::Proposed => PlannerKind::Proposed,
                Planner::Baseline => PlannerKind::Baseline,
            };
            let seed = seed.or(cfg.seeds.first().copied()).unwrap_or(s.seed);
            let r = cmd_sim(&s, kind, seed, &cfg, &out)?;
            let m = &r.metrics;
            println!(
                "completion {}, lane changes {}, min clearance {:.3} m, violations {}",
                m.completion_time
                    .map_or("not reached".into(), |t| format!("{t:.1} s")),
                m.lane_changes,
                m.min_clearance,
                m.clearance_violations
            );
        }
        Command::Bench {
            out,
            bench,
            overrides,
        } => {
            let cfg = RunConfig::resolve(RunConfig::default(), &overrides)?;
            out_dir(&out)?;
            for r in cmd_bench(&cfg.sim, &bench, &out)? {
                println!(
                    "m = {:2}  rows {:4}  warm {:7.2} ms  cold {:7.2} ms",
                    r.m, r.constraint_count, r.warm_median_ms, r.cold_median_ms
                );
            }
        }
        Command::Compare {
            scenario,
            out,
            logs,
            overrides,
        } => {
            let cfg = RunConfig::resolve(RunConfig::default(), &overrides)?;
            let s = load_scenario(&scenario, &cfg)?;
            out_dir(&out)?;
            let r = cmd_compare(&s, &cfg, &out, logs)?;
            let fmt = |t: Option<f64>| t.map_or("n/a".into(), |t| format!("{t:.1} s"));
            let (p, b) = (&r.summary.proposed, &r.summary.baseline);
            println!(
                "median completion: proposed {}, baseline {}, delta {}",
                fmt(p.median_completion_time_s),
                fmt(b.median_completion_time_s),
                fmt(r.summary.median_completion_delta_s)
            );
            println!(
                "median lane changes: proposed {}, baseline {}; violations {} / {}",
                p.median_lane_changes,
                b.median_lane_changes,
                p.clearance_violations,
                b.clearance_violations
            );
            if p.failures + b.failures > 0 {
                return Err(CliError::Planner(format!(
                    "{} run(s) ended with a planner failure",
                    p.failures + b.failures
                )));
            }
        }
        Command::PrintConfig { overrides } => {
            let cfg = RunConfig::resolve(RunConfig::default(), &overrides)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use caesar::experiment::{run_experiment, sweep, sweep_table, Overrides, SweepParam};
use caesar::netsim::{Scenario, Simulation, Trace};
use caesar::protocol::Mutations;
use caesar::verify::{check_trace, explore, ExploreConfig};

/// Exit code when a run completes but a consistency check fails.
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "caesar", version, about = "Simulate, check and explore the consensus protocol")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario TOML file, or one of the built-ins `geo5` and `uniform5`.
    #[arg(long, short)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tick_limit: Option<u64>,
    #[arg(long)]
    conflict_percent: Option<u8>,
    #[arg(long)]
    commands: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    /// Where to write traces and reports.
    #[arg(long, env = "CAESAR_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mutation {
    SkipWait,
    FastOnClassicQuorum,
    SkipWhitelist,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario, check it and print its metrics.
    Run(ScenarioArgs),
    /// Run a scenario once per parameter value and print a summary table.
    Sweep {
        #[command(flatten)]
        args: ScenarioArgs,
        /// conflict-percent, clients, crashes or latency-scale.
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Run the consistency checkers over a saved trace.
    Verify { trace: PathBuf },
    /// Exhaustively explore a small cluster.
    Explore {
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Commands as `node:key`, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0:x,1:x")]
        commands: Vec<String>,
        /// Allow one crash at any point.
        #[arg(long)]
        crash: bool,
        #[arg(long)]
        mutation: Option<Mutation>,
        /// Per-link reorder window; 0 allows any reordering.
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Apply the window to each node's whole inbox instead of each link.
        #[arg(long)]
        per_inbox: bool,
        #[arg(long, default_value_t = 10_000_000)]
        max_states: usize,
    },
    /// Re-run the scenario recorded in a trace, compare and check.
    Replay { trace: PathBuf },
}

fn load_scenario(a: &ScenarioArgs) -> caesar::Result<Scenario> {
    let base = match a.scenario.as_str() {
        "geo5" => Scenario::geo5(),
        "uniform5" => Scenario::uniform(5, 50),
        path => Scenario::load(path)?,
    };
    Overrides {
        seed: a.seed,
        tick_limit: a.tick_limit,
        conflict_percent: a.conflict_percent,
        commands_total: a.commands,
        clients_per_node: a.clients,
    }
    .apply(base)
}

fn verdict(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}

fn run(cmd: Cmd) -> caesar::Result<ExitCode> {
    match cmd {
        Cmd::Run(a) => {
            let scenario = load_scenario(&a)?;
            let r = run_experiment(scenario, a.out_dir.as_deref())?;
            print!("{}", r.metrics);
            print!("{}", r.verdict);
            if !r.outcome.undecided.is_empty() {
                println!("undecided={}", r.outcome.undecided.len());
            }
            Ok(verdict(r.passed()))
        }
        Cmd::Sweep { args, param, values } => {
            let scenario = load_scenario(&args)?;
            let p: SweepParam = param.parse()?;
            let rows = sweep(&scenario, p, &values)?;
            let table = sweep_table(p, &rows);
            print!("{table}");
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("sweep.txt"), &table)?;
            }
            Ok(verdict(rows.iter().all(|r| r.passed)))
        }
        Cmd::Verify { trace } => {
            let t = Trace::load(&trace)?;
            let report = check_trace(&t)?;
            print!("{report}");
            Ok(verdict(report.passed()))
        }
        Cmd::Explore {
            n,
            commands,
            crash,
            mutation,
            window,
            per_inbox,
            max_states,
        } => {
            let commands = commands
                .iter()
                .map(|c| parse_command(c))
                .collect::<caesar::Result<Vec<_>>>()?;
            let mut mutations = Mutations::default();
            match mutation {
                Some(Mutation::SkipWait) => mutations.skip_wait = true,
                Some(Mutation::FastOnClassicQuorum) => mutations.fast_on_classic_quorum = true,
                Some(Mutation::SkipWhitelist) => mutations.skip_whitelist = true,
                None => {}
            }
            let cfg = ExploreConfig {
                n,
                commands,
                mutations,
                crash,
                reorder_window: (window > 0).then_some(window),
                per_link: !per_inbox,
                max_states,
                ..ExploreConfig::small()
            };
            let r = explore(cfg)?;
            println!("states={}", r.states);
            println!("terminals={}", r.terminals);
            println!("stuck={}", r.stuck);
            println!("truncated={}", r.truncated);
            println!("violating_states={}", r.violating_states);
            if let Some(cx) = &r.counterexample {
                for v in &cx.violations {
                    println!("violation: {v}");
                }
                for (i, s) in cx.path.iter().enumerate() {
                    println!("step {i}: {}", serde_json::to_string(s)?);
                }
            }
            Ok(verdict(r.passed()))
        }
        Cmd::Replay { trace } => replay(&trace),
    }
}

fn parse_command(s: &str) -> caesar::Result<(u32, String)> {
    let bad = || caesar::Error::Trace(format!("expected node:key, got {s:?}"));
    let (node, key) = s.split_once(':').ok_or_else(bad)?;
    Ok((node.trim().parse().map_err(|_| bad())?, key.trim().to_string()))
}

fn replay(path: &Path) -> caesar::Result<ExitCode> {
    let original = Trace::load(path)?;
    let scenario = original
        .scenario()
        .ok_or_else(|| caesar::Error::Trace("trace has no header".into()))?
        .clone();
    let again = Simulation::new(scenario)?.run().trace;
    let identical = again.to_jsonl() == original.to_jsonl();
    println!("identical={identical}");
    let report = check_trace(&again)?;
    print!("{report}");
    Ok(verdict(identical && report.passed()))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

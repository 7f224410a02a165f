use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipfc_relay::output::{emit_outputs, emit_pair, emit_suite, emit_sweep, OutputOptions};
use ipfc_relay::scenario::{
    expand_sweep, reproduce_study, run_pair, run_scenario, run_sweep, Scenario, VarySpec,
};
use ipfc_relay::{Error, Result};

#[derive(Parser)]
#[command(name = "ipfc-relay", version, about = "IPFC and distance relay phasor simulator")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write an R-X plane plot per run.
    #[arg(long, global = true)]
    plot: bool,
    /// Latch converter commands when the fault is applied.
    #[arg(long, global = true)]
    freeze_on_fault: bool,
    /// Override the scenario seed (used by randomized sweeps).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run { scenario: PathBuf },
    /// Run a baseline and a variant and classify the variant's reach.
    Pair { baseline: PathBuf, variant: PathBuf },
    /// Run a template scenario over a grid of parameter values.
    Sweep {
        template: PathBuf,
        /// section.key=start:stop:step, section.key=a,b,c or
        /// section.key=random:lo:hi:count; repeatable.
        #[arg(long, required = true)]
        vary: Vec<String>,
    },
    /// Run the off baseline and the four single-exchange presets.
    ReproducePaper,
}

fn load(cli: &Cli, path: &PathBuf) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if cli.freeze_on_fault {
        s.ipfc.freeze_on_fault = true;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: &Cli) -> Result<()> {
    let opts = OutputOptions { plot: cli.plot };
    match &cli.command {
        Command::Run { scenario } => {
            let s = load(cli, scenario)?;
            let r = run_scenario(&s)?;
            emit_outputs(&r, &cli.out, opts)?;
            match &r.settled {
                Some(st) => println!(
                    "{}: settled z = {:.6e} + j{:.6e} p.u.",
                    s.name, st.z.re, st.z.im
                ),
                None => println!("{}: no settled window", s.name),
            }
        }
        Command::Pair { baseline, variant } => {
            let b = load(cli, baseline)?;
            let v = load(cli, variant)?;
            let p = run_pair(&b, &v)?;
            emit_pair(&p, &cli.out, opts)?;
            println!(
                "{} vs {}: {} (dR = {:.4e}, dX = {:.4e})",
                v.name,
                b.name,
                p.verdict.classification.as_str(),
                p.verdict.delta_r,
                p.verdict.delta_x
            );
        }
        Command::Sweep { template, vary } => {
            let text = std::fs::read_to_string(template).map_err(|e| Error::io(template, e))?;
            let mut table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", template.display(), e.message())))?;
            let section = table
                .entry("scenario")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let seed = match (cli.seed, section.get("seed").and_then(|v| v.as_integer())) {
                (Some(s), _) => s,
                (None, Some(s)) => s as u64,
                (None, None) => 0,
            };
            if let toml::Value::Table(t) = section {
                t.insert("seed".into(), toml::Value::Integer(seed as i64));
                if cli.freeze_on_fault {
                    let ipfc = table
                        .entry("ipfc")
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                    if let toml::Value::Table(t) = ipfc {
                        t.insert("freeze_on_fault".into(), toml::Value::Boolean(true));
                    }
                }
            }
            // Each clause gets its own stream so adding one does not
            // reshuffle the others.
            let specs = vary
                .iter()
                .enumerate()
                .map(|(k, v)| VarySpec::parse(v, seed.wrapping_add(k as u64)))
                .collect::<Result<Vec<_>>>()?;
            let cases = expand_sweep(&table, template.parent(), &specs)?;
            let results = run_sweep(&cases);
            emit_sweep(&cases, &results, &cli.out, opts)?;
            let failed: Vec<&Error> = results.iter().filter_map(|r| r.as_ref().err()).collect();
            println!("sweep: {} runs, {} failed", cases.len(), failed.len());
            if let Some(e) = failed.first() {
                eprintln!("first failure: {e}");
                return Err(Error::Numerical(format!("{} sweep runs failed", failed.len())));
            }
        }
        Command::ReproducePaper => {
            let entries = reproduce_study(cli.freeze_on_fault)?;
            emit_suite(&entries, &cli.out, opts)?;
            for e in &entries {
                let ok = e.matches_expectation(e.run.scenario.relay.tolerance);
                println!(
                    "{:<16} expected {:<21} got {:<21} dR = {:+.4e} dX = {:+.4e} {}",
                    e.mode.as_str(),
                    e.expected.as_str(),
                    e.verdict.classification.as_str(),
                    e.verdict.delta_r,
                    e.verdict.delta_x,
                    if ok { "ok" } else { "MISMATCH" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use etbc_core::scenario::{self, Scenario};
use etbc_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "etbc",
    version,
    about = "Event-triggered boundary control of 2x2 hyperbolic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in and write its artifacts.
    Simulate {
        /// Scenario file or built-in name.
        scenario: String,
        #[arg(long)]
        n_cells: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Output directory (default: $ETBC_OUTPUT_ROOT/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the kernels of a linear scenario into a cache file.
    Kernels {
        scenario: String,
        #[arg(long)]
        n_cells: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a scenario on several grids and report convergence.
    Refine {
        scenario: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        levels: Vec<usize>,
        /// Write the table as CSV instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
    /// Print a built-in scenario as TOML.
    Show { name: String },
}

fn load(name: &str, n_cells: Option<usize>, t_end: Option<f64>) -> Result<Scenario> {
    let mut s = Scenario::load(name)?;
    if let Some(n) = n_cells {
        s = s.with_n_cells(n)?;
    }
    if let Some(t) = t_end {
        s = s.with_t_end(t)?;
    }
    Ok(s)
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate {
            scenario,
            n_cells,
            t_end,
            out,
        } => {
            let s = load(&scenario, n_cells, t_end)?;
            let dir = s.resolve_output_dir(out.as_deref());
            let outcome = scenario::run_scenario(&s, &dir)?;
            let d = &outcome.summary;
            println!(
                "{}: {} events, max |w| {:.4e}, final |w| {:.4e}",
                d.name, d.event_count, d.max_norm, d.final_norm
            );
            if let Some(dw) = d.min_dwell {
                println!("min dwell {dw:.4e} (dt {:.4e})", d.dt);
            }
            if d.zeno_suspected {
                eprintln!(
                    "warning: {} consecutive-step event pairs, Zeno behaviour suspected",
                    d.consecutive_event_pairs
                );
            }
            println!("artifacts in {}", dir.display());
            Ok(outcome.exit_code)
        }
        Command::Kernels { scenario, n_cells, out } => {
            let s = load(&scenario, n_cells, None)?;
            let scenario::ModelSpec::Linear(spec) = &s.model else {
                return Err(Error::Invalid {
                    field: "model".into(),
                    reason: "kernels need a [model.linear] model".into(),
                });
            };
            let k = s.kernels()?;
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut f = BufWriter::new(fs::File::create(&out)?);
            k.write_csv(&spec.hash(&s.grid), &mut f)?;
            f.flush()?;
            println!("wrote {} kernel samples to {}", k.n_nodes(), out.display());
            Ok(scenario::EXIT_OK)
        }
        Command::Refine { scenario, levels, out } => {
            let s = load(&scenario, None, None)?;
            let rows = scenario::refinement_study(&s, &levels)?;
            match out {
                Some(path) => {
                    let mut f = BufWriter::new(fs::File::create(&path)?);
                    scenario::write_refinement_csv(&rows, &mut f)?;
                    f.flush()?;
                }
                None => scenario::write_refinement_csv(&rows, io::stdout().lock())?,
            }
            Ok(scenario::EXIT_OK)
        }
        Command::List => {
            for name in scenario::builtin_names() {
                println!("{name}");
            }
            Ok(scenario::EXIT_OK)
        }
        Command::Show { name } => match scenario::builtin_source(&name) {
            Some(text) => {
                print!("{text}");
                Ok(scenario::EXIT_OK)
            }
            None => Err(Error::Invalid {
                field: "name".into(),
                reason: format!("no built-in scenario {name:?}"),
            }),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(scenario::exit_code(&e) as u8)
        }
    }
}

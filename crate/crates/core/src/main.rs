use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmoc::bench::{run, BenchmarkSpec, EXPECTED_BANDS};

#[derive(Parser)]
#[command(name = "mmoc", version, about = "Eulerian-Lagrangian transport benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark described by a JSON or `key = value` spec file.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Number of simulated ranks (overrides the spec).
        #[arg(long)]
        ranks: Option<usize>,
        /// Output directory for `<name>.csv`, `summary.json` and `vtk/`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a VTK snapshot every N steps (0 disables).
        #[arg(long)]
        vtk_every: Option<usize>,
        /// Reserved; no part of the computation is random.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the reference bands the runs are checked against.
    Bands,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Bands => {
            for b in EXPECTED_BANDS {
                println!("{:<32} {:<10?} {:<9?} {}  ({})", b.id, b.metric, b.origin, b.band, b.note);
            }
            ExitCode::SUCCESS
        }
        Command::Run { spec, ranks, out, vtk_every, seed } => {
            let mut s = match BenchmarkSpec::from_file(&spec) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}: {e}", spec.display());
                    return ExitCode::from(2);
                }
            };
            log::debug!("seed {seed} (unused)");
            if let Some(r) = ranks {
                s.ranks = r;
            }
            if let Some(n) = vtk_every {
                s.vtk_every = n;
            }
            if let Some(dir) = &out {
                s.csv = Some(dir.join(format!("{}.csv", s.name)));
                if s.vtk_every > 0 {
                    s.vtk_dir = Some(dir.join("vtk"));
                }
            }
            match run(&s) {
                Ok(report) => {
                    print!("{}", report.summary());
                    if let Some(dir) = &out {
                        let path = dir.join("summary.json");
                        let doc = serde_json::json!({ "report": &report, "final": report.final_row() });
                        let json = serde_json::to_string_pretty(&doc).expect("report serializes");
                        if let Err(e) = std::fs::write(&path, json) {
                            eprintln!("error: {}: {e}", path.display());
                            return ExitCode::FAILURE;
                        }
                    }
                    if report.bands_pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(3)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}

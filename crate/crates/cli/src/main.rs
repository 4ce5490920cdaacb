use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geolab_cli::{run, suites, CliError, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "geolab", version, about = "Geodesic flow laboratory: scenario runs and verification suites")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and write its artifacts.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named verification suite and print its table.
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Multiplies integration tolerances and suite thresholds.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

impl Common {
    fn options(&self) -> Result<RunOptions, CliError> {
        if !(self.tol_scale.is_finite() && self.tol_scale > 0.0) {
            return Err(CliError::Config(format!("--tol-scale must be positive, got {}", self.tol_scale)));
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("--threads: {e}")))?;
        }
        Ok(RunOptions { out: self.out.clone(), seed: self.seed, tol_scale: self.tol_scale, threads: self.threads })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { scenario, common } => common.options().and_then(|o| {
            let sc = Scenario::load(scenario)?;
            let s = run(&sc, &o)?;
            println!("{}", serde_json::to_string_pretty(&s.result).expect("json"));
            eprintln!("artifacts written to {}", s.out.display());
            Ok(true)
        }),
        Cmd::Verify { suite, common } => common.options().and_then(|o| {
            let rep = suites::run_suite(suite, o.tol_scale)?;
            print!("{}", rep.table());
            if let Some(dir) = &o.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(format!("verify_{suite}.json")), serde_json::to_string_pretty(&rep.to_json()).expect("json"))?;
            }
            Ok(rep.passed())
        }),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", serde_json::to_string_pretty(&e.diagnostic()).expect("json"));
            ExitCode::from(e.exit_code())
        }
    }
}

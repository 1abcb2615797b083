use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipsampler::DynamicsVariant;
use ipsampler_cli::config::{default_burn_in, SchemeName};
use ipsampler_cli::{
    cmd_bias_study, cmd_regression_demo, cmd_sample, cmd_verify_divergence, parse_cases, BiasStudyArgs, CliError,
    RegressionDemoArgs, VerifyDivergenceArgs,
};

#[derive(Parser)]
#[command(name = "ipsampler", version, about = "Interacting Langevin particle samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation described by a TOML config file.
    Sample {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the uncorrected stationary variance with (J-2)/J b^2.
    BiasStudy {
        #[arg(long = "J-list", value_delimiter = ',', required = true)]
        j_list: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 0.005)]
        dt: f64,
        #[arg(long, default_value_t = 400_000)]
        n_steps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        record_every: u64,
        #[arg(long = "burn-in", default_value_t = default_burn_in())]
        burn_in: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the divergence correction against finite differences.
    VerifyDivergence {
        #[arg(long, default_value = "1:4,2:6,3:8,5:12")]
        cases: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a Bayesian linear-regression posterior from a CSV file.
    RegressionDemo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 10.0)]
        sigma0: f64,
        #[arg(long, default_value = "corrected", value_parser = parse_variant)]
        variant: DynamicsVariant,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<SchemeName>,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long = "J", default_value_t = 16)]
        j: usize,
        #[arg(long, default_value_t = 0.005)]
        dt: f64,
        #[arg(long, default_value_t = 200_000)]
        n_steps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        record_every: u64,
        #[arg(long = "burn-in", default_value_t = default_burn_in())]
        burn_in: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<DynamicsVariant, String> {
    s.parse().map_err(|e: ipsampler::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<SchemeName, String> {
    match s {
        "full" => Ok(SchemeName::Full),
        "regularized" => Ok(SchemeName::Regularized),
        "leave_one_out" | "leave-one-out" => Ok(SchemeName::LeaveOneOut),
        other => Err(format!("unknown scheme `{other}` (full | regularized | leave_one_out)")),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match command {
        Command::Sample { config } => cmd_sample(&config, out).map(drop),
        Command::BiasStudy {
            j_list,
            b,
            dt,
            n_steps,
            seed,
            record_every,
            burn_in,
            out: path,
        } => cmd_bias_study(
            &BiasStudyArgs {
                j_list,
                b,
                dt,
                n_steps,
                seed,
                record_every,
                burn_in_fraction: burn_in,
                out: path,
            },
            out,
        )
        .map(drop),
        Command::VerifyDivergence {
            cases,
            trials,
            h,
            tol,
            alpha,
            seed,
            out: path,
        } => cmd_verify_divergence(
            &VerifyDivergenceArgs {
                cases: parse_cases(&cases)?,
                trials,
                h,
                tol,
                alpha,
                seed,
                out: path,
            },
            out,
        )
        .map(drop),
        Command::RegressionDemo {
            data,
            gamma,
            sigma0,
            variant,
            scheme,
            alpha,
            j,
            dt,
            n_steps,
            seed,
            record_every,
            burn_in,
            out: path,
            trajectory,
        } => cmd_regression_demo(
            &RegressionDemoArgs {
                data,
                gamma,
                sigma0,
                variant,
                scheme,
                alpha,
                j,
                dt,
                n_steps,
                seed,
                record_every,
                burn_in_fraction: burn_in,
                out: path,
                trajectory,
            },
            out,
        )
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `bsde`: run, inspect and serve deep BSDE pricing experiments.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use bsde_client::{Client, ClientError};
use bsde_core::api::{ConfigSource, ErrorKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsde", version, about = "Deep BSDE option pricing experiments")]
struct Cli {
    /// Service to talk to; without it an in-process service is started.
    #[arg(long, global = true, env = "BSDE_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment (see `bsde presets`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Zero wall-clock columns so reports are reproducible byte for byte.
    #[arg(long)]
    deterministic: bool,
    /// Dotted-key override, e.g. `training.batch_size=256`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Source {
    fn load(&self) -> anyhow::Result<ConfigSource> {
        let config_toml = match &self.config {
            Some(p) => {
                Some(std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", p.display()))?)
            }
            None => None,
        };
        Ok(ConfigSource {
            config_toml,
            preset: self.preset.clone(),
            overrides: self.overrides.clone(),
            seed: self.seed,
            iterations: self.iterations,
            deterministic: self.deterministic,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an experiment and write its run directory.
    Run {
        #[command(flatten)]
        source: Source,
        /// Run directory; defaults to `<output.dir>/<preset>`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Closed-form or Monte-Carlo reference values of the configured instrument.
    Oracle {
        #[command(flatten)]
        source: Source,
        /// Initial underlier values; defaults to 70, 80, ..., 170.
        #[arg(long = "x", value_delimiter = ',')]
        xs: Vec<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Summarize a finished run directory.
    Report {
        dir: PathBuf,
        /// Exit with status 4 unless every acceptance check passes.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        json: bool,
    },
    /// List the built-in experiments.
    Presets,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

fn exit_for(e: &ClientError) -> ExitCode {
    match e.kind() {
        ErrorKind::Config | ErrorKind::Usage => ExitCode::from(EXIT_CONFIG),
        ErrorKind::Diverged => ExitCode::from(EXIT_DIVERGED),
        _ => ExitCode::FAILURE,
    }
}

async fn connect(server: Option<String>) -> anyhow::Result<Client> {
    if let Some(url) = server {
        return Ok(Client::new(&url));
    }
    let base = std::env::current_dir()?;
    let (addr, serving) = bsde_server::bind(SocketAddr::from(([127, 0, 0, 1], 0)), base).await?;
    tokio::spawn(serving);
    Ok(Client::new(&format!("http://{addr}")))
}

async fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Command::Serve { addr } = cli.command {
        let (bound, serving) = bsde_server::bind(addr, std::env::current_dir()?).await?;
        eprintln!("listening on http://{bound}");
        serving.await?;
        return Ok(ExitCode::SUCCESS);
    }
    let client = connect(cli.server).await?;
    let code = match cli.command {
        Command::Presets => match client.presets().await {
            Ok(list) => {
                for p in list {
                    println!("{:<28} {}", p.name, p.description);
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { source, out_dir, print_config } => {
            let src = match source.load() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            };
            if print_config {
                return Ok(match client.config(&src).await {
                    Ok(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(&e),
                });
            }
            match client.run(src, out_dir).await {
                Ok(r) => {
                    print!("{}", r.summary.to_text());
                    println!("artifacts: {}", r.dir.display());
                    match r.diverged {
                        Some(msg) => {
                            eprintln!("error: {msg}");
                            ExitCode::from(EXIT_DIVERGED)
                        }
                        None => ExitCode::SUCCESS,
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Oracle { source, xs, json } => {
            let src = match source.load() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            };
            let xs = if xs.is_empty() { (0..=10).map(|k| 70.0 + 10.0 * k as f64).collect() } else { xs };
            match client.oracle(src, xs).await {
                Ok(r) if json => {
                    println!("{}", serde_json::to_string_pretty(&r.rows)?);
                    ExitCode::SUCCESS
                }
                Ok(r) => {
                    println!("{:>10} {:>14} {:>12} {:>12}  method", "x", "price", "delta", "std_error");
                    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
                    for row in r.rows {
                        println!(
                            "{:>10} {:>14.6} {:>12} {:>12}  {}",
                            row.x,
                            row.value.price,
                            opt(row.value.delta),
                            opt(row.value.std_error),
                            row.value.method
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Report { dir, check, json } => {
            let dir = std::path::absolute(&dir)?;
            match client.report(dir).await {
                Ok(s) => {
                    if json {
                        println!("{}", serde_json::to_string_pretty(&s)?);
                    } else {
                        print!("{}", s.to_text());
                    }
                    if check && !s.all_passed() {
                        ExitCode::from(EXIT_CHECK_FAILED)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Serve { .. } => unreachable!(),
    };
    Ok(code)
}

fn fail(e: &ClientError) -> ExitCode {
    eprintln!("error: {e}");
    exit_for(e)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(execute(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use strata_cli::server::{self, ServeConfig};
use strata_cli::tools::{self, ExportFormat};
use strata_core::gateway::{BackendDescriptor, BackendKind};
use strata_core::prompt::TaskRegistry;
use strata_core::{Gateway, LayerId};

#[derive(Parser)]
#[command(name = "strata", version, about = "Layered writing workspace")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Live,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "workspaces")]
        workspace_dir: PathBuf,
        /// Overrides the backend named in --config.
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Backend descriptor (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the usage tree of each session in an event log.
    Replay { log: PathBuf },
    /// Export a compiled document from a workspace file.
    Export {
        workspace: PathBuf,
        /// Document layer id, e.g. 12 or L12.
        document: String,
        #[arg(long, value_enum, default_value_t = ExportFormat::Markup)]
        format: ExportFormat,
    },
    /// List the built-in tasks.
    Tasks,
    /// Apply a file of JSON commands (one per line) to a workspace file.
    Run {
        workspace: PathBuf,
        script: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn descriptor(config: Option<&PathBuf>, backend: Option<Backend>) -> Result<BackendDescriptor, String> {
    let mut d = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            BackendDescriptor::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => BackendDescriptor::mock(),
    };
    match backend {
        Some(Backend::Mock) => d.backend = BackendKind::Mock,
        Some(Backend::Live) if d.endpoint.is_none() => {
            return Err("--backend live needs --config with an endpoint".into())
        }
        Some(Backend::Live) => d.backend = BackendKind::Live,
        None => {}
    }
    Ok(d)
}

fn parse_layer(s: &str) -> Result<LayerId, String> {
    s.trim_start_matches('L')
        .parse()
        .map(LayerId)
        .map_err(|_| format!("not a layer id: {s}"))
}

async fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Cmd::Serve {
            port,
            workspace_dir,
            backend,
            config,
        } => {
            let config = ServeConfig {
                port,
                workspace_dir,
                backend: descriptor(config.as_ref(), backend)?,
            };
            let listener = server::bind(config.port).await.map_err(|e| format!("{}: {e}", e.code()))?;
            let addr = listener.local_addr().map_err(|e| e.to_string())?;
            log::info!("listening on http://{addr}");
            eprintln!("strata listening on http://{addr}");
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            server::serve(listener, server::state(&config), shutdown)
                .await
                .map_err(|e| e.to_string())
        }
        Cmd::Replay { log } => {
            print!("{}", tools::replay_log(&log).map_err(|e| e.to_string())?);
            Ok(())
        }
        Cmd::Export {
            workspace,
            document,
            format,
        } => {
            let id = parse_layer(&document)?;
            print!("{}", tools::export(&workspace, id, format).map_err(|e| e.to_string())?);
            Ok(())
        }
        Cmd::Tasks => {
            for t in TaskRegistry::builtin().iter() {
                let friend = t.friend.as_ref().map(|f| f.as_str()).unwrap_or("-");
                println!("{:<20} v{} {:<8} {}", t.id, t.version, friend, t.schema);
            }
            Ok(())
        }
        Cmd::Run {
            workspace,
            script,
            config,
        } => {
            let d = descriptor(config.as_ref(), None)?;
            let (backend, warning) = strata_core::gateway::build_backend(&d, |k| std::env::var(k).ok());
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            let file = std::fs::File::open(&script).map_err(|e| format!("{}: {e}", script.display()))?;
            let lines = tools::run_script(&workspace, std::io::BufReader::new(file), Gateway::new(backend))
                .await
                .map_err(|e| e.to_string())?;
            for l in lines {
                println!("{l}");
            }
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::io::{self, IsTerminal};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use musicagent_gateway::{build_agent, router, GatewayError, Repl};

/// Music agent: plans music tasks with a language model and runs them
/// through registered tools.
#[derive(Debug, Parser)]
#[command(name = "musicagent", version)]
struct Cli {
    /// TOML configuration file. Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run the HTTP service.
    #[arg(long, conflicts_with = "repl")]
    serve: bool,
    /// Run the interactive chat loop (the default).
    #[arg(long)]
    repl: bool,
    /// Scripted replies (JSON list of {match, reply}) instead of a remote model.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Session used by the chat loop.
    #[arg(long, default_value = "repl")]
    session: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("musicagent: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), GatewayError> {
    let agent = build_agent(cli.config.as_deref(), cli.mock_script.as_deref())?;
    if cli.serve {
        return serve(agent);
    }
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    if interactive {
        eprintln!(
            "musicagent: {} tasks, {} tools, model backend {}. Type /help for commands.",
            agent.tasks().len(),
            agent.tools().len(),
            agent.llm().backend_name()
        );
    }
    Repl::new(&agent, cli.session).run(stdin.lock(), &mut io::stdout().lock(), interactive)?;
    Ok(())
}

fn serve(agent: musicagent_core::agent::MusicAgent) -> Result<(), GatewayError> {
    let addr = format!("{}:{}", agent.config().server.bind, agent.config().server.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| GatewayError::BindFailure { addr: addr.clone(), source })?;
        eprintln!("musicagent: listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(agent)))
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        eprintln!("musicagent: shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

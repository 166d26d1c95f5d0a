//! Hosts one native tool server over stdio or HTTP.

use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use surveyforge::config::Config;
use surveyforge::protocol::{serve_http, serve_stdio};
use surveyforge::servers::{self, FixtureIndex, ServerDeps, NATIVE_SERVERS};

#[derive(Parser)]
#[command(name = "surveyforge-server", version, about = "Serve one native tool server")]
struct Cli {
    /// Server id: search, group, skeleton, digest, refine, figure or orchestra.
    #[arg(long)]
    server: String,
    /// `stdio` or `http:PORT` (port 0 picks a free one).
    #[arg(long, default_value = "stdio")]
    transport: String,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = Config::default();
    if let Err(e) = config.apply_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let model = match config.build_model() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let retriever = match FixtureIndex::from_env() {
        Ok(r) => Arc::new(r),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let deps = ServerDeps::new(model, retriever);
    let server = match servers::build(&cli.server, &deps) {
        Some(Ok(s)) => Arc::new(s),
        Some(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
        None => {
            eprintln!("error: unknown server `{}` (known: {})", cli.server, NATIVE_SERVERS.join(", "));
            return ExitCode::from(2);
        }
    };
    if cli.transport == "stdio" {
        return match serve_stdio(server, tokio::io::stdin(), tokio::io::stdout()).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    let Some(port) = cli.transport.strip_prefix("http:").and_then(|p| p.parse::<u16>().ok()) else {
        eprintln!("error: transport must be `stdio` or `http:PORT`");
        return ExitCode::from(2);
    };
    match serve_http(server, SocketAddr::from(([127, 0, 0, 1], port))).await {
        Ok(handle) => {
            println!("listening on {}", handle.url());
            let _ = tokio::signal::ctrl_c().await;
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

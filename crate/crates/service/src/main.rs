use clap::Parser;
use nightfield_service::{init_tracing, serve, ServeArgs};

/// Serve nightfield scenarios over HTTP.
#[derive(Debug, Parser)]
#[command(name = "nightfield-service", version)]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    init_tracing(&cli.serve.log_level);
    match serve(cli.serve).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            std::process::ExitCode::from(2)
        }
    }
}

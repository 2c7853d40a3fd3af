use std::net::SocketAddr;

use clap::Parser;

/// Training service for the online model-based RL engine.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let (local, listener) = ombrl_server::bind(args.addr).await?;
    tracing::info!("listening on http://{local}");
    ombrl_server::serve(listener).await
}

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;

#[derive(Parser)]
#[command(name = "cpbo-service", version, about = "Session service for human-in-the-loop optimization")]
struct Args {
    /// Where session logs and snapshots live.
    #[arg(long, default_value = "cpbo-data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let state = cpbo_service::AppState::open(&args.data_dir)?;
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, cpbo_service::router(state)).await
}

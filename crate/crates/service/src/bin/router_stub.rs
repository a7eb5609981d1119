use std::net::SocketAddr;

use clap::Parser;
use stormcrew_service::stub_router::{Fault, StubRouter};

/// Local distance-matrix server for tests and demos.
#[derive(Debug, Parser)]
#[command(name = "router-stub", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: SocketAddr,
    #[arg(long, default_value_t = 22.5)]
    speed_mph: f64,
    /// Require this bearer token.
    #[arg(long, env = "ROUTER_API_KEY")]
    token: Option<String>,
    /// Answer every request with a 500.
    #[arg(long)]
    fail: bool,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let args = Args::parse();
    let stub = StubRouter::new(args.speed_mph, args.token);
    if args.fail {
        stub.set_fault(Fault::Fail);
    }
    let (addr, handle) = stub.spawn(args.listen).await?;
    tracing::info!(%addr, "router stub listening");
    eprintln!("router-stub listening on http://{addr}/matrix");
    handle.await.map_err(std::io::Error::other)
}

use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use restmarl_sim::{SimConfig, SimServer};

/// Serve the simulated shop over loopback HTTP.
#[derive(Debug, Parser)]
#[command(name = "restmarl-sim", version)]
struct Args {
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Delay before every response, in milliseconds.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Turn off both seeded server faults.
    #[arg(long)]
    no_faults: bool,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let config = SimConfig {
        filter_fault: !args.no_faults,
        quantity_fault: !args.no_faults,
        ..SimConfig::default()
    };
    let server = SimServer::start(&args.addr, config, Duration::from_millis(args.delay_ms))
        .with_context(|| format!("cannot bind {}", args.addr))?;
    tracing::info!(url = %server.base_url(), "serving");
    server.wait();
    Ok(())
}

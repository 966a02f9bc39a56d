//! Runs the stub services on local ports until interrupted.

use std::net::SocketAddr;

use clap::Parser;
use ovdprobe_stubs::{spawn_detect_at, spawn_inpaint_at, DetectMode, InpaintMode};

#[derive(Parser)]
#[command(version, about = "Stub /inpaint and /detect services for dry runs")]
struct Args {
    #[arg(long, default_value_t = 7860)]
    inpaint_port: u16,
    #[arg(long, default_value_t = 7861)]
    detect_port: u16,
    /// Color painted into masks and looked for by the detector, R,G,B.
    #[arg(long, value_name = "R,G,B", value_delimiter = ',', default_values_t = [255u8, 0, 255])]
    fill: Vec<u8>,
    /// Jitter seed of the detector stub.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    let fill: [u8; 3] = args.fill.try_into().unwrap_or_else(|_| {
        eprintln!("--fill takes exactly three values");
        std::process::exit(2);
    });
    let at = |port| SocketAddr::from(([127, 0, 0, 1], port));
    let inpaint = spawn_inpaint_at(InpaintMode::SolidFill(fill), at(args.inpaint_port))
        .await
        .unwrap_or_else(|e| panic!("binding inpaint port {}: {e}", args.inpaint_port));
    let detect = spawn_detect_at(DetectMode::Content { target: fill, seed: args.seed }, at(args.detect_port))
        .await
        .unwrap_or_else(|e| panic!("binding detect port {}: {e}", args.detect_port));
    eprintln!("inpaint stub on {}, detect stub on {}", inpaint.url(), detect.url());
    let _ = tokio::signal::ctrl_c().await;
}

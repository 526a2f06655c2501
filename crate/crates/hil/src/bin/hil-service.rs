use clap::Parser;
use hil::services::{run_service, ServiceContext, ServiceKind, ServiceOptions};
use std::path::PathBuf;

/// Runs one plugin service against a HiL server.
#[derive(Parser, Debug)]
#[command(name = "hil-service", version)]
struct Args {
    /// vehicle_interface, sensor_interface, scenario_configurator,
    /// groundtruth_publisher or map (with or without the `_service` suffix).
    #[arg(long)]
    name: String,
    #[arg(long, default_value = "ws://127.0.0.1:7401")]
    control_url: String,
    /// Map service: write the point-cloud map here.
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Map service: ground sampling step in meters.
    #[arg(long, default_value_t = 0.5)]
    grid_step: f64,
    /// Sensor service: niceness of camera and lidar threads.
    #[arg(long, default_value_t = 10)]
    nice: i32,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let Some(kind) = ServiceKind::from_name(&args.name) else {
        eprintln!("error: unknown service {}", args.name);
        std::process::exit(2);
    };
    let options = ServiceOptions {
        map_out: args.map_out,
        grid_step: args.grid_step,
        heavy_sensor_nice: args.nice,
        ..ServiceOptions::default()
    };
    let result = ServiceContext::connect(kind, &args.control_url, None, options).and_then(|ctx| run_service(&ctx));
    if let Err(e) = result {
        eprintln!("error: {kind}: {e}");
        std::process::exit(1);
    }
}

use clap::Parser;
use hil::config::{parse_mode, ServerConfig, SyncPrimary};
use hil::server::HilServer;
use hil::services::{ServiceHost, ServiceKind, ServiceOptions};
use hil_core::TickMode;
use std::path::PathBuf;
use std::time::{Duration, Instant};

/// Runs the simulation world, the bus bridge and the control channel.
#[derive(Parser, Debug)]
#[command(name = "hil-server", version)]
struct Args {
    /// Road network JSON.
    #[arg(long, required_unless_present = "print_schema")]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// sync_realtime, sync_fast or async.
    #[arg(long, default_value = "sync_realtime", value_parser = parse_mode)]
    mode: TickMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "print_schema")]
    sensor_types: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_schema")]
    sensor_mounts: Option<PathBuf>,
    #[arg(long)]
    actuation: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7400")]
    bus_listen: String,
    #[arg(long, default_value = "127.0.0.1:7401")]
    control_listen: String,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Bus address of a primary server to replicate actors from.
    #[arg(long, requires = "sync_primary_control")]
    sync_primary_bus: Option<String>,
    /// Control URL of that primary (ws://host:port).
    #[arg(long, requires = "sync_primary_bus")]
    sync_primary_control: Option<String>,
    /// Services to host in-process: comma separated names, or `all`.
    #[arg(long, value_delimiter = ',')]
    services: Vec<String>,
    /// Point-cloud map output for an in-process map service.
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    duration: Option<f64>,
    /// Print the control channel JSON schema and exit.
    #[arg(long)]
    print_schema: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.print_schema {
        print!("{}", hil_transport::control::SCHEMA);
        return;
    }
    let mut cfg = ServerConfig::new(
        args.map.expect("required by clap"),
        args.sensor_types.expect("required by clap"),
        args.sensor_mounts.expect("required by clap"),
    );
    cfg.dt = args.dt;
    cfg.mode = args.mode;
    cfg.seed = args.seed;
    cfg.bus_listen = args.bus_listen;
    cfg.control_listen = args.control_listen;
    cfg.actuation = args.actuation;
    cfg.scenario = args.scenario;
    cfg.sync_primary = args
        .sync_primary_bus
        .zip(args.sync_primary_control)
        .map(|(bus, control_url)| SyncPrimary { bus, control_url });

    let kinds: Vec<ServiceKind> = if args.services.iter().any(|s| s == "all") {
        ServiceKind::ALL.to_vec()
    } else {
        match args.services.iter().map(|s| ServiceKind::from_name(s).ok_or(s)).collect::<Result<_, _>>() {
            Ok(k) => k,
            Err(name) => {
                eprintln!("error: unknown service {name}");
                std::process::exit(2);
            }
        }
    };

    let server = match HilServer::start(cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    println!("bus {}  control {}", server.bus_addr(), server.control_url());
    let options = ServiceOptions { map_out: args.map_out, ..ServiceOptions::default() };
    let mut host = ServiceHost::new(server.control_url(), Some(server.bus().clone()), options);
    for kind in kinds {
        if let Err(e) = host.start(kind) {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }

    let started = Instant::now();
    loop {
        std::thread::sleep(Duration::from_millis(200));
        if args.duration.is_some_and(|d| started.elapsed().as_secs_f64() >= d) {
            break;
        }
    }
    host.stop_all();
    let report = server.stop();
    println!(
        "{} ticks, sim {:.3} s, wall {:.3} s, {} overruns",
        report.ticks,
        report.sim_time,
        report.wall_time,
        report.overruns.len()
    );
}

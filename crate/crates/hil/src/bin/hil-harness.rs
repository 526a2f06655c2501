use clap::{Parser, Subcommand};
use hil::config::{parse_mode, ServerConfig};
use hil::harness::{compare_report, measure, run_track_experiment, ExperimentConfig, MetricsRecord, ReferenceTable};
use hil_core::TickMode;
use hil_transport::{BusHandle, RemoteBus};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

/// Topic measurement, reference comparison and track experiments.
#[derive(Parser, Debug)]
#[command(name = "hil-harness", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure period and payload statistics of live topics.
    Measure {
        #[arg(long, default_value = "127.0.0.1:7400")]
        bus: String,
        #[arg(long = "topic", required = true)]
        topics: Vec<String>,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        /// Seconds without a message before a topic counts as silent.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// Newline-delimited JSON log of every arrival.
        #[arg(long)]
        raw_log: Option<PathBuf>,
        /// Write the records as JSON, for `compare`.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare measured records against a reference table.
    Compare {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "metrics.json")]
        records: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Drive the ego around a lane loop under each scenario.
    Experiment {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        sensor_types: PathBuf,
        #[arg(long)]
        sensor_mounts: PathBuf,
        #[arg(long)]
        actuation: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value = "sync_fast", value_parser = parse_mode)]
        mode: TickMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, num_args = 1.., required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        laps: u32,
        #[arg(long)]
        no_sensors: bool,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn run(args: Args) -> Result<bool, String> {
    match args.command {
        Command::Measure { bus, topics, samples, timeout, raw_log, json } => {
            let remote = RemoteBus::connect(bus.as_str()).map_err(|e| format!("{bus}: {e}"))?;
            let results = measure(&BusHandle::Remote(remote), &topics, samples, Duration::from_secs_f64(timeout), raw_log.as_deref())
                .map_err(|e| e.to_string())?;
            let mut records = Vec::new();
            let mut all_ok = true;
            for r in results {
                match r {
                    Ok(m) => {
                        println!(
                            "{:<44} n={:<6} mean {:>8.3} ms  sd {:>7.3}  p99 {:>8.3}  {:>10.0} B  {}  drops {}",
                            m.topic,
                            m.sample_count,
                            m.mean_period_ms,
                            m.stddev_period_ms,
                            m.p99_period_ms,
                            m.mean_payload_bytes,
                            m.resolution.as_deref().unwrap_or("-"),
                            m.drops
                        );
                        records.push(m);
                    }
                    Err(e) => {
                        all_ok = false;
                        println!("{e}");
                    }
                }
            }
            if let Some(path) = json {
                write_json(&path, &records)?;
            }
            Ok(all_ok)
        }
        Command::Compare { reference, records, json } => {
            let table = ReferenceTable::load(&reference).map_err(|e| e.to_string())?;
            let text = std::fs::read_to_string(&records).map_err(|e| format!("{}: {e}", records.display()))?;
            let records: Vec<MetricsRecord> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", records.display()))?;
            let report = compare_report(&records, &table);
            print!("{}", report.render());
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            Ok(report.passed())
        }
        Command::Experiment {
            map,
            sensor_types,
            sensor_mounts,
            actuation,
            dt,
            mode,
            seed,
            scenarios,
            laps,
            no_sensors,
            log_dir,
            json,
        } => {
            let mut server = ServerConfig::new(map, sensor_types, sensor_mounts);
            server.dt = dt;
            server.mode = mode;
            server.seed = seed;
            server.actuation = actuation;
            let cfg = ExperimentConfig { server, scenarios, laps, sensors: !no_sensors, log_dir };
            let report = run_track_experiment(&cfg).map_err(|e| e.to_string())?;
            print!("{}", report.render());
            for run in &report.runs {
                for m in &run.topics {
                    println!("  {:<18} {:<44} {:>8.3} ms  n={}", run.scenario, m.topic, m.mean_period_ms, m.sample_count);
                }
            }
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

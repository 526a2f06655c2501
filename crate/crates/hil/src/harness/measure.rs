//! Per-topic period and bandwidth measurement.

use super::HarnessError;
use hil_core::sensors::camera::Image;
use hil_core::sensors::lidar::PointCloud;
use hil_transport::{BusHandle, Qos};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{Duration, Instant};

/// Queue depth of measuring subscriptions; deep enough that a briefly
/// descheduled harness thread does not drop.
const MEASURE_DEPTH: usize = 256;

/// One received message as logged for offline recomputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Receive time, seconds since the measurement started.
    pub wall: f64,
    /// Publisher stamp (sim time).
    pub stamp: f64,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawLine<'a> {
    topic: &'a str,
    #[serde(flatten)]
    arrival: Arrival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicLog {
    pub topic: String,
    pub arrivals: Vec<Arrival>,
    /// Messages evicted from the measuring queue.
    pub drops: u64,
    pub resolution: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub topic: String,
    /// Number of inter-arrival periods; one less than messages received.
    pub sample_count: usize,
    pub mean_period_ms: f64,
    pub stddev_period_ms: f64,
    pub p99_period_ms: f64,
    /// Mean period from publisher stamps, for comparison with the receive
    /// side.
    pub mean_stamp_period_ms: f64,
    pub mean_payload_bytes: f64,
    pub resolution: Option<String>,
    pub drops: u64,
}

/// Image size or point count, for topics that carry either.
pub fn describe_payload(payload: &[u8]) -> Option<String> {
    if let Ok((w, h)) = Image::peek_size(payload) {
        return Some(format!("{w}x{h}"));
    }
    PointCloud::peek_count(payload).ok().map(|n| format!("{n} points"))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TopicLog {
    /// Stats over the first `periods` inter-arrival periods, or all of them.
    pub fn metrics(&self, periods: Option<usize>) -> Result<MetricsRecord, HarnessError> {
        let n = periods.map_or(self.arrivals.len(), |p| (p + 1).min(self.arrivals.len()));
        let used = &self.arrivals[..n];
        if used.len() < 3 {
            return Err(HarnessError::NoData { topic: self.topic.clone(), received: used.len() });
        }
        let wall: Vec<f64> = used.windows(2).map(|w| (w[1].wall - w[0].wall) * 1e3).collect();
        let stamp: Vec<f64> = used.windows(2).map(|w| (w[1].stamp - w[0].stamp) * 1e3).collect();
        let (mean, std) = mean_std(&wall);
        let mut sorted = wall.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(MetricsRecord {
            topic: self.topic.clone(),
            sample_count: wall.len(),
            mean_period_ms: mean,
            stddev_period_ms: std,
            p99_period_ms: percentile(&sorted, 99.0),
            mean_stamp_period_ms: mean_std(&stamp).0,
            mean_payload_bytes: used.iter().map(|a| a.bytes as f64).sum::<f64>() / used.len() as f64,
            resolution: self.resolution.clone(),
            drops: self.drops,
        })
    }
}

/// Appends every arrival of every log as one JSON object per line.
pub fn write_raw_log(logs: &[TopicLog], out: &mut impl Write) -> std::io::Result<()> {
    for log in logs {
        for arrival in &log.arrivals {
            serde_json::to_writer(&mut *out, &RawLine { topic: &log.topic, arrival: *arrival })?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads a raw log back into per-topic logs, in first-seen topic order.
pub fn read_raw_log(path: &Path) -> Result<Vec<TopicLog>, HarnessError> {
    #[derive(Deserialize)]
    struct Line {
        topic: String,
        #[serde(flatten)]
        arrival: Arrival,
    }
    let file = std::fs::File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut logs: Vec<TopicLog> = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match logs.iter_mut().find(|l| l.topic == parsed.topic) {
            Some(l) => l.arrivals.push(parsed.arrival),
            None => logs.push(TopicLog { topic: parsed.topic, arrivals: vec![parsed.arrival], drops: 0, resolution: None }),
        }
    }
    Ok(logs)
}

/// Collects `samples` periods (so `samples + 1` messages) from each topic,
/// one thread per topic. A topic that delivers fewer than two messages within
/// `timeout` yields `NoData`; one that stalls part way keeps what it got.
pub fn collect(
    bus: &BusHandle,
    topics: &[String],
    samples: usize,
    timeout: Duration,
) -> Vec<Result<TopicLog, HarnessError>> {
    let start = Instant::now();
    let subs: Vec<_> = topics.iter().map(|t| bus.subscribe(t, Qos::BestEffort(MEASURE_DEPTH))).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = topics
            .iter()
            .zip(subs)
            .map(|(topic, sub)| {
                scope.spawn(move || {
                    let sub = sub.map_err(|e| HarnessError::Bus(e.to_string()))?;
                    let mut log = TopicLog { topic: topic.clone(), arrivals: Vec::with_capacity(samples + 1), drops: 0, resolution: None };
                    let mut deadline = start + timeout;
                    while log.arrivals.len() <= samples {
                        let now = Instant::now();
                        if now >= deadline {
                            break;
                        }
                        match sub.recv_timeout(deadline - now) {
                            Ok(Some(env)) => {
                                let wall = start.elapsed().as_secs_f64();
                                if log.resolution.is_none() {
                                    log.resolution = describe_payload(&env.payload);
                                }
                                log.arrivals.push(Arrival { wall, stamp: env.stamp, bytes: env.payload.len() });
                                // After the first message the timeout applies
                                // to gaps, not to the whole run.
                                deadline = Instant::now() + timeout;
                            }
                            Ok(None) => break,
                            Err(e) => return Err(HarnessError::Bus(e.to_string())),
                        }
                    }
                    log.drops = sub.drops();
                    if log.arrivals.len() < 2 {
                        return Err(HarnessError::NoData { topic: topic.clone(), received: log.arrivals.len() });
                    }
                    Ok(log)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("measure thread")).collect()
    })
}

/// Measures each topic and returns one record per topic in input order.
pub fn measure(
    bus: &BusHandle,
    topics: &[String],
    samples: usize,
    timeout: Duration,
    raw_log: Option<&Path>,
) -> Result<Vec<Result<MetricsRecord, HarnessError>>, HarnessError> {
    let logs = collect(bus, topics, samples, timeout);
    if let Some(path) = raw_log {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?,
        );
        let ok: Vec<TopicLog> = logs.iter().filter_map(|l| l.as_ref().ok().cloned()).collect();
        write_raw_log(&ok, &mut out).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    Ok(logs.into_iter().map(|l| l.and_then(|l| l.metrics(None))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hil_transport::{Bus, TopicSpec};

    fn synthetic(periods_ms: &[f64]) -> TopicLog {
        let mut t = 0.0;
        let mut arrivals = vec![Arrival { wall: 0.0, stamp: 0.0, bytes: 10 }];
        for p in periods_ms {
            t += p / 1e3;
            arrivals.push(Arrival { wall: t, stamp: t, bytes: 10 });
        }
        TopicLog { topic: "/t".into(), arrivals, drops: 0, resolution: None }
    }

    #[test]
    fn stats_on_known_periods() {
        let m = synthetic(&[40.0, 60.0, 40.0, 60.0]).metrics(None).unwrap();
        assert_eq!(m.sample_count, 4);
        assert!((m.mean_period_ms - 50.0).abs() < 1e-9);
        assert!((m.stddev_period_ms - 10.0).abs() < 1e-9);
        assert!((m.p99_period_ms - 60.0).abs() < 1e-9);
        assert_eq!(m.mean_payload_bytes, 10.0);
        let first_two = synthetic(&[40.0, 60.0, 40.0, 60.0]).metrics(Some(2)).unwrap();
        assert_eq!(first_two.sample_count, 2);
    }

    #[test]
    fn too_few_messages_is_no_data() {
        assert!(matches!(synthetic(&[50.0]).metrics(None), Err(HarnessError::NoData { .. })));
    }

    #[test]
    fn raw_log_recomputes_exactly() {
        let logs = vec![synthetic(&[49.0, 51.5, 50.25, 48.0]), TopicLog { topic: "/u".into(), ..synthetic(&[100.0, 99.0, 101.0]) }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.ndjson");
        write_raw_log(&logs, &mut std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_raw_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in logs.iter().zip(&back) {
            assert_eq!(a.metrics(None).unwrap(), b.metrics(None).unwrap());
        }
    }

    #[test]
    fn silent_topic_is_no_data() {
        let bus = Bus::new();
        let _p = bus.advertise(TopicSpec::new("/quiet", Qos::sensor())).unwrap();
        let out = collect(&BusHandle::Local(bus), &["/quiet".to_string()], 10, Duration::from_millis(100));
        assert!(matches!(out[0], Err(HarnessError::NoData { received: 0, .. })));
    }

    #[test]
    fn measures_a_paced_publisher() {
        let bus = Bus::new();
        let p = bus.advertise(TopicSpec::new("/paced", Qos::sensor())).unwrap();
        let handle = BusHandle::Local(bus.clone());
        let publisher = std::thread::spawn(move || {
            let start = Instant::now();
            for k in 1..=60u32 {
                let due = start + Duration::from_millis(10) * k;
                std::thread::sleep(due.saturating_duration_since(Instant::now()));
                let _ = p.publish(k as f64 * 0.01, vec![0u8; 32]);
            }
        });
        let out = measure(&handle, &["/paced".to_string()], 40, Duration::from_secs(2), None).unwrap();
        publisher.join().unwrap();
        let m = out[0].as_ref().unwrap();
        assert_eq!(m.sample_count, 40);
        assert!((m.mean_period_ms - 10.0).abs() < 1.0, "{m:?}");
        assert!((m.mean_stamp_period_ms - 10.0).abs() < 1e-6);
        assert_eq!(m.mean_payload_bytes, 32.0);
    }
}

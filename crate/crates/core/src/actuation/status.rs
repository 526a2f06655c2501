//! Sim-time cadence for vehicle status records.

/// Status records go out at 50 Hz.
pub const STATUS_PERIOD: f64 = 0.02;

/// Yields the status stamps on the `k·period` grid that fall in each new
/// frame interval `(previous, now]`.
///
/// When frames are coarser than the period every frame yields several stamps,
/// all of which report that frame's state.
#[derive(Debug, Clone)]
pub struct StatusEmitter {
    period: f64,
    last_index: Option<u64>,
}

impl Default for StatusEmitter {
    fn default() -> Self {
        Self::new(STATUS_PERIOD)
    }
}

impl StatusEmitter {
    pub fn new(period: f64) -> Self {
        assert!(period > 0.0, "status period must be positive");
        Self { period, last_index: None }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// The first call only yields the latest grid stamp, so an emitter
    /// started late does not replay history.
    pub fn due(&mut self, sim_time: f64) -> Vec<f64> {
        if sim_time < 0.0 {
            return Vec::new();
        }
        let current = (sim_time / self.period + 1e-9).floor() as u64;
        let first = match self.last_index {
            None => current,
            Some(last) if current > last => last + 1,
            Some(_) => return Vec::new(),
        };
        self.last_index = Some(current);
        (first..=current).map(|k| k as f64 * self.period).collect()
    }
}

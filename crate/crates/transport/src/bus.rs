//! In-process publish/subscribe bus.
//!
//! Every subscriber owns a bounded queue. On a best-effort topic a full
//! queue sheds its oldest message and counts the drop; on a reliable topic
//! with a reliable subscriber the publisher waits for room instead.

use bytes::Bytes;
use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error("topic {topic} already advertised with {existing:?}, requested {requested:?}")]
    QosMismatch { topic: String, existing: TopicSpec, requested: TopicSpec },
    #[error("bus closed")]
    BusClosed,
    #[error("invalid topic name {0:?}")]
    InvalidTopic(String),
    #[error("queue depth must be at least 1")]
    ZeroDepth,
    #[error("invalid stamp {0}")]
    InvalidStamp(f64),
    #[error("remote bus: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Qos {
    BestEffort(usize),
    Reliable(usize),
}

impl Qos {
    pub fn depth(self) -> usize {
        match self {
            Qos::BestEffort(d) | Qos::Reliable(d) => d,
        }
    }

    pub fn is_reliable(self) -> bool {
        matches!(self, Qos::Reliable(_))
    }

    /// Sensor default.
    pub fn sensor() -> Self {
        Qos::BestEffort(1)
    }

    /// Control and status default.
    pub fn control() -> Self {
        Qos::Reliable(10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSpec {
    pub name: String,
    pub qos: Qos,
    pub latched: bool,
}

impl TopicSpec {
    /// `/tf_static` is latched by default, every other topic is not.
    pub fn new(name: impl Into<String>, qos: Qos) -> Self {
        let name = name.into();
        let latched = name == "/tf_static";
        Self { name, qos, latched }
    }

    pub fn latched(mut self, latched: bool) -> Self {
        self.latched = latched;
        self
    }

    pub fn validate(&self) -> Result<(), BusError> {
        validate_name(&self.name)?;
        if self.qos.depth() == 0 {
            return Err(BusError::ZeroDepth);
        }
        Ok(())
    }
}

pub fn validate_name(name: &str) -> Result<(), BusError> {
    let ok = name.len() > 1
        && name.len() <= u16::MAX as usize
        && name.starts_with('/')
        && !name.ends_with('/')
        && !name.contains("//")
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '/' | '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(BusError::InvalidTopic(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: Arc<str>,
    pub seq: u64,
    pub stamp: f64,
    pub payload: Bytes,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Envelope>,
    drops: u64,
    received: u64,
    closed: bool,
}

/// Bounded per-subscriber queue shared by the in-process bus and the TCP
/// client.
pub(crate) struct SubQueue {
    qos: Qos,
    state: Mutex<QueueState>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl SubQueue {
    pub(crate) fn new(qos: Qos) -> Arc<Self> {
        Arc::new(Self { qos, state: Mutex::new(QueueState::default()), not_empty: Condvar::new(), not_full: Condvar::new() })
    }

    /// Enqueues `env`. With `block` set the call waits for room; otherwise
    /// the oldest entry is evicted. Returns false when the queue is closed.
    pub(crate) fn push(&self, env: Envelope, block: bool, bus_closed: &AtomicBool) -> bool {
        let depth = self.qos.depth();
        let mut st = self.state.lock().unwrap();
        loop {
            if st.closed {
                return false;
            }
            if st.items.len() < depth {
                break;
            }
            if !block {
                st.items.pop_front();
                st.drops += 1;
                break;
            }
            if bus_closed.load(Ordering::Acquire) {
                return false;
            }
            st = self.not_full.wait_timeout(st, Duration::from_millis(50)).unwrap().0;
        }
        st.items.push_back(env);
        st.received += 1;
        drop(st);
        self.not_empty.notify_one();
        true
    }

    pub(crate) fn qos(&self) -> Qos {
        self.qos
    }

    pub(crate) fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    fn pop(&self, deadline: Option<Instant>, bus_closed: &AtomicBool) -> Result<Option<Envelope>, BusError> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(env) = st.items.pop_front() {
                drop(st);
                self.not_full.notify_one();
                return Ok(Some(env));
            }
            if st.closed || bus_closed.load(Ordering::Acquire) {
                return Err(BusError::BusClosed);
            }
            let wait = match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    (d - now).min(Duration::from_millis(100))
                }
                None => Duration::from_millis(100),
            };
            st = self.not_empty.wait_timeout(st, wait).unwrap().0;
        }
    }
}

struct Topic {
    name: Arc<str>,
    spec: Mutex<Option<TopicSpec>>,
    subscribers: Mutex<Vec<Arc<SubQueue>>>,
    latched: Mutex<Option<Envelope>>,
    /// Serializes publishers so each subscriber sees seq order.
    publish: Mutex<u64>,
    published: AtomicU64,
    publishers: AtomicU64,
}

impl Topic {
    fn new(name: &str) -> Self {
        Self {
            name: Arc::from(name),
            spec: Mutex::new(None),
            subscribers: Mutex::new(Vec::new()),
            latched: Mutex::new(None),
            publish: Mutex::new(0),
            published: AtomicU64::new(0),
            publishers: AtomicU64::new(0),
        }
    }
}

struct BusInner {
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    closed: AtomicBool,
}

/// Thread-safe pub/sub bus. Clones share the same topics.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicInfo {
    pub name: String,
    /// `None` while only latent subscriptions exist.
    pub spec: Option<TopicSpec>,
    pub subscribers: usize,
    pub publishers: u64,
    pub published: u64,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self { inner: Arc::new(BusInner { topics: RwLock::new(BTreeMap::new()), closed: AtomicBool::new(false) }) }
    }

    fn topic(&self, name: &str) -> Arc<Topic> {
        if let Some(t) = self.inner.topics.read().unwrap().get(name) {
            return t.clone();
        }
        self.inner.topics.write().unwrap().entry(name.to_string()).or_insert_with(|| Arc::new(Topic::new(name))).clone()
    }

    pub fn advertise(&self, spec: TopicSpec) -> Result<Publisher, BusError> {
        spec.validate()?;
        if self.is_closed() {
            return Err(BusError::BusClosed);
        }
        let topic = self.topic(&spec.name);
        {
            let mut current = topic.spec.lock().unwrap();
            match &*current {
                Some(existing) if *existing != spec => {
                    return Err(BusError::QosMismatch { topic: spec.name.clone(), existing: existing.clone(), requested: spec });
                }
                Some(_) => {}
                None => *current = Some(spec.clone()),
            }
        }
        topic.publishers.fetch_add(1, Ordering::Relaxed);
        Ok(Publisher { bus: self.clone(), topic, spec })
    }

    pub fn subscribe(&self, topic: &str, qos: Qos) -> Result<Subscription, BusError> {
        validate_name(topic)?;
        if qos.depth() == 0 {
            return Err(BusError::ZeroDepth);
        }
        let t = self.topic(topic);
        let queue = SubQueue::new(qos);
        // Hold the publish lock so the latched message and live traffic
        // cannot interleave out of order.
        let _order = t.publish.lock().unwrap();
        if let Some(env) = t.latched.lock().unwrap().clone() {
            queue.push(env, false, &self.inner.closed);
        }
        t.subscribers.lock().unwrap().push(queue.clone());
        Ok(Subscription { queue, topic: t.name.clone(), bus: Some(self.clone()) })
    }

    /// Directory of every known topic, sorted by name.
    pub fn topics(&self) -> Vec<TopicInfo> {
        self.inner
            .topics
            .read()
            .unwrap()
            .values()
            .map(|t| TopicInfo {
                name: t.name.to_string(),
                spec: t.spec.lock().unwrap().clone(),
                subscribers: t.subscribers.lock().unwrap().len(),
                publishers: t.publishers.load(Ordering::Relaxed),
                published: t.published.load(Ordering::Relaxed),
            })
            .collect()
    }

    pub fn topic_spec(&self, name: &str) -> Option<TopicSpec> {
        self.inner.topics.read().unwrap().get(name).and_then(|t| t.spec.lock().unwrap().clone())
    }

    /// Closes the bus: publishes fail, blocked publishers and receivers wake.
    pub fn close(&self) {
        self.inner.closed.store(true, Ordering::Release);
        for t in self.inner.topics.read().unwrap().values() {
            for q in t.subscribers.lock().unwrap().iter() {
                q.close();
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    fn detach(&self, topic: &str, queue: &Arc<SubQueue>) {
        if let Some(t) = self.inner.topics.read().unwrap().get(topic) {
            t.subscribers.lock().unwrap().retain(|q| !Arc::ptr_eq(q, queue));
        }
    }
}

pub struct Publisher {
    bus: Bus,
    topic: Arc<Topic>,
    spec: TopicSpec,
}

impl Publisher {
    pub fn spec(&self) -> &TopicSpec {
        &self.spec
    }

    /// Publishes one message and returns the number of subscribers it was
    /// delivered to.
    pub fn publish(&self, stamp: f64, payload: impl Into<Bytes>) -> Result<usize, BusError> {
        if !(stamp >= 0.0 && stamp.is_finite()) {
            return Err(BusError::InvalidStamp(stamp));
        }
        if self.bus.is_closed() {
            return Err(BusError::BusClosed);
        }
        let mut seq = self.topic.publish.lock().unwrap();
        *seq += 1;
        let env = Envelope { topic: self.topic.name.clone(), seq: *seq, stamp, payload: payload.into() };
        if self.spec.latched {
            *self.topic.latched.lock().unwrap() = Some(env.clone());
        }
        let subscribers = self.topic.subscribers.lock().unwrap().clone();
        let topic_reliable = self.spec.qos.is_reliable();
        let mut delivered = 0;
        for q in subscribers {
            let block = topic_reliable && q.qos.is_reliable();
            if q.push(env.clone(), block, &self.bus.inner.closed) {
                delivered += 1;
            } else if self.bus.is_closed() {
                return Err(BusError::BusClosed);
            }
        }
        self.topic.published.fetch_add(1, Ordering::Relaxed);
        Ok(delivered)
    }
}

impl std::fmt::Debug for Publisher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Publisher").field("spec", &self.spec).finish()
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.topic.publishers.fetch_sub(1, Ordering::Relaxed);
    }
}

/// Pull handle on one topic. Dropping it detaches from the bus.
pub struct Subscription {
    queue: Arc<SubQueue>,
    topic: Arc<str>,
    bus: Option<Bus>,
}

static NEVER_CLOSED: AtomicBool = AtomicBool::new(false);

impl Subscription {
    pub(crate) fn detached(topic: &str, queue: Arc<SubQueue>) -> Self {
        Self { queue, topic: Arc::from(topic), bus: None }
    }

    fn closed_flag(&self) -> &AtomicBool {
        self.bus.as_ref().map_or(&NEVER_CLOSED, |b| &b.inner.closed)
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn qos(&self) -> Qos {
        self.queue.qos
    }

    /// Blocks until a message arrives or the bus closes.
    pub fn recv(&self) -> Result<Envelope, BusError> {
        loop {
            if let Some(env) = self.queue.pop(None, self.closed_flag())? {
                return Ok(env);
            }
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        self.queue.pop(Some(Instant::now() + timeout), self.closed_flag())
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.pop(Some(Instant::now()), self.closed_flag()).ok().flatten()
    }

    /// Messages evicted from this queue because it was full.
    pub fn drops(&self) -> u64 {
        self.queue.state.lock().unwrap().drops
    }

    /// Messages enqueued, including ones later dropped.
    pub fn received(&self) -> u64 {
        self.queue.state.lock().unwrap().received
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().unwrap().items.len()
    }

    /// Runs `f` for every message on a dedicated thread until the bus
    /// closes or `f` returns false.
    pub fn spawn_callback<F>(self, mut f: F) -> JoinHandle<()>
    where
        F: FnMut(Envelope) -> bool + Send + 'static,
    {
        std::thread::spawn(move || {
            while let Ok(env) = self.recv() {
                if !f(env) {
                    break;
                }
            }
        })
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.close();
        if let Some(bus) = &self.bus {
            bus.detach(&self.topic, &self.queue);
        }
    }
}

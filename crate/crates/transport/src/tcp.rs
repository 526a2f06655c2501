//! TCP bridge exposing a [`Bus`] to other processes.
//!
//! A client sends `Advertise` and `Subscribe` frames whose payload is the
//! QoS (mode u8: 0 best effort, 1 reliable; depth u32; latched u8) and waits
//! for `Ack` or `Error` (UTF-8 reason). `Data` frames from the client are
//! republished on the server bus, which assigns seq; `Data` frames from the
//! server carry the server envelope unchanged.

use crate::bus::{Bus, BusError, Envelope, Publisher, Qos, SubQueue, Subscription, TopicSpec};
use crate::wire::{Frame, FrameKind};
use bytes::Bytes;
use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

pub(crate) fn encode_qos(qos: Qos, latched: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(6);
    out.push(qos.is_reliable() as u8);
    out.extend_from_slice(&(qos.depth() as u32).to_le_bytes());
    out.push(latched as u8);
    out
}

pub(crate) fn decode_qos(raw: &[u8]) -> Option<(Qos, bool)> {
    if raw.len() != 6 {
        return None;
    }
    let depth = u32::from_le_bytes(raw[1..5].try_into().ok()?) as usize;
    let qos = match raw[0] {
        0 => Qos::BestEffort(depth),
        1 => Qos::Reliable(depth),
        _ => return None,
    };
    Some((qos, raw[5] != 0))
}

type SharedWriter = Arc<Mutex<BufWriter<TcpStream>>>;

fn send(writer: &SharedWriter, frame: &Frame) -> io::Result<()> {
    let mut w = writer.lock().unwrap();
    frame.write_to(&mut *w)?;
    w.flush()
}

/// Listening side of the bridge.
pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl BusServer {
    pub fn bind(bus: Bus, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let connections: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let open = connections.clone();
        let accept = std::thread::Builder::new().name("bus-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        if let Ok(clone) = stream.try_clone() {
                            open.lock().unwrap().push(clone);
                        }
                        let bus = bus.clone();
                        let flag = flag.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(bus, stream, flag) {
                                log::debug!("bus connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("bus accept failed: {e}"),
                }
            }
        })?;
        Ok(Self { addr, stop, connections, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if !self.stop.swap(true, Ordering::AcqRel) {
            let _ = TcpStream::connect(self.addr);
            if let Some(h) = self.accept.take() {
                let _ = h.join();
            }
            for c in self.connections.lock().unwrap().drain(..) {
                let _ = c.shutdown(Shutdown::Both);
            }
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(bus: Bus, stream: TcpStream, stop: Arc<AtomicBool>) -> Result<(), crate::wire::WireError> {
    stream.set_nodelay(true)?;
    let writer: SharedWriter = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let alive = Arc::new(AtomicBool::new(true));
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut publishers: HashMap<String, Publisher> = HashMap::new();
    let mut subscribed: HashMap<String, JoinHandle<()>> = HashMap::new();
    let result = loop {
        if stop.load(Ordering::Acquire) {
            break Ok(());
        }
        let frame = match Frame::read_from(&mut reader) {
            Ok(f) => f,
            Err(e) => break Err(e),
        };
        match frame.kind {
            FrameKind::Advertise => {
                let reply = match decode_qos(&frame.payload) {
                    Some((qos, latched)) => {
                        match bus.advertise(TopicSpec::new(frame.topic.clone(), qos).latched(latched)) {
                            Ok(p) => {
                                publishers.insert(frame.topic.clone(), p);
                                Frame::control(FrameKind::Ack, &frame.topic, Bytes::new())
                            }
                            Err(e) => Frame::control(FrameKind::Error, &frame.topic, e.to_string().into_bytes()),
                        }
                    }
                    None => Frame::control(FrameKind::Error, &frame.topic, b"bad qos".to_vec()),
                };
                send(&writer, &reply)?;
            }
            FrameKind::Subscribe => {
                let sub = match decode_qos(&frame.payload) {
                    _ if subscribed.contains_key(&frame.topic) => Err("already subscribed".to_string()),
                    Some((qos, _)) => bus.subscribe(&frame.topic, qos).map_err(|e| e.to_string()),
                    None => Err("bad qos".to_string()),
                };
                match sub {
                    Ok(sub) => {
                        send(&writer, &Frame::control(FrameKind::Ack, &frame.topic, Bytes::new()))?;
                        let (w, alive) = (writer.clone(), alive.clone());
                        subscribed.insert(frame.topic.clone(), std::thread::spawn(move || forward(sub, w, alive)));
                    }
                    Err(reason) => send(&writer, &Frame::control(FrameKind::Error, &frame.topic, reason.into_bytes()))?,
                }
            }
            FrameKind::Data => match publishers.get(&frame.topic) {
                Some(p) => {
                    if let Err(e) = p.publish(frame.stamp, frame.payload) {
                        send(&writer, &Frame::control(FrameKind::Error, &frame.topic, e.to_string().into_bytes()))?;
                    }
                }
                None => {
                    send(&writer, &Frame::control(FrameKind::Error, &frame.topic, b"not advertised".to_vec()))?;
                }
            },
            FrameKind::Ack | FrameKind::Error => {}
        }
    };
    alive.store(false, Ordering::Release);
    let _ = stream.shutdown(Shutdown::Both);
    for (_, h) in subscribed {
        let _ = h.join();
    }
    result
}

fn forward(sub: Subscription, writer: SharedWriter, alive: Arc<AtomicBool>) {
    while alive.load(Ordering::Acquire) {
        match sub.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(env)) => {
                let frame = Frame::data(&env.topic, env.seq, env.stamp, env.payload);
                if send(&writer, &frame).is_err() {
                    break;
                }
            }
            Ok(None) => {}
            Err(_) => break,
        }
    }
}

struct RemoteInner {
    writer: SharedWriter,
    stream: TcpStream,
    replies: Mutex<mpsc::Receiver<Frame>>,
    request: Mutex<()>,
    routes: Arc<Mutex<HashMap<String, Vec<Weak<SubQueue>>>>>,
    closed: Arc<AtomicBool>,
}

impl Drop for RemoteInner {
    fn drop(&mut self) {
        self.closed.store(true, Ordering::Release);
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Client side of the bridge, offering the same advertise/subscribe shape
/// as the in-process bus.
#[derive(Clone)]
pub struct RemoteBus {
    inner: Arc<RemoteInner>,
}

impl RemoteBus {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BusError> {
        let remote = |e: io::Error| BusError::Remote(e.to_string());
        let stream = TcpStream::connect(addr).map_err(remote)?;
        stream.set_nodelay(true).map_err(remote)?;
        let (tx, rx) = mpsc::channel();
        let routes: Arc<Mutex<HashMap<String, Vec<Weak<SubQueue>>>>> = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let mut reader = BufReader::new(stream.try_clone().map_err(remote)?);
        let (r, c) = (routes.clone(), closed.clone());
        std::thread::Builder::new()
            .name("bus-client".into())
            .spawn(move || {
                let never = AtomicBool::new(false);
                while let Ok(frame) = Frame::read_from(&mut reader) {
                    match frame.kind {
                        FrameKind::Data => {
                            let queues: Vec<Arc<SubQueue>> = {
                                let mut routes = r.lock().unwrap();
                                let Some(list) = routes.get_mut(&frame.topic) else { continue };
                                list.retain(|w| w.strong_count() > 0);
                                list.iter().filter_map(Weak::upgrade).collect()
                            };
                            let env = Envelope {
                                topic: Arc::from(frame.topic.as_str()),
                                seq: frame.seq,
                                stamp: frame.stamp,
                                payload: frame.payload,
                            };
                            for q in queues {
                                let reliable = q.qos().is_reliable();
                                q.push(env.clone(), reliable, &never);
                            }
                        }
                        FrameKind::Ack | FrameKind::Error => {
                            if tx.send(frame).is_err() {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                c.store(true, Ordering::Release);
                for list in r.lock().unwrap().values() {
                    for q in list.iter().filter_map(Weak::upgrade) {
                        q.close();
                    }
                }
            })
            .map_err(remote)?;
        let writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone().map_err(remote)?)));
        Ok(Self {
            inner: Arc::new(RemoteInner {
                writer,
                stream,
                replies: Mutex::new(rx),
                request: Mutex::new(()),
                routes,
                closed,
            }),
        })
    }

    fn request(&self, frame: Frame) -> Result<(), BusError> {
        if self.is_closed() {
            return Err(BusError::BusClosed);
        }
        let _guard = self.inner.request.lock().unwrap();
        let replies = self.inner.replies.lock().unwrap();
        while let Ok(stale) = replies.try_recv() {
            log::warn!("remote bus error on {}: {}", stale.topic, String::from_utf8_lossy(&stale.payload));
        }
        send(&self.inner.writer, &frame).map_err(|_| BusError::BusClosed)?;
        loop {
            let reply = replies.recv_timeout(REQUEST_TIMEOUT).map_err(|_| BusError::BusClosed)?;
            if reply.topic != frame.topic {
                log::warn!("remote bus error on {}: {}", reply.topic, String::from_utf8_lossy(&reply.payload));
                continue;
            }
            return match reply.kind {
                FrameKind::Ack => Ok(()),
                _ => {
                    let reason = String::from_utf8_lossy(&reply.payload).into_owned();
                    if reason.contains("already advertised") {
                        Err(BusError::Remote(format!("QoS mismatch: {reason}")))
                    } else {
                        Err(BusError::Remote(reason))
                    }
                }
            };
        }
    }

    pub fn advertise(&self, spec: TopicSpec) -> Result<RemotePublisher, BusError> {
        spec.validate()?;
        self.request(Frame::control(FrameKind::Advertise, &spec.name, encode_qos(spec.qos, spec.latched)))?;
        Ok(RemotePublisher { bus: self.clone(), spec })
    }

    /// One server-side subscription is made per topic; further local
    /// subscriptions to the same topic share it.
    pub fn subscribe(&self, topic: &str, qos: Qos) -> Result<Subscription, BusError> {
        crate::bus::validate_name(topic)?;
        if qos.depth() == 0 {
            return Err(BusError::ZeroDepth);
        }
        let queue = SubQueue::new(qos);
        let first = {
            let mut routes = self.inner.routes.lock().unwrap();
            let first = !routes.contains_key(topic);
            routes.entry(topic.to_string()).or_default().push(Arc::downgrade(&queue));
            first
        };
        if first {
            if let Err(e) = self.request(Frame::control(FrameKind::Subscribe, topic, encode_qos(qos, false))) {
                self.inner.routes.lock().unwrap().remove(topic);
                return Err(e);
            }
        }
        Ok(Subscription::detached(topic, queue))
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }
}

pub struct RemotePublisher {
    bus: RemoteBus,
    spec: TopicSpec,
}

impl RemotePublisher {
    pub fn spec(&self) -> &TopicSpec {
        &self.spec
    }

    pub fn publish(&self, stamp: f64, payload: impl Into<Bytes>) -> Result<(), BusError> {
        if !(stamp >= 0.0 && stamp.is_finite()) {
            return Err(BusError::InvalidStamp(stamp));
        }
        if self.bus.is_closed() {
            return Err(BusError::BusClosed);
        }
        send(&self.bus.inner.writer, &Frame::data(&self.spec.name, 0, stamp, payload.into())).map_err(|_| BusError::BusClosed)
    }
}

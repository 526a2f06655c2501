//! Message transport for the HiL simulator: an in-process pub/sub bus, a
//! TCP bridge that exposes it to other processes, and the JSON control
//! channel plugins use to register.

pub mod bus;
pub mod control;
pub mod tcp;
pub mod wire;

pub use bus::{Bus, BusError, Envelope, Publisher, Qos, Subscription, TopicInfo, TopicSpec};
pub use control::{ControlClient, ControlError, ControlServer, SessionInfo};
pub use tcp::{BusServer, RemoteBus, RemotePublisher};

use bytes::Bytes;

/// Either end of the bus. Services are written against this so they run
/// the same in-process and standalone.
#[derive(Clone)]
pub enum BusHandle {
    Local(Bus),
    Remote(RemoteBus),
}

pub enum AnyPublisher {
    Local(Publisher),
    Remote(RemotePublisher),
}

impl BusHandle {
    pub fn advertise(&self, spec: TopicSpec) -> Result<AnyPublisher, BusError> {
        match self {
            BusHandle::Local(b) => b.advertise(spec).map(AnyPublisher::Local),
            BusHandle::Remote(b) => b.advertise(spec).map(AnyPublisher::Remote),
        }
    }

    pub fn subscribe(&self, topic: &str, qos: Qos) -> Result<Subscription, BusError> {
        match self {
            BusHandle::Local(b) => b.subscribe(topic, qos),
            BusHandle::Remote(b) => b.subscribe(topic, qos),
        }
    }
}

impl From<Bus> for BusHandle {
    fn from(b: Bus) -> Self {
        BusHandle::Local(b)
    }
}

impl AnyPublisher {
    pub fn spec(&self) -> &TopicSpec {
        match self {
            AnyPublisher::Local(p) => p.spec(),
            AnyPublisher::Remote(p) => p.spec(),
        }
    }

    pub fn publish(&self, stamp: f64, payload: impl Into<Bytes>) -> Result<(), BusError> {
        match self {
            AnyPublisher::Local(p) => p.publish(stamp, payload).map(|_| ()),
            AnyPublisher::Remote(p) => p.publish(stamp, payload),
        }
    }
}

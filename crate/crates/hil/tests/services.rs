mod common;

use common::{light_config, scenario};
use hil::harness::collect;
use hil::pcmap::{map_point_count, PCMAP_MAGIC};
use hil::server::HilServer;
use hil::services::{ServiceHost, ServiceKind, ServiceOptions, ServiceStatus};
use hil::topics;
use hil_core::actuation::{ControlCommand, Gear, VehicleStatus};
use hil_core::TickMode;
use hil_transport::{BusHandle, ControlClient, Qos};
use std::time::Duration;

const WAIT: Duration = Duration::from_secs(10);

fn host(server: &HilServer, options: ServiceOptions) -> ServiceHost {
    ServiceHost::new(server.control_url(), Some(server.bus().clone()), options)
}

fn recv(server: &HilServer, topic: &str) -> hil_transport::Envelope {
    let sub = server.bus().subscribe(topic, Qos::BestEffort(4)).unwrap();
    sub.recv_timeout(WAIT).unwrap().unwrap_or_else(|| panic!("nothing on {topic}"))
}

#[test]
fn every_service_registers_and_publishes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = light_config(dir.path(), TickMode::SyncRealtime);
    cfg.scenario = Some(scenario("traffic"));
    let server = HilServer::start(cfg).unwrap();
    let map_out = dir.path().join("map.pcm");
    let mut services = host(&server, ServiceOptions { map_out: Some(map_out.clone()), grid_step: 2.0, ..Default::default() });
    services.start_all().unwrap();

    let registry = server.control().registry();
    for kind in ServiceKind::ALL {
        assert!(registry.plugins().iter().any(|p| p.name == kind.registration_name()), "{kind} missing");
    }
    for topic in [
        "/sensing/camera/front/image_raw",
        "/sensing/lidar/front/points",
        "/sensing/imu/imu",
        "/sensing/gnss/fix",
        "/sensing/odometry",
        topics::DETECTED_OBJECTS,
        topics::TRACKED_OBJECTS,
        topics::PREDICTED_OBJECTS,
        topics::VELOCITY_STATUS,
    ] {
        recv(&server, topic);
    }
    let gear = recv(&server, topics::GEAR_STATUS);
    assert_eq!(VehicleStatus::decode_gear(&gear.payload).unwrap().1, Gear::Drive);
    let weather = server.bus().subscribe(topics::WEATHER, Qos::Reliable(1)).unwrap();
    assert!(weather.recv_timeout(WAIT).unwrap().is_some());
    let map = server.bus().subscribe(topics::POINTCLOUD_MAP, Qos::Reliable(1)).unwrap();
    let env = map.recv_timeout(WAIT).unwrap().expect("point-cloud map");
    assert_eq!(&env.payload[..4], &PCMAP_MAGIC);
    let written = std::fs::read(&map_out).unwrap();
    assert_eq!(written, env.payload.to_vec());
    let road = hil_core::RoadNetwork::load(common::block_loop()).unwrap();
    let ground_only = hil::pcmap::map_points(&road, &hil_core::Snapshot::new(0.0, 0, None, vec![]), 2.0).unwrap().len();
    assert_eq!(map_point_count(&env.payload).unwrap(), ground_only);
}

#[test]
fn commands_drive_the_ego_through_the_vehicle_interface() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let mut services = host(&server, ServiceOptions::default());
    services.start(ServiceKind::VehicleInterface).unwrap();
    let start = server.latest_snapshot().map(|s| s.ego_actor().unwrap().pose.position);
    let cmd = server.bus().advertise(topics::control_cmd()).unwrap();
    for _ in 0..20 {
        cmd.publish(0.0, ControlCommand::new(0.0, 2.0, 0.0).encode()).unwrap();
        std::thread::sleep(Duration::from_millis(50));
    }
    let snap = server.latest_snapshot().unwrap();
    let ego = snap.ego_actor().unwrap();
    assert!(ego.speed() > 0.5, "ego speed {}", ego.speed());
    if let Some(start) = start {
        assert!((ego.pose.position - start).norm() > 0.1);
    }
}

#[test]
fn a_killed_service_leaves_the_others_running_and_comes_back() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let mut services = host(&server, ServiceOptions::default());
    services.start(ServiceKind::SensorInterface).unwrap();
    services.start(ServiceKind::Groundtruth).unwrap();
    recv(&server, "/sensing/imu/imu");
    recv(&server, topics::DETECTED_OBJECTS);

    assert_eq!(services.kill(ServiceKind::Groundtruth).unwrap(), ServiceStatus::Exited);
    let bus = BusHandle::Local(server.bus().clone());
    let logs = collect(&bus, &["/sensing/imu/imu".to_string(), topics::DETECTED_OBJECTS.to_string()], 20, Duration::from_secs(1));
    let imu = logs[0].as_ref().unwrap().metrics(None).unwrap();
    assert!((imu.mean_period_ms - 50.0).abs() < 5.0, "{imu:?}");
    assert!(logs[1].is_err(), "ground truth still publishing after the kill");

    services.restart(ServiceKind::Groundtruth).unwrap();
    assert_eq!(services.status(ServiceKind::Groundtruth), ServiceStatus::Running);
    recv(&server, topics::DETECTED_OBJECTS);
}

#[test]
fn a_panicking_service_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let mut services = host(&server, ServiceOptions::default());
    services.start(ServiceKind::SensorInterface).unwrap();
    services.start(ServiceKind::VehicleInterface).unwrap();
    recv(&server, topics::VELOCITY_STATUS);
    let status = services.inject_fault(ServiceKind::SensorInterface).unwrap();
    assert!(matches!(status, ServiceStatus::Failed(_)), "{status:?}");
    recv(&server, topics::VELOCITY_STATUS);
    services.restart(ServiceKind::SensorInterface).unwrap();
    recv(&server, "/sensing/odometry");
}

#[test]
fn duplicate_service_names_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let mut services = host(&server, ServiceOptions::default());
    services.start(ServiceKind::ScenarioConfigurator).unwrap();
    assert!(services.start(ServiceKind::ScenarioConfigurator).is_err());
    let taken = ControlClient::register(&server.control_url(), ServiceKind::ScenarioConfigurator.registration_name());
    assert!(taken.is_err());
}

#[test]
fn disabled_sensors_go_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let mut services = host(&server, ServiceOptions::default());
    services.start(ServiceKind::SensorInterface).unwrap();
    recv(&server, "/sensing/gnss/fix");
    let (client, _) = ControlClient::register(&server.control_url(), "ui").unwrap();
    client
        .request(&hil_transport::control::ControlRequest::SetSensorEnabled { mount: "gnss".into(), enabled: false })
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let bus = BusHandle::Local(server.bus().clone());
    let logs = collect(&bus, &["/sensing/gnss/fix".to_string(), "/sensing/odometry".to_string()], 10, Duration::from_millis(800));
    assert!(logs[0].is_err(), "disabled gnss still publishing");
    assert!(logs[1].is_ok());
}

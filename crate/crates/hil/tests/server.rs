mod common;

use common::{block_loop, light_config, scenario};
use hil::config::ServerError;
use hil::server::HilServer;
use hil::topics;
use hil_core::TickMode;
use hil_transport::control::{ControlError, ControlRequest, ErrorCode};
use hil_transport::{ControlClient, Qos, RemoteBus};
use serde_json::{json, Map, Value};
use std::time::Duration;

fn error_code(result: Result<Value, ControlError>) -> ErrorCode {
    match result {
        Err(ControlError::Refused(failure)) => failure.code,
        other => panic!("expected a refusal, got {other:?}"),
    }
}

fn edit(value: Value) -> ControlRequest {
    ControlRequest::ScenarioEdit(serde_json::from_value(value).unwrap())
}

#[test]
fn session_matches_the_running_world() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let (_client, session) = ControlClient::register(&server.control_url(), "custom_probe").unwrap();
    assert_eq!(session.dt, 0.05);
    assert_eq!(session.mode, "SyncRealtime");
    assert_eq!(session.map_name, "block_loop");
    assert_eq!(session.sim_address, server.bus_addr().to_string());
    std::thread::sleep(Duration::from_millis(200));
    let snap = server.latest_snapshot().unwrap();
    assert_eq!(snap.ego.map(|id| id.0), Some(session.ego_actor_id));
    assert!(snap.ego_actor().is_some());
}

#[test]
fn clock_carries_every_tick() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = light_config(dir.path(), TickMode::SyncRealtime);
    cfg.dt = 0.01;
    let server = HilServer::start(cfg).unwrap();
    let sub = server.bus().subscribe(topics::CLOCK, Qos::Reliable(1024)).unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let report = server.stop();
    let mut stamps = Vec::new();
    while let Some(env) = sub.try_recv() {
        let value = f64::from_le_bytes(env.payload[..8].try_into().unwrap());
        assert_eq!(value, env.stamp);
        stamps.push(env.stamp);
    }
    assert!(stamps.len() > 10, "{} clock messages", stamps.len());
    for w in stamps.windows(2) {
        assert!((w[1] - w[0] - 0.01).abs() < 1e-9, "{} -> {}", w[0], w[1]);
    }
    let last = *stamps.last().unwrap();
    assert!((last - report.sim_time).abs() < 1e-9);
    assert!((report.sim_time - report.ticks as f64 * 0.01).abs() < 1e-9);
    assert_eq!(report.wall_steps.len() as u64, report.ticks);
}

#[test]
fn missing_map_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = light_config(dir.path(), TickMode::SyncFast);
    cfg.map = dir.path().join("nowhere.json");
    match HilServer::start(cfg) {
        Err(e) => assert!(e.to_string().contains("nowhere.json"), "{e}"),
        Ok(_) => panic!("server started without a map"),
    }
}

#[test]
fn malformed_scenario_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version":1,"sources":[{"x":0,"y":0,"delay_s":-1}]}"#).unwrap();
    let mut cfg = light_config(dir.path(), TickMode::SyncFast);
    cfg.scenario = Some(bad);
    assert!(matches!(HilServer::start(cfg), Err(ServerError::Scenario(_))));
}

#[test]
fn control_operations_reach_the_world() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = light_config(dir.path(), TickMode::SyncRealtime);
    cfg.scenario = Some(scenario("traffic"));
    let server = HilServer::start(cfg).unwrap();
    let (client, _) = ControlClient::register(&server.control_url(), "ui_probe").unwrap();

    let state = client.request(&ControlRequest::GetState).unwrap();
    let sensors = state["sensors"].as_array().unwrap();
    assert_eq!(sensors.len(), 5);
    assert!(sensors.iter().all(|s| s["enabled"] == json!(true)));
    assert_eq!(state["scenario"]["traffic_vehicles"].as_array().unwrap().len(), 2);

    let ack = client.request(&ControlRequest::SetSensorEnabled { mount: "lidar_front".into(), enabled: false }).unwrap();
    assert_eq!(ack, json!({"mount": "lidar_front", "enabled": false}));
    let enabled = server.bus().subscribe(topics::SENSOR_ENABLE, Qos::Reliable(4)).unwrap();
    let latest = enabled.recv_timeout(Duration::from_secs(1)).unwrap().unwrap();
    let states: Map<String, Value> = serde_json::from_slice(&latest.payload).unwrap();
    assert_eq!(states["lidar_front"], json!(false));
    assert_eq!(
        error_code(client.request(&ControlRequest::SetSensorEnabled { mount: "sonar".into(), enabled: true })),
        ErrorCode::UnknownMount
    );

    std::thread::sleep(Duration::from_millis(200));
    let before = server.latest_snapshot().unwrap().actors().len();
    let ack = client.request(&edit(json!({"add_static": {"kind": "prop", "x": 0.0, "y": 40.0}}))).unwrap();
    let spawned = ack["spawned"].as_u64().expect("prop spawned");
    std::thread::sleep(Duration::from_millis(200));
    let snap = server.latest_snapshot().unwrap();
    assert!(snap.actor(hil_core::ActorId(spawned)).is_some());
    assert_eq!(snap.actors().len(), before + 1);

    let blocked = edit(json!({"add_static": {"kind": "prop", "x": 0.2, "y": 40.0}}));
    assert_eq!(error_code(client.request(&blocked)), ErrorCode::SpawnBlocked);
    assert_eq!(error_code(client.request(&edit(json!({"teleport": {}})))), ErrorCode::InvalidEdit);
    let far = edit(json!({"add_static": {"kind": "prop", "x": 5000.0, "y": 0.0}}));
    assert_eq!(error_code(client.request(&far)), ErrorCode::InvalidEdit);

    let ego = server.session().ego_actor_id;
    assert_eq!(client.request(&ControlRequest::SyncRegister { ids: vec![ego] }).unwrap(), json!({"ids": [ego]}));
    let too_many: Vec<u64> = (0..21).collect();
    assert_eq!(
        error_code(client.request(&ControlRequest::SyncRegister { ids: too_many })),
        ErrorCode::CapacityExceeded
    );
    assert_eq!(
        error_code(client.request(&ControlRequest::SyncRegister { ids: vec![999_999] })),
        ErrorCode::UnknownActor
    );

    let plugins = client.request(&ControlRequest::ListPlugins).unwrap();
    let text = plugins.to_string();
    assert!(text.contains("ui_probe"), "{text}");
}

#[test]
fn remote_clients_see_the_bus() {
    let dir = tempfile::tempdir().unwrap();
    let server = HilServer::start(light_config(dir.path(), TickMode::SyncRealtime)).unwrap();
    let remote = RemoteBus::connect(server.bus_addr()).unwrap();
    let road = remote.subscribe(topics::ROAD_NETWORK, Qos::Reliable(1)).unwrap();
    let env = road.recv_timeout(Duration::from_secs(2)).unwrap().expect("latched road network");
    let net = hil_core::RoadNetwork::from_json(std::str::from_utf8(&env.payload).unwrap()).unwrap();
    assert_eq!(net.lanes().count(), hil_core::RoadNetwork::load(&block_loop()).unwrap().lanes().count());
    let frames = remote.subscribe(topics::FRAME, Qos::BestEffort(4)).unwrap();
    assert!(frames.recv_timeout(Duration::from_secs(2)).unwrap().is_some());
}

//! World assembly shared by the server and the experiment runner.

use crate::config::{ServerConfig, ServerError};
use hil_core::actuation::{ActuationConfig, ControlMailbox, StatusCell, VehicleInterface};
use hil_core::scenario::{ScenarioConfig, ScenarioEngine, VEHICLE_EXTENT};
use hil_core::sensors::{load_sensor_config, SensorSpec};
use hil_core::{ActorId, ActorKind, ManagedBy, Pose, RoadNetwork, World};
use std::sync::{Arc, Mutex};

pub struct Sim {
    pub world: World,
    pub road: Arc<RoadNetwork>,
    pub specs: Vec<SensorSpec>,
    pub scenario: Arc<Mutex<ScenarioEngine>>,
    pub mailbox: ControlMailbox,
    pub status: StatusCell,
    pub ego: Option<ActorId>,
}

/// First centerline point of the lowest-numbered lane, heading along it.
pub fn default_ego_start(road: &RoadNetwork) -> Pose {
    road.lanes().next().map(|lane| lane.pose_at(0.0)).unwrap_or_default()
}

impl Sim {
    /// Loads every referenced file, creates the world and, unless running as
    /// a sync secondary, spawns the ego with the vehicle interface attached.
    pub fn build(cfg: &ServerConfig) -> Result<Self, ServerError> {
        cfg.validate()?;
        let road = RoadNetwork::load(&cfg.map)
            .map_err(|e| ServerError::Map { path: cfg.map.clone(), reason: e.to_string() })?;
        let road = Arc::new(road);
        let specs = load_sensor_config(&cfg.sensor_types, &cfg.sensor_mounts)
            .map_err(|e| ServerError::Sensors(e.to_string()))?;
        let actuation = match &cfg.actuation {
            Some(path) => ActuationConfig::load(path).map_err(|e| ServerError::Actuation(e.to_string()))?,
            None => ActuationConfig::default(),
        };
        let scenario = match &cfg.scenario {
            Some(path) => ScenarioConfig::load(path).map_err(|e| ServerError::Scenario(e.to_string()))?,
            None => ScenarioConfig::default(),
        };
        Self::assemble(road, specs, actuation, scenario, cfg)
    }

    pub fn assemble(
        road: Arc<RoadNetwork>,
        specs: Vec<SensorSpec>,
        actuation: ActuationConfig,
        scenario: ScenarioConfig,
        cfg: &ServerConfig,
    ) -> Result<Self, ServerError> {
        let mut world =
            World::new(road.clone(), cfg.dt, cfg.mode, cfg.seed).map_err(|e| ServerError::World(e.to_string()))?;
        let vehicle = VehicleInterface::new(actuation).map_err(|e| ServerError::Actuation(e.to_string()))?;
        let mailbox = vehicle.mailbox();
        let status = vehicle.status_cell();
        let start = scenario
            .ego_start
            .map(|s| Pose::planar(s.position.x, s.position.y, s.yaw))
            .unwrap_or_else(|| default_ego_start(&road));
        let ego = if cfg.sync_primary.is_none() {
            let id = world
                .spawn_actor(ActorKind::EgoVehicle, start, VEHICLE_EXTENT, ManagedBy::External)
                .map_err(|e| ServerError::World(e.to_string()))?;
            world.set_ego_controller(Box::new(vehicle));
            Some(id)
        } else {
            None
        };
        let scenario = Arc::new(Mutex::new(ScenarioEngine::new(scenario).map_err(|e| ServerError::Scenario(e.to_string()))?));
        world.add_step_hook(Box::new(scenario.clone()));
        Ok(Self { world, road, specs, scenario, mailbox, status, ego })
    }
}

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use vrlab_core::experiment::Experiment;
use vrlab_core::ids::{ExperimentId, Timestamp, WorkerId};
use vrlab_core::panel::DeviceType;
use vrlab_core::sim::{enroll, panel_fixture, simulate, AgentProfile, SimConfig, SimReport, Study};
use vrlab_core::wire::LocalApi;
use vrlab_core::{Lab, LabOptions};

pub const PANEL_SEED: u64 = 1;
pub const T0: Timestamp = Timestamp::from_millis(1_500_000_000_000);

pub fn t(secs: i64) -> Timestamp {
    T0.plus_secs(secs)
}

pub struct Fixture {
    pub lab: Arc<RwLock<Lab>>,
    pub api: LocalApi,
    pub gear: Vec<WorkerId>,
}

impl Fixture {
    /// A lab holding the enrolled fixture panel.
    pub fn new() -> Self {
        let lab = Arc::new(RwLock::new(Lab::new(LabOptions { code_key: 0x5eed })));
        let api = LocalApi::new(lab.clone());
        enroll(&api, &panel_fixture(PANEL_SEED), T0).expect("fixture enrolls");
        let gear = lab.read().unwrap().eligible_workers(&BTreeSet::from([DeviceType::GearVR]));
        Self { lab, api, gear }
    }

    pub fn add(&self, exp: Experiment) -> ExperimentId {
        let id = exp.experiment_id.clone();
        let mut lab = self.lab.write().unwrap();
        lab.create_experiment(exp, t(1_000_000)).unwrap();
        lab.activate_experiment(&id, t(1_000_001)).unwrap();
        id
    }

    pub fn run(&self, id: &ExperimentId, agents: usize, seed: u64, profile: &(dyn Fn(usize) -> AgentProfile + Sync)) -> SimReport {
        let config = SimConfig::new(seed, t(2_000_000));
        simulate(&self.api, id, &self.gear[..agents], profile, &config).expect("simulation runs")
    }

    pub fn study(study: Study, agents: usize, seed: u64) -> (Self, ExperimentId, SimReport) {
        let f = Self::new();
        let id = f.add(study.experiment());
        let report = f.run(&id, agents, seed, &|_| study.profile());
        (f, id, report)
    }
}
pub mod walk;

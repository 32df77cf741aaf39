#![allow(dead_code)]

use std::sync::Arc;

use dtmapf_core::{Action, Coord, GridMap};
use dtmapf_harness::{DtPolicy, DtPolicyConfig, Policy, ScriptedPolicy, WaitPolicy};
use dtmapf_model::{DTConfig, Model};

pub fn tiny_model(seed: u64, context_len: usize) -> Arc<Model<f32>> {
    let config = DTConfig {
        context_len,
        param_seed: seed,
        ..DTConfig::tiny()
    };
    Arc::new(Model::new(config).unwrap())
}

pub fn dt_policies(model: &Arc<Model<f32>>, n: usize) -> Vec<Box<dyn Policy>> {
    (0..n)
        .map(|_| Box::new(DtPolicy::new(model.clone(), DtPolicyConfig::default())) as Box<dyn Policy>)
        .collect()
}

pub fn wait_policies(n: usize) -> Vec<Box<dyn Policy>> {
    (0..n).map(|_| Box::new(WaitPolicy) as Box<dyn Policy>).collect()
}

pub fn scripted(paths: &[Vec<Coord>]) -> Vec<Box<dyn Policy>> {
    paths
        .iter()
        .map(|p| Box::new(ScriptedPolicy::from_path(p)) as Box<dyn Policy>)
        .collect()
}

pub fn constant(actions: &[Action]) -> Vec<Box<dyn Policy>> {
    actions
        .iter()
        .map(|a| Box::new(ScriptedPolicy::new(vec![*a; 1000])) as Box<dyn Policy>)
        .collect()
}

pub fn map(text: &str) -> Arc<GridMap> {
    Arc::new(GridMap::parse_ascii(text).unwrap())
}

pub fn c(row: i32, col: i32) -> Coord {
    Coord::new(row, col)
}

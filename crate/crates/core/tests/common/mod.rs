#![allow(dead_code)]

use ecopart::model::CompartmentalModel;
use ecopart::odeint::OdeConfig;
use ecopart::partition::{decompose, PartitionTrajectory};

pub const HIPPE: &str = include_str!("../../fixtures/hippe.json");
pub const HALLAM: &str = include_str!("../../fixtures/hallam.json");

pub fn hippe() -> CompartmentalModel {
    CompartmentalModel::from_json(HIPPE).unwrap()
}

pub fn hippe_periodic() -> CompartmentalModel {
    hippe().with_input_sources("3 + sin(t), 3 + sin(2*t)").unwrap()
}

pub fn hallam() -> CompartmentalModel {
    CompartmentalModel::from_json(HALLAM).unwrap()
}

pub fn hallam_pulse() -> CompartmentalModel {
    hallam().with_input_sources("1, exp(-(t - 15)^2/2) + 0.1, 1").unwrap()
}

pub fn tight() -> OdeConfig {
    OdeConfig::with_tolerances(1e-11, 1e-13)
}

pub fn run(model: &CompartmentalModel, t_end: f64, cfg: &OdeConfig) -> PartitionTrajectory {
    decompose(model, 0.0, t_end, cfg).unwrap()
}

pub type Outcome = Result<String, String>;

pub fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod decoder;
pub mod decomposer;
pub mod dsmcpp;
pub mod gapp;
pub mod io;
pub mod model;
pub mod resample;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
pub use experiment::{run_experiment, Experiment, ExperimentConfig, Method};
pub use model::{Direction, KinematicsSeries, KinematicsVector, Nonlinearity, SpikeTrain, TuningModel};
pub use simulator::{make_mc_bc_scenario, ScenarioSpec, SyntheticDataset};

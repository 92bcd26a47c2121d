//! The flow network: layers, parameters, sensor modulator and checkpoints.

mod checkpoint;
mod config;
pub mod layers;
mod modulator;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, SensorVector, UnitSubset};
pub use modulator::{encode_sensor, modulate, Modulator, ModulatorTrace, SensorEncoder, SensorTrace};
pub use net::{
    init_parameters, CoarseFlow, LayerKind, LayerNode, LayerPath, Prediction, SensorFlowNet, StreamTrace,
};
pub use params::{Init, ParamId, ParamSet, ParamSpec, Parameters};

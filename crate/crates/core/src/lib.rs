//! Deterministic simulator of federated learning over an LEO satellite
//! constellation.
//!
//! The crate is organized around six subsystems:
//!
//! * [`constellation`] — Walker Delta geometry, circular-orbit propagation
//!   and ground-station visibility windows.
//! * [`link`] — free-space RF link budget (path loss, SNR, Shannon rate)
//!   and inter-satellite link transfer costs.
//! * [`timing`] — closed-form per-round timing model, used both to drive
//!   the event scheduler and as an analytic oracle against it.
//! * [`learning`] — datasets, class filtering, mini-batch SGD on a linear
//!   softmax/one-vs-all model, aggregation and evaluation.
//! * [`protocol`] — the star-topology FedAvg baseline and the orbital
//!   relay/retraining protocol as state machines.
//! * [`simcore`] — the deterministic discrete-event engine, scenario
//!   assembly, validation and trace collection.

pub mod constants;
pub mod constellation;
pub mod learning;
pub mod link;
pub mod protocol;
pub mod simcore;
pub mod timing;
pub mod trace;

pub use constellation::{
    Constellation, ConstellationConfig, EciPosition, GroundStation, OrbitalElements, SatelliteId,
    VisibilityWindow,
};
pub use learning::{Dataset, FilterPolicy, ModelParams, Sample, TrainConfig};
pub use link::{IslParams, IslTimeMode, LinkParams};
pub use simcore::{Scenario, Simulation};
pub use timing::{ComputeParams, RoundTiming};
pub use trace::{RoundTrace, SimTrace};

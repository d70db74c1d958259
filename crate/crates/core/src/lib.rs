//! Pothole detection, avoidance and maintenance.
//!
//! Vehicles scan the road with a simulated laser, seal each detected pothole
//! into a location-bound envelope, warn nearby vehicles and upload the
//! envelope through opportunistic WiFi access points. The server keeps a
//! pothole registry, weights every arc of the street multigraph by average
//! pothole depth times length, routes vehicles along minimum-damage paths and
//! ranks potholes for repair by how often they are reported.

pub mod comms;
pub mod detection;
pub mod error;
pub mod geocrypto;
pub mod ids;
pub mod maintenance;
pub mod network;
pub mod registry;
pub mod routing;
pub mod scenario;
pub mod server;
pub mod sim;
pub mod weighting;

pub use error::{Error, Result};
pub use ids::{ApId, ArcId, NodeId, PotholeId, VehicleId};
pub use network::StreetNetwork;
pub use registry::{DetectionReport, Location, Registry};
pub use routing::{gda, route, Route};
pub use scenario::Scenario;
pub use sim::{simulate, SimConfig, SimOutput};
pub use weighting::{preprocess, WeightedNetwork};

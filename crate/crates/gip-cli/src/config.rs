//! The JSON config file. Every key mirrors a command-line flag; flags win.
//!
//! ```json
//! {
//!   "seed": 42,
//!   "jobs": 4,
//!   "planar": false,
//!   "min_flow": 1,
//!   "nu": 0.8,
//!   "iterations": 100,
//!   "filter": "ocsvm",
//!   "neighbor_mode": "symmetrized",
//!   "seeds": 10,
//!   "nu_grid": [0.1, 0.2, 0.3],
//!   "r_grid": [0.05, 0.1],
//!   "attributes": ["population"],
//!   "planted": {
//!     "communities": 4, "zones_per_community": 30, "overlap_zones": 8,
//!     "lambda_in": 10.0, "lambda_out": 1.0, "grid_spacing": 500.0
//!   }
//! }
//! ```

use std::path::Path;

use gip_core::propagation::NeighborMode;
use gip_core::synth::PlantedConfig;
use gip_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planar: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_flow: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_mode: Option<NeighborMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedConfig>,
}

impl ConfigFile {
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<ConfigFile, Error> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse(origin.display().to_string(), e.to_string()))
    }
}

//! Planted overlapping-community instances on a planar grid.
//!
//! Communities are rectangular blocks of grid cells. Overlap zones sit
//! half a cell off the shared edge of two adjacent blocks and belong to both
//! in the ground truth. The flow from zone `i` to zone `j` is Poisson with
//! mean `λ / (1 + d_ij / spacing)`, where `λ` is `lambda_in` for zones that
//! share a community and `lambda_out` otherwise.

use std::collections::BTreeSet;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Cover;
use crate::geo::{planar_distance, DistanceMetric, GeoPoint};
use crate::rng;
use crate::spatial_graph::{FlowMatrix, Zone, ZoneSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub communities: usize,
    pub zones_per_community: usize,
    pub overlap_zones: usize,
    pub lambda_in: f64,
    pub lambda_out: f64,
    /// Grid cell size in meters.
    pub grid_spacing: f64,
    /// Columns of cells per block; `zones_per_community` must be a multiple.
    pub block_width: usize,
    /// Blocks per row of the block layout.
    pub blocks_per_row: usize,
    pub seed: u64,
}

fn default_block_width() -> usize {
    5
}

fn default_blocks_per_row() -> usize {
    2
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            communities: 4,
            zones_per_community: 30,
            overlap_zones: 8,
            lambda_in: 10.0,
            lambda_out: 1.0,
            grid_spacing: 500.0,
            block_width: default_block_width(),
            blocks_per_row: default_blocks_per_row(),
            seed: 0,
        }
    }
}

/// A generated instance; zones use planar coordinates in meters.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub zones: ZoneSet,
    pub flows: FlowMatrix,
    pub ground_truth: Cover,
    /// Ground-truth community ids per node before renumbering (block index).
    pub blocks: Vec<BTreeSet<usize>>,
}

impl PlantedInstance {
    pub fn true_overlap_nodes(&self) -> Vec<usize> {
        self.ground_truth.overlapping_nodes()
    }
}

struct Boundary {
    a: usize,
    b: usize,
    // slots as (x, y) in cell units
    slots: Vec<(f64, f64)>,
}

impl PlantedConfig {
    pub fn total_zones(&self) -> usize {
        self.communities * self.zones_per_community + self.overlap_zones
    }

    fn block_height(&self) -> usize {
        self.zones_per_community / self.block_width
    }

    fn block_origin(&self, block: usize) -> (usize, usize) {
        let row = block / self.blocks_per_row;
        let col = block % self.blocks_per_row;
        (col * self.block_width, row * self.block_height())
    }

    pub fn validate(&self) -> Result<()> {
        if self.communities == 0 || self.zones_per_community == 0 {
            return Err(Error::param("communities", "need at least one community with one zone"));
        }
        if !(self.lambda_out >= 0.0 && self.lambda_in > self.lambda_out && self.lambda_in.is_finite()) {
            return Err(Error::param("lambda", "need lambda_in > lambda_out >= 0"));
        }
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::param("grid_spacing", "must be positive"));
        }
        if self.block_width == 0 || !self.zones_per_community.is_multiple_of(self.block_width) {
            return Err(Error::param(
                "block_width",
                format!(
                    "{} zones per community cannot tile blocks {} cells wide",
                    self.zones_per_community, self.block_width
                ),
            ));
        }
        if self.blocks_per_row == 0 {
            return Err(Error::param("blocks_per_row", "must be positive"));
        }
        if self.overlap_zones >= self.total_zones() {
            return Err(Error::param("overlap_zones", "must be fewer than the total zone count"));
        }
        let slots: usize = self.boundaries().iter().map(|b| b.slots.len()).sum();
        if self.overlap_zones > slots {
            return Err(Error::param(
                "overlap_zones",
                format!("{} overlap zones but only {slots} boundary slots in this layout", self.overlap_zones),
            ));
        }
        Ok(())
    }

    fn boundaries(&self) -> Vec<Boundary> {
        let (w, h) = (self.block_width, self.block_height());
        let mut out = Vec::new();
        for a in 0..self.communities {
            let (x0, y0) = self.block_origin(a);
            let right = a + 1;
            if right < self.communities && right / self.blocks_per_row == a / self.blocks_per_row {
                let x = (x0 + w) as f64 - 0.5;
                let slots = (0..h).map(|t| (x, (y0 + t) as f64)).collect();
                out.push(Boundary { a, b: right, slots });
            }
            let below = a + self.blocks_per_row;
            if below < self.communities {
                let y = (y0 + h) as f64 - 0.5;
                let slots = (0..w).map(|t| ((x0 + t) as f64, y)).collect();
                out.push(Boundary { a, b: below, slots });
            }
        }
        out
    }
}

/// Evenly spaced slot indices for `count` zones on a boundary of `len` slots.
fn spread(count: usize, len: usize) -> Vec<usize> {
    (0..count).map(|s| ((2 * s + 1) * len) / (2 * count)).collect()
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedInstance> {
    cfg.validate()?;
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(cfg.total_zones());
    let mut blocks: Vec<BTreeSet<usize>> = Vec::with_capacity(cfg.total_zones());
    for b in 0..cfg.communities {
        let (x0, y0) = cfg.block_origin(b);
        for k in 0..cfg.zones_per_community {
            cells.push(((x0 + k % cfg.block_width) as f64, (y0 + k / cfg.block_width) as f64));
            blocks.push(BTreeSet::from([b]));
        }
    }
    let boundaries = cfg.boundaries();
    if cfg.overlap_zones > 0 {
        let nb = boundaries.len();
        let mut per = vec![0usize; nb];
        for o in 0..cfg.overlap_zones {
            per[o % nb] += 1;
        }
        // a boundary may be shorter than its share; spill over in order
        let mut spill = 0;
        for (k, b) in boundaries.iter().enumerate() {
            per[k] += spill;
            spill = per[k].saturating_sub(b.slots.len());
            per[k] -= spill;
        }
        for (b, &count) in boundaries.iter().zip(&per) {
            for slot in spread(count, b.slots.len()) {
                cells.push(b.slots[slot]);
                blocks.push(BTreeSet::from([b.a, b.b]));
            }
        }
    }

    let width = cells.len().to_string().len().max(4);
    let points: Vec<GeoPoint> = cells
        .iter()
        .map(|&(x, y)| GeoPoint::projected(x * cfg.grid_spacing, y * cfg.grid_spacing))
        .collect::<Result<_>>()?;
    let ids: Vec<String> = (0..cells.len()).map(|i| format!("z{i:0width$}")).collect();
    let zones = ZoneSet::new(
        ids.iter().zip(&points).map(|(id, &p)| Zone::new(id.clone(), p)).collect(),
        DistanceMetric::Planar,
    )?;

    let mut rng = rng::stream(cfg.seed, rng::STREAM_GENERATOR);
    let mut entries = Vec::new();
    for i in 0..cells.len() {
        for j in 0..cells.len() {
            if i == j {
                continue;
            }
            let shared = !blocks[i].is_disjoint(&blocks[j]);
            let lambda = if shared { cfg.lambda_in } else { cfg.lambda_out };
            let mean = lambda / (1.0 + planar_distance(points[i], points[j]) / cfg.grid_spacing);
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive finite mean").sample(&mut rng) as u64;
            if count > 0 {
                entries.push((ids[i].clone(), ids[j].clone(), count));
            }
        }
    }
    let (flows, _) = FlowMatrix::from_counts(entries, 1)?;
    let ground_truth = Cover::from_memberships(&blocks)?;
    Ok(PlantedInstance { zones, flows, ground_truth, blocks })
}

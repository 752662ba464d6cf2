//! Per-step state representation of an ego pedestrian: position offsets,
//! polar occupancy of surrounding agents, and k-NN scene semantics.

mod cache;
mod grid;
mod semantics;
mod standardize;

use std::collections::HashMap;

pub use cache::{read_cache, write_cache, CacheEntry, CacheMeta, FeatureCache, CACHE_VERSION};
pub use grid::{polar_occupancy, PolarGridConfig};
pub use semantics::{clamp_to_map, semantic_histogram, SemanticConfig};
pub use standardize::FeatureStats;

use crate::dataset::{frame_index, AgentTrack, AgentType, SceneMap, SemanticLabel, TrajectoryWindow};

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("need at least 2 positions to form offsets, got {0}")]
    TooFewPositions(usize),
    #[error("scene map for {0} is missing")]
    MissingScene(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature cache: {0}")]
    Cache(String),
}

/// `out[i] = positions[i + 1] - positions[i]`.
pub fn compute_offsets(positions: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, ContextError> {
    if positions.len() < 2 {
        return Err(ContextError::TooFewPositions(positions.len()));
    }
    Ok(positions
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect())
}

/// The κ offsets a model must predict: the first is taken from the last
/// observed position, the rest between consecutive future positions.
pub fn future_offsets(window: &TrajectoryWindow) -> Vec<[f64; 2]> {
    let mut positions = vec![window.last_observed()];
    positions.extend(window.future_meters());
    compute_offsets(&positions).expect("a window has at least one future step")
}

/// Absolute positions from an anchor plus cumulative offsets.
pub fn accumulate_offsets(anchor: [f64; 2], offsets: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut cur = anchor;
    offsets
        .iter()
        .map(|o| {
            cur = [cur[0] + o[0], cur[1] + o[1]];
            cur
        })
        .collect()
}

/// Which channels a feature vector carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureLayout {
    pub grid_len: usize,
    pub semantics: bool,
}

impl FeatureLayout {
    pub const OFFSETS_ONLY: FeatureLayout = FeatureLayout {
        grid_len: 0,
        semantics: false,
    };

    pub fn full(grid: &PolarGridConfig) -> Self {
        Self {
            grid_len: grid.len(),
            semantics: true,
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.grid_len + if self.semantics { SemanticLabel::COUNT } else { 0 }
    }
}

/// Row-major `steps × dim` feature matrix for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatureSequence {
    pub steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ContextFeatureSequence {
    pub fn new(steps: usize, dim: usize, data: Vec<f64>) -> Result<Self, ContextError> {
        if data.len() != steps * dim {
            return Err(ContextError::Dimension {
                expected: steps * dim,
                got: data.len(),
            });
        }
        Ok(Self { steps, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn offset(&self, i: usize) -> [f64; 2] {
        let r = self.row(i);
        [r[0], r[1]]
    }

    /// Keeps the leading `dim` columns; `2` yields the offsets-only ablation.
    pub fn truncate(&self, dim: usize) -> Result<Self, ContextError> {
        if dim > self.dim || dim < 2 {
            return Err(ContextError::Dimension {
                expected: self.dim,
                got: dim,
            });
        }
        let data = (0..self.steps).flat_map(|i| self.row(i)[..dim].to_vec()).collect();
        Self::new(self.steps, dim, data)
    }
}

/// Positions of every agent in a scene indexed by grid frame.
#[derive(Debug, Clone)]
pub struct SceneAgents {
    agents: Vec<AgentFrames>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
struct AgentFrames {
    agent_type: AgentType,
    first_frame: i64,
    pixels: Vec<Option<[f64; 2]>>,
}

impl SceneAgents {
    /// Indexes resampled tracks on the `rate_hz` frame grid.
    pub fn new(tracks: &[AgentTrack], rate_hz: f64) -> Self {
        let mut agents = Vec::with_capacity(tracks.len());
        let mut by_id = HashMap::new();
        for track in tracks {
            let frames: Vec<i64> = track.samples.iter().map(|s| frame_index(s.t, rate_hz)).collect();
            let (first, last) = match (frames.first(), frames.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => (0, -1),
            };
            let mut pixels = vec![None; (last - first + 1).max(0) as usize];
            for (f, s) in frames.iter().zip(&track.samples) {
                pixels[(f - first) as usize] = Some(s.pixels());
            }
            by_id.insert(track.agent_id.clone(), agents.len());
            agents.push(AgentFrames {
                agent_type: track.agent_type,
                first_frame: first,
                pixels,
            });
        }
        Self { agents, by_id }
    }

    /// Pixel positions and types of every agent except `ego` present at `frame`.
    pub fn neighbors_at(&self, frame: i64, ego: &str) -> Vec<([f64; 2], AgentType)> {
        let skip = self.by_id.get(ego).copied();
        self.agents
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .filter_map(|(_, a)| {
                let idx = frame - a.first_frame;
                if idx < 0 {
                    return None;
                }
                a.pixels.get(idx as usize).copied().flatten().map(|p| (p, a.agent_type))
            })
            .collect()
    }
}

/// Per observed step `s = 1..δ-1`: offset ⊕ polar grid ⊕ semantic histogram,
/// with grid and semantics evaluated at the later endpoint of each offset.
/// With `context == false` only the offsets are produced.
pub fn build_features(
    window: &TrajectoryWindow,
    scene: Option<&SceneMap>,
    agents: &SceneAgents,
    grid: &PolarGridConfig,
    sem: &SemanticConfig,
    context: bool,
) -> Result<ContextFeatureSequence, ContextError> {
    let positions: Vec<[f64; 2]> = window.observed.iter().map(|s| s.meters()).collect();
    let offsets = compute_offsets(&positions)?;
    let layout = if context {
        FeatureLayout::full(grid)
    } else {
        FeatureLayout::OFFSETS_ONLY
    };
    let scene = match (context, scene) {
        (true, None) => return Err(ContextError::MissingScene(window.scene_id.clone())),
        (_, s) => s,
    };
    let dim = layout.dim();
    let mut data = Vec::with_capacity(offsets.len() * dim);
    for (i, off) in offsets.iter().enumerate() {
        data.extend_from_slice(off);
        if let Some(scene) = scene.filter(|_| context) {
            let step = i + 1;
            let ego = window.observed[step].pixels();
            let neighbors = agents.neighbors_at(window.frame(step), &window.ego_id);
            data.extend(polar_occupancy(ego, &neighbors, grid));
            data.extend(semantic_histogram(ego, scene, sem));
        }
    }
    ContextFeatureSequence::new(offsets.len(), dim, data)
}

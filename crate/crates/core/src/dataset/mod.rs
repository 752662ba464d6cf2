//! Trajectory recordings, semantic label maps, and observation/prediction windows.

mod resample;
mod scene;
mod tracks;
mod windows;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use resample::{frame_index, grid_time, resample};
pub use scene::{load_scene_map, load_scene_metadata, write_scene_metadata, SceneMap, SceneMetadata, SemanticLabel};
pub use tracks::{load_tracks, write_tracks, Adapter, LoadedTracks};
pub use windows::{extract_scene_windows, extract_windows, TrajectoryWindow, WindowConfig};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}:{line}: unknown agent type {token:?}")]
    UnknownAgentType { path: PathBuf, line: u64, token: String },
    #[error("{path}:{line}: timestamp for agent {agent} does not increase")]
    NonMonotone { path: PathBuf, line: u64, agent: String },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("track {0} has fewer than two samples")]
    TooShort(String),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("label map pixel ({x}, {y}) has value {value}, expected 0..=5")]
    PixelValue { x: u32, y: u32, value: u8 },
    #[error("{0}")]
    Invalid(String),
    #[error("cross-dataset protocol needs at least two datasets, got {0}")]
    TooFewDatasets(usize),
}

/// Road-user class of a tracked agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentType {
    Pedestrian,
    Vehicle,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Pedestrian, AgentType::Vehicle, AgentType::Cyclist];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Pedestrian => "pedestrian",
            AgentType::Vehicle => "vehicle",
            AgentType::Cyclist => "cyclist",
        }
    }

    pub fn channel(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pedestrian" | "ped" => Ok(AgentType::Pedestrian),
            "vehicle" | "veh" | "car" | "truck" | "bus" | "truck_bus" | "van" => Ok(AgentType::Vehicle),
            "cyclist" | "bicycle" | "bike" => Ok(AgentType::Cyclist),
            other => Err(other.to_string()),
        }
    }
}

/// One timestamped position in both ground-plane meters and image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub x_px: f64,
    pub y_px: f64,
}

impl Sample {
    pub fn meters(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }

    pub fn pixels(&self) -> [f64; 2] {
        [self.x_px, self.y_px]
    }

    /// Sample whose pixel coordinates are derived from meters.
    pub fn from_meters(t: f64, x_m: f64, y_m: f64, meters_per_pixel: f64) -> Self {
        Self {
            t,
            x_m,
            y_m,
            x_px: x_m / meters_per_pixel,
            y_px: y_m / meters_per_pixel,
        }
    }
}

/// The time-ordered path of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub samples: Vec<Sample>,
}

impl AgentTrack {
    /// Checks that pixel and meter coordinates agree under `meters_per_pixel`.
    pub fn check_scale(&self, meters_per_pixel: f64) -> Result<(), DatasetError> {
        for s in &self.samples {
            let dx = (s.x_px * meters_per_pixel - s.x_m).abs();
            let dy = (s.y_px * meters_per_pixel - s.y_m).abs();
            if dx > 1e-6 || dy > 1e-6 {
                return Err(DatasetError::Invalid(format!(
                    "agent {} at t={}: pixel and meter coordinates disagree at {} m/px",
                    self.agent_id, s.t, meters_per_pixel
                )));
            }
        }
        Ok(())
    }
}

/// Every ordered (train, test) pair of distinct datasets.
pub fn cross_dataset_split(names: &[String]) -> Result<Vec<(String, String)>, DatasetError> {
    if names.len() < 2 {
        return Err(DatasetError::TooFewDatasets(names.len()));
    }
    for (i, a) in names.iter().enumerate() {
        if names[i + 1..].contains(a) {
            return Err(DatasetError::Invalid(format!("dataset {a} listed twice")));
        }
    }
    let mut pairs = Vec::new();
    for train in names {
        for test in names {
            if train != test {
                pairs.push((train.clone(), test.clone()));
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cross_split_pairs() {
        let pairs = cross_dataset_split(&names(&["DUT", "inD"])).unwrap();
        assert_eq!(
            pairs,
            vec![("DUT".into(), "inD".into()), ("inD".into(), "DUT".into())]
        );
        assert!(matches!(
            cross_dataset_split(&names(&["A"])),
            Err(DatasetError::TooFewDatasets(1))
        ));
        let three = cross_dataset_split(&names(&["A", "B", "C"])).unwrap();
        assert_eq!(three.len(), 6);
        assert!(three.iter().all(|(a, b)| a != b));
    }

    #[test]
    fn agent_type_tokens() {
        assert_eq!("ped".parse::<AgentType>(), Ok(AgentType::Pedestrian));
        assert_eq!("truck_bus".parse::<AgentType>(), Ok(AgentType::Vehicle));
        assert_eq!("bicycle".parse::<AgentType>(), Ok(AgentType::Cyclist));
        assert!("horse".parse::<AgentType>().is_err());
    }
}

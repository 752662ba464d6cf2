use super::{frame_index, AgentTrack, AgentType, DatasetError, Sample};

/// Observation/prediction window geometry.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    /// Observed steps (δ).
    pub delta: usize,
    /// Predicted steps (κ).
    pub kappa: usize,
    pub stride: usize,
    pub rate_hz: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            delta: 30,
            kappa: 50,
            stride: 1,
            rate_hz: 10.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.delta < 2 {
            return Err(DatasetError::Invalid(format!("window delta must be >= 2, got {}", self.delta)));
        }
        if self.kappa < 1 {
            return Err(DatasetError::Invalid("window kappa must be >= 1".into()));
        }
        if self.stride < 1 {
            return Err(DatasetError::Invalid("window stride must be >= 1".into()));
        }
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(DatasetError::BadRate(self.rate_hz));
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.delta + self.kappa
    }
}

/// One ego-pedestrian slice: δ observed samples followed by κ future samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub scene_id: String,
    pub ego_id: String,
    /// Index of the first observed sample within the ego's resampled track.
    pub start_index: usize,
    /// Grid frame of the first observed sample.
    pub start_frame: i64,
    pub observed: Vec<Sample>,
    pub future: Vec<Sample>,
    /// Other agents with at least one sample during the observed interval.
    pub neighbor_refs: Vec<String>,
}

impl TrajectoryWindow {
    pub fn last_observed(&self) -> [f64; 2] {
        self.observed.last().expect("windows have δ >= 2 observed samples").meters()
    }

    pub fn future_meters(&self) -> Vec<[f64; 2]> {
        self.future.iter().map(Sample::meters).collect()
    }

    /// Grid frame of observed step `i`.
    pub fn frame(&self, i: usize) -> i64 {
        self.start_frame + i as i64
    }
}

/// Slides a δ+κ window over a resampled pedestrian track. Non-pedestrians
/// and tracks shorter than δ+κ yield nothing; slices that straddle a gap in
/// the frame grid are skipped.
pub fn extract_windows(track: &AgentTrack, scene_id: &str, cfg: &WindowConfig) -> Vec<TrajectoryWindow> {
    let span = cfg.span();
    if track.agent_type != AgentType::Pedestrian || track.samples.len() < span {
        return Vec::new();
    }
    let frames: Vec<i64> = track.samples.iter().map(|s| frame_index(s.t, cfg.rate_hz)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + span <= track.samples.len() {
        let contiguous = (1..span).all(|i| frames[start + i] == frames[start] + i as i64);
        if contiguous {
            let slice = &track.samples[start..start + span];
            out.push(TrajectoryWindow {
                scene_id: scene_id.to_string(),
                ego_id: track.agent_id.clone(),
                start_index: start,
                start_frame: frames[start],
                observed: slice[..cfg.delta].to_vec(),
                future: slice[cfg.delta..].to_vec(),
                neighbor_refs: Vec::new(),
            });
        }
        start += cfg.stride;
    }
    out
}

/// Windows for every pedestrian of a scene, with co-present agents listed.
pub fn extract_scene_windows(scene_id: &str, tracks: &[AgentTrack], cfg: &WindowConfig) -> Vec<TrajectoryWindow> {
    let spans: Vec<(i64, i64)> = tracks
        .iter()
        .map(|t| match (t.samples.first(), t.samples.last()) {
            (Some(a), Some(b)) => (frame_index(a.t, cfg.rate_hz), frame_index(b.t, cfg.rate_hz)),
            _ => (i64::MAX, i64::MIN),
        })
        .collect();
    let mut out = Vec::new();
    for (ego_idx, track) in tracks.iter().enumerate() {
        for mut w in extract_windows(track, scene_id, cfg) {
            let (lo, hi) = (w.start_frame, w.start_frame + cfg.delta as i64 - 1);
            w.neighbor_refs = tracks
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != ego_idx)
                .filter(|&(i, _)| spans[i].0 <= hi && spans[i].1 >= lo)
                .map(|(_, t)| t.agent_id.clone())
                .collect();
            out.push(w);
        }
    }
    out
}

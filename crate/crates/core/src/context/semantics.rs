use super::ContextError;
use crate::dataset::{SceneMap, SemanticLabel};

/// k-nearest-pixel semantic neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticConfig {
    pub k: usize,
    /// Search radius in pixels (inclusive).
    pub d_max: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self { k: 16, d_max: 32.0 }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        if self.k < 1 {
            return Err(ContextError::Config("semantic k must be >= 1".into()));
        }
        if !(self.d_max > 0.0) || !self.d_max.is_finite() {
            return Err(ContextError::Config(format!("semantic d_max must be positive, got {}", self.d_max)));
        }
        Ok(())
    }
}

/// Moves a point outside the map onto the center of the nearest border pixel.
pub fn clamp_to_map(pos: [f64; 2], scene: &SceneMap) -> [f64; 2] {
    let clamp = |v: f64, n: usize| {
        if v < 0.0 {
            0.5
        } else if v >= n as f64 {
            n as f64 - 0.5
        } else {
            v
        }
    };
    [clamp(pos[0], scene.width), clamp(pos[1], scene.height)]
}

/// Squared distance from `pos` to the center of pixel `(col, row)`.
pub(crate) fn pixel_dist2(pos: [f64; 2], col: usize, row: usize) -> f64 {
    let dx = col as f64 + 0.5 - pos[0];
    let dy = row as f64 + 0.5 - pos[1];
    dx * dx + dy * dy
}

/// Normalized label histogram of the `k` pixels nearest to `pos` within
/// `d_max`. Ties in distance are broken by row-major pixel order. When no
/// pixel qualifies the result is one-hot on [`SemanticLabel::None`].
pub fn semantic_histogram(pos: [f64; 2], scene: &SceneMap, cfg: &SemanticConfig) -> [f64; SemanticLabel::COUNT] {
    let pos = clamp_to_map(pos, scene);
    let d2_max = cfg.d_max * cfg.d_max;
    let span = |center: f64, n: usize| {
        let lo = (center - 0.5 - cfg.d_max).floor().max(0.0) as usize;
        let hi = ((center - 0.5 + cfg.d_max).ceil().max(0.0) as usize).min(n - 1);
        (lo, hi)
    };
    let (c0, c1) = span(pos[0], scene.width);
    let (r0, r1) = span(pos[1], scene.height);

    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            let d2 = pixel_dist2(pos, col, row);
            if d2 <= d2_max {
                candidates.push((d2, row * scene.width + col));
            }
        }
    }
    let mut hist = [0.0; SemanticLabel::COUNT];
    if candidates.is_empty() {
        hist[SemanticLabel::None.index()] = 1.0;
        return hist;
    }
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = cfg.k.min(candidates.len());
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, by_distance);
    }
    let mut counts = [0usize; SemanticLabel::COUNT];
    for &(_, idx) in &candidates[..k] {
        counts[scene.labels[idx].index()] += 1;
    }
    for (h, c) in hist.iter_mut().zip(counts) {
        *h = c as f64 / k as f64;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_road_neighbourhood() {
        let map = SceneMap::filled("s", 80, 80, SemanticLabel::Road, 0.1).unwrap();
        let h = semantic_histogram([40.2, 39.7], &map, &SemanticConfig::default());
        assert_eq!(h, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn four_pixel_corner_splits_evenly() {
        let mut map = SceneMap::filled("s", 2, 2, SemanticLabel::Road, 0.1).unwrap();
        map.set(0, 1, SemanticLabel::Sidewalk);
        map.set(1, 1, SemanticLabel::Sidewalk);
        let cfg = SemanticConfig { k: 4, d_max: 32.0 };
        assert_eq!(semantic_histogram([1.0, 1.0], &map, &cfg), [0.0, 0.5, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tiny_radius_falls_back_to_none() {
        let map = SceneMap::filled("s", 10, 10, SemanticLabel::Road, 0.1).unwrap();
        let cfg = SemanticConfig { k: 4, d_max: 0.1 };
        assert_eq!(semantic_histogram([3.0, 3.0], &map, &cfg), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_follow_row_major_order() {
        // the point sits on a shared corner: all four pixels tie, k=1 takes (0,0)
        let mut map = SceneMap::filled("s", 2, 2, SemanticLabel::Road, 0.1).unwrap();
        map.set(0, 0, SemanticLabel::Vegetation);
        let cfg = SemanticConfig { k: 1, d_max: 5.0 };
        assert_eq!(semantic_histogram([1.0, 1.0], &map, &cfg)[SemanticLabel::Vegetation.index()], 1.0);
    }

    #[test]
    fn outside_points_clamp_to_border() {
        let mut map = SceneMap::filled("s", 5, 5, SemanticLabel::Road, 0.1).unwrap();
        map.set(4, 0, SemanticLabel::ZebraCrossing);
        let cfg = SemanticConfig { k: 1, d_max: 1.0 };
        assert_eq!(clamp_to_map([40.0, -3.0], &map), [4.5, 0.5]);
        assert_eq!(semantic_histogram([40.0, -3.0], &map, &cfg)[3], 1.0);
    }
}

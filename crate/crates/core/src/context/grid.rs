use std::f64::consts::TAU;

use super::ContextError;
use crate::dataset::AgentType;

/// Polar occupancy grid geometry around the ego position (pixels).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolarGridConfig {
    /// Outer radius; neighbors farther than this are ignored.
    pub th: f64,
    pub radial_bins: usize,
    pub angular_bins: usize,
    /// 3 for one channel per agent type, 1 to merge all types.
    pub type_channels: usize,
}

impl Default for PolarGridConfig {
    fn default() -> Self {
        Self {
            th: 64.0,
            radial_bins: 4,
            angular_bins: 8,
            type_channels: 3,
        }
    }
}

impl PolarGridConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        if !(self.th > 0.0) || !self.th.is_finite() {
            return Err(ContextError::Config(format!("grid th must be positive, got {}", self.th)));
        }
        if self.radial_bins < 1 || self.angular_bins < 1 {
            return Err(ContextError::Config("grid needs at least one radial and one angular bin".into()));
        }
        if self.type_channels != 1 && self.type_channels != AgentType::ALL.len() {
            return Err(ContextError::Config(format!(
                "type_channels must be 1 or {}, got {}",
                AgentType::ALL.len(),
                self.type_channels
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.radial_bins * self.angular_bins * self.type_channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inner edge of radial bin `i` (`i == radial_bins` gives `th`).
    pub fn radial_edge(&self, i: usize) -> f64 {
        i as f64 * self.th / self.radial_bins as f64
    }

    /// Lower edge of angular bin `j` (`j == angular_bins` gives 2π).
    pub fn angular_edge(&self, j: usize) -> f64 {
        j as f64 * TAU / self.angular_bins as f64
    }

    /// Flat index of cell `(radial, angular, channel)`.
    pub fn cell(&self, radial: usize, angular: usize, channel: usize) -> usize {
        (radial * self.angular_bins + angular) * self.type_channels + channel
    }

    pub fn channel(&self, ty: AgentType) -> usize {
        if self.type_channels == 1 {
            0
        } else {
            ty.channel()
        }
    }
}

/// Bin of `value` among `n` bins with edges `edge(0..=n)`; the last bin is
/// closed on the right. Starts from a scaled guess and then corrects it
/// against the edges so the result agrees with the edge definition.
fn bin(value: f64, n: usize, scale: f64, edge: impl Fn(usize) -> f64) -> usize {
    let mut b = ((value * scale).floor().max(0.0) as usize).min(n - 1);
    while b > 0 && value < edge(b) {
        b -= 1;
    }
    while b + 1 < n && value >= edge(b + 1) {
        b += 1;
    }
    b
}

/// Counts neighbors into radial × angular × type cells around `ego`.
///
/// Distance uses the Euclidean norm in pixels; bearings are measured from
/// the scene x axis and mapped into [0, 2π). A neighbor at exactly `th`
/// is counted.
pub fn polar_occupancy(ego: [f64; 2], neighbors: &[([f64; 2], AgentType)], cfg: &PolarGridConfig) -> Vec<f64> {
    let mut grid = vec![0.0; cfg.len()];
    let (r_n, a_n) = (cfg.radial_bins, cfg.angular_bins);
    for &(p, ty) in neighbors {
        let dx = p[0] - ego[0];
        let dy = p[1] - ego[1];
        let d = (dx * dx + dy * dy).sqrt();
        if !(d <= cfg.th) {
            continue;
        }
        let mut theta = dy.atan2(dx);
        if theta < 0.0 {
            theta += TAU;
        }
        let r = bin(d, r_n, r_n as f64 / cfg.th, |i| cfg.radial_edge(i));
        let a = bin(theta, a_n, a_n as f64 / TAU, |j| cfg.angular_edge(j));
        grid[cfg.cell(r, a, cfg.channel(ty))] += 1.0;
    }
    grid
}

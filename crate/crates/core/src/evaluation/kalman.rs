//! Constant-velocity Kalman filter over `(x, y, vx, vy)`.

use serde::{Deserialize, Serialize};

use super::EvalError;

type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvKalmanConfig {
    /// Standard deviation of the white-noise acceleration (m/s²).
    pub accel_noise: f64,
    /// Standard deviation of position measurements (m).
    pub measurement_noise: f64,
}

impl Default for CvKalmanConfig {
    fn default() -> Self {
        Self {
            accel_noise: 0.5,
            measurement_noise: 0.1,
        }
    }
}

impl CvKalmanConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.accel_noise >= 0.0 && self.accel_noise.is_finite()) || !(self.measurement_noise > 0.0 && self.measurement_noise.is_finite()) {
            return Err(EvalError::Config(format!(
                "kalman noise must be finite with positive measurement noise, got accel {} meas {}",
                self.accel_noise, self.measurement_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvKalmanState {
    pub x: [f64; 4],
    pub p: Mat4,
    pub config: CvKalmanConfig,
}

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            for j in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[j][i] = a[i][j];
        }
    }
    out
}

fn transition(dt: f64) -> Mat4 {
    [[1.0, 0.0, dt, 0.0], [0.0, 1.0, 0.0, dt], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn symmetrize(p: &mut Mat4) {
    for i in 0..4 {
        for j in i + 1..4 {
            let m = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = m;
            p[j][i] = m;
        }
    }
}

impl CvKalmanState {
    /// Starts at `p1` with the two-point velocity estimate `(p1 - p0) / dt`.
    pub fn initialize(p0: [f64; 2], p1: [f64; 2], dt: f64, config: CvKalmanConfig) -> Self {
        let r2 = config.measurement_noise * config.measurement_noise;
        let vv = 2.0 * r2 / (dt * dt);
        let cv = r2 / dt;
        Self {
            x: [p1[0], p1[1], (p1[0] - p0[0]) / dt, (p1[1] - p0[1]) / dt],
            p: [[r2, 0.0, cv, 0.0], [0.0, r2, 0.0, cv], [cv, 0.0, vv, 0.0], [0.0, cv, 0.0, vv]],
            config,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }

    /// Time update with discrete white-noise-acceleration process noise.
    pub fn predict(&mut self, dt: f64) {
        let f = transition(dt);
        let x = self.x;
        self.x = [x[0] + dt * x[2], x[1] + dt * x[3], x[2], x[3]];
        let mut p = mat_mul(&mat_mul(&f, &self.p), &transpose(&f));
        let q = self.config.accel_noise * self.config.accel_noise;
        let (a, b, c) = (dt.powi(4) / 4.0 * q, dt.powi(3) / 2.0 * q, dt * dt * q);
        p[0][0] += a;
        p[1][1] += a;
        p[0][2] += b;
        p[2][0] += b;
        p[1][3] += b;
        p[3][1] += b;
        p[2][2] += c;
        p[3][3] += c;
        symmetrize(&mut p);
        self.p = p;
    }

    /// Position measurement update (Joseph form).
    pub fn update(&mut self, z: [f64; 2]) {
        let r2 = self.config.measurement_noise * self.config.measurement_noise;
        let p = &self.p;
        let s = [[p[0][0] + r2, p[0][1]], [p[1][0], p[1][1] + r2]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let s_inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        // K = P Hᵀ S⁻¹, with P Hᵀ the first two columns of P
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                k[i][j] = p[i][0] * s_inv[0][j] + p[i][1] * s_inv[1][j];
            }
        }
        let innov = [z[0] - self.x[0], z[1] - self.x[1]];
        for i in 0..4 {
            self.x[i] += k[i][0] * innov[0] + k[i][1] * innov[1];
        }
        let mut ikh = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let kh = if j < 2 { k[i][j] } else { 0.0 };
                ikh[i][j] = if i == j { 1.0 } else { 0.0 } - kh;
            }
        }
        let mut joseph = mat_mul(&mat_mul(&ikh, p), &transpose(&ikh));
        for i in 0..4 {
            for j in 0..4 {
                joseph[i][j] += r2 * (k[i][0] * k[j][0] + k[i][1] * k[j][1]);
            }
        }
        symmetrize(&mut joseph);
        self.p = joseph;
    }
}

/// Filters `observed` and extrapolates `kappa` positions without further
/// measurements.
pub fn cv_kalman_predict(observed: &[[f64; 2]], kappa: usize, dt: f64, config: &CvKalmanConfig) -> Result<Vec<[f64; 2]>, EvalError> {
    config.validate()?;
    if observed.len() < 2 {
        return Err(EvalError::Shape(format!("kalman baseline needs >= 2 observations, got {}", observed.len())));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EvalError::Config(format!("dt must be positive, got {dt}")));
    }
    if observed.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("kalman input".into()));
    }
    let mut state = CvKalmanState::initialize(observed[0], observed[1], dt, *config);
    for z in &observed[2..] {
        state.predict(dt);
        state.update(*z);
    }
    let mut out = Vec::with_capacity(kappa);
    for _ in 0..kappa {
        state.predict(dt);
        out.push(state.position());
    }
    Ok(out)
}

use super::{AgentTrack, DatasetError, Sample};

const TIME_TOL: f64 = 1e-9;

/// Time of grid frame `k` at `rate_hz`. Every producer of on-grid
/// timestamps uses this expression so that grid times compare bit-exactly.
pub fn grid_time(k: i64, rate_hz: f64) -> f64 {
    k as f64 / rate_hz
}

/// Nearest grid frame index of timestamp `t`.
pub fn frame_index(t: f64, rate_hz: f64) -> i64 {
    (t * rate_hz).round() as i64
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Resamples a track onto the global grid `k / rate_hz` by linear
/// interpolation, covering only the original time span.
///
/// Grid points that coincide with an original sample (within 1e-9 s) copy
/// that sample verbatim, which makes resampling idempotent and leaves
/// on-grid tracks bit-identical.
pub fn resample(track: &AgentTrack, rate_hz: f64) -> Result<AgentTrack, DatasetError> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(DatasetError::BadRate(rate_hz));
    }
    let src = &track.samples;
    if src.len() < 2 {
        return Err(DatasetError::TooShort(track.agent_id.clone()));
    }
    let t0 = src[0].t;
    let t1 = src[src.len() - 1].t;
    let k_first = ((t0 - TIME_TOL) * rate_hz).ceil() as i64;
    let k_last = ((t1 + TIME_TOL) * rate_hz).floor() as i64;

    let mut out = Vec::with_capacity((k_last - k_first + 1).max(0) as usize);
    let mut j = 0;
    for k in k_first..=k_last {
        let t = grid_time(k, rate_hz);
        while j + 1 < src.len() && src[j + 1].t <= t + TIME_TOL {
            j += 1;
        }
        let a = &src[j];
        if (a.t - t).abs() <= TIME_TOL {
            out.push(*a);
            continue;
        }
        if j + 1 >= src.len() {
            // Only reachable through rounding at the end of the span.
            continue;
        }
        let b = &src[j + 1];
        if (b.t - t).abs() <= TIME_TOL {
            out.push(*b);
            continue;
        }
        if t < a.t {
            continue;
        }
        let w = (t - a.t) / (b.t - a.t);
        out.push(Sample {
            t,
            x_m: lerp(a.x_m, b.x_m, w),
            y_m: lerp(a.y_m, b.y_m, w),
            x_px: lerp(a.x_px, b.x_px, w),
            y_px: lerp(a.y_px, b.y_px, w),
        });
    }
    Ok(AgentTrack {
        agent_id: track.agent_id.clone(),
        agent_type: track.agent_type,
        samples: out,
    })
}

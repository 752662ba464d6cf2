//! Procedural scenes on the exact 10 Hz grid.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajformer::dataset::{grid_time, write_scene_metadata, write_tracks, AgentTrack, AgentType, Sample, SceneMap, SemanticLabel};

use crate::config::SynthSettings;
use crate::CliError;

pub const SYNTH_RATE_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Linear,
    Turn,
    StopGo,
    Obstacle,
    Crossing,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::Linear, Scenario::Turn, Scenario::StopGo, Scenario::Obstacle, Scenario::Crossing];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::Turn => "turn",
            Scenario::StopGo => "stop_go",
            Scenario::Obstacle => "obstacle",
            Scenario::Crossing => "crossing",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|sc| sc.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|s| s.as_str()).collect();
            CliError::Usage(format!("unknown scenario {s:?}; valid scenarios: {}", names.join(", ")))
        })
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    fn paint(&self, map: &mut SceneMap, label: SemanticLabel) {
        let mpp = map.meters_per_pixel;
        for row in 0..map.height {
            for col in 0..map.width {
                let c = [(col as f64 + 0.5) * mpp, (row as f64 + 0.5) * mpp];
                if self.contains(c) {
                    map.set(col, row, label);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene_id: String,
    pub tracks: Vec<AgentTrack>,
    pub map: SceneMap,
    /// Parked-vehicle footprint, for obstacle scenes that have one.
    pub obstacle: Option<Region>,
}

const WALK_SECONDS: f64 = 12.0;

fn sample_track(id: String, ty: AgentType, steps: usize, mpp: f64, pos: impl Fn(f64) -> [f64; 2]) -> AgentTrack {
    let samples = (0..steps)
        .map(|k| {
            let t = grid_time(k as i64, SYNTH_RATE_HZ);
            let p = pos(t);
            Sample::from_meters(t, p[0], p[1], mpp)
        })
        .collect();
    AgentTrack {
        agent_id: id,
        agent_type: ty,
        samples,
    }
}

fn steps_for(seconds: f64) -> usize {
    (seconds * SYNTH_RATE_HZ).round() as usize + 1
}

/// 0 below `a`, 1 above `b`, raised cosine in between.
fn smoothstep(x: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        0.0
    } else if x >= b {
        1.0
    } else {
        0.5 - 0.5 * (PI * (x - a) / (b - a)).cos()
    }
}

/// Distance covered by time `t` under a speed profile that eases down to a
/// halt at `t_stop`, waits `pause` seconds and eases back up, each ease
/// lasting `ramp` seconds.
fn stop_go_distance(t: f64, v: f64, t_stop: f64, pause: f64, ramp: f64) -> f64 {
    // Integral of v * (1 + cos(pi s / ramp)) / 2 over s in [0, u].
    let ease_down = |u: f64| v * 0.5 * (u + ramp / PI * (PI * u / ramp).sin());
    let ease_up = |u: f64| v * 0.5 * (u - ramp / PI * (PI * u / ramp).sin());
    let a = t_stop - ramp;
    if t <= a {
        return v * t;
    }
    let d_a = v * a;
    if t <= t_stop {
        return d_a + ease_down(t - a);
    }
    let d_stop = d_a + ease_down(ramp);
    let go = t_stop + pause;
    if t <= go {
        return d_stop;
    }
    if t <= go + ramp {
        return d_stop + ease_up(t - go);
    }
    d_stop + ease_up(ramp) + v * (t - go - ramp)
}

struct Canvas {
    w: f64,
    h: f64,
    mpp: f64,
}

impl Canvas {
    fn base_map(&self, id: &str, settings: &SynthSettings, road: bool) -> Result<SceneMap, CliError> {
        let mut map = SceneMap::filled(id, settings.width_px, settings.height_px, SemanticLabel::Sidewalk, self.mpp)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let band = 0.1 * self.h;
        Region { x0: 0.0, y0: 0.0, x1: self.w, y1: band }.paint(&mut map, SemanticLabel::Vegetation);
        Region { x0: 0.0, y0: self.h - band, x1: self.w, y1: self.h }.paint(&mut map, SemanticLabel::Vegetation);
        if road {
            let r = self.road();
            r.paint(&mut map, SemanticLabel::Road);
            Region { x0: 0.45 * self.w, y0: r.y0, x1: 0.55 * self.w, y1: r.y1 }.paint(&mut map, SemanticLabel::ZebraCrossing);
        }
        Ok(map)
    }

    fn road(&self) -> Region {
        Region { x0: 0.0, y0: 0.4 * self.h, x1: self.w, y1: 0.6 * self.h }
    }
}

fn speed(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.8..1.6)
}

/// A walker starting in the left half, heading roughly along +x or -x.
fn walker_start(rng: &mut ChaCha8Rng, c: &Canvas) -> ([f64; 2], f64) {
    let forward = rng.random_bool(0.5);
    let x = if forward {
        rng.random_range(0.1..0.3) * c.w
    } else {
        rng.random_range(0.7..0.9) * c.w
    };
    let y = rng.random_range(0.25..0.75) * c.h;
    let heading = rng.random_range(-0.3..0.3) + if forward { 0.0 } else { PI };
    ([x, y], heading)
}

fn linear_scene(rng: &mut ChaCha8Rng, c: &Canvas, s: &SynthSettings, id: &str) -> Result<SynthScene, CliError> {
    let steps = steps_for(WALK_SECONDS);
    let tracks = (0..s.pedestrians_per_scene)
        .map(|j| {
            let (p0, th) = walker_start(rng, c);
            let v = speed(rng);
            sample_track(format!("ped_{j}"), AgentType::Pedestrian, steps, c.mpp, move |t| {
                [p0[0] + v * t * th.cos(), p0[1] + v * t * th.sin()]
            })
        })
        .collect();
    Ok(SynthScene {
        scene_id: id.to_string(),
        tracks,
        map: c.base_map(id, s, false)?,
        obstacle: None,
    })
}

fn cyclist(rng: &mut ChaCha8Rng, c: &Canvas, steps: usize) -> AgentTrack {
    let y = rng.random_range(0.2..0.8) * c.h;
    let v = rng.random_range(3.0..5.0);
    let (x0, dir) = if rng.random_bool(0.5) { (0.0, 1.0) } else { (c.w, -1.0) };
    sample_track("cyc_0".into(), AgentType::Cyclist, steps, c.mpp, move |t| [x0 + dir * v * t, y])
}

fn turn_scene(rng: &mut ChaCha8Rng, c: &Canvas, s: &SynthSettings, id: &str) -> Result<SynthScene, CliError> {
    let steps = steps_for(WALK_SECONDS);
    let turn_len = 2.0;
    let mut tracks: Vec<AgentTrack> = (0..s.pedestrians_per_scene)
        .map(|j| {
            let (p0, th0) = walker_start(rng, c);
            let v = speed(rng);
            let t_turn = rng.random_range(3.0..6.0);
            let dth = rng.random_range(FRAC_PI_6..FRAC_PI_2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let omega = dth / turn_len;
            sample_track(format!("ped_{j}"), AgentType::Pedestrian, steps, c.mpp, move |t| {
                let t1 = t.min(t_turn);
                let mut p = [p0[0] + v * t1 * th0.cos(), p0[1] + v * t1 * th0.sin()];
                if t > t_turn {
                    // circular arc at constant angular rate
                    let u = (t - t_turn).min(turn_len);
                    let r = v / omega;
                    let th = th0 + omega * u;
                    p[0] += r * (th.sin() - th0.sin());
                    p[1] -= r * (th.cos() - th0.cos());
                    if t > t_turn + turn_len {
                        let th1 = th0 + dth;
                        let u2 = t - t_turn - turn_len;
                        p[0] += v * u2 * th1.cos();
                        p[1] += v * u2 * th1.sin();
                    }
                }
                p
            })
        })
        .collect();
    tracks.push(cyclist(rng, c, steps));
    Ok(SynthScene {
        scene_id: id.to_string(),
        tracks,
        map: c.base_map(id, s, false)?,
        obstacle: None,
    })
}

fn vehicle_on_road(c: &Canvas, steps: usize, stop: Option<(f64, f64, f64)>) -> AgentTrack {
    let lane = 0.45 * c.h;
    let v = 5.0;
    sample_track("veh_0".into(), AgentType::Vehicle, steps, c.mpp, move |t| {
        let d = match stop {
            Some((t_stop, pause, ramp)) => stop_go_distance(t, v, t_stop, pause, ramp),
            None => v * t,
        };
        [d, lane]
    })
}

fn stop_go_scene(rng: &mut ChaCha8Rng, c: &Canvas, s: &SynthSettings, id: &str) -> Result<SynthScene, CliError> {
    let steps = steps_for(WALK_SECONDS);
    let mut tracks: Vec<AgentTrack> = (0..s.pedestrians_per_scene)
        .map(|j| {
            let forward = rng.random_bool(0.5);
            let x0 = if forward { rng.random_range(0.1..0.3) } else { rng.random_range(0.7..0.9) } * c.w;
            let dir = if forward { 1.0 } else { -1.0 };
            let y = if rng.random_bool(0.5) { rng.random_range(0.15..0.35) } else { rng.random_range(0.65..0.85) } * c.h;
            let v = speed(rng);
            let t_stop = rng.random_range(3.0..6.0);
            let pause = rng.random_range(1.0..3.0);
            sample_track(format!("ped_{j}"), AgentType::Pedestrian, steps, c.mpp, move |t| {
                [x0 + dir * stop_go_distance(t, v, t_stop, pause, 1.0), y]
            })
        })
        .collect();
    tracks.push(vehicle_on_road(c, steps, None));
    Ok(SynthScene {
        scene_id: id.to_string(),
        tracks,
        map: c.base_map(id, s, true)?,
        obstacle: None,
    })
}

fn crossing_scene(rng: &mut ChaCha8Rng, c: &Canvas, s: &SynthSettings, id: &str) -> Result<SynthScene, CliError> {
    let steps = steps_for(WALK_SECONDS);
    let road = c.road();
    let mut tracks: Vec<AgentTrack> = (0..s.pedestrians_per_scene)
        .map(|j| {
            let x = rng.random_range(0.46..0.54) * c.w;
            let up = rng.random_bool(0.5);
            let v = speed(rng);
            let wait = rng.random_range(0.0..2.0);
            // walk to the curb, optionally wait, then cross
            let (y0, curb, dir) = if up {
                (road.y1 + rng.random_range(2.0..4.0), road.y1, -1.0)
            } else {
                (road.y0 - rng.random_range(2.0..4.0), road.y0, 1.0)
            };
            let t_curb = (curb - y0).abs() / v;
            sample_track(format!("ped_{j}"), AgentType::Pedestrian, steps, c.mpp, move |t| {
                let d = if t <= t_curb {
                    v * t
                } else if t <= t_curb + wait {
                    v * t_curb
                } else {
                    v * (t - wait)
                };
                [x, y0 + dir * d]
            })
        })
        .collect();
    // the vehicle halts in front of the crossing while pedestrians pass
    let stop_x = 0.4 * c.w;
    tracks.push(vehicle_on_road(c, steps, Some((stop_x / 5.0 + 0.5, 4.0, 1.0))));
    Ok(SynthScene {
        scene_id: id.to_string(),
        tracks,
        map: c.base_map(id, s, true)?,
        obstacle: None,
    })
}

/// Half of the scenes (even indices) block the walking lane with a parked
/// car that pedestrians pass on the +y side; the others are identical but
/// empty, so only context reveals whether a detour is coming.
fn obstacle_scene(rng: &mut ChaCha8Rng, c: &Canvas, s: &SynthSettings, id: &str, blocked: bool) -> Result<SynthScene, CliError> {
    if c.w < 30.0 || c.h < 8.0 {
        return Err(CliError::Config(format!(
            "obstacle scenario needs a map of at least 30 x 8 m, got {:.1} x {:.1} m",
            c.w, c.h
        )));
    }
    let (cx, cy) = (0.5 * c.w, 0.5 * c.h);
    let car = Region { x0: cx - 2.0, y0: cy - 1.0, x1: cx + 2.0, y1: cy + 1.0 };
    let detour_y = car.y1 + 0.9;
    let end_x = c.w - 2.0;
    let mut tracks = Vec::new();
    for j in 0..s.pedestrians_per_scene {
        let x0 = rng.random_range(0.0..0.15) * c.w;
        let y0 = cy + rng.random_range(-1.4..1.4);
        let v = rng.random_range(1.0..1.6);
        let steps = ((end_x - x0) / v * SYNTH_RATE_HZ).floor() as usize + 1;
        tracks.push(sample_track(format!("ped_{j}"), AgentType::Pedestrian, steps, c.mpp, move |t| {
            let x = x0 + v * t;
            let y = if blocked {
                let w = smoothstep(x, car.x0 - 5.0, car.x0) * (1.0 - smoothstep(x, car.x1, car.x1 + 5.0));
                y0 + (detour_y - y0) * w
            } else {
                y0
            };
            [x, y]
        }));
    }
    let mut map = c.base_map(id, s, false)?;
    if blocked {
        car.paint(&mut map, SemanticLabel::ParkedVehicle);
        let steps = tracks.iter().map(|t| t.samples.len()).max().unwrap_or(1).max(2);
        tracks.push(sample_track("veh_0".into(), AgentType::Vehicle, steps, c.mpp, move |_| [cx, cy]));
    }
    Ok(SynthScene {
        scene_id: id.to_string(),
        tracks,
        map,
        obstacle: blocked.then_some(car),
    })
}

/// Generates `n` scenes; the same arguments always give the same scenes.
pub fn generate(scenario: Scenario, n: usize, seed: u64, settings: &SynthSettings) -> Result<Vec<SynthScene>, CliError> {
    if n == 0 {
        return Err(CliError::Usage("synth needs n >= 1".into()));
    }
    let c = Canvas {
        w: settings.width_px as f64 * settings.meters_per_pixel,
        h: settings.height_px as f64 * settings.meters_per_pixel,
        mpp: settings.meters_per_pixel,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("{scenario}_{seed}_{i:03}");
            match scenario {
                Scenario::Linear => linear_scene(&mut rng, &c, settings, &id),
                Scenario::Turn => turn_scene(&mut rng, &c, settings, &id),
                Scenario::StopGo => stop_go_scene(&mut rng, &c, settings, &id),
                Scenario::Crossing => crossing_scene(&mut rng, &c, settings, &id),
                Scenario::Obstacle => obstacle_scene(&mut rng, &c, settings, &id, i % 2 == 0),
            }
        })
        .collect()
}

/// Writes `tracks/<scene>.csv` and `scenes/<scene>.{scene,png}` under `root`.
pub fn write_dataset(root: &Path, scenes: &[SynthScene]) -> Result<(), CliError> {
    let tracks_dir = root.join("tracks");
    let scenes_dir = root.join("scenes");
    for d in [&tracks_dir, &scenes_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    for s in scenes {
        write_tracks(&tracks_dir.join(format!("{}.csv", s.scene_id)), &s.scene_id, &s.tracks)?;
        let png = format!("{}.png", s.scene_id);
        s.map.save(&scenes_dir.join(&png))?;
        write_scene_metadata(&scenes_dir.join(format!("{}.scene", s.scene_id)), &s.scene_id, s.map.meters_per_pixel, &png)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_go_distance_is_continuous_and_monotone() {
        let mut prev = 0.0;
        for k in 0..=1200 {
            let t = k as f64 * 0.01;
            let d = stop_go_distance(t, 1.2, 4.0, 2.0, 1.0);
            assert!(d >= prev - 1e-12);
            assert!(d - prev < 1.2 * 0.01 + 1e-9);
            prev = d;
        }
        // halted during the pause
        assert_eq!(stop_go_distance(4.5, 1.2, 4.0, 2.0, 1.0), stop_go_distance(5.9, 1.2, 4.0, 2.0, 1.0));
    }

    #[test]
    fn turn_arc_joins_straight_segments() {
        let s = SynthSettings::default();
        let scenes = generate(Scenario::Turn, 4, 3, &s).unwrap();
        for sc in &scenes {
            for tr in sc.tracks.iter().filter(|t| t.agent_type == AgentType::Pedestrian) {
                for w in tr.samples.windows(2) {
                    let step = ((w[1].x_m - w[0].x_m).powi(2) + (w[1].y_m - w[0].y_m).powi(2)).sqrt();
                    assert!(step < 1.6 * 0.1 + 1e-9, "jump of {step} m");
                    assert!(step > 0.8 * 0.1 * 0.99);
                }
            }
        }
    }

    #[test]
    fn unknown_scenario_lists_names() {
        let e = "zigzag".parse::<Scenario>().unwrap_err();
        assert!(e.message().contains("linear, turn, stop_go, obstacle, crossing"));
    }
}

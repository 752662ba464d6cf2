//! On-disk feature cache (format version 1).
//!
//! A cache directory holds three files:
//!
//! * `meta.txt`: `key=value` lines: `version`, `dataset`, `context`,
//!   `feature_dim`, `windows`, window geometry (`delta`, `kappa`, `stride`,
//!   `rate_hz`), grid (`th`, `radial_bins`, `angular_bins`,
//!   `type_channels`) and semantics (`k`, `d_max`).
//! * `windows.csv`: one row per window sample:
//!   `scene_id,ego_id,start_index,start_frame,part,step,t,x_m,y_m,x_px,y_px,neighbors`
//!   where `part` is `obs` or `fut`; `neighbors` is `;`-joined on the first
//!   observed row and empty elsewhere.
//! * `features.csv`: one row per observed offset step:
//!   `scene_id,ego_id,start_index,step,f0..f{F-1}`.
//!
//! Entries are keyed by `(scene_id, ego_id, start_index)` and appear in the
//! same order in both CSV files. Floats use the shortest representation
//! that parses back to the same value, so a read/write cycle is lossless.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ContextError, ContextFeatureSequence, PolarGridConfig, SemanticConfig};
use crate::dataset::{Sample, TrajectoryWindow, WindowConfig};

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMeta {
    pub dataset: String,
    pub context: bool,
    pub feature_dim: usize,
    pub window: WindowConfig,
    pub grid: PolarGridConfig,
    pub semantic: SemanticConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub window: TrajectoryWindow,
    pub features: ContextFeatureSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub meta: CacheMeta,
    pub entries: Vec<CacheEntry>,
}

fn err(msg: impl std::fmt::Display) -> ContextError {
    ContextError::Cache(msg.to_string())
}

fn meta_text(meta: &CacheMeta, windows: usize) -> String {
    let w = &meta.window;
    let g = &meta.grid;
    let s = &meta.semantic;
    format!(
        "version={CACHE_VERSION}\ndataset={}\ncontext={}\nfeature_dim={}\nwindows={windows}\n\
         delta={}\nkappa={}\nstride={}\nrate_hz={}\n\
         th={}\nradial_bins={}\nangular_bins={}\ntype_channels={}\nk={}\nd_max={}\n",
        meta.dataset,
        meta.context,
        meta.feature_dim,
        w.delta,
        w.kappa,
        w.stride,
        w.rate_hz,
        g.th,
        g.radial_bins,
        g.angular_bins,
        g.type_channels,
        s.k,
        s.d_max
    )
}

pub fn write_cache(dir: &Path, cache: &FeatureCache) -> Result<(), ContextError> {
    std::fs::create_dir_all(dir).map_err(err)?;
    std::fs::write(dir.join("meta.txt"), meta_text(&cache.meta, cache.entries.len())).map_err(err)?;

    let mut ww = csv::Writer::from_path(dir.join("windows.csv")).map_err(err)?;
    ww.write_record([
        "scene_id", "ego_id", "start_index", "start_frame", "part", "step", "t", "x_m", "y_m", "x_px", "y_px", "neighbors",
    ])
    .map_err(err)?;
    let mut fw = csv::Writer::from_path(dir.join("features.csv")).map_err(err)?;
    let mut header = vec!["scene_id".to_string(), "ego_id".into(), "start_index".into(), "step".into()];
    header.extend((0..cache.meta.feature_dim).map(|i| format!("f{i}")));
    fw.write_record(&header).map_err(err)?;

    for e in &cache.entries {
        let w = &e.window;
        if e.features.dim != cache.meta.feature_dim {
            return Err(ContextError::Dimension {
                expected: cache.meta.feature_dim,
                got: e.features.dim,
            });
        }
        let parts = w.observed.iter().map(|s| ("obs", s)).enumerate().chain(w.future.iter().map(|s| ("fut", s)).enumerate());
        for (step, (part, s)) in parts {
            let neighbors = if part == "obs" && step == 0 { w.neighbor_refs.join(";") } else { String::new() };
            ww.write_record([
                w.scene_id.clone(),
                w.ego_id.clone(),
                w.start_index.to_string(),
                w.start_frame.to_string(),
                part.to_string(),
                step.to_string(),
                s.t.to_string(),
                s.x_m.to_string(),
                s.y_m.to_string(),
                s.x_px.to_string(),
                s.y_px.to_string(),
                neighbors,
            ])
            .map_err(err)?;
        }
        for step in 0..e.features.steps {
            let mut rec = vec![w.scene_id.clone(), w.ego_id.clone(), w.start_index.to_string(), step.to_string()];
            rec.extend(e.features.row(step).iter().map(|v| v.to_string()));
            fw.write_record(&rec).map_err(err)?;
        }
    }
    ww.flush().map_err(err)?;
    fw.flush().map_err(err)?;
    Ok(())
}

fn parse_meta(text: &str) -> Result<(CacheMeta, usize), ContextError> {
    let kv: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| err(format!("bad meta line {l:?}"))))
        .collect::<Result<_, _>>()?;
    fn get<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T, ContextError> {
        kv.get(key)
            .ok_or_else(|| err(format!("meta is missing {key}")))?
            .parse()
            .map_err(|_| err(format!("meta value for {key} is malformed")))
    }
    let version: u32 = get(&kv, "version")?;
    if version != CACHE_VERSION {
        return Err(err(format!("unsupported cache version {version}, expected {CACHE_VERSION}")));
    }
    let meta = CacheMeta {
        dataset: get(&kv, "dataset")?,
        context: get(&kv, "context")?,
        feature_dim: get(&kv, "feature_dim")?,
        window: WindowConfig {
            delta: get(&kv, "delta")?,
            kappa: get(&kv, "kappa")?,
            stride: get(&kv, "stride")?,
            rate_hz: get(&kv, "rate_hz")?,
        },
        grid: PolarGridConfig {
            th: get(&kv, "th")?,
            radial_bins: get(&kv, "radial_bins")?,
            angular_bins: get(&kv, "angular_bins")?,
            type_channels: get(&kv, "type_channels")?,
        },
        semantic: SemanticConfig {
            k: get(&kv, "k")?,
            d_max: get(&kv, "d_max")?,
        },
    };
    Ok((meta, get(&kv, "windows")?))
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, ContextError> {
    rec.get(i)
        .ok_or_else(|| err(format!("missing field {i}")))?
        .parse()
        .map_err(|_| err(format!("malformed field {i} in {:?}", rec)))
}

pub fn read_cache(dir: &Path) -> Result<FeatureCache, ContextError> {
    let text = std::fs::read_to_string(dir.join("meta.txt")).map_err(|e| err(format!("{}: {e}", dir.join("meta.txt").display())))?;
    let (meta, count) = parse_meta(&text)?;
    let (delta, kappa, dim) = (meta.window.delta, meta.window.kappa, meta.feature_dim);

    let mut wr = csv::Reader::from_path(dir.join("windows.csv")).map_err(err)?;
    let mut windows: Vec<TrajectoryWindow> = Vec::with_capacity(count);
    for rec in wr.records() {
        let rec = rec.map_err(err)?;
        let key = (&rec[0], &rec[1], num::<usize>(&rec, 2)?);
        let part = &rec[4];
        let sample = Sample {
            t: num(&rec, 6)?,
            x_m: num(&rec, 7)?,
            y_m: num(&rec, 8)?,
            x_px: num(&rec, 9)?,
            y_px: num(&rec, 10)?,
        };
        let starts_new = part == "obs" && num::<usize>(&rec, 5)? == 0;
        if starts_new {
            let neighbors = &rec[11];
            windows.push(TrajectoryWindow {
                scene_id: key.0.to_string(),
                ego_id: key.1.to_string(),
                start_index: key.2,
                start_frame: num(&rec, 3)?,
                observed: Vec::with_capacity(delta),
                future: Vec::with_capacity(kappa),
                neighbor_refs: if neighbors.is_empty() { Vec::new() } else { neighbors.split(';').map(String::from).collect() },
            });
        }
        let w = windows.last_mut().ok_or_else(|| err("windows.csv does not start with an observed row"))?;
        if (w.scene_id.as_str(), w.ego_id.as_str(), w.start_index) != key {
            return Err(err(format!("window rows out of order at {key:?}")));
        }
        match part {
            "obs" => w.observed.push(sample),
            "fut" => w.future.push(sample),
            other => return Err(err(format!("unknown part {other:?}"))),
        }
    }
    if windows.len() != count {
        return Err(err(format!("meta lists {count} windows, windows.csv has {}", windows.len())));
    }
    for w in &windows {
        if w.observed.len() != delta || w.future.len() != kappa {
            return Err(err(format!("window {}/{}/{} has wrong length", w.scene_id, w.ego_id, w.start_index)));
        }
    }

    let mut fr = csv::Reader::from_path(dir.join("features.csv")).map_err(err)?;
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity((delta - 1) * dim); count];
    let mut current = 0usize;
    let mut seen_rows = 0usize;
    for rec in fr.records() {
        let rec = rec.map_err(err)?;
        if rec.len() != 4 + dim {
            return Err(ContextError::Dimension {
                expected: dim,
                got: rec.len().saturating_sub(4),
            });
        }
        if seen_rows == delta - 1 {
            current += 1;
            seen_rows = 0;
        }
        let w = windows.get(current).ok_or_else(|| err("features.csv has more rows than windows"))?;
        if (&rec[0], &rec[1], num::<usize>(&rec, 2)?) != (w.scene_id.as_str(), w.ego_id.as_str(), w.start_index) {
            return Err(err("features.csv is not aligned with windows.csv"));
        }
        for i in 0..dim {
            rows[current].push(num(&rec, 4 + i)?);
        }
        seen_rows += 1;
    }
    let entries = windows
        .into_iter()
        .zip(rows)
        .map(|(window, data)| {
            Ok(CacheEntry {
                window,
                features: ContextFeatureSequence::new(delta - 1, dim, data)?,
            })
        })
        .collect::<Result<Vec<_>, ContextError>>()?;
    Ok(FeatureCache { meta, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_scene_windows, grid_time, AgentTrack, AgentType, SceneMap, SemanticLabel};
    use crate::context::{build_features, SceneAgents};

    #[test]
    fn cache_round_trip_is_lossless_and_deterministic() {
        let cfg = WindowConfig {
            delta: 5,
            kappa: 3,
            stride: 2,
            rate_hz: 10.0,
        };
        let mk = |id: &str, ty, dx: f64| AgentTrack {
            agent_id: id.into(),
            agent_type: ty,
            samples: (0..14)
                .map(|k| crate::dataset::Sample::from_meters(grid_time(k, 10.0), 1.0 + dx * k as f64 / 3.0, 2.0 + (k as f64).sin(), 0.1))
                .collect(),
        };
        let tracks = vec![mk("a", AgentType::Pedestrian, 0.1), mk("b", AgentType::Cyclist, 0.2), mk("c", AgentType::Pedestrian, -0.1)];
        let map = SceneMap::filled("s", 64, 64, SemanticLabel::Road, 0.1).unwrap();
        let agents = SceneAgents::new(&tracks, 10.0);
        let grid = PolarGridConfig::default();
        let sem = SemanticConfig::default();
        let entries: Vec<CacheEntry> = extract_scene_windows("s", &tracks, &cfg)
            .into_iter()
            .map(|w| {
                let features = build_features(&w, Some(&map), &agents, &grid, &sem, true).unwrap();
                CacheEntry { window: w, features }
            })
            .collect();
        assert!(entries.len() >= 4);
        let cache = FeatureCache {
            meta: CacheMeta {
                dataset: "d".into(),
                context: true,
                feature_dim: grid.len() + 8,
                window: cfg,
                grid,
                semantic: sem,
            },
            entries,
        };
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &cache).unwrap();
        let back = read_cache(dir.path()).unwrap();
        assert_eq!(back, cache);
        let first = std::fs::read(dir.path().join("features.csv")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        write_cache(dir2.path(), &back).unwrap();
        assert_eq!(std::fs::read(dir2.path().join("features.csv")).unwrap(), first);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("meta.txt"), "version=99\n").unwrap();
        assert!(read_cache(dir.path()).is_err());
    }
}

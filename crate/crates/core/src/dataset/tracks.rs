use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{AgentTrack, AgentType, DatasetError, Sample};

/// Column layout of a trajectory file.
///
/// * `Canonical`: `scene_id,agent_id,agent_type,t,x_m,y_m,x_px,y_px`.
/// * `Dut`: `id,frame,label,x_est,y_est[,vx_est,vy_est]` in meters; time is
///   `frame / frame_rate`.
/// * `Ind`: `trackId,frame,xCenter,yCenter[,...]` in meters with the y axis
///   pointing up; the agent class comes from a `class` column or from the
///   sibling `*_tracksMeta.csv` file. The y axis is flipped so that meter
///   and pixel frames share orientation.
///
/// Velocity columns are never read; offsets are recomputed from positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Adapter {
    Canonical,
    Dut { frame_rate: f64, meters_per_pixel: f64 },
    Ind { frame_rate: f64, meters_per_pixel: f64 },
}

/// Tracks of one scene, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTracks {
    pub scene_id: String,
    pub tracks: Vec<AgentTrack>,
}

pub const CANONICAL_HEADER: [&str; 8] = ["scene_id", "agent_id", "agent_type", "t", "x_m", "y_m", "x_px", "y_px"];

struct Columns {
    path: PathBuf,
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(path: &Path, headers: &csv::StringRecord) -> Self {
        let index = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Self {
            path: path.to_path_buf(),
            index,
        }
    }

    fn find(&self, name: &str) -> Result<usize, DatasetError> {
        self.index.get(name).copied().ok_or_else(|| DatasetError::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })
    }
}

fn csv_err(path: &Path, message: impl ToString) -> DatasetError {
    DatasetError::Csv {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, path: &Path, line: u64) -> Result<&'r str, DatasetError> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| csv_err(path, format!("line {line}: missing field {idx}")))
}

fn number(rec: &csv::StringRecord, idx: usize, path: &Path, line: u64) -> Result<f64, DatasetError> {
    let raw = field(rec, idx, path, line)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| csv_err(path, format!("line {line}: {raw:?} is not a number")))?;
    if !v.is_finite() {
        return Err(csv_err(path, format!("line {line}: non-finite value {raw:?}")));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DatasetError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

/// Groups rows into tracks, enforcing strictly increasing time per agent.
#[derive(Default)]
struct TrackBuilder {
    order: Vec<String>,
    tracks: HashMap<String, AgentTrack>,
}

impl TrackBuilder {
    fn push(&mut self, path: &Path, line: u64, id: &str, ty: AgentType, s: Sample) -> Result<(), DatasetError> {
        let track = self.tracks.entry(id.to_string()).or_insert_with(|| {
            self.order.push(id.to_string());
            AgentTrack {
                agent_id: id.to_string(),
                agent_type: ty,
                samples: Vec::new(),
            }
        });
        if track.agent_type != ty {
            return Err(csv_err(path, format!("line {line}: agent {id} changes type")));
        }
        if let Some(last) = track.samples.last() {
            if s.t <= last.t {
                return Err(DatasetError::NonMonotone {
                    path: path.to_path_buf(),
                    line,
                    agent: id.to_string(),
                });
            }
        }
        track.samples.push(s);
        Ok(())
    }

    fn finish(mut self) -> Vec<AgentTrack> {
        self.order
            .iter()
            .map(|id| self.tracks.remove(id).expect("every ordered id has a track"))
            .collect()
    }
}

fn parse_type(path: &Path, line: u64, token: &str) -> Result<AgentType, DatasetError> {
    token.parse().map_err(|_| DatasetError::UnknownAgentType {
        path: path.to_path_buf(),
        line,
        token: token.to_string(),
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads one trajectory file into per-agent tracks.
pub fn load_tracks(path: &Path, adapter: Adapter) -> Result<LoadedTracks, DatasetError> {
    match adapter {
        Adapter::Canonical => load_canonical(path),
        Adapter::Dut {
            frame_rate,
            meters_per_pixel,
        } => load_dut(path, frame_rate, meters_per_pixel),
        Adapter::Ind {
            frame_rate,
            meters_per_pixel,
        } => load_ind(path, frame_rate, meters_per_pixel),
    }
}

fn load_canonical(path: &Path) -> Result<LoadedTracks, DatasetError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers);
    let idx: Vec<usize> = CANONICAL_HEADER.iter().map(|c| cols.find(c)).collect::<Result<_, _>>()?;
    let mut scene_id: Option<String> = None;
    let mut builder = TrackBuilder::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let scene = field(&rec, idx[0], path, line)?;
        match &scene_id {
            None => scene_id = Some(scene.to_string()),
            Some(s) if s != scene => {
                return Err(csv_err(path, format!("line {line}: second scene {scene:?} in file for {s:?}")));
            }
            Some(_) => {}
        }
        let id = field(&rec, idx[1], path, line)?;
        let ty = parse_type(path, line, field(&rec, idx[2], path, line)?)?;
        let s = Sample {
            t: number(&rec, idx[3], path, line)?,
            x_m: number(&rec, idx[4], path, line)?,
            y_m: number(&rec, idx[5], path, line)?,
            x_px: number(&rec, idx[6], path, line)?,
            y_px: number(&rec, idx[7], path, line)?,
        };
        builder.push(path, line, id, ty, s)?;
    }
    Ok(LoadedTracks {
        scene_id: scene_id.unwrap_or_else(|| file_stem(path)),
        tracks: builder.finish(),
    })
}

fn check_adapter_params(frame_rate: f64, mpp: f64) -> Result<(), DatasetError> {
    if !(frame_rate > 0.0) {
        return Err(DatasetError::BadRate(frame_rate));
    }
    if !(mpp > 0.0) {
        return Err(DatasetError::Invalid(format!("meters_per_pixel must be positive, got {mpp}")));
    }
    Ok(())
}

fn load_dut(path: &Path, frame_rate: f64, mpp: f64) -> Result<LoadedTracks, DatasetError> {
    check_adapter_params(frame_rate, mpp)?;
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers);
    let (id_c, frame_c, label_c, x_c, y_c) = (
        cols.find("id")?,
        cols.find("frame")?,
        cols.find("label")?,
        cols.find("x_est")?,
        cols.find("y_est")?,
    );
    let mut builder = TrackBuilder::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = field(&rec, id_c, path, line)?;
        let ty = parse_type(path, line, field(&rec, label_c, path, line)?)?;
        let t = number(&rec, frame_c, path, line)? / frame_rate;
        let s = Sample::from_meters(t, number(&rec, x_c, path, line)?, number(&rec, y_c, path, line)?, mpp);
        builder.push(path, line, id, ty, s)?;
    }
    Ok(LoadedTracks {
        scene_id: file_stem(path),
        tracks: builder.finish(),
    })
}

fn ind_meta_path(path: &Path) -> PathBuf {
    let stem = file_stem(path);
    let meta = match stem.strip_suffix("tracks") {
        Some(prefix) => format!("{prefix}tracksMeta.csv"),
        None => format!("{stem}Meta.csv"),
    };
    path.with_file_name(meta)
}

fn load_ind_classes(path: &Path) -> Result<HashMap<String, String>, DatasetError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers);
    let (id_c, class_c) = (cols.find("trackId")?, cols.find("class")?);
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.insert(
            field(&rec, id_c, path, line)?.to_string(),
            field(&rec, class_c, path, line)?.to_string(),
        );
    }
    Ok(out)
}

fn load_ind(path: &Path, frame_rate: f64, mpp: f64) -> Result<LoadedTracks, DatasetError> {
    check_adapter_params(frame_rate, mpp)?;
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns::new(path, &headers);
    let (id_c, frame_c, x_c, y_c) = (
        cols.find("trackId")?,
        cols.find("frame")?,
        cols.find("xCenter")?,
        cols.find("yCenter")?,
    );
    let class_c = cols.find("class").ok();
    let classes = match class_c {
        Some(_) => HashMap::new(),
        None => load_ind_classes(&ind_meta_path(path))?,
    };
    let mut builder = TrackBuilder::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = field(&rec, id_c, path, line)?;
        let token = match class_c {
            Some(c) => field(&rec, c, path, line)?,
            None => classes
                .get(id)
                .map(String::as_str)
                .ok_or_else(|| csv_err(path, format!("line {line}: track {id} missing from meta file")))?,
        };
        let ty = parse_type(path, line, token)?;
        let t = number(&rec, frame_c, path, line)? / frame_rate;
        let s = Sample::from_meters(t, number(&rec, x_c, path, line)?, -number(&rec, y_c, path, line)?, mpp);
        builder.push(path, line, id, ty, s)?;
    }
    let scene_id = file_stem(path).trim_end_matches("_tracks").to_string();
    Ok(LoadedTracks {
        scene_id,
        tracks: builder.finish(),
    })
}

/// Writes tracks in the canonical schema.
pub fn write_tracks(path: &Path, scene_id: &str, tracks: &[AgentTrack]) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    wtr.write_record(CANONICAL_HEADER).map_err(|e| csv_err(path, e))?;
    for track in tracks {
        for s in &track.samples {
            wtr.write_record([
                scene_id.to_string(),
                track.agent_id.clone(),
                track.agent_type.to_string(),
                s.t.to_string(),
                s.x_m.to_string(),
                s.y_m.to_string(),
                s.x_px.to_string(),
                s.y_px.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    wtr.flush().map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "scene_id,agent_id,agent_type,t,x_m,y_m,x_px,y_px\n";

    #[test]
    fn canonical_two_agents() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = HEADER.to_string();
        for t in 0..3 {
            body += &format!("s1,a,pedestrian,{t},1,2,10,20\n");
            body += &format!("s1,b,vehicle,{t},3,4,30,40\n");
        }
        let loaded = load_tracks(&write(dir.path(), "s1.csv", &body), Adapter::Canonical).unwrap();
        assert_eq!(loaded.scene_id, "s1");
        assert_eq!(loaded.tracks.len(), 2);
        assert!(loaded.tracks.iter().all(|t| t.samples.len() == 3));
        assert_eq!(loaded.tracks[1].agent_type, AgentType::Vehicle);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_tracks(&write(dir.path(), "empty.csv", HEADER), Adapter::Canonical).unwrap();
        assert!(loaded.tracks.is_empty());
        assert_eq!(loaded.scene_id, "empty");
    }

    #[test]
    fn unknown_type_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s,a,pedestrian,0,0,0,0,0\ns,b,unicorn,0,0,0,0,0\n");
        let err = load_tracks(&write(dir.path(), "x.csv", &body), Adapter::Canonical).unwrap_err();
        match err {
            DatasetError::UnknownAgentType { line, token, .. } => {
                assert_eq!(line, 3);
                assert_eq!(token, "unicorn");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_monotone_time_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s,a,pedestrian,1,0,0,0,0\ns,a,pedestrian,1,0,0,0,0\n");
        let err = load_tracks(&write(dir.path(), "x.csv", &body), Adapter::Canonical).unwrap_err();
        assert!(matches!(err, DatasetError::NonMonotone { line: 3, .. }));
    }

    #[test]
    fn dut_adapter_converts_frames_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,frame,label,x_est,y_est,vx_est,vy_est\n7,0,ped,1.0,2.0,0.5,0\n7,24,ped,1.5,2.0,0.5,0\n9,0,veh,5,5,0,0\n";
        let loaded = load_tracks(
            &write(dir.path(), "intersection.csv", body),
            Adapter::Dut {
                frame_rate: 24.0,
                meters_per_pixel: 0.5,
            },
        )
        .unwrap();
        assert_eq!(loaded.scene_id, "intersection");
        let ped = &loaded.tracks[0];
        assert_eq!(ped.agent_type, AgentType::Pedestrian);
        assert_eq!(ped.samples[1].t, 1.0);
        assert_eq!(ped.samples[1].x_px, 3.0);
        ped.check_scale(0.5).unwrap();
        assert_eq!(loaded.tracks[1].agent_type, AgentType::Vehicle);
    }

    #[test]
    fn ind_adapter_reads_meta_classes() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "00_tracksMeta.csv", "recordingId,trackId,class\n0,1,pedestrian\n0,2,bicycle\n");
        let p = write(
            dir.path(),
            "00_tracks.csv",
            "recordingId,trackId,frame,xCenter,yCenter,xVelocity\n0,1,0,10,-5,1\n0,1,25,11,-5,1\n0,2,0,0,0,0\n",
        );
        let loaded = load_tracks(
            &p,
            Adapter::Ind {
                frame_rate: 25.0,
                meters_per_pixel: 0.1,
            },
        )
        .unwrap();
        assert_eq!(loaded.scene_id, "00");
        assert_eq!(loaded.tracks[0].samples[0].y_m, 5.0);
        assert_eq!(loaded.tracks[1].agent_type, AgentType::Cyclist);
    }

    #[test]
    fn canonical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s,a,pedestrian,0,0.1,0.2,1,2\ns,a,pedestrian,0.1,0.30000000000000004,0.2,3.0000000000000004,2\ns,c,cyclist,0,5,5,50,50\n");
        let src = write(dir.path(), "s.csv", &body);
        let loaded = load_tracks(&src, Adapter::Canonical).unwrap();
        let out = dir.path().join("out.csv");
        write_tracks(&out, &loaded.scene_id, &loaded.tracks).unwrap();
        assert_eq!(load_tracks(&out, Adapter::Canonical).unwrap(), loaded);
        assert_eq!(std::fs::read_to_string(out).unwrap(), body);
    }
}

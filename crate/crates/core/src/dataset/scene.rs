use std::path::{Path, PathBuf};

use super::DatasetError;

/// Ground class of a label-map pixel. The discriminant is the pixel value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum SemanticLabel {
    None = 0,
    Road = 1,
    Sidewalk = 2,
    ZebraCrossing = 3,
    Vegetation = 4,
    ParkedVehicle = 5,
}

impl SemanticLabel {
    pub const COUNT: usize = 6;
    pub const ALL: [SemanticLabel; 6] = [
        SemanticLabel::None,
        SemanticLabel::Road,
        SemanticLabel::Sidewalk,
        SemanticLabel::ZebraCrossing,
        SemanticLabel::Vegetation,
        SemanticLabel::ParkedVehicle,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticLabel::None => "none",
            SemanticLabel::Road => "road",
            SemanticLabel::Sidewalk => "sidewalk",
            SemanticLabel::ZebraCrossing => "zebra_crossing",
            SemanticLabel::Vegetation => "vegetation",
            SemanticLabel::ParkedVehicle => "parked_vehicle",
        }
    }
}

/// Per-pixel semantic labels of one bird's-eye scene.
///
/// Pixel `(col, row)` covers `[col, col+1) × [row, row+1)` in image
/// coordinates, so its center is at `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<SemanticLabel>,
    pub meters_per_pixel: f64,
}

impl SceneMap {
    pub fn new(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        labels: Vec<SemanticLabel>,
        meters_per_pixel: f64,
    ) -> Result<Self, DatasetError> {
        if labels.len() != width * height || width == 0 || height == 0 {
            return Err(DatasetError::Invalid(format!(
                "label array of {} entries does not match {width}x{height}",
                labels.len()
            )));
        }
        if !(meters_per_pixel > 0.0) || !meters_per_pixel.is_finite() {
            return Err(DatasetError::Invalid(format!(
                "meters_per_pixel must be positive, got {meters_per_pixel}"
            )));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            width,
            height,
            labels,
            meters_per_pixel,
        })
    }

    pub fn filled(scene_id: impl Into<String>, width: usize, height: usize, label: SemanticLabel, mpp: f64) -> Result<Self, DatasetError> {
        Self::new(scene_id, width, height, vec![label; width * height], mpp)
    }

    pub fn label(&self, col: usize, row: usize) -> SemanticLabel {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, label: SemanticLabel) {
        self.labels[row * self.width + col] = label;
    }

    /// Label under an image-coordinate point, `None` outside the map.
    pub fn label_at(&self, x_px: f64, y_px: f64) -> Option<SemanticLabel> {
        if x_px < 0.0 || y_px < 0.0 {
            return None;
        }
        let (c, r) = (x_px.floor() as usize, y_px.floor() as usize);
        (c < self.width && r < self.height).then(|| self.label(c, r))
    }

    pub fn histogram(&self) -> [usize; SemanticLabel::COUNT] {
        let mut h = [0; SemanticLabel::COUNT];
        for l in &self.labels {
            h[l.index()] += 1;
        }
        h
    }

    /// Writes the label map as an 8-bit single-channel image (format from
    /// the extension: `.png` or `.pgm`).
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let raw: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("label buffer matches dimensions");
        img.save(path).map_err(|e| DatasetError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Reads an 8-bit single-channel label image whose pixel values 0..=5 are
/// [`SemanticLabel`] ordinals.
pub fn load_scene_map(path: &Path, meters_per_pixel: f64) -> Result<SceneMap, DatasetError> {
    let img_err = |message: String| DatasetError::Image {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })?
        .with_guessed_format()
        .map_err(|e| img_err(e.to_string()))?
        .decode()
        .map_err(|e| img_err(e.to_string()))?;
    let image::DynamicImage::ImageLuma8(gray) = img else {
        return Err(img_err(format!(
            "expected 8-bit single-channel image, got {:?}",
            img.color()
        )));
    };
    let (w, h) = gray.dimensions();
    let mut labels = Vec::with_capacity((w * h) as usize);
    for (x, y, px) in gray.enumerate_pixels() {
        let value = px.0[0];
        labels.push(SemanticLabel::from_u8(value).ok_or(DatasetError::PixelValue { x, y, value })?);
    }
    let scene_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SceneMap::new(scene_id, w as usize, h as usize, labels, meters_per_pixel)
}

/// Contents of a scene metadata file: `key=value` lines with `scene_id`,
/// `meters_per_pixel` and `label_map` (relative to the metadata file).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetadata {
    pub scene_id: String,
    pub meters_per_pixel: f64,
    pub label_map: PathBuf,
}

impl SceneMetadata {
    pub fn load_map(&self) -> Result<SceneMap, DatasetError> {
        let mut map = load_scene_map(&self.label_map, self.meters_per_pixel)?;
        map.scene_id = self.scene_id.clone();
        Ok(map)
    }
}

pub fn load_scene_metadata(path: &Path) -> Result<SceneMetadata, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |msg: String| DatasetError::Invalid(format!("{}: {msg}", path.display()));
    let (mut scene_id, mut mpp, mut map) = (None, None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key=value", i + 1)))?;
        match k.trim() {
            "scene_id" => scene_id = Some(v.trim().to_string()),
            "meters_per_pixel" => {
                mpp = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(format!("line {}: bad meters_per_pixel", i + 1)))?,
                )
            }
            "label_map" => map = Some(v.trim().to_string()),
            other => return Err(bad(format!("line {}: unknown key {other}", i + 1))),
        }
    }
    let meters_per_pixel = mpp.ok_or_else(|| bad("missing meters_per_pixel".into()))?;
    if !(meters_per_pixel > 0.0) {
        return Err(bad("meters_per_pixel must be positive".into()));
    }
    let map = map.ok_or_else(|| bad("missing label_map".into()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(SceneMetadata {
        scene_id: scene_id.ok_or_else(|| bad("missing scene_id".into()))?,
        meters_per_pixel,
        label_map: base.join(map),
    })
}

/// Writes a metadata file; `label_map` is stored relative to its directory.
pub fn write_scene_metadata(path: &Path, scene_id: &str, meters_per_pixel: f64, label_map_name: &str) -> Result<(), DatasetError> {
    let body = format!("scene_id={scene_id}\nmeters_per_pixel={meters_per_pixel}\nlabel_map={label_map_name}\n");
    std::fs::write(path, body).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn save_raw(path: &Path, w: u32, h: u32, raw: Vec<u8>) {
        image::GrayImage::from_raw(w, h, raw).unwrap().save(path).unwrap();
    }

    #[test]
    fn all_zero_image_is_all_none() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.png");
        save_raw(&p, 4, 3, vec![0; 12]);
        let m = load_scene_map(&p, 0.1).unwrap();
        assert!(m.labels.iter().all(|&l| l == SemanticLabel::None));
        assert_eq!((m.width, m.height), (4, 3));
    }

    #[test]
    fn single_pixel_maps_to_its_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.pgm");
        let mut raw = vec![0; 20];
        raw[2 * 5 + 3] = 3;
        save_raw(&p, 5, 4, raw);
        let m = load_scene_map(&p, 0.1).unwrap();
        assert_eq!(m.label(3, 2), SemanticLabel::ZebraCrossing);
        assert_eq!(m.histogram()[3], 1);
    }

    #[test]
    fn checkerboard_histogram_is_half_half() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let (w, h) = (6u32, 4u32);
        let raw: Vec<u8> = (0..w * h).map(|i| if (i % w + i / w) % 2 == 0 { 1 } else { 2 }).collect();
        let ones = raw.iter().filter(|&&v| v == 1).count();
        save_raw(&p, w, h, raw);
        let hist = load_scene_map(&p, 0.2).unwrap().histogram();
        assert_eq!(hist[1], ones);
        assert_eq!(hist[1], hist[2]);
    }

    #[test]
    fn out_of_range_pixel_reports_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        let mut raw = vec![1; 9];
        raw[3 + 2] = 9;
        save_raw(&p, 3, 3, raw);
        match load_scene_map(&p, 0.1).unwrap_err() {
            DatasetError::PixelValue { x, y, value } => assert_eq!((x, y, value), (2, 1, 9)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rgb_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(load_scene_map(&p, 0.1), Err(DatasetError::Image { .. })));
    }

    #[test]
    fn metadata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = SceneMap::filled("sc", 3, 2, SemanticLabel::Road, 0.25).unwrap();
        map.set(1, 1, SemanticLabel::ParkedVehicle);
        map.save(&dir.path().join("sc.png")).unwrap();
        let meta_path = dir.path().join("sc.scene");
        write_scene_metadata(&meta_path, "sc", 0.25, "sc.png").unwrap();
        let meta = load_scene_metadata(&meta_path).unwrap();
        assert_eq!(meta.meters_per_pixel, 0.25);
        assert_eq!(meta.load_map().unwrap(), map);
    }

    #[test]
    fn map_invariants() {
        assert!(SceneMap::new("s", 2, 2, vec![SemanticLabel::None; 3], 0.1).is_err());
        assert!(SceneMap::filled("s", 2, 2, SemanticLabel::None, 0.0).is_err());
    }
}

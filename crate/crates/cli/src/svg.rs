//! Prediction plots: the scene map as an embedded PNG under the observed,
//! predicted and ground-truth polylines, all in pixel coordinates.

use std::fmt::Write as _;
use std::io::Cursor;

use base64::Engine as _;
use trajformer::dataset::{SceneMap, SemanticLabel};

use crate::CliError;

pub const PREDICTION_COLOR: &str = "blue";
pub const TRUTH_COLOR: &str = "green";
pub const OBSERVED_COLOR: &str = "black";

fn label_rgb(label: SemanticLabel) -> [u8; 3] {
    match label {
        SemanticLabel::None => [255, 255, 255],
        SemanticLabel::Road => [120, 120, 120],
        SemanticLabel::Sidewalk => [215, 210, 200],
        SemanticLabel::ZebraCrossing => [250, 240, 150],
        SemanticLabel::Vegetation => [150, 200, 130],
        SemanticLabel::ParkedVehicle => [200, 90, 80],
    }
}

/// Color-coded label map as PNG bytes.
pub fn map_png(map: &SceneMap) -> Result<Vec<u8>, CliError> {
    let raw: Vec<u8> = map.labels.iter().flat_map(|&l| label_rgb(l)).collect();
    let img = image::RgbImage::from_raw(map.width as u32, map.height as u32, raw).expect("buffer matches map size");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("encoding map of scene {}: {e}", map.scene_id)))?;
    Ok(out.into_inner())
}

fn points(path: &[[f64; 2]], mpp: f64) -> String {
    let mut s = String::new();
    for (i, p) in path.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{},{}", p[0] / mpp, p[1] / mpp);
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One window as a standalone SVG document. Paths are in meters.
pub fn render_window(map: &SceneMap, title: &str, observed: &[[f64; 2]], predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<String, CliError> {
    let png = base64::engine::general_purpose::STANDARD.encode(map_png(map)?);
    let (w, h, mpp) = (map.width, map.height, map.meters_per_pixel);
    let stroke = (0.15 / mpp).max(1.0);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(svg, r#"<image x="0" y="0" width="{w}" height="{h}" href="data:image/png;base64,{png}"/>"#);
    for (id, color, path) in [
        ("observed", OBSERVED_COLOR, observed),
        ("truth", TRUTH_COLOR, truth),
        ("prediction", PREDICTION_COLOR, predicted),
    ] {
        let _ = writeln!(
            svg,
            r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="{stroke}" points="{}"/>"#,
            points(path, mpp)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_scaled_to_pixels() {
        assert_eq!(points(&[[1.0, 2.0], [0.25, 0.0]], 0.5), "2,4 0.5,0");
    }

    #[test]
    fn title_is_escaped() {
        let map = SceneMap::filled("m", 4, 3, SemanticLabel::Road, 0.1).unwrap();
        let svg = render_window(&map, "a<b & \"c\"", &[], &[[0.1, 0.1]], &[[0.2, 0.2]]).unwrap();
        assert!(svg.contains("<title>a&lt;b &amp; &quot;c&quot;</title>"));
        assert!(svg.contains(r#"stroke="blue""#) && svg.contains(r#"stroke="green""#));
    }
}

//! File formats read and written by the CLI. All values are `f64`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clustering::BBox;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, Point3, PointCloud};
use crate::phenotyping::{Detection, DetectionClass, MaturityStage};
use crate::planning::{Phase, Trajectory, Waypoint};
use crate::pose::{Keypoint, PedicelKeypoints2, Visibility};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Deserializes JSON, reporting the line and column of the first problem.
pub fn parse_json<D: DeserializeOwned>(source: &str, text: &str) -> Result<D> {
    serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("{source}:{}:{}", e.line(), e.column()), e.to_string()))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    parse_json(&path.display().to_string(), &read_text(path)?)
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

pub fn parse_intrinsics(source: &str, text: &str) -> Result<CameraIntrinsics<f64>> {
    let k: CameraIntrinsics<f64> = parse_json(source, text)?;
    k.validate().map_err(|e| Error::parse(source, e.to_string()))?;
    Ok(k)
}

/// Reads `x y z [u v]` lines. Blank lines and `#` comments are skipped.
/// Either every point carries a pixel or none does.
pub fn parse_cloud(source: &str, text: &str) -> Result<PointCloud<f64>> {
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("{source}:{}", n + 1);
        let fields = line
            .split_whitespace()
            .enumerate()
            .map(|(i, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(&at, format!("field {}: '{f}' is not a finite number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match fields.len() {
            3 | 5 => {}
            k => return Err(Error::parse(&at, format!("expected 3 or 5 fields, found {k}"))),
        }
        points.push(Point3::new(fields[0], fields[1], fields[2]));
        if fields.len() == 5 {
            pixels.push(Pixel::new(fields[3], fields[4]));
        }
        if !pixels.is_empty() && pixels.len() != points.len() {
            return Err(Error::parse(&at, "pixel columns must be present on every line or on none"));
        }
    }
    if pixels.is_empty() {
        PointCloud::new(points)
    } else {
        PointCloud::with_pixels(points, pixels)
    }
}

pub fn write_cloud(cloud: &PointCloud<f64>) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.pixel_map() {
            Some(px) => out.push_str(&format!("{} {} {} {} {}\n", p.x, p.y, p.z, px[i].u, px[i].v)),
            None => out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z)),
        }
    }
    out
}

/// One detection as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: u64,
    pub class: DetectionClass,
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<MaturityStage>,
}

impl From<&Detection<f64>> for DetectionRecord {
    fn from(d: &Detection<f64>) -> Self {
        Self {
            id: d.id,
            class: d.class,
            bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
            conf: d.confidence,
            maturity: d.maturity,
        }
    }
}

pub fn parse_detections(source: &str, text: &str) -> Result<Vec<Detection<f64>>> {
    let records: Vec<DetectionRecord> = parse_json(source, text)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let [x0, y0, x1, y1] = r.bbox;
            let d = Detection { id: r.id, class: r.class, bbox: BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }, confidence: r.conf, maturity: r.maturity };
            d.validate().map_err(|e| Error::parse(format!("{source}: record {i}"), e.to_string()))?;
            Ok(d)
        })
        .collect()
}

/// COCO-style keypoint annotation of one truss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointAnnotation {
    #[serde(default)]
    pub image_id: u64,
    pub truss_id: u64,
    /// `[x, y, w, h]` in pixels; its area is the OKS object scale.
    pub bbox: [f64; 4],
    /// Seven `[u, v, visibility]` triples, SP first.
    pub keypoints: Vec<[f64; 3]>,
    #[serde(default)]
    pub fruit_keypoints: Vec<[f64; 3]>,
}

fn keypoint(at: &str, k: &[f64; 3]) -> Result<Keypoint<Pixel<f64>>> {
    let code = k[2];
    let visibility = (code.fract() == 0.0)
        .then(|| Visibility::from_code(code as i64))
        .flatten()
        .ok_or_else(|| Error::parse(at, format!("visibility {code} is not 0, 1 or 2")))?;
    let position = Pixel::new(k[0], k[1]);
    if visibility.is_labeled() && !position.is_finite() {
        return Err(Error::parse(at, "labeled keypoint has non-finite coordinates"));
    }
    Ok(Keypoint { position, visibility })
}

impl KeypointAnnotation {
    pub fn to_keypoints(&self, source: &str) -> Result<PedicelKeypoints2<f64>> {
        let at = format!("{source}: truss {}", self.truss_id);
        if self.keypoints.len() != 7 {
            return Err(Error::parse(&at, format!("expected 7 keypoints, found {}", self.keypoints.len())));
        }
        let mut kps = [Keypoint::absent(Pixel::new(0.0, 0.0)); 7];
        for (slot, k) in kps.iter_mut().zip(&self.keypoints) {
            *slot = keypoint(&at, k)?;
        }
        let area = self.bbox[2] * self.bbox[3];
        let mut set = PedicelKeypoints2::new(kps, area).map_err(|e| Error::parse(&at, e.to_string()))?;
        set.fruit_keypoints = self.fruit_keypoints.iter().map(|k| keypoint(&at, k)).collect::<Result<_>>()?;
        Ok(set)
    }

    pub fn from_keypoints(image_id: u64, truss_id: u64, bbox: [f64; 4], set: &PedicelKeypoints2<f64>) -> Self {
        let triple = |k: &Keypoint<Pixel<f64>>| [k.position.u, k.position.v, k.visibility as u8 as f64];
        Self {
            image_id,
            truss_id,
            bbox,
            keypoints: set.keypoints.iter().map(triple).collect(),
            fruit_keypoints: set.fruit_keypoints.iter().map(triple).collect(),
        }
    }
}

/// Reads a list of annotations (a single object is accepted too).
pub fn parse_annotations(source: &str, text: &str) -> Result<Vec<(KeypointAnnotation, PedicelKeypoints2<f64>)>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<KeypointAnnotation>),
        One(KeypointAnnotation),
    }
    let list = match parse_json::<OneOrMany>(source, text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(a) => vec![a],
    };
    list.into_iter()
        .map(|a| {
            let set = a.to_keypoints(source)?;
            Ok((a, set))
        })
        .collect()
}

/// Seven-element array: sigmas or multipliers.
pub fn parse_seven(source: &str, text: &str) -> Result<[f64; 7]> {
    let v: Vec<f64> = parse_json(source, text)?;
    let arr: [f64; 7] = v
        .as_slice()
        .try_into()
        .map_err(|_| Error::parse(source, format!("expected 7 values, found {}", v.len())))?;
    if let Some(i) = arr.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::parse(source, format!("element {i} must be positive, got {}", arr[i])));
    }
    Ok(arr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub xyz: [f64; 3],
    pub phase: Phase,
    pub yaw_deg: f64,
}

pub fn trajectory_records(traj: &Trajectory<f64>) -> Vec<WaypointRecord> {
    traj.waypoints
        .iter()
        .map(|w| WaypointRecord { xyz: w.position.to_array(), phase: w.phase, yaw_deg: w.yaw_deg })
        .collect()
}

pub fn parse_trajectory(source: &str, text: &str) -> Result<Trajectory<f64>> {
    let records: Vec<WaypointRecord> = parse_json(source, text)?;
    let waypoints = records
        .into_iter()
        .map(|r| Waypoint { position: Point3::new(r.xyz[0], r.xyz[1], r.xyz[2]), phase: r.phase, yaw_deg: r.yaw_deg })
        .collect();
    Ok(Trajectory { waypoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_with_comments_and_pixels() {
        let text = "# header\n0 0 1 320 240\n\n0.1 0.2 1.5 10 20 # trailing\n";
        let c = parse_cloud("c.txt", text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pixel_map().unwrap()[1], Pixel::new(10.0, 20.0));
        let back = parse_cloud("again", &write_cloud(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn cloud_diagnostics() {
        let err = parse_cloud("c.txt", "0 0 1\n0 x 1\n").unwrap_err();
        assert_eq!(err, Error::parse("c.txt:2", "field 2: 'x' is not a finite number"));
        let err = parse_cloud("c.txt", "0 0 1 5 5\n0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "c.txt:2"));
        assert!(parse_cloud("c.txt", "1 2\n").is_err());
    }

    #[test]
    fn detections_round_trip() {
        let text = r#"[{"id":1,"class":"truss","bbox":[0,0,100,100],"conf":0.9},
            {"id":2,"class":"fruit","bbox":[10,10,30,30],"conf":0.8,"maturity":"fully_ripe"}]"#;
        let d = parse_detections("d.json", text).unwrap();
        assert_eq!(d[1].maturity, Some(MaturityStage::FullyRipe));
        let bad = r#"[{"id":2,"class":"fruit","bbox":[10,10,30,30],"conf":0.8}]"#;
        assert!(matches!(parse_detections("d.json", bad), Err(Error::Parse { .. })));
        let broken = "[{\"id\":1,\n\"class\":\"leaf\"}]";
        let e = parse_detections("d.json", broken).unwrap_err();
        assert!(matches!(e, Error::Parse { ref location, .. } if location.starts_with("d.json:2:")));
    }

    #[test]
    fn annotation_parsing() {
        let text = r#"{"image_id":3,"truss_id":9,"bbox":[0,0,20,10],
            "keypoints":[[1,1,2],[2,2,2],[3,3,1],[4,4,2],[5,5,2],[6,6,0],[7,7,2]]}"#;
        let list = parse_annotations("a.json", text).unwrap();
        let set = &list[0].1;
        assert_eq!(set.object_scale, 200.0);
        assert_eq!(set.keypoints[5].visibility, Visibility::Absent);
        let again = KeypointAnnotation::from_keypoints(3, 9, [0.0, 0.0, 20.0, 10.0], set);
        assert_eq!(again, list[0].0);
        let bad = text.replace("[6,6,0]", "[6,6,3]");
        assert!(parse_annotations("a.json", &bad).is_err());
    }

    #[test]
    fn seven_arrays() {
        assert_eq!(parse_seven("s", "[1,1,1,1,1,1,2]").unwrap()[6], 2.0);
        assert!(parse_seven("s", "[1,1,1]").is_err());
        assert!(parse_seven("s", "[1,1,1,1,1,1,0]").is_err());
    }
}

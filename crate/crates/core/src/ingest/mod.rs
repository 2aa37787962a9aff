//! Scan directories, mask pools, and ground-truth scene files.
//!
//! ```text
//! scan/
//!   cloud.ply
//!   masks.json
//!   point_gt.json            (optional, synthetic scans only)
//!   frames/000000.rgb.png  000000.depth.f32  000000.mono.f32  000000.meta.json
//! ```

mod ply;
pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{DepthFrame, Intrinsics, Pose};
use crate::model::{normalize_label, Aabb3, Mask, ModelError, PointCloud, RealObjectNode};

pub use ply::{read_ply, write_ply, PlyError};
pub use synth::{garden_scene, synthesize_scene, CaptureSpec, Oversegmentation, SyntheticObject, SyntheticSpec};

pub const CLOUD_FILE: &str = "cloud.ply";
pub const MASKS_FILE: &str = "masks.json";
pub const POINT_GT_FILE: &str = "point_gt.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("scan layout: {0}")]
    ScanLayout(String),
    #[error("mask integrity: mask {mask_id}: {reason}")]
    MaskIntegrity { mask_id: u32, reason: String },
    #[error("validation: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Ply { path: PathBuf, source: PlyError },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IngestError + '_ {
    move |source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-point ground-truth instance ids carried by synthetic scans; feeds the
/// mock labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGroundTruth {
    /// Label per ground-truth instance.
    pub labels: Vec<String>,
    /// Instance index per cloud point, `-1` for background.
    pub point_instance: Vec<i32>,
}

impl PointGroundTruth {
    /// Most frequent instance label among `indices`; ties go to the lower
    /// instance index. `None` when every point is background.
    pub fn majority_label(&self, indices: &[u32]) -> Option<&str> {
        let mut counts = vec![0usize; self.labels.len()];
        for &i in indices {
            if let Some(&inst) = self.point_instance.get(i as usize) {
                if inst >= 0 {
                    counts[inst as usize] += 1;
                }
            }
        }
        let (best, n) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
        (n > 0).then(|| self.labels[best].as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanBundle {
    pub cloud: PointCloud,
    pub frames: Vec<DepthFrame>,
    /// Initial mask pool, sorted by id.
    pub masks_initial: Vec<Mask>,
    pub point_gt: Option<PointGroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub label: String,
    pub aabb: Aabb3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub scene_id: String,
    pub instances: Vec<GroundTruthInstance>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_id: Option<String>,
    real_objects: Vec<RealObjectNode>,
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    pose_world_from_camera: Vec<f64>,
}

pub fn read_masks(path: &Path) -> Result<Vec<Mask>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut masks: Vec<Mask> = serde_json::from_str(&text).map_err(json_err(path))?;
    masks.sort_by_key(|m| m.id);
    if let Some(w) = masks.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(IngestError::MaskIntegrity {
            mask_id: w[0].id,
            reason: "duplicate mask id".into(),
        });
    }
    Ok(masks)
}

pub fn write_masks(path: &Path, masks: &[Mask]) -> Result<(), IngestError> {
    let text = serde_json::to_string(masks).expect("masks serialize");
    fs::write(path, text).map_err(io_err(path))
}

fn validate_masks(masks: &[Mask], point_count: usize) -> Result<(), IngestError> {
    for m in masks {
        m.validate(point_count).map_err(|e| match e {
            ModelError::Mask { id, reason } => IngestError::MaskIntegrity { mask_id: id, reason },
            other => IngestError::Validation(other.to_string()),
        })?;
    }
    Ok(())
}

fn read_f32_map(path: &Path, expected: usize) -> Result<Vec<f32>, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 4 {
        return Err(IngestError::ScanLayout(format!(
            "{}: expected {} floats, found {} bytes",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_f32_map(path: &Path, values: &[f32]) -> Result<(), IngestError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

fn load_frame(dir: &Path, stem: &str) -> Result<DepthFrame, IngestError> {
    let meta_path = dir.join(format!("{stem}.meta.json"));
    let meta: FrameMeta =
        serde_json::from_str(&fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?)
            .map_err(json_err(&meta_path))?;
    let n = meta.width as usize * meta.height as usize;
    let depth_path = dir.join(format!("{stem}.depth.f32"));
    if !depth_path.exists() {
        return Err(IngestError::ScanLayout(format!("missing {}", depth_path.display())));
    }
    let sensor_depth = read_f32_map(&depth_path, n)?;
    let mono_path = dir.join(format!("{stem}.mono.f32"));
    let mono_depth = if mono_path.exists() {
        Some(read_f32_map(&mono_path, n)?)
    } else {
        None
    };
    let rgb_path = dir.join(format!("{stem}.rgb.png"));
    let rgb = if rgb_path.exists() {
        let img = image::open(&rgb_path).map_err(|source| IngestError::Image {
            path: rgb_path.clone(),
            source,
        })?;
        Some(img.to_rgb8())
    } else {
        None
    };
    let pose = Pose::from_row_major(&meta.pose_world_from_camera).ok_or_else(|| {
        IngestError::Validation(format!("{}: pose needs 16 values", meta_path.display()))
    })?;
    let frame = DepthFrame {
        width: meta.width,
        height: meta.height,
        sensor_depth,
        mono_depth,
        rgb,
        intrinsics: Intrinsics {
            fx: meta.fx,
            fy: meta.fy,
            cx: meta.cx,
            cy: meta.cy,
        },
        pose_world_from_camera: pose,
    };
    frame
        .validate()
        .map_err(|e| IngestError::Validation(format!("frame {stem}: {e}")))?;
    Ok(frame)
}

pub fn load_frames(dir: &Path) -> Result<Vec<DepthFrame>, IngestError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".meta.json").map(str::to_string)
        })
        .collect();
    stems.sort();
    stems.iter().map(|s| load_frame(dir, s)).collect()
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_ply(file).map_err(|source| IngestError::Ply {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a scan directory.
pub fn load_scan(dir: &Path) -> Result<ScanBundle, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::ScanLayout(format!("{} is not a directory", dir.display())));
    }
    let cloud_path = dir.join(CLOUD_FILE);
    let masks_path = dir.join(MASKS_FILE);
    for required in [&cloud_path, &masks_path] {
        if !required.exists() {
            return Err(IngestError::ScanLayout(format!("missing {}", required.display())));
        }
    }
    let cloud = load_cloud(&cloud_path)?;
    let masks_initial = read_masks(&masks_path)?;
    validate_masks(&masks_initial, cloud.len())?;
    let frames = load_frames(&dir.join(FRAMES_DIR))?;
    let gt_path = dir.join(POINT_GT_FILE);
    let point_gt = if gt_path.exists() {
        let gt: PointGroundTruth =
            serde_json::from_str(&fs::read_to_string(&gt_path).map_err(io_err(&gt_path))?)
                .map_err(json_err(&gt_path))?;
        if gt.point_instance.len() != cloud.len() {
            return Err(IngestError::Validation(format!(
                "{}: {} entries for {} points",
                gt_path.display(),
                gt.point_instance.len(),
                cloud.len()
            )));
        }
        Some(gt)
    } else {
        None
    };
    Ok(ScanBundle {
        cloud,
        frames,
        masks_initial,
        point_gt,
    })
}

pub fn save_frame(dir: &Path, index: usize, frame: &DepthFrame) -> Result<(), IngestError> {
    let stem = frame_stem(index);
    let meta = FrameMeta {
        width: frame.width,
        height: frame.height,
        fx: frame.intrinsics.fx,
        fy: frame.intrinsics.fy,
        cx: frame.intrinsics.cx,
        cy: frame.intrinsics.cy,
        pose_world_from_camera: frame.pose_world_from_camera.to_row_major(),
    };
    let meta_path = dir.join(format!("{stem}.meta.json"));
    fs::write(&meta_path, serde_json::to_string(&meta).expect("meta serializes"))
        .map_err(io_err(&meta_path))?;
    write_f32_map(&dir.join(format!("{stem}.depth.f32")), &frame.sensor_depth)?;
    if let Some(mono) = &frame.mono_depth {
        write_f32_map(&dir.join(format!("{stem}.mono.f32")), mono)?;
    }
    if let Some(rgb) = &frame.rgb {
        let p = dir.join(format!("{stem}.rgb.png"));
        rgb.save(&p).map_err(|source| IngestError::Image { path: p.clone(), source })?;
    }
    Ok(())
}

pub fn save_scan(dir: &Path, bundle: &ScanBundle) -> Result<(), IngestError> {
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    let cloud_path = dir.join(CLOUD_FILE);
    let file = fs::File::create(&cloud_path).map_err(io_err(&cloud_path))?;
    write_ply(std::io::BufWriter::new(file), &bundle.cloud).map_err(|source| IngestError::Ply {
        path: cloud_path.clone(),
        source,
    })?;
    write_masks(&dir.join(MASKS_FILE), &bundle.masks_initial)?;
    for (i, f) in bundle.frames.iter().enumerate() {
        save_frame(&frames_dir, i, f)?;
    }
    if let Some(gt) = &bundle.point_gt {
        let p = dir.join(POINT_GT_FILE);
        fs::write(&p, serde_json::to_string(gt).expect("point gt serializes")).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Loads a ground-truth scene; the id falls back to the file stem.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruthScene, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: GroundTruthFile = serde_json::from_str(&text).map_err(|e| {
        if e.is_data() {
            IngestError::Validation(format!("{}: {e}", path.display()))
        } else {
            IngestError::Json {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let scene_id = file.scene_id.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(GroundTruthScene {
        scene_id,
        instances: file
            .real_objects
            .into_iter()
            .map(|r| GroundTruthInstance {
                label: normalize_label(&r.label),
                aabb: r.aabb,
            })
            .collect(),
    })
}

pub fn ground_truth_json(gt: &GroundTruthScene) -> String {
    let file = GroundTruthFile {
        scene_id: Some(gt.scene_id.clone()),
        real_objects: gt
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| RealObjectNode {
                id: format!("g{i}"),
                label: inst.label.clone(),
                aabb: inst.aabb,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("gt serializes");
    s.push('\n');
    s
}

pub fn save_ground_truth(path: &Path, gt: &GroundTruthScene) -> Result<(), IngestError> {
    fs::write(path, ground_truth_json(gt)).map_err(io_err(path))
}

/// Unique labels in first-seen order.
pub fn distinct_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Vec<String> {
    let mut seen = HashSet::new();
    labels
        .into_iter()
        .filter(|l| seen.insert(*l))
        .map(str::to_string)
        .collect()
}

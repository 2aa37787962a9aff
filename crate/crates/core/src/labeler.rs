//! Mask labeling: pick the frame that sees a mask best, cut an object crop and
//! a context crop, and ask a vision-language port for a label.

use std::collections::HashMap;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::depth::DepthFrame;
use crate::eval::{cosine, trigram_embed};
use crate::ingest::PointGroundTruth;
use crate::model::{normalize_label, LabeledInstance, Mask, PointCloud, UNKNOWN_LABEL};
use crate::ports::PortError;

/// Visibility tolerance in meters at camera depth `z`.
pub fn visibility_tolerance(z: f64) -> f64 {
    0.1 + 0.02 * z
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    /// Pixel `(u, v)` of each visible mask point, in mask order.
    pub pixels: Vec<(u32, u32)>,
}

impl Visibility {
    pub fn count(&self) -> usize {
        self.pixels.len()
    }
}

/// Projects mask points into `frame` and keeps those in front of the camera
/// whose depth agrees with `depth` within [`visibility_tolerance`].
pub fn project_visible(mask: &Mask, cloud: &PointCloud, frame: &DepthFrame, depth: &[f32]) -> Visibility {
    let cam_from_world = frame.pose_world_from_camera.rigid_inverse();
    let k = &frame.intrinsics;
    let mut pixels = Vec::new();
    for &i in mask.indices() {
        let pc = cam_from_world.transform_point(cloud.points[i as usize]);
        if pc.z <= 0.0 {
            continue;
        }
        let u = (k.fx * pc.x / pc.z + k.cx).floor();
        let v = (k.fy * pc.y / pc.z + k.cy).floor();
        if u < 0.0 || v < 0.0 || u >= frame.width as f64 || v >= frame.height as f64 {
            continue;
        }
        let (u, v) = (u as u32, v as u32);
        let d = depth[(v * frame.width + u) as usize] as f64;
        if d > 0.0 && d.is_finite() && (pc.z - d).abs() <= visibility_tolerance(pc.z) {
            pixels.push((u, v));
        }
    }
    Visibility { pixels }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelError {
    #[error("mask {0} is not visible in any frame")]
    NeverVisible(u32),
    #[error("no frames")]
    NoFrames,
}

/// Index of the frame with the most visible mask points; ties go to the
/// lower index.
pub fn select_best_frame(
    mask: &Mask,
    cloud: &PointCloud,
    frames: &[DepthFrame],
    depths: &[Vec<f32>],
) -> Result<(usize, Visibility), LabelError> {
    if frames.is_empty() {
        return Err(LabelError::NoFrames);
    }
    let mut best: Option<(usize, Visibility)> = None;
    for (fi, (frame, depth)) in frames.iter().zip(depths).enumerate() {
        let vis = project_visible(mask, cloud, frame, depth);
        if vis.count() > best.as_ref().map_or(0, |(_, b)| b.count()) {
            best = Some((fi, vis));
        }
    }
    best.ok_or(LabelError::NeverVisible(mask.id))
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn contains_rect(&self, o: &PixelRect) -> bool {
        self.x0 <= o.x0 && self.y0 <= o.y0 && self.x1 >= o.x1 && self.y1 >= o.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropRegion {
    pub rect: PixelRect,
    pub image: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropPair {
    pub object: CropRegion,
    pub context: CropRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    /// Fraction of the visible extent added on each side of the object rect.
    pub object_margin: f64,
    /// Context rect size relative to the object rect.
    pub context_scale: f64,
    /// Object-crop pixels farther than this from every visible pixel turn white.
    pub whiten_radius: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            object_margin: 0.05,
            context_scale: 2.0,
            whiten_radius: 2.0,
        }
    }
}

fn clamp_rect(x0: f64, y0: f64, x1: f64, y1: f64, w: u32, h: u32) -> PixelRect {
    let cl = |v: f64, hi: u32| v.clamp(0.0, hi as f64 - 1.0) as u32;
    PixelRect {
        x0: cl(x0.floor(), w),
        y0: cl(y0.floor(), h),
        x1: cl(x1.ceil(), w),
        y1: cl(y1.ceil(), h),
    }
}

/// Object and context crops around the visible pixels. Frames without color
/// crop from a uniform gray canvas.
///
/// # Panics
/// If `pixels` is empty.
pub fn extract_crops(frame: &DepthFrame, pixels: &[(u32, u32)], cfg: &CropConfig) -> CropPair {
    assert!(!pixels.is_empty(), "extract_crops needs at least one visible pixel");
    let (w, h) = (frame.width, frame.height);
    let (mut minx, mut miny, mut maxx, mut maxy) = (u32::MAX, u32::MAX, 0, 0);
    for &(u, v) in pixels {
        minx = minx.min(u);
        miny = miny.min(v);
        maxx = maxx.max(u);
        maxy = maxy.max(v);
    }
    let mx = cfg.object_margin * (maxx - minx) as f64;
    let my = cfg.object_margin * (maxy - miny) as f64;
    let object = clamp_rect(minx as f64 - mx, miny as f64 - my, maxx as f64 + mx, maxy as f64 + my, w, h);
    let cx = (object.x0 + object.x1) as f64 / 2.0;
    let cy = (object.y0 + object.y1) as f64 / 2.0;
    let hw = cfg.context_scale * (object.x1 - object.x0) as f64 / 2.0;
    let hh = cfg.context_scale * (object.y1 - object.y0) as f64 / 2.0;
    let context = clamp_rect(cx - hw, cy - hh, cx + hw, cy + hh, w, h);

    let canvas;
    let source = match &frame.rgb {
        Some(img) => img,
        None => {
            canvas = RgbImage::from_pixel(w, h, Rgb([128, 128, 128]));
            &canvas
        }
    };
    let cut = |r: &PixelRect| image::imageops::crop_imm(source, r.x0, r.y0, r.width(), r.height()).to_image();

    let mut near = vec![false; (object.width() * object.height()) as usize];
    let reach = cfg.whiten_radius.floor() as i64;
    let r2 = cfg.whiten_radius * cfg.whiten_radius;
    for &(u, v) in pixels {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if (dx * dx + dy * dy) as f64 > r2 {
                    continue;
                }
                let (x, y) = (u as i64 + dx, v as i64 + dy);
                if x >= object.x0 as i64 && x <= object.x1 as i64 && y >= object.y0 as i64 && y <= object.y1 as i64 {
                    near[((y - object.y0 as i64) * object.width() as i64 + (x - object.x0 as i64)) as usize] = true;
                }
            }
        }
    }
    let mut object_img = cut(&object);
    for (x, y, px) in object_img.enumerate_pixels_mut() {
        if !near[(y * object.width() + x) as usize] {
            *px = Rgb([255, 255, 255]);
        }
    }
    CropPair {
        object: CropRegion { rect: object, image: object_img },
        context: CropRegion { rect: context, image: cut(&context) },
    }
}

/// Labels emitted so far in a run, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelRegistry {
    labels: Vec<String>,
}

pub const SNAP_THRESHOLD: f64 = 0.85;

impl LabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The registry label most similar to `label` when the trigram cosine
    /// reaches [`SNAP_THRESHOLD`], else `label` itself.
    pub fn snap(&self, label: &str) -> String {
        if self.labels.iter().any(|l| l == label) {
            return label.to_string();
        }
        let e = trigram_embed(label);
        let mut best: Option<(&String, f64)> = None;
        for l in &self.labels {
            let c = cosine(&e, &trigram_embed(l));
            if c >= SNAP_THRESHOLD && best.is_none_or(|(_, b)| c > b) {
                best = Some((l, c));
            }
        }
        best.map_or_else(|| label.to_string(), |(l, _)| l.clone())
    }

    /// Appends `label` if unseen; returns whether it was new.
    pub fn insert(&mut self, label: &str) -> bool {
        if self.labels.iter().any(|l| l == label) {
            return false;
        }
        self.labels.push(label.to_string());
        true
    }
}

pub struct VlmRequest<'a> {
    pub mask: &'a Mask,
    pub crops: &'a CropPair,
    pub known_labels: &'a [String],
}

pub trait VlmPort: Send + Sync {
    fn id(&self) -> &str;
    fn classify(&self, req: &VlmRequest<'_>) -> Result<String, PortError>;
}

/// Offline labeler that answers with the majority ground-truth label of the
/// mask's points. With `consistency`, a reply that contains every word of a
/// known label is answered with that label, the way the prompt instructs a
/// real model to reuse labels.
pub struct MockVlm {
    gt: PointGroundTruth,
    consistency: bool,
    scripted: HashMap<u32, String>,
}

impl MockVlm {
    pub fn new(gt: PointGroundTruth) -> Self {
        Self {
            gt,
            consistency: true,
            scripted: HashMap::new(),
        }
    }

    pub fn with_consistency(mut self, on: bool) -> Self {
        self.consistency = on;
        self
    }

    /// Overrides the raw reply for one mask id.
    pub fn script(mut self, mask_id: u32, reply: &str) -> Self {
        self.scripted.insert(mask_id, reply.to_string());
        self
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl VlmPort for MockVlm {
    fn id(&self) -> &str {
        "mock"
    }

    fn classify(&self, req: &VlmRequest<'_>) -> Result<String, PortError> {
        let raw = match self.scripted.get(&req.mask.id) {
            Some(r) => r.clone(),
            None => self
                .gt
                .majority_label(req.mask.indices())
                .unwrap_or("background")
                .to_string(),
        };
        if self.consistency {
            let reply = words(&raw);
            let reuse = req.known_labels.iter().find(|known| {
                let kw = words(known);
                !kw.is_empty() && kw.iter().all(|w| reply.contains(w))
            });
            if let Some(k) = reuse {
                return Ok(k.clone());
            }
        }
        Ok(raw)
    }
}

/// Port that always fails; exercises the degraded path.
pub struct FailingVlm;

impl VlmPort for FailingVlm {
    fn id(&self) -> &str {
        "failing"
    }

    fn classify(&self, _req: &VlmRequest<'_>) -> Result<String, PortError> {
        Err(PortError::Unavailable("vlm backend down".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub crops: CropConfig,
    /// Extra attempts after a failed port call.
    pub retries: u32,
    /// Masks classified concurrently. Registry contents then depend on batch
    /// boundaries, so values above 1 trade reproducibility across settings
    /// for speed.
    pub parallelism: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            crops: CropConfig::default(),
            retries: 2,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelOutcome {
    /// One instance per input mask, sorted by mask id.
    pub instances: Vec<LabeledInstance>,
    pub never_visible: Vec<u32>,
    pub port_failures: Vec<u32>,
}

enum Prepared {
    Crops(CropPair),
    NeverVisible,
}

fn classify_with_retries(vlm: &dyn VlmPort, req: &VlmRequest<'_>, retries: u32) -> Option<String> {
    for attempt in 0..=retries {
        match vlm.classify(req) {
            Ok(raw) => {
                let label = normalize_label(&raw);
                if !label.is_empty() {
                    return Some(label);
                }
                tracing::warn!(mask = req.mask.id, attempt, "empty label from vlm");
            }
            Err(e) => tracing::warn!(mask = req.mask.id, attempt, error = %e, "vlm call failed"),
        }
    }
    None
}

/// Labels every mask in ascending id order, growing `registry` as new labels
/// appear. Masks never seen by any frame, and masks whose port calls keep
/// failing, are labeled `unknown`.
pub fn label_masks(
    masks: &[Mask],
    cloud: &PointCloud,
    frames: &[DepthFrame],
    depths: &[Vec<f32>],
    vlm: &dyn VlmPort,
    registry: &mut LabelRegistry,
    cfg: &LabelerConfig,
) -> LabelOutcome {
    let mut order: Vec<&Mask> = masks.iter().collect();
    order.sort_by_key(|m| m.id);
    let prepared: Vec<Prepared> = order
        .iter()
        .map(|m| match select_best_frame(m, cloud, frames, depths) {
            Ok((fi, vis)) => Prepared::Crops(extract_crops(&frames[fi], &vis.pixels, &cfg.crops)),
            Err(_) => Prepared::NeverVisible,
        })
        .collect();

    let mut out = LabelOutcome::default();
    let batch = cfg.parallelism.max(1);
    for (chunk_masks, chunk_prep) in order.chunks(batch).zip(prepared.chunks(batch)) {
        let known = registry.labels().to_vec();
        let replies: Vec<Option<Option<String>>> = if batch == 1 {
            chunk_masks
                .iter()
                .zip(chunk_prep)
                .map(|(m, p)| classify_one(vlm, m, p, &known, cfg.retries))
                .collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk_masks
                    .iter()
                    .zip(chunk_prep)
                    .map(|(m, p)| {
                        let known = &known;
                        s.spawn(move || classify_one(vlm, m, p, known, cfg.retries))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("labeling thread panicked")).collect()
            })
        };
        for (m, reply) in chunk_masks.iter().zip(replies) {
            let label = match reply {
                None => {
                    out.never_visible.push(m.id);
                    UNKNOWN_LABEL.to_string()
                }
                Some(None) => {
                    out.port_failures.push(m.id);
                    UNKNOWN_LABEL.to_string()
                }
                Some(Some(raw)) => {
                    let snapped = registry.snap(&raw);
                    registry.insert(&snapped);
                    snapped
                }
            };
            out.instances.push(LabeledInstance {
                mask: (*m).clone(),
                label,
            });
        }
    }
    out
}

/// `None` for never-visible masks, `Some(None)` when the port gave up.
fn classify_one(
    vlm: &dyn VlmPort,
    mask: &Mask,
    prep: &Prepared,
    known: &[String],
    retries: u32,
) -> Option<Option<String>> {
    match prep {
        Prepared::NeverVisible => None,
        Prepared::Crops(crops) => Some(classify_with_retries(
            vlm,
            &VlmRequest {
                mask,
                crops,
                known_labels: known,
            },
            retries,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::{Intrinsics, Pose};
    use crate::model::Vec3;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn camera(eye: Vec3, target: Vec3, w: u32, h: u32) -> DepthFrame {
        DepthFrame {
            width: w,
            height: h,
            sensor_depth: vec![0.0; (w * h) as usize],
            mono_depth: None,
            rgb: None,
            intrinsics: Intrinsics {
                fx: w as f64 / 2.0,
                fy: w as f64 / 2.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
            },
            pose_world_from_camera: Pose::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0)),
        }
    }

    /// Depth map of an axis-aligned box face seen head on: the camera sits on
    /// the +z or -z side of the unit cube at the origin.
    fn face_depth(frame: &DepthFrame, face_distance: f64) -> Vec<f32> {
        vec![face_distance as f32; frame.pixel_count()]
    }

    fn front_face_points(n: usize) -> PointCloud {
        let side = (n as f64).sqrt() as usize;
        let pts = (0..side * side)
            .map(|i| {
                let (a, b) = ((i % side) as f64 / side as f64, (i / side) as f64 / side as f64);
                Vec3::new(a - 0.5, b - 0.5, 0.5)
            })
            .collect();
        PointCloud::new(pts)
    }

    #[test]
    fn surface_point_visible_and_occluded_point_not() {
        let frame = camera(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, 64, 48);
        let cloud = PointCloud::new(vec![Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0)]);
        let depth = face_depth(&frame, 5.0);
        let m = Mask::new(0, vec![0, 1]).unwrap();
        let vis = project_visible(&m, &cloud, &frame, &depth);
        assert_eq!(vis.count(), 1);
        assert_eq!(vis.pixels[0], (32, 24));
        assert_eq!(visibility_tolerance(5.0), 0.2);
    }

    #[test]
    fn front_face_seen_from_front_only() {
        let cloud = front_face_points(100);
        let m = Mask::new(0, (0..100).collect()).unwrap();
        let front = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::ZERO, 320, 240);
        let back = camera(Vec3::new(0.0, 0.0, -4.0), Vec3::ZERO, 320, 240);
        // Front camera sees the face at 3.5 m; the back camera sees the back
        // face at 3.5 m, so the front face (4.5 m) is hidden behind it.
        let depths = vec![face_depth(&front, 3.5), face_depth(&back, 3.5)];
        let frames = vec![front, back];
        assert_eq!(project_visible(&m, &cloud, &frames[0], &depths[0]).count(), 100);
        assert_eq!(project_visible(&m, &cloud, &frames[1], &depths[1]).count(), 0);
        assert_eq!(select_best_frame(&m, &cloud, &frames, &depths).unwrap().0, 0);
    }

    #[test]
    fn best_frame_ties_and_never_visible() {
        let cloud = front_face_points(100);
        let m = Mask::new(3, (0..100).collect()).unwrap();
        let a = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::ZERO, 320, 240);
        let d = face_depth(&a, 3.5);
        let frames = vec![a.clone(), a.clone()];
        assert_eq!(select_best_frame(&m, &cloud, &frames, &[d.clone(), d.clone()]).unwrap().0, 0);
        // Camera at the face looking away: every point is behind it.
        let away = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::new(0.0, 0.0, 10.0), 320, 240);
        assert_eq!(
            select_best_frame(&m, &cloud, &[away], &[d]),
            Err(LabelError::NeverVisible(3))
        );
    }

    #[test]
    fn crop_rect_arithmetic() {
        let frame = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::ZERO, 640, 480);
        let crops = extract_crops(&frame, &[(10, 10), (50, 50)], &CropConfig::default());
        assert_eq!(crops.object.rect, PixelRect { x0: 8, y0: 8, x1: 52, y1: 52 });
        assert_eq!(crops.context.rect, PixelRect { x0: 0, y0: 0, x1: 74, y1: 74 });
        let one = extract_crops(&frame, &[(639, 479)], &CropConfig::default());
        assert_eq!(one.object.rect, PixelRect { x0: 639, y0: 479, x1: 639, y1: 479 });
        assert!(one.context.rect.contains_rect(&one.object.rect));
        let all = extract_crops(&frame, &[(0, 0), (639, 479)], &CropConfig::default());
        let full = PixelRect { x0: 0, y0: 0, x1: 639, y1: 479 };
        assert_eq!((all.object.rect, all.context.rect), (full, full));
    }

    #[test]
    fn object_crop_whitens_far_pixels() {
        let mut frame = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::ZERO, 100, 100);
        frame.rgb = Some(RgbImage::from_pixel(100, 100, Rgb([10, 20, 30])));
        let crops = extract_crops(&frame, &[(20, 20), (60, 60)], &CropConfig::default());
        let r = crops.object.rect;
        let at = |x: u32, y: u32| *crops.object.image.get_pixel(x - r.x0, y - r.y0);
        assert_eq!(at(20, 20), Rgb([10, 20, 30]));
        assert_eq!(at(22, 20), Rgb([10, 20, 30]));
        assert_eq!(at(40, 40), Rgb([255, 255, 255]));
        assert!(crops.context.image.pixels().all(|p| *p == Rgb([10, 20, 30])));
    }

    #[test]
    fn registry_snaps_near_duplicates() {
        let mut r = LabelRegistry::new();
        assert!(r.insert("road"));
        assert!(!r.insert("road"));
        assert_eq!(r.snap("road"), "road");
        assert_eq!(r.snap("tree"), "tree");
        r.insert("picnic table");
        assert_eq!(r.snap("picnic tables"), "picnic table");
    }

    fn labeled_fixture() -> (PointCloud, Vec<DepthFrame>, Vec<Vec<f32>>, PointGroundTruth) {
        let cloud = front_face_points(100);
        let f = camera(Vec3::new(0.0, 0.0, 4.0), Vec3::ZERO, 320, 240);
        let d = face_depth(&f, 3.5);
        let gt = PointGroundTruth {
            labels: vec!["road".into(), "tree".into()],
            point_instance: (0..100).map(|i| if i < 50 { 0 } else { 1 }).collect(),
        };
        (cloud, vec![f], vec![d], gt)
    }

    #[test]
    fn mock_passthrough_and_consistency_snap() {
        let (cloud, frames, depths, gt) = labeled_fixture();
        let masks = vec![
            Mask::new(0, (0..50).collect()).unwrap(),
            Mask::new(1, (50..100).collect()).unwrap(),
            Mask::new(2, (0..30).collect()).unwrap(),
        ];
        let vlm = MockVlm::new(gt).script(2, "Road Surface");
        let mut reg = LabelRegistry::new();
        let out = label_masks(&masks, &cloud, &frames, &depths, &vlm, &mut reg, &LabelerConfig::default());
        let labels: Vec<&str> = out.instances.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(labels, ["road", "tree", "road"]);
        assert_eq!(reg.labels(), ["road", "tree"]);
    }

    #[test]
    fn failing_port_yields_unknown_after_retries() {
        struct Counting(AtomicUsize);
        impl VlmPort for Counting {
            fn id(&self) -> &str {
                "counting"
            }
            fn classify(&self, _: &VlmRequest<'_>) -> Result<String, PortError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Err(PortError::Timeout("slow".into()))
            }
        }
        let (cloud, frames, depths, _) = labeled_fixture();
        let masks = vec![Mask::new(0, (0..50).collect()).unwrap(), Mask::new(1, (50..100).collect()).unwrap()];
        let port = Counting(AtomicUsize::new(0));
        let mut reg = LabelRegistry::new();
        let out = label_masks(&masks, &cloud, &frames, &depths, &port, &mut reg, &LabelerConfig::default());
        assert!(out.instances.iter().all(|i| i.label == UNKNOWN_LABEL));
        assert_eq!(port.0.load(Ordering::SeqCst), 6);
        assert_eq!(out.port_failures, vec![0, 1]);
        assert!(reg.is_empty());
        let out = label_masks(&masks, &cloud, &frames, &depths, &FailingVlm, &mut reg, &LabelerConfig::default());
        assert_eq!(out.instances.len(), 2);
    }

    #[test]
    fn parallel_labeling_matches_sequential_for_stateless_port() {
        let (cloud, frames, depths, gt) = labeled_fixture();
        let masks: Vec<Mask> = (0..8).map(|i| Mask::new(i, (i * 10..i * 10 + 20).collect()).unwrap()).collect();
        let vlm = MockVlm::new(gt).with_consistency(false);
        let mut r1 = LabelRegistry::new();
        let mut r2 = LabelRegistry::new();
        let seq = label_masks(&masks, &cloud, &frames, &depths, &vlm, &mut r1, &LabelerConfig::default());
        let cfg = LabelerConfig {
            parallelism: 4,
            ..Default::default()
        };
        let par = label_masks(&masks, &cloud, &frames, &depths, &vlm, &mut r2, &cfg);
        assert_eq!(seq, par);
        assert!(r1.len() <= masks.len());
    }
}

//! Seeded synthetic scans: surface-sampled boxes on a ground plane, an
//! oversegmented initial mask pool, and ray-cast RGB-D frames.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundTruthInstance, GroundTruthScene, PointGroundTruth, ScanBundle};
use crate::depth::{DepthFrame, Intrinsics, Pose};
use crate::model::{Aabb3, Mask, PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub label: String,
    pub aabb_min: Vec3,
    pub aabb_max: Vec3,
    /// Surface samples per square meter.
    pub density: f64,
}

impl SyntheticObject {
    pub fn new(label: &str, min: Vec3, max: Vec3, density: f64) -> Self {
        Self {
            label: label.to_string(),
            aabb_min: min,
            aabb_max: max,
            density,
        }
    }

    pub fn aabb(&self) -> Aabb3 {
        Aabb3::new(self.aabb_min, self.aabb_max).expect("synthetic object box is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oversegmentation {
    /// Inclusive range of parts each object is split into.
    pub parts: [u32; 2],
    pub duplicate_prob: f64,
    pub spurious_count: u32,
    /// Inclusive range of spurious mask sizes.
    pub spurious_size: [u32; 2],
}

impl Default for Oversegmentation {
    fn default() -> Self {
        Self {
            parts: [4, 8],
            duplicate_prob: 0.5,
            spurious_count: 10,
            spurious_size: [5, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSpec {
    /// Horizontal distance from each object's footprint to its camera.
    pub standoff: f64,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub camera_height: f64,
    /// Sensor readings beyond this distance come back empty.
    pub sensor_range: f64,
    /// Fraction of in-range pixels randomly dropped.
    pub dropout: f64,
}

impl Default for CaptureSpec {
    fn default() -> Self {
        Self {
            standoff: 4.0,
            width: 160,
            height: 120,
            hfov_deg: 90.0,
            camera_height: 3.0,
            sensor_range: 8.0,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub objects: Vec<SyntheticObject>,
    pub oversegmentation: Oversegmentation,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_ground_density")]
    pub ground_density: f64,
    #[serde(default)]
    pub capture: Option<CaptureSpec>,
}

fn default_noise() -> f64 {
    0.01
}

fn default_ground_density() -> f64 {
    15.0
}

/// Monocular depth in the synthetic frames is this affine warp of true depth.
pub const MOCK_MONO_SCALE: f64 = 0.5;
pub const MOCK_MONO_SHIFT: f64 = 0.25;

impl SyntheticSpec {
    /// Six-object garden: shed, two trees, bench, fountain, statue.
    pub fn garden(seed: u64) -> Self {
        let d = 120.0;
        let objects = vec![
            SyntheticObject::new("shed", Vec3::new(-6.0, 0.0, -6.0), Vec3::new(-3.0, 2.5, -3.5), d),
            SyntheticObject::new("tree", Vec3::new(2.0, 0.0, -6.0), Vec3::new(3.2, 4.0, -4.8), d),
            SyntheticObject::new("tree", Vec3::new(4.5, 0.0, 1.0), Vec3::new(5.7, 4.0, 2.2), d),
            SyntheticObject::new("bench", Vec3::new(-5.0, 0.0, 2.0), Vec3::new(-3.2, 0.9, 2.6), d),
            SyntheticObject::new("fountain", Vec3::new(-0.75, 0.0, -0.75), Vec3::new(0.75, 1.2, 0.75), d),
            SyntheticObject::new("statue", Vec3::new(1.0, 0.0, 4.0), Vec3::new(1.8, 1.8, 4.8), d),
        ];
        Self {
            seed,
            objects,
            oversegmentation: Oversegmentation::default(),
            noise_sigma: default_noise(),
            ground_density: default_ground_density(),
            capture: Some(CaptureSpec::default()),
        }
    }

    /// First `n` garden objects (cycled with offsets when `n > 6`).
    pub fn garden_with(seed: u64, n: usize) -> Self {
        let mut spec = Self::garden(seed);
        let base = spec.objects.clone();
        spec.objects = (0..n)
            .map(|i| {
                let mut o = base[i % base.len()].clone();
                let shift = Vec3::new(0.0, 0.0, 14.0 * (i / base.len()) as f64);
                o.aabb_min = o.aabb_min + shift;
                o.aabb_max = o.aabb_max + shift;
                o
            })
            .collect();
        spec
    }

    pub fn validate(&self) -> Result<(), String> {
        for o in &self.objects {
            if !(o.density > 0.0) {
                return Err(format!("object {:?}: density must be > 0", o.label));
            }
            Aabb3::new(o.aabb_min, o.aabb_max).map_err(|e| e.to_string())?;
        }
        let s = &self.oversegmentation;
        if !(0.0..=1.0).contains(&s.duplicate_prob) {
            return Err("duplicate_prob must be in [0,1]".into());
        }
        if s.parts[0] < 1 || s.parts[0] > s.parts[1] || s.spurious_size[0] < 1 || s.spurious_size[0] > s.spurious_size[1] {
            return Err("invalid oversegmentation ranges".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.ground_density >= 0.0) {
            return Err("noise and ground density must be non-negative".into());
        }
        if let Some(c) = &self.capture {
            if !(0.0..=1.0).contains(&c.dropout) || c.width == 0 || c.height == 0 {
                return Err("invalid capture spec".into());
            }
        }
        Ok(())
    }
}

fn sample_box_surface(rng: &mut ChaCha8Rng, b: &Aabb3, density: f64, out: &mut Vec<Vec3>) {
    let (lo, hi) = (b.min(), b.max());
    let e = b.extents();
    // (fixed axis, fixed value, face area)
    let faces = [
        (0, lo.x, e.y * e.z),
        (0, hi.x, e.y * e.z),
        (1, lo.y, e.x * e.z),
        (1, hi.y, e.x * e.z),
        (2, lo.z, e.x * e.y),
        (2, hi.z, e.x * e.y),
    ];
    for (axis, value, area) in faces {
        let count = (area * density).round() as usize;
        for _ in 0..count {
            let mut p = [
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            ];
            p[axis] = value;
            out.push(Vec3::from_array(p));
        }
    }
}

fn footprint_contains(b: &Aabb3, x: f64, z: f64) -> bool {
    x >= b.min().x && x <= b.max().x && z >= b.min().z && z <= b.max().z
}

fn scene_bounds(objects: &[SyntheticObject]) -> Aabb3 {
    Aabb3::enclosing(objects.iter().flat_map(|o| [o.aabb_min, o.aabb_max]))
        .unwrap_or_else(|| Aabb3::new(Vec3::new(-5.0, 0.0, -5.0), Vec3::new(5.0, 0.0, 5.0)).unwrap())
}

/// Splits `indices` into `k` spatially coherent parts: farthest-point seeds,
/// then nearest-seed assignment.
fn split_into_parts(rng: &mut ChaCha8Rng, points: &[Vec3], indices: &[u32], k: usize) -> Vec<Vec<u32>> {
    let k = k.min(indices.len()).max(1);
    let mut seeds = vec![indices[rng.random_range(0..indices.len())]];
    let mut nearest: Vec<f64> = indices
        .iter()
        .map(|&i| points[i as usize].distance(points[seeds[0] as usize]))
        .collect();
    while seeds.len() < k {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        let s = indices[far];
        seeds.push(s);
        for (j, &i) in indices.iter().enumerate() {
            nearest[j] = nearest[j].min(points[i as usize].distance(points[s as usize]));
        }
    }
    let mut parts = vec![Vec::new(); k];
    for &i in indices {
        let p = points[i as usize];
        let best = (0..k)
            .min_by(|&a, &b| {
                p.distance(points[seeds[a] as usize])
                    .total_cmp(&p.distance(points[seeds[b] as usize]))
            })
            .unwrap();
        parts[best].push(i);
    }
    parts.retain(|p| !p.is_empty());
    parts
}

const PALETTE: [[u8; 3]; 8] = [
    [170, 90, 60],
    [40, 140, 50],
    [60, 160, 70],
    [150, 110, 70],
    [120, 160, 210],
    [200, 200, 190],
    [210, 170, 40],
    [160, 60, 160],
];
const GROUND_COLOR: [u8; 3] = [95, 120, 80];
const SKY_COLOR: [u8; 3] = [200, 225, 245];

fn object_color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

/// Ray/box slab test; returns the entry parameter and the hit face axis.
fn ray_box(origin: Vec3, dir: Vec3, b: &Aabb3) -> Option<(f64, usize)> {
    let o = origin.to_array();
    let d = dir.to_array();
    let lo = b.min().to_array();
    let hi = b.max().to_array();
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut near, mut far) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        if near > t0 {
            t0 = near;
            axis = a;
        }
        t1 = t1.min(far);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

/// One `(eye, target)` per object, looking at it from outside the scene
/// center; a single view of the origin for empty scenes.
fn camera_views(boxes: &[Aabb3], capture: &CaptureSpec) -> Vec<(Vec3, Vec3)> {
    if boxes.is_empty() {
        return vec![(Vec3::new(0.0, capture.camera_height, capture.standoff), Vec3::ZERO)];
    }
    let scene = boxes
        .iter()
        .fold(Vec3::ZERO, |acc, b| acc + b.center())
        * (1.0 / boxes.len() as f64);
    boxes
        .iter()
        .map(|b| {
            let c = b.center();
            let (dx, dz) = (c.x - scene.x, c.z - scene.z);
            let len = (dx * dx + dz * dz).sqrt();
            let (ux, uz) = if len < 1e-9 { (0.0, 1.0) } else { (dx / len, dz / len) };
            let e = b.extents();
            let reach = 0.5 * (e.x * e.x + e.z * e.z).sqrt() + capture.standoff;
            let eye = Vec3::new(c.x + ux * reach, capture.camera_height, c.z + uz * reach);
            (eye, Vec3::new(c.x, 0.5 * b.max().y, c.z))
        })
        .collect()
}

fn render_frames(
    rng: &mut ChaCha8Rng,
    objects: &[SyntheticObject],
    capture: &CaptureSpec,
) -> Vec<DepthFrame> {
    let fx = 0.5 * capture.width as f64 / (capture.hfov_deg.to_radians() / 2.0).tan();
    let intrinsics = Intrinsics {
        fx,
        fy: fx,
        cx: capture.width as f64 / 2.0,
        cy: capture.height as f64 / 2.0,
    };
    let boxes: Vec<Aabb3> = objects.iter().map(|o| o.aabb()).collect();
    let views = camera_views(&boxes, capture);

    views
        .into_iter()
        .map(|(eye, target)| {
            let pose = Pose::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0));
            let m = &pose.0;
            let n = (capture.width * capture.height) as usize;
            let mut sensor = vec![0f32; n];
            let mut mono = vec![f32::NAN; n];
            let mut rgb = RgbImage::new(capture.width, capture.height);
            for v in 0..capture.height {
                for u in 0..capture.width {
                    let dc = Vec3::new(
                        (u as f64 + 0.5 - intrinsics.cx) / intrinsics.fx,
                        (v as f64 + 0.5 - intrinsics.cy) / intrinsics.fy,
                        1.0,
                    );
                    let dir = Vec3::new(
                        m[0][0] * dc.x + m[0][1] * dc.y + m[0][2] * dc.z,
                        m[1][0] * dc.x + m[1][1] * dc.y + m[1][2] * dc.z,
                        m[2][0] * dc.x + m[2][1] * dc.y + m[2][2] * dc.z,
                    );
                    // Parameter t along `dir` (camera z = 1) equals camera-space depth.
                    let mut hit: Option<(f64, [u8; 3])> = None;
                    if dir.y < 0.0 {
                        hit = Some((-eye.y / dir.y, GROUND_COLOR));
                    }
                    for (bi, b) in boxes.iter().enumerate() {
                        if let Some((t, axis)) = ray_box(eye, dir, b) {
                            if hit.is_none_or(|(best, _)| t < best) {
                                let shade = [1.0, 0.8, 0.9][axis];
                                let col = object_color(bi).map(|ch| (ch as f64 * shade) as u8);
                                hit = Some((t, col));
                            }
                        }
                    }
                    let idx = (v * capture.width + u) as usize;
                    let (depth, color) = match hit {
                        Some((t, col)) => (t, col),
                        None => (0.0, SKY_COLOR),
                    };
                    rgb.put_pixel(u, v, Rgb(color));
                    if depth > 0.0 {
                        mono[idx] = (MOCK_MONO_SCALE * depth + MOCK_MONO_SHIFT) as f32;
                        let dropped = rng.random_bool(capture.dropout);
                        if depth < capture.sensor_range && !dropped {
                            sensor[idx] = depth as f32;
                        }
                    }
                }
            }
            DepthFrame {
                width: capture.width,
                height: capture.height,
                sensor_depth: sensor,
                mono_depth: Some(mono),
                rgb: Some(rgb),
                intrinsics,
                pose_world_from_camera: pose,
            }
        })
        .collect()
}

/// Real objects of the six-object garden at their design boxes, ids
/// `r0..r5`. Authoring sessions start from this scene by default.
pub fn garden_scene() -> crate::model::SceneGraph {
    let reals = SyntheticSpec::garden(0)
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| crate::model::RealObjectNode {
            id: format!("r{i}"),
            label: o.label.clone(),
            aabb: o.aabb(),
        })
        .collect();
    crate::model::SceneGraph::new(reals)
}

/// Builds a deterministic scan and its ground truth from `spec`.
pub fn synthesize_scene(spec: &SyntheticSpec) -> (ScanBundle, GroundTruthScene) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points: Vec<Vec3> = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut instance: Vec<i32> = Vec::new();
    let mut object_points: Vec<Vec<u32>> = Vec::new();

    for (oi, obj) in spec.objects.iter().enumerate() {
        let start = points.len();
        sample_box_surface(&mut rng, &obj.aabb(), obj.density, &mut points);
        let end = points.len();
        colors.extend(std::iter::repeat_n(object_color(oi), end - start));
        instance.extend(std::iter::repeat_n(oi as i32, end - start));
        object_points.push((start as u32..end as u32).collect());
    }

    let bounds = scene_bounds(&spec.objects);
    let (gx0, gx1) = (bounds.min().x - 3.0, bounds.max().x + 3.0);
    let (gz0, gz1) = (bounds.min().z - 3.0, bounds.max().z + 3.0);
    let ground_count = ((gx1 - gx0) * (gz1 - gz0) * spec.ground_density).round() as usize;
    let boxes: Vec<Aabb3> = spec.objects.iter().map(|o| o.aabb()).collect();
    for _ in 0..ground_count {
        let x = rng.random_range(gx0..gx1);
        let z = rng.random_range(gz0..gz1);
        if boxes.iter().any(|b| footprint_contains(b, x, z)) {
            continue;
        }
        points.push(Vec3::new(x, 0.0, z));
        colors.push(GROUND_COLOR);
        instance.push(-1);
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        for p in points.iter_mut() {
            *p = *p + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    // Store exactly what the f32 cloud file can hold.
    for p in points.iter_mut() {
        *p = Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64);
    }

    let seg = &spec.oversegmentation;
    let mut pool: Vec<Vec<u32>> = Vec::new();
    for idx in &object_points {
        if idx.is_empty() {
            continue;
        }
        let k = rng.random_range(seg.parts[0]..=seg.parts[1]) as usize;
        for part in split_into_parts(&mut rng, &points, idx, k) {
            if rng.random_bool(seg.duplicate_prob) {
                let mut dup: Vec<u32> = part.iter().copied().filter(|_| !rng.random_bool(0.03)).collect();
                if dup.is_empty() {
                    dup = part.clone();
                }
                pool.push(dup);
            }
            pool.push(part);
        }
    }
    if !points.is_empty() {
        for _ in 0..seg.spurious_count {
            let size = rng.random_range(seg.spurious_size[0]..=seg.spurious_size[1]) as usize;
            let picks: Vec<u32> = (0..size).map(|_| rng.random_range(0..points.len() as u32)).collect();
            pool.push(picks);
        }
    }
    pool.shuffle(&mut rng);
    let masks_initial = pool
        .into_iter()
        .enumerate()
        .map(|(id, idx)| Mask::new(id as u32, idx).expect("non-empty synthetic mask"))
        .collect();

    let frames = spec
        .capture
        .as_ref()
        .map(|c| render_frames(&mut rng, &spec.objects, c))
        .unwrap_or_default();

    let bundle = ScanBundle {
        cloud: PointCloud {
            points,
            colors: Some(colors),
        },
        frames,
        masks_initial,
        point_gt: Some(PointGroundTruth {
            labels: spec.objects.iter().map(|o| o.label.clone()).collect(),
            point_instance: instance,
        }),
    };
    let gt = GroundTruthScene {
        scene_id: format!("synth-{}", spec.seed),
        // Boxes enclose the scanned points, as an annotator brushing the
        // cloud would draw them.
        instances: spec
            .objects
            .iter()
            .zip(&object_points)
            .map(|(o, idx)| GroundTruthInstance {
                label: crate::model::normalize_label(&o.label),
                aabb: Aabb3::enclosing(idx.iter().map(|&i| bundle.cloud.points[i as usize])).unwrap_or_else(|| o.aabb()),
            })
            .collect(),
    };
    (bundle, gt)
}

//! Asset registry and the text-to-mesh generation chain:
//! boost → image (with fallbacks) → background removal → mesher.
//!
//! Generated meshes land in a content-addressed store laid out as
//! `<root>/<kind>/<key>/mesh.obj` plus `record.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use image::{ImageFormat, Rgba, RgbaImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Aabb3, AssetKind, Vec3};
use crate::ports::PortError;

pub const MOCK_BOOST_SUFFIX: &str = ", full object visible, white background";

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("generation-unavailable: {0}")]
    GenerationUnavailable(String),
    #[error("meshing-failed: {reason}")]
    MeshingFailed { reason: String, image_path: Option<PathBuf> },
    #[error("unknown asset {kind}/{key}")]
    Unknown { kind: &'static str, key: String },
    #[error("corrupt asset {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("asset store: {0}")]
    Io(#[from] std::io::Error),
}

impl AssetError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AssetError::EmptyPrompt => "empty-prompt",
            AssetError::GenerationUnavailable(_) => "generation-unavailable",
            AssetError::MeshingFailed { .. } => "meshing-failed",
            AssetError::Unknown { .. } => "unknown-asset",
            AssetError::Corrupt { .. } => "corrupt-asset",
            AssetError::Io(_) => "io",
        }
    }
}

// ---------------------------------------------------------------- meshes

/// Triangle mesh with zero-based vertex indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn aabb(&self) -> Option<Aabb3> {
        Aabb3::enclosing(self.vertices.iter().copied())
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 20);
        for v in &self.vertices {
            out.push_str(&format!("v {:.6} {:.6} {:.6}\n", clean(v.x), clean(v.y), clean(v.z)));
        }
        for f in &self.faces {
            out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        out
    }

    /// Signed volume via the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Every directed edge appears once and its reverse appears once.
    pub fn is_watertight(&self) -> bool {
        let mut edges: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *edges.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        edges
            .iter()
            .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }
}

fn clean(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Minimal OBJ reader: `v` and `f` records, polygons fan-triangulated.
pub fn parse_obj(text: &str) -> Result<TriMesh, String> {
    let mut mesh = TriMesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                if c.len() != 3 || c.iter().any(|x| !x.is_finite()) {
                    return Err(format!("line {}: bad vertex", lineno + 1));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let n: i64 = t
                            .split('/')
                            .next()
                            .unwrap_or("")
                            .parse()
                            .map_err(|_| format!("line {}: bad face index {t:?}", lineno + 1))?;
                        let n = if n < 0 { mesh.vertices.len() as i64 + n + 1 } else { n };
                        if n < 1 || n as usize > mesh.vertices.len() {
                            return Err(format!("line {}: face index {n} out of range", lineno + 1));
                        }
                        Ok(n as u32 - 1)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(format!("line {}: face with fewer than 3 vertices", lineno + 1));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if mesh.vertices.is_empty() {
        return Err("no vertices".into());
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockShape {
    Box,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockMesh {
    pub shape: MockShape,
    pub dims: Vec3,
    pub mesh: TriMesh,
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps two hash bytes onto [0.3, 1.5] m in millimetre steps.
fn dim_from(hi: u8, lo: u8) -> f64 {
    let u = u16::from_be_bytes([hi, lo]) as f64 / u16::MAX as f64;
    (300.0 + (1200.0 * u).round()) / 1000.0
}

/// Deterministic procedural stand-in for image-to-3D. The prompt hash picks
/// the shape (box, 2-subdivision icosphere, 24-sided cylinder) and per-axis
/// dims in [0.3, 1.5] m. Meshes are centered at the origin, closed, and
/// wound outward. Spheres use the first dim on all axes; cylinders share
/// the diameter between x and z.
pub fn mock_mesher(prompt: &str) -> MockMesh {
    let h = digest(&["mock-mesher", prompt]);
    let shape = match h[0] % 3 {
        0 => MockShape::Box,
        1 => MockShape::Sphere,
        _ => MockShape::Cylinder,
    };
    let (a, b, c) = (dim_from(h[1], h[2]), dim_from(h[3], h[4]), dim_from(h[5], h[6]));
    let (dims, mesh) = match shape {
        MockShape::Box => {
            let d = Vec3::new(a, b, c);
            (d, box_mesh(d))
        }
        MockShape::Sphere => (Vec3::splat(a), icosphere(a / 2.0, 2)),
        MockShape::Cylinder => (Vec3::new(a, b, a), cylinder(a / 2.0, b, 24)),
    };
    MockMesh { shape, dims, mesh }
}

/// Flips any face whose normal points toward the origin. Valid for convex
/// shapes centered on the origin.
fn orient_outward(mesh: &mut TriMesh) {
    for f in &mut mesh.faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        let n = (b - a).cross(c - a);
        if n.dot(a + b + c) < 0.0 {
            f.swap(1, 2);
        }
    }
}

pub fn box_mesh(dims: Vec3) -> TriMesh {
    let h = dims * 0.5;
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    // Each quad as two triangles sharing its diagonal.
    let quads = [[0, 2, 6, 4], [1, 3, 7, 5], [0, 1, 5, 4], [2, 3, 7, 6], [0, 1, 3, 2], [4, 5, 7, 6]];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    let mut m = TriMesh { vertices, faces };
    orient_outward(&mut m);
    m
}

pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ];
    let unit = |v: Vec3| v * (1.0 / v.norm());
    let mut vertices: Vec<Vec3> = raw.iter().map(|&(x, y, z)| unit(Vec3::new(x, y, z))).collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, vs: &mut Vec<Vec3>| -> u32 {
            let k = (a.min(b), a.max(b));
            *mid.entry(k).or_insert_with(|| {
                vs.push(unit((vs[a as usize] + vs[b as usize]) * 0.5));
                vs.len() as u32 - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let mut m = TriMesh {
        vertices: vertices.into_iter().map(|v| v * radius).collect(),
        faces,
    };
    orient_outward(&mut m);
    m
}

/// Closed cylinder along +y, centered at the origin.
pub fn cylinder(radius: f64, height: f64, sides: u32) -> TriMesh {
    let hy = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * sides as usize + 2);
    for y in [-hy, hy] {
        for k in 0..sides {
            let th = std::f64::consts::TAU * k as f64 / sides as f64;
            vertices.push(Vec3::new(radius * th.cos(), y, radius * th.sin()));
        }
    }
    let (bc, tc) = (2 * sides, 2 * sides + 1);
    vertices.push(Vec3::new(0.0, -hy, 0.0));
    vertices.push(Vec3::new(0.0, hy, 0.0));
    let mut faces = Vec::with_capacity(4 * sides as usize);
    for k in 0..sides {
        let k1 = (k + 1) % sides;
        let (b0, b1, t0, t1) = (k, k1, sides + k, sides + k1);
        faces.push([b0, t0, b1]);
        faces.push([b1, t0, t1]);
        faces.push([bc, b0, b1]);
        faces.push([tc, t1, t0]);
    }
    TriMesh { vertices, faces }
}

// ---------------------------------------------------------------- clocks

/// Seconds since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Manually advanced clock for simulated latencies.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock(Arc<Mutex<f64>>);

impl VirtualClock {
    pub fn advance(&self, secs: f64) {
        *self.0.lock().unwrap() += secs.max(0.0);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Boost,
    Image,
    BgRemoval,
    Mesh,
    Agents,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Boost, Stage::Image, Stage::BgRemoval, Stage::Mesh, Stage::Agents];

    pub fn title(&self) -> &'static str {
        match self {
            Stage::Boost => "Prompt Boosting",
            Stage::Image => "Image Generation",
            Stage::BgRemoval => "Background Removal",
            Stage::Mesh => "Image to Mesh",
            Stage::Agents => "In-App LLM Agents",
        }
    }

    /// Reference (mean, sd) in seconds measured on the hosted services.
    pub fn reference_latency(&self) -> (f64, f64) {
        match self {
            Stage::Boost => (2.53, 0.91),
            Stage::Image => (12.53, 2.48),
            Stage::BgRemoval => (0.04, 0.002),
            Stage::Mesh => (9.14, 0.08),
            Stage::Agents => (9.68, 1.24),
        }
    }
}

/// Draws per-stage delays from Normal(mean, sd), truncated at zero, and
/// advances a virtual clock by them.
pub struct SimulatedLatency {
    clock: VirtualClock,
    rng: Mutex<ChaCha8Rng>,
}

impl SimulatedLatency {
    pub fn new(clock: VirtualClock, seed: u64) -> Self {
        Self {
            clock,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn sleep(&self, stage: Stage) -> f64 {
        let (mean, sd) = stage.reference_latency();
        let d = Normal::new(mean, sd)
            .expect("finite sd")
            .sample(&mut *self.rng.lock().unwrap())
            .max(0.0);
        self.clock.advance(d);
        d
    }
}

/// Port wrapper that spends simulated time before delegating.
pub struct Delayed<P> {
    pub inner: P,
    pub stage: Stage,
    pub latency: Arc<SimulatedLatency>,
}

impl<P> Delayed<P> {
    pub fn new(inner: P, stage: Stage, latency: Arc<SimulatedLatency>) -> Self {
        Self { inner, stage, latency }
    }
}

// ---------------------------------------------------------------- ports

pub trait BoostPort: Send + Sync {
    fn id(&self) -> &str;
    fn boost(&self, prompt: &str, seed: u64) -> Result<String, PortError>;
}

/// Text-to-image. Replies with PNG bytes.
pub trait ImagePort: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, PortError>;
}

/// PNG in, PNG with alpha out.
pub trait BgRemovalPort: Send + Sync {
    fn id(&self) -> &str;
    fn remove_background(&self, png: &[u8]) -> Result<Vec<u8>, PortError>;
}

/// OBJ plus any side files (materials, textures) from the mesher bundle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshBundle {
    pub obj: Vec<u8>,
    pub extras: Vec<(String, Vec<u8>)>,
}

pub trait MesherPort: Send + Sync {
    fn id(&self) -> &str;
    fn mesh(&self, png: &[u8], prompt: &str, seed: u64) -> Result<MeshBundle, PortError>;
}

macro_rules! forward_arc {
    ($tr:ident, $($m:ident($($a:ident: $t:ty),*) -> $r:ty);*) => {
        impl<T: $tr + ?Sized> $tr for Arc<T> {
            fn id(&self) -> &str {
                (**self).id()
            }
            $(fn $m(&self, $($a: $t),*) -> $r {
                (**self).$m($($a),*)
            })*
        }
        impl<P: $tr> $tr for Delayed<P> {
            fn id(&self) -> &str {
                self.inner.id()
            }
            $(fn $m(&self, $($a: $t),*) -> $r {
                self.latency.sleep(self.stage);
                self.inner.$m($($a),*)
            })*
        }
    };
}

forward_arc!(BoostPort, boost(prompt: &str, seed: u64) -> Result<String, PortError>);
forward_arc!(ImagePort, generate(prompt: &str, seed: u64) -> Result<Vec<u8>, PortError>);
forward_arc!(BgRemovalPort, remove_background(png: &[u8]) -> Result<Vec<u8>, PortError>);
forward_arc!(MesherPort, mesh(png: &[u8], prompt: &str, seed: u64) -> Result<MeshBundle, PortError>);

/// Appends [`MOCK_BOOST_SUFFIX`].
#[derive(Debug, Default)]
pub struct MockBoost;

impl BoostPort for MockBoost {
    fn id(&self) -> &str {
        "mock-boost"
    }
    fn boost(&self, prompt: &str, _seed: u64) -> Result<String, PortError> {
        Ok(format!("{}{MOCK_BOOST_SUFFIX}", prompt.trim()))
    }
}

fn encode_png(img: &RgbaImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .expect("in-memory png encode");
    buf
}

fn decode_png(bytes: &[u8]) -> Result<RgbaImage, PortError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|i| i.to_rgba8())
        .map_err(|e| PortError::Malformed(format!("png: {e}")))
}

/// Procedural image: a colored disc on white, color from the prompt hash.
#[derive(Debug)]
pub struct MockImage {
    id: String,
}

impl MockImage {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Default for MockImage {
    fn default() -> Self {
        Self::new("mock-image")
    }
}

impl ImagePort for MockImage {
    fn id(&self) -> &str {
        &self.id
    }
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, PortError> {
        let h = digest(&["mock-image", prompt, &seed.to_string()]);
        let color = Rgba([h[0] / 2, h[1] / 2, h[2] / 2, 255]);
        let img = RgbaImage::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 - 31.5, y as f64 - 31.5);
            if dx * dx + dy * dy <= 20.0 * 20.0 {
                color
            } else {
                Rgba([255, 255, 255, 255])
            }
        });
        Ok(encode_png(&img))
    }
}

/// Makes near-white pixels transparent.
#[derive(Debug, Default)]
pub struct MockBgRemoval;

impl BgRemovalPort for MockBgRemoval {
    fn id(&self) -> &str {
        "mock-bg"
    }
    fn remove_background(&self, png: &[u8]) -> Result<Vec<u8>, PortError> {
        let mut img = decode_png(png)?;
        for p in img.pixels_mut() {
            if p[0] >= 250 && p[1] >= 250 && p[2] >= 250 {
                p[3] = 0;
            }
        }
        Ok(encode_png(&img))
    }
}

/// Wraps [`mock_mesher`]. Seed 0 meshes the prompt itself; other seeds
/// mesh `"<prompt>#<seed>"` so salted generators disagree.
#[derive(Debug, Default)]
pub struct MockMesher;

pub fn mock_mesher_seeded(prompt: &str, seed: u64) -> MockMesh {
    if seed == 0 {
        mock_mesher(prompt)
    } else {
        mock_mesher(&format!("{prompt}#{seed}"))
    }
}

impl MesherPort for MockMesher {
    fn id(&self) -> &str {
        "mock-mesher"
    }
    fn mesh(&self, png: &[u8], prompt: &str, seed: u64) -> Result<MeshBundle, PortError> {
        decode_png(png)?;
        Ok(MeshBundle {
            obj: mock_mesher_seeded(prompt, seed).mesh.to_obj().into_bytes(),
            extras: Vec::new(),
        })
    }
}

/// Port that always fails with the given error; implements every asset port.
#[derive(Debug, Clone)]
pub struct FailingPort {
    pub id: String,
    pub error: PortError,
}

impl FailingPort {
    pub fn unavailable(id: &str) -> Self {
        Self {
            id: id.to_string(),
            error: PortError::Unavailable(format!("{id} is down")),
        }
    }
}

impl BoostPort for FailingPort {
    fn id(&self) -> &str {
        &self.id
    }
    fn boost(&self, _: &str, _: u64) -> Result<String, PortError> {
        Err(self.error.clone())
    }
}

impl ImagePort for FailingPort {
    fn id(&self) -> &str {
        &self.id
    }
    fn generate(&self, _: &str, _: u64) -> Result<Vec<u8>, PortError> {
        Err(self.error.clone())
    }
}

impl BgRemovalPort for FailingPort {
    fn id(&self) -> &str {
        &self.id
    }
    fn remove_background(&self, _: &[u8]) -> Result<Vec<u8>, PortError> {
        Err(self.error.clone())
    }
}

impl MesherPort for FailingPort {
    fn id(&self) -> &str {
        &self.id
    }
    fn mesh(&self, _: &[u8], _: &str, _: u64) -> Result<MeshBundle, PortError> {
        Err(self.error.clone())
    }
}

// ---------------------------------------------------------------- records and store

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub boosted_prompt: String,
    pub boosted: bool,
    pub image_backend: String,
    pub mesher: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub key: String,
    pub kind: AssetKind,
    pub mesh_path: PathBuf,
    pub bbox_dims: Vec3,
    #[serde(default)]
    pub source_prompt: Option<String>,
    /// Unix seconds.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Built-in preset library: name and local bounding-box dims in meters.
pub const PRESETS: &[(&str, [f64; 3])] = &[
    ("bench", [1.5, 0.5, 0.5]),
    ("cat", [0.25, 0.3, 0.5]),
    ("dragon", [1.2, 1.0, 2.0]),
    ("duck", [0.3, 0.3, 0.4]),
    ("hat", [0.4, 0.3, 0.4]),
    ("lamp", [0.3, 1.6, 0.3]),
    ("mushroom", [0.3, 0.35, 0.3]),
    ("pumpkin", [0.5, 0.4, 0.5]),
    ("signpost", [0.6, 1.8, 0.1]),
    ("umbrella", [1.2, 2.0, 1.2]),
];

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn kind_dir(kind: AssetKind) -> &'static str {
    // Loading a stored generation ("persistent") reads the generated tree.
    match kind {
        AssetKind::Preset => "preset",
        AssetKind::Persistent | AssetKind::Generated => "generated",
    }
}

/// Directory-backed asset store with an in-memory index. Writes go to a
/// scratch directory and are renamed into place, so a key is either absent
/// or complete; concurrent writers of one key keep the first arrival.
#[derive(Debug)]
pub struct AssetStore {
    root: PathBuf,
    index: RwLock<BTreeMap<(AssetKind, String), AssetRecord>>,
}

/// Lowercased prompt without leading articles, for matching a request
/// against stored generations ("a paper lantern" matches "the paper lantern").
fn prompt_words(p: &str) -> String {
    let lower = p.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let skip = words
        .iter()
        .take_while(|w| matches!(**w, "a" | "an" | "the" | "some" | "my"))
        .count();
    words[skip..].join(" ")
}

impl AssetStore {
    /// Opens (creating if needed) a store and indexes existing records.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AssetError> {
        let root = root.into();
        let mut index = BTreeMap::new();
        for kind in [AssetKind::Preset, AssetKind::Generated] {
            let dir = root.join(kind_dir(kind));
            fs::create_dir_all(&dir)?;
            let mut entries: Vec<_> = fs::read_dir(&dir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
            entries.sort();
            for path in entries {
                if path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
                    continue;
                }
                let rec_path = path.join("record.json");
                if !rec_path.is_file() {
                    continue;
                }
                let rec = read_record(&rec_path)?;
                index.insert((rec.kind, rec.key.clone()), rec);
            }
        }
        Ok(Self {
            root,
            index: RwLock::new(index),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes box meshes for every built-in preset not already present.
    pub fn install_presets(&self) -> Result<(), AssetError> {
        for (name, dims) in PRESETS {
            if self.get(AssetKind::Preset, name).is_some() {
                continue;
            }
            let dims = Vec3::from_array(*dims);
            let rec = AssetRecord {
                key: name.to_string(),
                kind: AssetKind::Preset,
                mesh_path: PathBuf::new(),
                bbox_dims: dims,
                source_prompt: None,
                created_at: 0,
                provenance: None,
            };
            self.put(rec, &MeshBundle {
                obj: box_mesh(dims).to_obj().into_bytes(),
                extras: Vec::new(),
            })?;
        }
        Ok(())
    }

    /// Record lookup. `Persistent` resolves to the stored generation.
    pub fn get(&self, kind: AssetKind, key: &str) -> Option<AssetRecord> {
        let kind = if kind == AssetKind::Persistent { AssetKind::Generated } else { kind };
        self.index.read().unwrap().get(&(kind, key.to_string())).cloned()
    }

    pub fn list(&self) -> Vec<AssetRecord> {
        self.index.read().unwrap().values().cloned().collect()
    }

    pub fn preset_names(&self) -> Vec<String> {
        self.index
            .read()
            .unwrap()
            .keys()
            .filter(|(k, _)| *k == AssetKind::Preset)
            .map(|(_, n)| n.clone())
            .collect()
    }

    /// A stored generation whose key or source prompt matches `query`
    /// (case-insensitive, trimmed). Oldest match wins, then lowest key.
    pub fn find_generated(&self, query: &str) -> Option<AssetRecord> {
        let q = prompt_words(query);
        if q.is_empty() {
            return None;
        }
        self.index
            .read()
            .unwrap()
            .values()
            .filter(|r| r.kind == AssetKind::Generated)
            .filter(|r| r.key == q || r.source_prompt.as_deref().map(prompt_words) == Some(q.clone()))
            .min_by_key(|r| (r.created_at, r.provenance.as_ref().map_or(0, |p| p.seed), r.key.clone()))
            .cloned()
    }

    pub fn mesh_bytes(&self, rec: &AssetRecord) -> Result<Vec<u8>, AssetError> {
        Ok(fs::read(self.root.join(&rec.mesh_path))?)
    }

    /// Stores a record with its mesh; `mesh_path` is filled in relative to
    /// the root. Returns the record now on disk (the earlier one if a
    /// concurrent writer won).
    fn put(&self, mut rec: AssetRecord, bundle: &MeshBundle) -> Result<AssetRecord, AssetError> {
        let rel = PathBuf::from(kind_dir(rec.kind)).join(&rec.key);
        rec.mesh_path = rel.join("mesh.obj");
        let final_dir = self.root.join(&rel);
        if let Some(existing) = self.get(rec.kind, &rec.key) {
            return Ok(existing);
        }
        let tmp = self.root.join(kind_dir(rec.kind)).join(format!(
            ".tmp-{}-{}-{}",
            rec.key,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&tmp)?;
        fs::write(tmp.join("mesh.obj"), &bundle.obj)?;
        for (name, bytes) in &bundle.extras {
            let name = Path::new(name).file_name().map(|n| n.to_owned()).unwrap_or_default();
            if !name.is_empty() && name != "mesh.obj" && name != "record.json" {
                fs::write(tmp.join(name), bytes)?;
            }
        }
        let json = serde_json::to_string_pretty(&rec).expect("record serializes");
        fs::write(tmp.join("record.json"), json)?;
        match fs::rename(&tmp, &final_dir) {
            Ok(()) => {}
            Err(_) if final_dir.join("record.json").is_file() => {
                let _ = fs::remove_dir_all(&tmp);
                let rec = read_record(&final_dir.join("record.json"))?;
                self.index.write().unwrap().insert((rec.kind, rec.key.clone()), rec.clone());
                return Ok(rec);
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&tmp);
                return Err(e.into());
            }
        }
        self.index.write().unwrap().insert((rec.kind, rec.key.clone()), rec.clone());
        Ok(rec)
    }

    fn keep_failed_image(&self, key: &str, png: &[u8]) -> Option<PathBuf> {
        let dir = self.root.join("failed").join(key);
        fs::create_dir_all(&dir).ok()?;
        let path = dir.join("image.png");
        fs::write(&path, png).ok()?;
        Some(path)
    }
}

fn read_record(path: &Path) -> Result<AssetRecord, AssetError> {
    let text = fs::read_to_string(path)?;
    let rec: AssetRecord = serde_json::from_str(&text).map_err(|e| AssetError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mesh = path.parent().unwrap_or(Path::new(".")).join("mesh.obj");
    if !mesh.is_file() {
        return Err(AssetError::Corrupt {
            path: path.to_path_buf(),
            reason: "mesh file missing".into(),
        });
    }
    Ok(rec)
}

// ---------------------------------------------------------------- orchestration

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub boost_s: f64,
    pub image_s: f64,
    pub bg_removal_s: f64,
    pub mesh_s: f64,
    pub agents_s: f64,
    pub total_s: f64,
}

impl StageTimings {
    pub fn stage(&self, s: Stage) -> f64 {
        match s {
            Stage::Boost => self.boost_s,
            Stage::Image => self.image_s,
            Stage::BgRemoval => self.bg_removal_s,
            Stage::Mesh => self.mesh_s,
            Stage::Agents => self.agents_s,
        }
    }

    pub fn stage_sum(&self) -> f64 {
        Stage::ALL.iter().map(|s| self.stage(*s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssetsConfig {
    pub boost_enabled: bool,
    /// Per-stage budget; a stage that overruns counts as failed.
    pub stage_timeout_s: f64,
    pub store_dir: PathBuf,
}

impl Default for AssetsConfig {
    fn default() -> Self {
        Self {
            boost_enabled: true,
            stage_timeout_s: 60.0,
            store_dir: PathBuf::from("assets"),
        }
    }
}

/// The wired generation chain.
pub struct GenPipeline {
    pub boost: Arc<dyn BoostPort>,
    pub boost_enabled: bool,
    pub images: Vec<Arc<dyn ImagePort>>,
    pub bg_removal: Arc<dyn BgRemovalPort>,
    pub mesher: Arc<dyn MesherPort>,
    pub clock: Arc<dyn Clock>,
    pub stage_timeout_s: f64,
}

impl GenPipeline {
    /// All-mock chain on the wall clock.
    pub fn mock() -> Self {
        Self {
            boost: Arc::new(MockBoost),
            boost_enabled: true,
            images: vec![Arc::new(MockImage::default())],
            bg_removal: Arc::new(MockBgRemoval),
            mesher: Arc::new(MockMesher),
            clock: Arc::new(SystemClock::default()),
            stage_timeout_s: 60.0,
        }
    }

    /// Cache key: prompt, seed and every backend identity.
    pub fn cache_key(&self, prompt: &str, seed: u64) -> String {
        let images: Vec<&str> = self.images.iter().map(|p| p.id()).collect();
        let boost = if self.boost_enabled { self.boost.id() } else { "-" };
        let seed = seed.to_string();
        let images = images.join(",");
        let h = digest(&[prompt.trim(), &seed, boost, &images, self.bg_removal.id(), self.mesher.id()]);
        hex(&h[..8])
    }

    fn timed<T>(&self, f: impl FnOnce() -> Result<T, PortError>) -> (Result<T, PortError>, f64) {
        let t0 = self.clock.now();
        let r = f();
        let dt = self.clock.now() - t0;
        if r.is_ok() && dt > self.stage_timeout_s {
            return (Err(PortError::Timeout(format!("stage took {dt:.2}s"))), dt);
        }
        (r, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedPrompt {
    pub text: String,
    pub boosted: bool,
}

/// Port expansion, or the original prompt when the port fails or returns
/// nothing.
pub fn boost_prompt(prompt: &str, port: &dyn BoostPort, seed: u64) -> BoostedPrompt {
    match port.boost(prompt, seed) {
        Ok(s) if !s.trim().is_empty() => BoostedPrompt {
            text: s.trim().to_string(),
            boosted: true,
        },
        Ok(_) => BoostedPrompt {
            text: prompt.to_string(),
            boosted: false,
        },
        Err(e) => {
            tracing::warn!("prompt boost failed, using original prompt: {e}");
            BoostedPrompt {
                text: prompt.to_string(),
                boosted: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub record: AssetRecord,
    pub timings: StageTimings,
    pub cached: bool,
    /// Image backends that failed before one succeeded.
    pub skipped_backends: Vec<String>,
}

/// Runs the chain for `prompt` and stores the result. An identical prompt,
/// seed and chain returns the stored record with zero timings.
pub fn generate_asset(prompt: &str, seed: u64, pipe: &GenPipeline, store: &AssetStore) -> Result<Generation, AssetError> {
    let prompt = prompt.trim();
    if prompt.is_empty() {
        return Err(AssetError::EmptyPrompt);
    }
    if pipe.images.is_empty() {
        return Err(AssetError::GenerationUnavailable("no image backend configured".into()));
    }
    let key = pipe.cache_key(prompt, seed);
    if let Some(record) = store.get(AssetKind::Generated, &key) {
        return Ok(Generation {
            record,
            timings: StageTimings::default(),
            cached: true,
            skipped_backends: Vec::new(),
        });
    }
    let t_start = pipe.clock.now();
    let mut timings = StageTimings::default();

    let boosted = if pipe.boost_enabled {
        let (r, dt) = pipe.timed(|| Ok(boost_prompt(prompt, pipe.boost.as_ref(), seed)));
        timings.boost_s = dt;
        r.unwrap_or(BoostedPrompt {
            text: prompt.to_string(),
            boosted: false,
        })
    } else {
        BoostedPrompt {
            text: prompt.to_string(),
            boosted: false,
        }
    };

    let mut skipped = Vec::new();
    let mut image = None;
    for backend in &pipe.images {
        let (r, dt) = pipe.timed(|| backend.generate(&boosted.text, seed));
        timings.image_s += dt;
        match r {
            Ok(png) => {
                image = Some((backend.id().to_string(), png));
                break;
            }
            Err(e) => {
                tracing::warn!("image backend {} failed: {e}", backend.id());
                skipped.push(backend.id().to_string());
            }
        }
    }
    let Some((image_backend, png)) = image else {
        return Err(AssetError::GenerationUnavailable(format!("all image backends failed: {}", skipped.join(", "))));
    };

    let (r, dt) = pipe.timed(|| pipe.bg_removal.remove_background(&png));
    timings.bg_removal_s = dt;
    let cutout = match r {
        Ok(p) => p,
        Err(e) => {
            return Err(AssetError::MeshingFailed {
                reason: format!("background removal: {e}"),
                image_path: store.keep_failed_image(&key, &png),
            })
        }
    };

    let (r, dt) = pipe.timed(|| pipe.mesher.mesh(&cutout, &boosted.text, seed));
    timings.mesh_s = dt;
    let fail = |reason: String| AssetError::MeshingFailed {
        reason,
        image_path: store.keep_failed_image(&key, &cutout),
    };
    let bundle = r.map_err(|e| fail(e.to_string()))?;
    let mesh = parse_obj(&String::from_utf8_lossy(&bundle.obj)).map_err(|e| fail(format!("bad OBJ: {e}")))?;
    let bbox_dims = mesh.aabb().expect("parse_obj guarantees vertices").extents();

    timings.total_s = pipe.clock.now() - t_start;
    let record = AssetRecord {
        key,
        kind: AssetKind::Generated,
        mesh_path: PathBuf::new(),
        bbox_dims,
        source_prompt: Some(prompt.to_string()),
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        provenance: Some(Provenance {
            boosted_prompt: boosted.text,
            boosted: boosted.boosted,
            image_backend,
            mesher: pipe.mesher.id().to_string(),
            seed,
        }),
    };
    let record = store.put(record, &bundle)?;
    Ok(Generation {
        record,
        timings,
        cached: false,
        skipped_backends: skipped,
    })
}

/// Three-way parallel generation with salts 0..k as seeds. Failed salts are
/// returned as errors in place.
pub fn generate_variants(prompt: &str, k: u64, pipe: &GenPipeline, store: &AssetStore) -> Vec<Result<Generation, AssetError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..k)
            .map(|salt| s.spawn(move || generate_asset(prompt, salt, pipe, store)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator thread")).collect()
    })
}

// ---------------------------------------------------------------- latency report

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Two decimals, or up to three below 0.1 s so small stages stay readable.
pub fn fmt_secs(v: f64) -> String {
    if v.abs() >= 0.1 || v == 0.0 {
        format!("{v:.2}s")
    } else {
        let s = format!("{v:.3}");
        let s = s.strip_suffix('0').unwrap_or(&s);
        format!("{s}s")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub component: String,
    pub mean_s: f64,
    pub sd_s: f64,
}

/// Per-stage mean ± sample sd, then Total, in pipeline order.
pub fn latency_rows(runs: &[StageTimings]) -> Vec<LatencyRow> {
    let mut rows: Vec<LatencyRow> = Stage::ALL
        .iter()
        .map(|s| {
            let xs: Vec<f64> = runs.iter().map(|t| t.stage(*s)).collect();
            let (mean_s, sd_s) = mean_sd(&xs);
            LatencyRow {
                component: s.title().to_string(),
                mean_s,
                sd_s,
            }
        })
        .collect();
    let totals: Vec<f64> = runs.iter().map(|t| t.total_s).collect();
    let (mean_s, sd_s) = mean_sd(&totals);
    rows.push(LatencyRow {
        component: "Total".into(),
        mean_s,
        sd_s,
    });
    rows
}

pub fn render_latency_table(runs: &[StageTimings]) -> String {
    let mut out = String::from("| Component | Time |\n|---|---|\n");
    for r in latency_rows(runs) {
        out.push_str(&format!("| {} | {} ± {} |\n", r.component, fmt_secs(r.mean_s), fmt_secs(r.sd_s)));
    }
    out
}

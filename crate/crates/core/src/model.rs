//! Geometric primitives and the scene-graph world model.
//!
//! All coordinates are right-handed, +y up, in meters. Exporters targeting a
//! left-handed engine negate z on the way out.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Fixed coordinate tag carried by every serialized scene graph.
pub const COORDINATE_SYSTEM: &str = "right_handed_y_up_meters";

/// Label assigned to points and masks with no usable semantics.
pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("inverted box: min {min} exceeds max {max}")]
    InvertedBox { min: Vec3, max: Vec3 },
    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuat(f64),
    #[error("scale components must be positive, got {0}")]
    NonPositiveScale(Vec3),
    #[error("bbox dimensions must be non-negative, got {0}")]
    NegativeDims(Vec3),
    #[error("duplicate id {0:?} in scene graph")]
    DuplicateId(String),
    #[error("unexpected coordinate system {0:?}")]
    CoordinateSystem(String),
    #[error("empty label")]
    EmptyLabel,
    #[error("mask {id}: {reason}")]
    Mask { id: u32, reason: String },
}

/// Rounds to six decimals for serialization; collapses negative zero.
pub(crate) fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const ONE: Vec3 = Vec3::new(1.0, 1.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Componentwise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [round6(self.x), round6(self.y), round6(self.z)].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec3::from_array(<[f64; 3]>::deserialize(d)?);
        if !v.is_finite() {
            return Err(D::Error::custom("non-finite vector component"));
        }
        Ok(v)
    }
}

/// Unit quaternion, stored and serialized in xyzw order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuatRotation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for QuatRotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl QuatRotation {
    pub const IDENTITY: QuatRotation = QuatRotation {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Result<Self, ModelError> {
        let q = Self { x, y, z, w };
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(ModelError::NonUnitQuat(n));
        }
        Ok(q)
    }

    /// Rotation of `radians` about +y.
    pub fn from_yaw(radians: f64) -> Self {
        let h = radians / 2.0;
        Self {
            x: 0.0,
            y: h.sin(),
            z: 0.0,
            w: h.cos(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // v' = v + 2w(q × v) + 2 q × (q × v)
        let q = Vec3::new(self.x, self.y, self.z);
        let t = q.cross(v) * 2.0;
        v + t * self.w + q.cross(t)
    }
}

impl Serialize for QuatRotation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [
            round6(self.x),
            round6(self.y),
            round6(self.z),
            round6(self.w),
        ]
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuatRotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, z, w] = <[f64; 4]>::deserialize(d)?;
        QuatRotation::new(x, y, z, w).map_err(D::Error::custom)
    }
}

/// Axis-aligned box. Constructed through [`Aabb3::new`] so `min <= max` holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb3 {
    min: Vec3,
    max: Vec3,
}

impl Aabb3 {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, ModelError> {
        if !min.is_finite() || !max.is_finite() {
            return Err(ModelError::NonFinite("aabb"));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(ModelError::InvertedBox { min, max });
        }
        Ok(Self { min, max })
    }

    /// Smallest box enclosing all `points`; `None` when empty.
    pub fn enclosing<I: IntoIterator<Item = Vec3>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.min(p), hi.max(p)));
        Some(Self { min, max })
    }

    pub fn from_center_extents(center: Vec3, extents: Vec3) -> Result<Self, ModelError> {
        let half = extents * 0.5;
        Self::new(center - half, center + half)
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            min: self.min + t,
            max: self.max + t,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Overlap box, or `None` when the boxes do not touch.
    pub fn intersection(&self, o: &Aabb3) -> Option<Aabb3> {
        let min = self.min.max(o.min);
        let max = self.max.min(o.max);
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Aabb3 { min, max })
    }

    pub fn intersection_volume(&self, o: &Aabb3) -> f64 {
        self.intersection(o).map_or(0.0, |b| b.volume())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Set of point indices into a [`PointCloud`], sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct Mask {
    pub id: u32,
    #[serde(rename = "points")]
    indices: Vec<u32>,
}

#[derive(Deserialize)]
struct RawMask {
    id: u32,
    points: Vec<u32>,
}

impl TryFrom<RawMask> for Mask {
    type Error = ModelError;

    fn try_from(raw: RawMask) -> Result<Self, ModelError> {
        Mask::new(raw.id, raw.points)
    }
}

impl Mask {
    /// Builds a mask, sorting and deduplicating the indices.
    pub fn new(id: u32, mut indices: Vec<u32>) -> Result<Self, ModelError> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(ModelError::Mask {
                id,
                reason: "empty".into(),
            });
        }
        Ok(Self { id, indices })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Smallest contained index.
    pub fn first_index(&self) -> u32 {
        self.indices[0]
    }

    /// Checks ordering, uniqueness, non-emptiness, and bounds against `point_count`.
    pub fn validate(&self, point_count: usize) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::Mask {
            id: self.id,
            reason,
        };
        if self.indices.is_empty() {
            return Err(err("empty".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err("indices not strictly increasing".into()));
        }
        let last = *self.indices.last().unwrap() as usize;
        if last >= point_count {
            return Err(err(format!(
                "index {last} out of bounds for {point_count} points"
            )));
        }
        Ok(())
    }

    pub fn intersection_len(&self, other: &Mask) -> usize {
        let (a, b) = (&self.indices, &other.indices);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Sorted union of both index sets, keeping `self.id`.
    pub fn union(&self, other: &Mask) -> Mask {
        let mut indices = Vec::with_capacity(self.len() + other.len());
        let (a, b) = (&self.indices, &other.indices);
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i] < b[j]) {
                indices.push(a[i]);
                i += 1;
            } else if i == a.len() || b[j] < a[i] {
                indices.push(b[j]);
                j += 1;
            } else {
                indices.push(a[i]);
                i += 1;
                j += 1;
            }
        }
        Mask {
            id: self.id,
            indices,
        }
    }
}

/// Trims, lowercases, and collapses internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub mask: Mask,
    pub label: String,
}

impl LabeledInstance {
    pub fn new(mask: Mask, label: &str) -> Result<Self, ModelError> {
        let label = normalize_label(label);
        if label.is_empty() {
            return Err(ModelError::EmptyLabel);
        }
        Ok(Self { mask, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealObjectNode {
    pub id: String,
    pub label: String,
    pub aabb: Aabb3,
}

#[derive(Serialize, Deserialize)]
struct RealObjectWire {
    id: String,
    label: String,
    aabb_min: Vec3,
    aabb_max: Vec3,
}

impl Serialize for RealObjectNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RealObjectWire {
            id: self.id.clone(),
            label: self.label.clone(),
            aabb_min: self.aabb.min,
            aabb_max: self.aabb.max,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RealObjectNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = RealObjectWire::deserialize(d)?;
        let aabb = Aabb3::new(w.aabb_min, w.aabb_max).map_err(D::Error::custom)?;
        let label = normalize_label(&w.label);
        if label.is_empty() {
            return Err(D::Error::custom(ModelError::EmptyLabel));
        }
        Ok(Self {
            id: w.id,
            label,
            aabb,
        })
    }
}

/// Pending modification assigned to a virtual object by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTag {
    #[default]
    None,
    Remove,
    Update,
    CreateResources,
    CreatePersistent,
    CreateNew,
}

impl ActionTag {
    pub const ALL: [ActionTag; 6] = [
        ActionTag::None,
        ActionTag::Remove,
        ActionTag::Update,
        ActionTag::CreateResources,
        ActionTag::CreatePersistent,
        ActionTag::CreateNew,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionTag::None => "none",
            ActionTag::Remove => "remove",
            ActionTag::Update => "update",
            ActionTag::CreateResources => "create_resources",
            ActionTag::CreatePersistent => "create_persistent",
            ActionTag::CreateNew => "create_new",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Preset,
    Persistent,
    Generated,
}

impl AssetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssetKind::Preset => "preset",
            AssetKind::Persistent => "persistent",
            AssetKind::Generated => "generated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssetRef {
    pub kind: AssetKind,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualObjectNode {
    pub guid: String,
    pub name: String,
    #[serde(rename = "asset")]
    pub asset_ref: AssetRef,
    pub position: Vec3,
    #[serde(rename = "rotation_quat")]
    pub rotation: QuatRotation,
    pub scale: Vec3,
    pub bbox_dims: Vec3,
    pub visible_on_screen: bool,
    pub pending_action: ActionTag,
}

impl VirtualObjectNode {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.position.is_finite() || !self.scale.is_finite() || !self.bbox_dims.is_finite() {
            return Err(ModelError::NonFinite("virtual object"));
        }
        if self.scale.x <= 0.0 || self.scale.y <= 0.0 || self.scale.z <= 0.0 {
            return Err(ModelError::NonPositiveScale(self.scale));
        }
        if self.bbox_dims.x < 0.0 || self.bbox_dims.y < 0.0 || self.bbox_dims.z < 0.0 {
            return Err(ModelError::NegativeDims(self.bbox_dims));
        }
        let n = self.rotation.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(ModelError::NonUnitQuat(n));
        }
        Ok(())
    }

    /// World-space box of the object's centered local box after scale,
    /// rotation, and translation.
    pub fn world_aabb(&self) -> Aabb3 {
        world_aabb(self)
    }
}

/// AABB of the eight transformed corners of the object's local box.
pub fn world_aabb(obj: &VirtualObjectNode) -> Aabb3 {
    let half = obj.bbox_dims.hadamard(obj.scale) * 0.5;
    let corners = (0..8).map(|i| {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        let local = Vec3::new(sx * half.x, sy * half.y, sz * half.z);
        obj.rotation.rotate(local) + obj.position
    });
    Aabb3::enclosing(corners).expect("eight corners")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub version: u32,
    pub coordinate_system: String,
    pub real_objects: Vec<RealObjectNode>,
    pub virtual_objects: Vec<VirtualObjectNode>,
}

impl Default for SceneGraph {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl SceneGraph {
    pub fn new(real_objects: Vec<RealObjectNode>) -> Self {
        Self {
            version: 1,
            coordinate_system: COORDINATE_SYSTEM.to_string(),
            real_objects,
            virtual_objects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.coordinate_system != COORDINATE_SYSTEM {
            return Err(ModelError::CoordinateSystem(self.coordinate_system.clone()));
        }
        let mut seen = HashSet::new();
        for id in self
            .real_objects
            .iter()
            .map(|r| &r.id)
            .chain(self.virtual_objects.iter().map(|v| &v.guid))
        {
            if !seen.insert(id) {
                return Err(ModelError::DuplicateId(id.clone()));
            }
        }
        self.virtual_objects.iter().try_for_each(|v| v.validate())
    }

    pub fn real(&self, id: &str) -> Option<&RealObjectNode> {
        self.real_objects.iter().find(|r| r.id == id)
    }

    pub fn virtual_object(&self, guid: &str) -> Option<&VirtualObjectNode> {
        self.virtual_objects.iter().find(|v| v.guid == guid)
    }

    pub fn virtual_object_mut(&mut self, guid: &str) -> Option<&mut VirtualObjectNode> {
        self.virtual_objects.iter_mut().find(|v| v.guid == guid)
    }

    /// Pretty JSON with 2-space indentation and a trailing newline.
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let scene: SceneGraph = serde_json::from_str(text)?;
        scene.validate().map_err(serde_json::Error::custom)?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn object(position: Vec3, rotation: QuatRotation, scale: Vec3, dims: Vec3) -> VirtualObjectNode {
        VirtualObjectNode {
            guid: "g".into(),
            name: "thing".into(),
            asset_ref: AssetRef {
                kind: AssetKind::Preset,
                key: "thing".into(),
            },
            position,
            rotation,
            scale,
            bbox_dims: dims,
            visible_on_screen: true,
            pending_action: ActionTag::None,
        }
    }

    fn assert_vec_close(a: Vec3, b: Vec3) {
        assert!((a - b).norm() < 1e-12, "{a} != {b}");
    }

    #[test]
    fn world_aabb_identity() {
        let o = object(Vec3::ZERO, QuatRotation::IDENTITY, Vec3::ONE, Vec3::splat(2.0));
        let b = world_aabb(&o);
        assert_vec_close(b.min(), Vec3::splat(-1.0));
        assert_vec_close(b.max(), Vec3::splat(1.0));
    }

    #[test]
    fn world_aabb_translation() {
        let o = object(
            Vec3::new(5.0, 0.0, 0.0),
            QuatRotation::IDENTITY,
            Vec3::ONE,
            Vec3::splat(2.0),
        );
        let b = world_aabb(&o);
        assert_vec_close(b.min(), Vec3::new(4.0, -1.0, -1.0));
        assert_vec_close(b.max(), Vec3::new(6.0, 1.0, 1.0));
    }

    #[test]
    fn world_aabb_quarter_yaw() {
        // Corners of a 2x1x1 box rotated 90 degrees about +y: x extent becomes the z extent.
        let o = object(
            Vec3::ZERO,
            QuatRotation::from_yaw(std::f64::consts::FRAC_PI_2),
            Vec3::ONE,
            Vec3::new(2.0, 1.0, 1.0),
        );
        let b = world_aabb(&o);
        assert_vec_close(b.min(), Vec3::new(-0.5, -0.5, -1.0));
        assert_vec_close(b.max(), Vec3::new(0.5, 0.5, 1.0));
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(matches!(
            Aabb3::new(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO),
            Err(ModelError::InvertedBox { .. })
        ));
    }

    #[test]
    fn mask_validation() {
        let m = Mask::new(3, vec![5, 1, 1, 9]).unwrap();
        assert_eq!(m.indices(), &[1, 5, 9]);
        assert!(m.validate(10).is_ok());
        assert!(m.validate(9).is_err());
        assert!(Mask::new(1, vec![]).is_err());
    }

    #[test]
    fn labels_normalized() {
        assert_eq!(normalize_label("  Road   Surface "), "road surface");
        assert!(LabeledInstance::new(Mask::new(0, vec![0]).unwrap(), "   ").is_err());
    }

    #[test]
    fn action_tags_round_trip_as_snake_case() {
        for tag in ActionTag::ALL {
            let s = serde_json::to_string(&tag).unwrap();
            assert_eq!(s, format!("\"{}\"", tag.as_str()));
            assert_eq!(serde_json::from_str::<ActionTag>(&s).unwrap(), tag);
        }
        assert!(serde_json::from_str::<ActionTag>("\"explode\"").is_err());
    }

    #[test]
    fn scene_json_layout() {
        let mut scene = SceneGraph::new(vec![RealObjectNode {
            id: "r0".into(),
            label: "tree".into(),
            aabb: Aabb3::new(Vec3::ZERO, Vec3::new(1.0, 2.1234567, 3.0)).unwrap(),
        }]);
        scene.virtual_objects.push(object(
            Vec3::new(0.5, 1.95, 0.5),
            QuatRotation::IDENTITY,
            Vec3::ONE,
            Vec3::new(0.4, 0.3, 0.4),
        ));
        let v: serde_json::Value = serde_json::from_str(&scene.to_json_pretty()).unwrap();
        assert_eq!(v["coordinate_system"], COORDINATE_SYSTEM);
        assert_eq!(v["real_objects"][0]["aabb_max"][1], 2.123457);
        assert_eq!(v["virtual_objects"][0]["rotation_quat"][3], 1.0);
        assert_eq!(v["virtual_objects"][0]["asset"]["kind"], "preset");
        assert_eq!(v["virtual_objects"][0]["pending_action"], "none");
        assert!(scene.to_json_pretty().contains("\n  \"version\": 1"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let node = RealObjectNode {
            id: "r0".into(),
            label: "tree".into(),
            aabb: Aabb3::new(Vec3::ZERO, Vec3::ONE).unwrap(),
        };
        let scene = SceneGraph::new(vec![node.clone(), node]);
        assert_eq!(scene.validate(), Err(ModelError::DuplicateId("r0".into())));
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn extents() -> impl Strategy<Value = Vec3> {
        (0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn quat() -> impl Strategy<Value = QuatRotation> {
        (vec3(), -1.0..1.0f64).prop_filter_map("zero quaternion", |(v, w)| {
            let n = (v.dot(v) + w * w).sqrt();
            (n > 1e-3).then(|| QuatRotation {
                x: v.x / n,
                y: v.y / n,
                z: v.z / n,
                w: w / n,
            })
        })
    }

    proptest! {
        #[test]
        fn volume_zero_iff_flat(min in vec3(), e in extents()) {
            let b = Aabb3::new(min, min + e).unwrap();
            prop_assert!(b.volume() >= 0.0);
            let flat = e.x == 0.0 || e.y == 0.0 || e.z == 0.0;
            prop_assert_eq!(b.volume() == 0.0, flat);
        }

        #[test]
        fn world_aabb_translation_equivariant(p in vec3(), t in vec3(), q in quat(), d in extents()) {
            let o = object(p, q, Vec3::ONE, d);
            let mut moved = o.clone();
            moved.position = p + t;
            let expected = world_aabb(&o).translated(t);
            let got = world_aabb(&moved);
            prop_assert!((got.min() - expected.min()).norm() < 1e-9);
            prop_assert!((got.max() - expected.max()).norm() < 1e-9);
        }

        #[test]
        fn world_aabb_identity_rotation_is_half_extents(p in vec3(), d in extents(), s in (0.1..3.0f64, 0.1..3.0f64, 0.1..3.0f64)) {
            let scale = Vec3::new(s.0, s.1, s.2);
            let b = world_aabb(&object(p, QuatRotation::IDENTITY, scale, d));
            let half = d.hadamard(scale) * 0.5;
            prop_assert!((b.min() - (p - half)).norm() < 1e-12);
            prop_assert!((b.max() - (p + half)).norm() < 1e-12);
        }
    }
}

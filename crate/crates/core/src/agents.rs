//! Authoring agents. Commands become tagged action plans (rule grammar or an
//! LLM port), plans become transforms through bounding-box assembly, and
//! assisted mode fans out into seeded candidates.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::assets::{generate_asset, AssetError, AssetStore, Delayed, GenPipeline, StageTimings};
use crate::model::{Aabb3, ActionTag, AssetKind, AssetRef, QuatRotation, SceneGraph, Vec3, VirtualObjectNode};
use crate::ports::PortError;

pub const PROMPT_ACTION_PLAN: &str = include_str!("../../../prompts/action_plan.v1.txt");
pub const PROMPT_REFORMAT: &str = include_str!("../../../prompts/reformat.v1.txt");
pub const PROMPT_BRAINSTORM: &str = include_str!("../../../prompts/brainstorm.v1.txt");
pub const PROMPT_BOOST: &str = include_str!("../../../prompts/boost.v1.txt");
pub const PROMPT_CLASSIFY: &str = include_str!("../../../prompts/classify.v1.txt");

/// Horizontal gap left by `next_to`.
pub const NEXT_TO_GAP: f64 = 0.1;
/// Fraction of the container an `inside` object may fill per axis.
pub const INSIDE_MARGIN: f64 = 0.95;
pub const NUDGE_STEP: f64 = 0.1;
pub const NUDGE_MAX_STEPS: u32 = 50;

const GUID_NAMESPACE: Uuid = Uuid::from_u128(0x6f1c_2a8e_4b7d_5e90_a1c3_d5e7_f902_4b6d);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    Assisted,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCommand {
    pub text: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec3>,
}

impl UserCommand {
    pub fn new(text: &str, mode: Mode) -> Self {
        Self {
            text: text.to_string(),
            mode,
            anchor: None,
        }
    }

    pub fn with_anchor(mut self, anchor: Vec3) -> Self {
        self.anchor = Some(anchor);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    OnTopOf,
    NextTo,
    Inside,
    AtAnchor,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRequest {
    pub kind: AssetKind,
    /// Empty until a `generated` request has been materialized.
    #[serde(default)]
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionTarget {
    Existing { guid: String },
    New { name: String, asset: AssetRequest },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExplicitTransform {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_quat: Option<QuatRotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub relation: Relation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<ExplicitTransform>,
}

impl Placement {
    pub fn free() -> Self {
        Self {
            relation: Relation::Free,
            reference: None,
            anchor: None,
            scale_factor: None,
            transform: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub target: ActionTarget,
    pub tag: ActionTag,
    pub params: Placement,
}

impl PlannedAction {
    /// One-line summary used as candidate rationale.
    pub fn describe(&self) -> String {
        let who = match &self.target {
            ActionTarget::Existing { guid } => guid.clone(),
            ActionTarget::New { name, .. } => name.clone(),
        };
        let mut s = format!("{} {}", self.tag.as_str(), who);
        if !matches!(self.tag, ActionTag::Remove | ActionTag::None) {
            s.push(' ');
            s.push_str(relation_str(self.params.relation));
            if let Some(r) = &self.params.reference {
                s.push(' ');
                s.push_str(r);
            }
        }
        s
    }
}

fn relation_str(r: Relation) -> &'static str {
    match r {
        Relation::OnTopOf => "on_top_of",
        Relation::NextTo => "next_to",
        Relation::Inside => "inside",
        Relation::AtAnchor => "at_anchor",
        Relation::Free => "free",
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("empty command")]
    EmptyCommand,
    #[error("cannot-interpret: {reason} ({token:?})")]
    CannotInterpret { token: String, reason: String },
    #[error("malformed plan: {0}")]
    Malformed(String),
    #[error(transparent)]
    Port(#[from] PortError),
}

// ---------------------------------------------------------------- planning

/// Everything a planner sees for one invocation.
pub struct PlanContext<'a> {
    pub cmd: &'a UserCommand,
    pub scene: &'a SceneGraph,
    pub store: &'a AssetStore,
    pub seed: u64,
}

pub trait PlannerPort: Send + Sync {
    fn id(&self) -> &str;
    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<PlannedAction>, PlanError>;
}

impl<T: PlannerPort + ?Sized> PlannerPort for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<PlannedAction>, PlanError> {
        (**self).plan(ctx)
    }
}

impl<P: PlannerPort> PlannerPort for Delayed<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<PlannedAction>, PlanError> {
        self.latency.sleep(self.stage);
        self.inner.plan(ctx)
    }
}

/// Deterministic planner over a small command grammar:
///
/// ```text
/// add <asset> [on|near|in|here] [<label>]      (put, place are aliases)
/// create <free text> [on|near|in|here] [<label>]
/// remove <name|label>                          (delete is an alias)
/// move <name> [on|near|in|here] [<label>]
/// scale <name> by <factor>
/// ```
///
/// `on` also accepts "on top of", "onto", "atop"; `near` accepts "next to",
/// "beside"; `in` accepts "inside", "into". Leading articles are ignored.
/// Seeds rotate the relation through on_top_of → next_to → inside (or
/// at_anchor when an anchor is set) to diversify candidates.
#[derive(Debug, Default)]
pub struct RulePlanner;

const ARTICLES: &[&str] = &["a", "an", "the", "some", "my"];

const PREPOSITIONS: &[(&[&str], Relation)] = &[
    (&["on", "top", "of"], Relation::OnTopOf),
    (&["next", "to"], Relation::NextTo),
    (&["on"], Relation::OnTopOf),
    (&["onto"], Relation::OnTopOf),
    (&["atop"], Relation::OnTopOf),
    (&["near"], Relation::NextTo),
    (&["beside"], Relation::NextTo),
    (&["inside"], Relation::Inside),
    (&["into"], Relation::Inside),
    (&["in"], Relation::Inside),
    (&["here"], Relation::AtAnchor),
];

fn strip_articles<'a>(words: &'a [&'a str]) -> &'a [&'a str] {
    let mut w = words;
    while let Some((first, rest)) = w.split_first() {
        if ARTICLES.contains(first) {
            w = rest;
        } else {
            break;
        }
    }
    w
}

/// Splits `<object> <prep> <reference>` at the rightmost preposition that
/// leaves a non-empty object.
fn split_relation<'a>(words: &'a [&'a str]) -> (&'a [&'a str], Option<(Relation, &'a [&'a str])>) {
    for i in (1..words.len()).rev() {
        for (pat, rel) in PREPOSITIONS {
            if words[i..].starts_with(pat) {
                return (&words[..i], Some((*rel, &words[i + pat.len()..])));
            }
        }
    }
    (words, None)
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"')).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn centroid(scene: &SceneGraph) -> Vec3 {
    if !scene.real_objects.is_empty() {
        let n = scene.real_objects.len() as f64;
        return scene.real_objects.iter().fold(Vec3::ZERO, |a, r| a + r.aabb.center()) * (1.0 / n);
    }
    if !scene.virtual_objects.is_empty() {
        let n = scene.virtual_objects.len() as f64;
        return scene.virtual_objects.iter().fold(Vec3::ZERO, |a, v| a + v.position) * (1.0 / n);
    }
    Vec3::ZERO
}

/// Candidate (id, box center) pairs matching `name`. Virtual objects match
/// on name or asset key; invisible ones are dropped when a visible one
/// matches.
fn matches_for(scene: &SceneGraph, name: &str, include_real: bool) -> Vec<(String, Vec3)> {
    let virt: Vec<&VirtualObjectNode> = scene
        .virtual_objects
        .iter()
        .filter(|v| v.name.to_lowercase() == name || v.asset_ref.key.to_lowercase() == name)
        .collect();
    let any_visible = virt.iter().any(|v| v.visible_on_screen);
    let mut out: Vec<(String, Vec3)> = virt
        .into_iter()
        .filter(|v| !any_visible || v.visible_on_screen)
        .map(|v| (v.guid.clone(), v.world_aabb().center()))
        .collect();
    if include_real {
        out.extend(
            scene
                .real_objects
                .iter()
                .filter(|r| r.label == name)
                .map(|r| (r.id.clone(), r.aabb.center())),
        );
    }
    out
}

/// Nearest candidate to the anchor (or scene centroid); ties go to the
/// lowest id.
fn pick_nearest(cands: Vec<(String, Vec3)>, anchor: Option<Vec3>, scene: &SceneGraph) -> Option<String> {
    let p = anchor.unwrap_or_else(|| centroid(scene));
    cands
        .into_iter()
        .min_by(|a, b| a.1.distance(p).total_cmp(&b.1.distance(p)).then_with(|| a.0.cmp(&b.0)))
        .map(|c| c.0)
}

fn resolve_reference(ctx: &PlanContext<'_>, words: &[&str]) -> Result<String, PlanError> {
    let name = strip_articles(words).join(" ");
    if name.is_empty() {
        return Err(PlanError::CannotInterpret {
            token: words.join(" "),
            reason: "missing reference".into(),
        });
    }
    pick_nearest(matches_for(ctx.scene, &name, true), ctx.cmd.anchor, ctx.scene).ok_or(PlanError::CannotInterpret {
        token: name,
        reason: "no object with this label or name".into(),
    })
}

fn resolve_virtual(ctx: &PlanContext<'_>, words: &[&str]) -> Result<String, PlanError> {
    let name = strip_articles(words).join(" ");
    if name.is_empty() {
        return Err(PlanError::CannotInterpret {
            token: words.join(" "),
            reason: "missing object name".into(),
        });
    }
    pick_nearest(matches_for(ctx.scene, &name, false), ctx.cmd.anchor, ctx.scene).ok_or(PlanError::CannotInterpret {
        token: name,
        reason: "no virtual object with this name".into(),
    })
}

fn placement_for(ctx: &PlanContext<'_>, rel: Option<(Relation, &[&str])>) -> Result<Placement, PlanError> {
    let mut p = Placement::free();
    p.anchor = ctx.cmd.anchor;
    let Some((relation, rest)) = rel else {
        return Ok(p);
    };
    if relation == Relation::AtAnchor {
        if !rest.is_empty() {
            return Err(PlanError::CannotInterpret {
                token: rest.join(" "),
                reason: "unexpected words after 'here'".into(),
            });
        }
        if ctx.cmd.anchor.is_none() {
            return Err(PlanError::CannotInterpret {
                token: "here".into(),
                reason: "'here' needs an anchor point".into(),
            });
        }
        p.relation = Relation::AtAnchor;
        return Ok(p);
    }
    p.relation = rotate_relation(relation, ctx.seed, ctx.cmd.anchor.is_some());
    p.reference = Some(resolve_reference(ctx, rest)?);
    Ok(p)
}

/// Seed-driven relation preference used to diversify candidates.
pub fn rotate_relation(parsed: Relation, seed: u64, has_anchor: bool) -> Relation {
    let third = if has_anchor { Relation::AtAnchor } else { Relation::Inside };
    let order = [Relation::OnTopOf, Relation::NextTo, third];
    let start = match parsed {
        Relation::OnTopOf => 0,
        Relation::NextTo => 1,
        Relation::Inside => 2,
        other => return other,
    };
    order[(start + (seed % 3) as usize) % 3]
}

/// Maps an asset phrase to the cheapest source: preset, stored generation,
/// or a fresh generation request.
fn asset_for(store: &AssetStore, phrase: &[&str]) -> (String, ActionTag, AssetRequest) {
    let name = strip_articles(phrase).join(" ");
    let prompt = phrase.join(" ");
    if store.get(AssetKind::Preset, &name).is_some() {
        return (
            name.clone(),
            ActionTag::CreateResources,
            AssetRequest {
                kind: AssetKind::Preset,
                key: name,
                prompt: None,
            },
        );
    }
    if let Some(rec) = store.find_generated(&prompt).or_else(|| store.find_generated(&name)) {
        return (
            name,
            ActionTag::CreatePersistent,
            AssetRequest {
                kind: AssetKind::Persistent,
                key: rec.key,
                prompt: rec.source_prompt,
            },
        );
    }
    (
        name,
        ActionTag::CreateNew,
        AssetRequest {
            kind: AssetKind::Generated,
            key: String::new(),
            prompt: Some(prompt),
        },
    )
}

impl PlannerPort for RulePlanner {
    fn id(&self) -> &str {
        "rule"
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<PlannedAction>, PlanError> {
        let tokens = tokenize(&ctx.cmd.text);
        let words: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
        let Some((verb, rest)) = words.split_first() else {
            return Err(PlanError::EmptyCommand);
        };
        let need = |w: &[&str], what: &str| {
            if strip_articles(w).is_empty() {
                Err(PlanError::CannotInterpret {
                    token: verb.to_string(),
                    reason: format!("missing {what}"),
                })
            } else {
                Ok(())
            }
        };
        let action = match *verb {
            "add" | "put" | "place" | "create" => {
                let (obj, rel) = split_relation(rest);
                need(obj, "object")?;
                let params = placement_for(ctx, rel)?;
                let (name, tag, asset) = asset_for(ctx.store, obj);
                PlannedAction {
                    target: ActionTarget::New { name, asset },
                    tag,
                    params,
                }
            }
            "remove" | "delete" => {
                need(rest, "object")?;
                PlannedAction {
                    target: ActionTarget::Existing {
                        guid: resolve_virtual(ctx, rest)?,
                    },
                    tag: ActionTag::Remove,
                    params: Placement::free(),
                }
            }
            "move" => {
                let (obj, rel) = split_relation(rest);
                need(obj, "object")?;
                if rel.is_none() {
                    return Err(PlanError::CannotInterpret {
                        token: obj.join(" "),
                        reason: "move needs a destination".into(),
                    });
                }
                PlannedAction {
                    target: ActionTarget::Existing {
                        guid: resolve_virtual(ctx, obj)?,
                    },
                    tag: ActionTag::Update,
                    params: placement_for(ctx, rel)?,
                }
            }
            "scale" => {
                let by = rest.iter().rposition(|w| *w == "by").ok_or(PlanError::CannotInterpret {
                    token: rest.join(" "),
                    reason: "expected 'scale <name> by <factor>'".into(),
                })?;
                need(&rest[..by], "object")?;
                let raw = rest[by + 1..].join(" ");
                let f: f64 = raw
                    .trim_end_matches('x')
                    .parse()
                    .ok()
                    .filter(|f: &f64| f.is_finite() && *f > 0.0)
                    .ok_or(PlanError::CannotInterpret {
                        token: raw.clone(),
                        reason: "scale factor must be a positive number".into(),
                    })?;
                let mut params = Placement::free();
                params.scale_factor = Some(f);
                PlannedAction {
                    target: ActionTarget::Existing {
                        guid: resolve_virtual(ctx, &rest[..by])?,
                    },
                    tag: ActionTag::Update,
                    params,
                }
            }
            other => {
                return Err(PlanError::CannotInterpret {
                    token: other.to_string(),
                    reason: "unknown verb".into(),
                })
            }
        };
        Ok(vec![action])
    }
}

/// Structural checks shared by all planners: tags fit their targets,
/// references exist, and no object receives two actions.
pub fn validate_plan(actions: &[PlannedAction], scene: &SceneGraph) -> Result<(), PlanError> {
    let mut seen = std::collections::HashSet::new();
    for a in actions {
        match (&a.target, a.tag) {
            (ActionTarget::Existing { guid }, ActionTag::None | ActionTag::Remove | ActionTag::Update) => {
                if scene.virtual_object(guid).is_none() {
                    return Err(PlanError::Malformed(format!("unknown guid {guid}")));
                }
                if !seen.insert(guid.clone()) {
                    return Err(PlanError::Malformed(format!("two actions for {guid}")));
                }
            }
            (ActionTarget::New { .. }, ActionTag::CreateResources | ActionTag::CreatePersistent | ActionTag::CreateNew) => {}
            (_, tag) => return Err(PlanError::Malformed(format!("tag {} does not fit its target", tag.as_str()))),
        }
        if let Some(r) = &a.params.reference {
            if scene.real(r).is_none() && scene.virtual_object(r).is_none() {
                return Err(PlanError::Malformed(format!("unknown reference {r}")));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- LLM port

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

/// Wire request to an LLM: system prompt, scene graph, command, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub scene: SceneGraph,
    pub command: String,
    pub seed: u64,
    #[serde(default)]
    pub assets: Vec<String>,
    #[serde(default)]
    pub history: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec3>,
}

pub trait ChatPort: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, PortError>;
}

impl<T: ChatPort + ?Sized> ChatPort for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &ChatRequest) -> Result<String, PortError> {
        (**self).complete(req)
    }
}

fn asset_listing(store: &AssetStore) -> Vec<String> {
    store
        .list()
        .into_iter()
        .map(|r| match (r.kind, r.source_prompt) {
            (AssetKind::Preset, _) => format!("preset:{}", r.key),
            (_, Some(p)) => format!("generated:{} ({p})", r.key),
            (_, None) => format!("generated:{}", r.key),
        })
        .collect()
}

/// Strips code fences and surrounding prose down to the outermost array.
fn extract_json_array(reply: &str) -> &str {
    match (reply.find('['), reply.rfind(']')) {
        (Some(a), Some(b)) if a < b => &reply[a..=b],
        _ => reply.trim(),
    }
}

/// Action planning through a chat LLM, with one reformat retry.
pub struct LlmPlanner {
    pub port: Arc<dyn ChatPort>,
}

impl LlmPlanner {
    pub fn new(port: Arc<dyn ChatPort>) -> Self {
        Self { port }
    }
}

impl PlannerPort for LlmPlanner {
    fn id(&self) -> &str {
        self.port.id()
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<PlannedAction>, PlanError> {
        if ctx.cmd.text.trim().is_empty() {
            return Err(PlanError::EmptyCommand);
        }
        let mut req = ChatRequest {
            system: PROMPT_ACTION_PLAN.to_string(),
            scene: ctx.scene.clone(),
            command: ctx.cmd.text.clone(),
            seed: ctx.seed,
            assets: asset_listing(ctx.store),
            history: Vec::new(),
            anchor: ctx.cmd.anchor,
        };
        let mut last = String::new();
        for attempt in 0..2 {
            let reply = self.port.complete(&req)?;
            match serde_json::from_str::<Vec<PlannedAction>>(extract_json_array(&reply)) {
                Ok(actions) => {
                    validate_plan(&actions, ctx.scene)?;
                    return Ok(actions);
                }
                Err(e) => {
                    tracing::warn!("planner reply unparseable (attempt {}): {e}", attempt + 1);
                    last = e.to_string();
                    req.history.push(Turn {
                        role: "assistant".into(),
                        text: reply,
                    });
                    req.history.push(Turn {
                        role: "user".into(),
                        text: PROMPT_REFORMAT.to_string(),
                    });
                }
            }
        }
        Err(PlanError::Malformed(last))
    }
}

// ---------------------------------------------------------------- assembly

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedAction {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembleReport {
    pub scene: SceneGraph,
    pub skipped: Vec<SkippedAction>,
    /// Guids left overlapping after the nudge budget ran out.
    pub overlapping: Vec<String>,
}

impl AssembleReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self
            .skipped
            .iter()
            .map(|s| format!("action {} skipped: {}", s.index, s.reason))
            .collect();
        w.extend(self.overlapping.iter().map(|g| format!("{g} overlaps another virtual object")));
        w
    }
}

/// Deterministic guid for the `n`-th free slot of `name`.
fn fresh_guid(scene: &SceneGraph, name: &str) -> String {
    (0u64..)
        .map(|n| Uuid::new_v5(&GUID_NAMESPACE, format!("{name}#{n}").as_bytes()).to_string())
        .find(|g| scene.virtual_object(g).is_none() && scene.real(g).is_none())
        .expect("unbounded search")
}

/// Top of the highest real box whose xz footprint contains (x, z), else 0.
pub fn ground_height(scene: &SceneGraph, x: f64, z: f64) -> f64 {
    scene
        .real_objects
        .iter()
        .filter(|r| {
            let (lo, hi) = (r.aabb.min(), r.aabb.max());
            lo.x <= x && x <= hi.x && lo.z <= z && z <= hi.z
        })
        .map(|r| r.aabb.max().y)
        .fold(0.0, f64::max)
}

fn reference_box(scene: &SceneGraph, id: &str, skip: &str) -> Option<Aabb3> {
    if id == skip {
        return None;
    }
    scene
        .real(id)
        .map(|r| r.aabb)
        .or_else(|| scene.virtual_object(id).map(|v| v.world_aabb()))
}

/// The object's world box if it sat at the origin.
fn local_box(obj: &VirtualObjectNode) -> Aabb3 {
    let mut o = obj.clone();
    o.position = Vec3::ZERO;
    o.world_aabb()
}

fn snap_base(scene: &SceneGraph, obj: &mut VirtualObjectNode, x: f64, z: f64) {
    let lb = local_box(obj);
    obj.position = Vec3::new(x, ground_height(scene, x, z) - lb.min().y, z);
}

/// Applies a relation to `obj` in place. `is_new` distinguishes creation
/// (free = centroid ground) from updates (free = stay put).
fn place(scene: &SceneGraph, obj: &mut VirtualObjectNode, p: &Placement, is_new: bool) -> Result<(), String> {
    let base_before = obj.world_aabb().min().y;
    if let Some(f) = p.scale_factor {
        if !(f.is_finite() && f > 0.0) {
            return Err(format!("invalid scale factor {f}"));
        }
        obj.scale = obj.scale * f;
    }
    let mut explicit_position = false;
    if let Some(t) = &p.transform {
        if let Some(q) = t.rotation_quat {
            obj.rotation = q;
        }
        if let Some(s) = t.scale {
            obj.scale = s;
        }
        if let Some(pos) = t.position {
            obj.position = pos;
            explicit_position = true;
        }
    }
    obj.validate().map_err(|e| e.to_string())?;
    if explicit_position {
        return Ok(());
    }
    let lb = local_box(obj);
    let reference = || -> Result<Aabb3, String> {
        let id = p.reference.as_deref().ok_or("relation needs a reference")?;
        reference_box(scene, id, &obj.guid).ok_or_else(|| format!("unresolvable reference {id}"))
    };
    match p.relation {
        Relation::OnTopOf => {
            let r = reference()?;
            let c = r.center();
            obj.position = Vec3::new(c.x, r.max().y - lb.min().y, c.z);
        }
        Relation::NextTo => {
            let r = reference()?;
            let x = r.max().x + NEXT_TO_GAP - lb.min().x;
            let z = r.center().z;
            snap_base(scene, obj, x, z);
        }
        Relation::Inside => {
            let r = reference()?;
            let (need, room) = (lb.extents(), r.extents());
            let fit = [need.x, need.y, need.z]
                .iter()
                .zip([room.x, room.y, room.z])
                .filter(|(n, _)| **n > 0.0)
                .map(|(n, r)| INSIDE_MARGIN * r / n)
                .fold(f64::INFINITY, f64::min);
            if fit < 1.0 {
                obj.scale = obj.scale * fit;
            }
            let lb = local_box(obj);
            obj.position = r.center() - lb.center();
        }
        Relation::AtAnchor => {
            let a = p.anchor.ok_or("at_anchor needs an anchor point")?;
            snap_base(scene, obj, a.x, a.z);
        }
        Relation::Free if is_new => {
            let c = centroid(scene);
            snap_base(scene, obj, c.x, c.z);
        }
        Relation::Free => {
            // Keep the base where it was while the object grows or shrinks.
            obj.position.y += base_before - obj.world_aabb().min().y;
        }
    }
    Ok(())
}

fn overlaps(a: &Aabb3, b: &Aabb3) -> bool {
    a.intersection_volume(b) > 1e-9
}

/// Moves `obj` along +x until it clears every other virtual object (the
/// container of an `inside` placement excepted). False if the budget ran out.
fn nudge(scene: &SceneGraph, obj: &mut VirtualObjectNode, exempt: Option<&str>) -> bool {
    let others: Vec<Aabb3> = scene
        .virtual_objects
        .iter()
        .filter(|v| v.guid != obj.guid && Some(v.guid.as_str()) != exempt)
        .map(|v| v.world_aabb())
        .collect();
    for step in 0..=NUDGE_MAX_STEPS {
        let b = obj.world_aabb();
        if !others.iter().any(|o| overlaps(o, &b)) {
            return true;
        }
        if step < NUDGE_MAX_STEPS {
            obj.position.x += NUDGE_STEP;
        }
    }
    false
}

/// Applies planned actions to a copy of `scene`. Unresolvable actions are
/// skipped and reported; the rest still apply.
pub fn assemble(actions: &[PlannedAction], scene: &SceneGraph, store: &AssetStore) -> AssembleReport {
    let mut out = scene.clone();
    let mut skipped = Vec::new();
    let mut overlapping = Vec::new();
    for (index, a) in actions.iter().enumerate() {
        let result: Result<Option<String>, String> = (|| match (&a.target, a.tag) {
            (_, ActionTag::None) => Ok(None),
            (ActionTarget::Existing { guid }, ActionTag::Remove) => {
                let before = out.virtual_objects.len();
                out.virtual_objects.retain(|v| &v.guid != guid);
                if out.virtual_objects.len() == before {
                    return Err(format!("unknown guid {guid}"));
                }
                Ok(None)
            }
            (ActionTarget::Existing { guid }, ActionTag::Update) => {
                let mut obj = out.virtual_object(guid).cloned().ok_or_else(|| format!("unknown guid {guid}"))?;
                place(&out, &mut obj, &a.params, false)?;
                obj.pending_action = ActionTag::None;
                *out.virtual_object_mut(guid).expect("checked above") = obj;
                Ok(Some(guid.clone()))
            }
            (ActionTarget::New { name, asset }, ActionTag::CreateResources | ActionTag::CreatePersistent | ActionTag::CreateNew) => {
                if asset.key.is_empty() {
                    return Err(format!("asset for {name:?} not materialized"));
                }
                let rec = store
                    .get(asset.kind, &asset.key)
                    .ok_or_else(|| format!("unknown asset {}/{}", asset.kind.as_str(), asset.key))?;
                let kind = match a.tag {
                    ActionTag::CreateResources => AssetKind::Preset,
                    ActionTag::CreatePersistent => AssetKind::Persistent,
                    _ => AssetKind::Generated,
                };
                let mut obj = VirtualObjectNode {
                    guid: fresh_guid(&out, name),
                    name: name.clone(),
                    asset_ref: AssetRef {
                        kind,
                        key: rec.key.clone(),
                    },
                    position: Vec3::ZERO,
                    rotation: QuatRotation::IDENTITY,
                    scale: Vec3::ONE,
                    bbox_dims: rec.bbox_dims,
                    visible_on_screen: true,
                    pending_action: ActionTag::None,
                };
                place(&out, &mut obj, &a.params, true)?;
                let guid = obj.guid.clone();
                out.virtual_objects.push(obj);
                Ok(Some(guid))
            }
            (_, tag) => Err(format!("tag {} does not fit its target", tag.as_str())),
        })();
        match result {
            Ok(Some(guid)) => {
                let exempt = (a.params.relation == Relation::Inside).then(|| a.params.reference.clone()).flatten();
                let mut obj = out.virtual_object(&guid).cloned().expect("just placed");
                if !nudge(&out, &mut obj, exempt.as_deref()) {
                    tracing::warn!("{guid} still overlaps after {NUDGE_MAX_STEPS} nudges");
                    overlapping.push(guid.clone());
                }
                *out.virtual_object_mut(&guid).expect("present") = obj;
            }
            Ok(None) => {}
            Err(reason) => skipped.push(SkippedAction { index, reason }),
        }
    }
    AssembleReport {
        scene: out,
        skipped,
        overlapping,
    }
}

// ---------------------------------------------------------------- candidates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub seed: u64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCandidate {
    pub scene: SceneGraph,
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub timings: StageTimings,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("every candidate failed: {0}")]
    NoCandidates(String),
    #[error("manual mode bypasses the agents")]
    ManualMode,
}

impl AgentError {
    /// True when the failure came from an external backend rather than the
    /// command itself.
    pub fn is_port_failure(&self) -> bool {
        match self {
            AgentError::Plan(PlanError::Port(_)) => true,
            AgentError::Asset(e) => matches!(e, AssetError::GenerationUnavailable(_) | AssetError::MeshingFailed { .. }),
            AgentError::NoCandidates(_) => false,
            _ => false,
        }
    }
}

/// Ports and stores the authoring loop runs against.
pub struct Authoring {
    pub planner: Arc<dyn PlannerPort>,
    pub store: Arc<AssetStore>,
    pub gen: Arc<GenPipeline>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<SceneCandidate>,
    pub warnings: Vec<String>,
}

impl Authoring {
    /// One candidate: plan with `seed`, generate new meshes with salt
    /// `seed`, assemble.
    pub fn candidate(&self, cmd: &UserCommand, scene: &SceneGraph, seed: u64) -> Result<SceneCandidate, AgentError> {
        let clock = self.gen.clock.clone();
        let t0 = clock.now();
        let ctx = PlanContext {
            cmd,
            scene,
            store: &self.store,
            seed,
        };
        let mut actions = self.planner.plan(&ctx)?;
        let t_plan = clock.now() - t0;
        let mut timings = StageTimings::default();
        for a in &mut actions {
            if let ActionTarget::New { asset, .. } = &mut a.target {
                if a.tag == ActionTag::CreateNew && asset.key.is_empty() {
                    let prompt = asset.prompt.clone().unwrap_or_default();
                    let g = generate_asset(&prompt, seed, &self.gen, &self.store)?;
                    timings.boost_s += g.timings.boost_s;
                    timings.image_s += g.timings.image_s;
                    timings.bg_removal_s += g.timings.bg_removal_s;
                    timings.mesh_s += g.timings.mesh_s;
                    asset.key = g.record.key;
                    asset.kind = AssetKind::Generated;
                }
            }
        }
        let t1 = clock.now();
        let report = assemble(&actions, scene, &self.store);
        timings.agents_s = t_plan + (clock.now() - t1);
        timings.total_s = clock.now() - t0;
        let rationale = actions.iter().map(|a| a.describe()).collect::<Vec<_>>().join("; ");
        Ok(SceneCandidate {
            warnings: report.warnings(),
            scene: report.scene,
            provenance: Provenance {
                backend: self.planner.id().to_string(),
                seed,
                rationale,
            },
            timings,
        })
    }

    /// `k` candidates from seeds 0..k, computed in parallel. Failed seeds
    /// become warnings; at least one must survive.
    pub fn propose_candidates(&self, cmd: &UserCommand, scene: &SceneGraph, k: usize) -> Result<CandidateSet, AgentError> {
        if cmd.mode == Mode::Manual {
            return Err(AgentError::ManualMode);
        }
        let results: Vec<Result<SceneCandidate, AgentError>> = if k <= 1 {
            vec![self.candidate(cmd, scene, 0)]
        } else {
            std::thread::scope(|s| {
                let hs: Vec<_> = (0..k as u64).map(|seed| s.spawn(move || self.candidate(cmd, scene, seed))).collect();
                hs.into_iter().map(|h| h.join().expect("candidate thread")).collect()
            })
        };
        let mut candidates = Vec::new();
        let mut warnings = Vec::new();
        let mut first_err = None;
        for (seed, r) in results.into_iter().enumerate() {
            match r {
                Ok(c) => candidates.push(c),
                Err(e) => {
                    warnings.push(format!("candidate {seed} failed: {e}"));
                    first_err.get_or_insert(e);
                }
            }
        }
        if candidates.is_empty() {
            return Err(match first_err {
                Some(e) if k <= 1 => e,
                Some(e @ AgentError::Plan(_)) => e,
                Some(e) if e.is_port_failure() => e,
                _ => AgentError::NoCandidates(warnings.join("; ")),
            });
        }
        Ok(CandidateSet { candidates, warnings })
    }

    /// The single result shown in AI-decided mode: seed 0's candidate.
    pub fn decide(&self, cmd: &UserCommand, scene: &SceneGraph) -> Result<SceneCandidate, AgentError> {
        let mut set = self.propose_candidates(cmd, scene, 1)?;
        Ok(set.candidates.remove(0))
    }
}

// ---------------------------------------------------------------- brainstorming

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Idea {
    pub text: String,
    /// True when the port failed and a canned suggestion was returned.
    pub offline: bool,
}

pub const OFFLINE_IDEA: &str = "Try a small story: pick the biggest thing around you and give it a visitor.";

/// Multi-turn brainstorming session; each request carries the history.
pub struct Brainstormer {
    pub port: Arc<dyn ChatPort>,
    pub seed: u64,
    pub history: Vec<Turn>,
}

impl Brainstormer {
    pub fn new(port: Arc<dyn ChatPort>, seed: u64) -> Self {
        Self {
            port,
            seed,
            history: Vec::new(),
        }
    }

    pub fn ask(&mut self, scene: &SceneGraph, store: &AssetStore, text: Option<&str>) -> Idea {
        let user = text.unwrap_or("Suggest an idea for this place.").to_string();
        let req = ChatRequest {
            system: PROMPT_BRAINSTORM.to_string(),
            scene: scene.clone(),
            command: user.clone(),
            seed: self.seed,
            assets: store.preset_names(),
            history: self.history.clone(),
            anchor: None,
        };
        let idea = match self.port.complete(&req) {
            Ok(t) if !t.trim().is_empty() => Idea {
                text: t.trim().to_string(),
                offline: false,
            },
            Ok(_) => Idea {
                text: OFFLINE_IDEA.into(),
                offline: true,
            },
            Err(e) => {
                tracing::warn!("brainstorm port failed: {e}");
                Idea {
                    text: OFFLINE_IDEA.into(),
                    offline: true,
                }
            }
        };
        self.history.push(Turn { role: "user".into(), text: user });
        self.history.push(Turn {
            role: "assistant".into(),
            text: idea.text.clone(),
        });
        idea
    }
}

/// Offline brainstorm backend: "A scene where a <preset> sits on the
/// <largest real object>", preset drawn from (seed, turn).
#[derive(Debug, Default)]
pub struct MockBrainstorm;

impl ChatPort for MockBrainstorm {
    fn id(&self) -> &str {
        "mock-brainstorm"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, PortError> {
        let largest = req
            .scene
            .real_objects
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.aabb.volume().total_cmp(&b.aabb.volume()).then(j.cmp(i)))
            .map(|(_, r)| format!("the {}", r.label))
            .unwrap_or_else(|| "the ground".into());
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed.wrapping_add(req.history.len() as u64 / 2));
        let presets: Vec<&str> = req
            .assets
            .iter()
            .map(|a| a.strip_prefix("preset:").unwrap_or(a))
            .collect();
        let thing = presets.choose(&mut rng).copied().unwrap_or("lantern");
        Ok(format!("A scene where a {thing} sits on {largest}"))
    }
}

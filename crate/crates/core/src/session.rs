//! Authoring session: the authoritative scene, its revision counter, pending
//! candidates and the command log. Shared by the HTTP service and the REPL.
//!
//! Computing a command is split from applying it so a caller can run the
//! agents against a snapshot while readers keep seeing the old revision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, Authoring, Mode, SceneCandidate, UserCommand};
use crate::model::{QuatRotation, SceneGraph, Vec3, VirtualObjectNode};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("no pending candidates to commit")]
    NoPending,
    #[error("candidate index {index} out of range (have {len})")]
    BadIndex { index: usize, len: usize },
    #[error("unknown object {0}")]
    UnknownGuid(String),
    #[error("invalid edit: {0}")]
    Invalid(String),
    #[error("scene changed since the command was planned (revision {planned} vs {current})")]
    Stale { planned: u64, current: u64 },
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Agent(e) if e.is_port_failure() => "port-unavailable",
            SessionError::Agent(AgentError::ManualMode) => "manual-mode",
            SessionError::Agent(_) => "command-failed",
            SessionError::NoPending => "no-pending-candidates",
            SessionError::BadIndex { .. } => "bad-index",
            SessionError::UnknownGuid(_) => "unknown-guid",
            SessionError::Invalid(_) => "invalid-edit",
            SessionError::Stale { .. } => "stale",
        }
    }

    pub fn is_port_failure(&self) -> bool {
        matches!(self, SessionError::Agent(e) if e.is_port_failure())
    }
}

/// Scale given either as one factor or per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleArg {
    Uniform(f64),
    Axes(Vec3),
}

impl ScaleArg {
    pub fn to_vec(self) -> Vec3 {
        match self {
            ScaleArg::Uniform(s) => Vec3::new(s, s, s),
            ScaleArg::Axes(v) => v,
        }
    }
}

/// Direct user edit of one virtual object, bypassing the agents.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualEdit {
    pub guid: String,
    #[serde(default)]
    pub position: Option<Vec3>,
    #[serde(default)]
    pub rotation_quat: Option<QuatRotation>,
    #[serde(default)]
    pub scale: Option<ScaleArg>,
    #[serde(default)]
    pub remove: Option<bool>,
}

/// Applies `edit` to a copy of `scene`.
pub fn apply_manual(scene: &SceneGraph, edit: &ManualEdit) -> Result<SceneGraph, SessionError> {
    let mut out = scene.clone();
    let Some(idx) = out.virtual_objects.iter().position(|v| v.guid == edit.guid) else {
        return Err(SessionError::UnknownGuid(edit.guid.clone()));
    };
    if edit.remove == Some(true) {
        out.virtual_objects.remove(idx);
        return Ok(out);
    }
    let obj = &mut out.virtual_objects[idx];
    if let Some(p) = edit.position {
        obj.position = p;
    }
    if let Some(q) = edit.rotation_quat {
        obj.rotation = q;
    }
    if let Some(s) = edit.scale {
        obj.scale = s.to_vec();
    }
    obj.validate().map_err(|e| SessionError::Invalid(e.to_string()))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Command,
    Commit,
    Manual,
}

/// One committed mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Revision the mutation produced.
    pub revision: u64,
    pub kind: EntryKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pending {
    pub command: UserCommand,
    pub candidates: Vec<SceneCandidate>,
    pub warnings: Vec<String>,
}

/// Result of running a command against a snapshot, not yet applied.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub base_revision: u64,
    pub command: UserCommand,
    pub result: ProposalKind,
}

#[derive(Debug, Clone)]
pub enum ProposalKind {
    Decided(Box<SceneCandidate>),
    Assisted { candidates: Vec<SceneCandidate>, warnings: Vec<String> },
}

/// What applying a proposal did.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Committed { revision: u64, warnings: Vec<String> },
    Pending { revision: u64, candidates: usize, warnings: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub scene: SceneGraph,
    /// Number of committed mutations.
    pub revision: u64,
    pub pending: Option<Pending>,
    pub selected: Option<usize>,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    pub fn new(scene: SceneGraph) -> Self {
        Self {
            scene,
            revision: 0,
            pending: None,
            selected: None,
            history: Vec::new(),
        }
    }

    /// Runs the agents for `cmd` on the current scene without changing
    /// anything. Assisted mode proposes `k` candidates, decided mode one.
    pub fn propose(&self, authoring: &Authoring, cmd: &UserCommand, k: usize) -> Result<Proposal, SessionError> {
        let result = match cmd.mode {
            Mode::Manual => return Err(AgentError::ManualMode.into()),
            Mode::Decided => ProposalKind::Decided(Box::new(authoring.decide(cmd, &self.scene)?)),
            Mode::Assisted => {
                let set = authoring.propose_candidates(cmd, &self.scene, k.max(1))?;
                ProposalKind::Assisted {
                    candidates: set.candidates,
                    warnings: set.warnings,
                }
            }
        };
        Ok(Proposal {
            base_revision: self.revision,
            command: cmd.clone(),
            result,
        })
    }

    /// Applies a proposal computed from this session's current revision.
    /// Decided proposals commit; assisted ones replace the pending set.
    pub fn apply(&mut self, p: Proposal) -> Result<Outcome, SessionError> {
        if p.base_revision != self.revision {
            return Err(SessionError::Stale {
                planned: p.base_revision,
                current: self.revision,
            });
        }
        match p.result {
            ProposalKind::Decided(c) => {
                let warnings = c.warnings.clone();
                self.mutate(c.scene, EntryKind::Command, p.command.text);
                Ok(Outcome::Committed {
                    revision: self.revision,
                    warnings,
                })
            }
            ProposalKind::Assisted { candidates, warnings } => {
                let n = candidates.len();
                self.pending = Some(Pending {
                    command: p.command,
                    candidates,
                    warnings: warnings.clone(),
                });
                self.selected = Some(0);
                Ok(Outcome::Pending {
                    revision: self.revision,
                    candidates: n,
                    warnings,
                })
            }
        }
    }

    /// `propose` then `apply`.
    pub fn command(&mut self, authoring: &Authoring, cmd: &UserCommand, k: usize) -> Result<Outcome, SessionError> {
        let p = self.propose(authoring, cmd, k)?;
        self.apply(p)
    }

    pub fn select(&mut self, index: usize) -> Result<(), SessionError> {
        let len = self.pending.as_ref().ok_or(SessionError::NoPending)?.candidates.len();
        if index >= len {
            return Err(SessionError::BadIndex { index, len });
        }
        self.selected = Some(index);
        Ok(())
    }

    /// Commits pending candidate `index`.
    pub fn commit(&mut self, index: usize) -> Result<u64, SessionError> {
        let pending = self.pending.as_ref().ok_or(SessionError::NoPending)?;
        let len = pending.candidates.len();
        let Some(c) = pending.candidates.get(index) else {
            return Err(SessionError::BadIndex { index, len });
        };
        let scene = c.scene.clone();
        let text = format!("{} [candidate {index}]", pending.command.text);
        self.mutate(scene, EntryKind::Commit, text);
        Ok(self.revision)
    }

    pub fn manual(&mut self, edit: &ManualEdit) -> Result<u64, SessionError> {
        let scene = apply_manual(&self.scene, edit)?;
        let text = serde_json::to_string(edit).expect("edit serializes");
        self.mutate(scene, EntryKind::Manual, text);
        Ok(self.revision)
    }

    fn mutate(&mut self, scene: SceneGraph, kind: EntryKind, text: String) {
        self.scene = scene;
        self.revision += 1;
        self.pending = None;
        self.selected = None;
        self.history.push(HistoryEntry {
            revision: self.revision,
            kind,
            text,
        });
    }

    /// Writes the scene to `path` through a temporary sibling file.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.scene.to_json_pretty())?;
        std::fs::rename(tmp, path)
    }
}

/// Human-readable change list between two scenes, one line per virtual
/// object added (+), removed (-) or changed (~).
pub fn scene_diff(before: &SceneGraph, after: &SceneGraph) -> Vec<String> {
    let mut out = Vec::new();
    for b in &before.virtual_objects {
        match after.virtual_object(&b.guid) {
            None => out.push(format!("- {} {}", b.name, b.guid)),
            Some(a) => {
                let changes = changed_fields(b, a);
                if !changes.is_empty() {
                    out.push(format!("~ {} {} {}", a.name, a.guid, changes.join(" ")));
                }
            }
        }
    }
    for a in &after.virtual_objects {
        if before.virtual_object(&a.guid).is_none() {
            out.push(format!(
                "+ {} {} {}:{} at {} scale {}",
                a.name,
                a.guid,
                a.asset_ref.kind.as_str(),
                a.asset_ref.key,
                fmt_vec(a.position),
                fmt_vec(a.scale)
            ));
        }
    }
    out
}

fn fmt_vec(v: Vec3) -> String {
    format!("[{:.3}, {:.3}, {:.3}]", v.x, v.y, v.z)
}

fn changed_fields(b: &VirtualObjectNode, a: &VirtualObjectNode) -> Vec<String> {
    let mut c = Vec::new();
    if b.position != a.position {
        c.push(format!("position {} -> {}", fmt_vec(b.position), fmt_vec(a.position)));
    }
    if b.rotation != a.rotation {
        let q = a.rotation;
        c.push(format!("rotation -> [{:.3}, {:.3}, {:.3}, {:.3}]", q.x, q.y, q.z, q.w));
    }
    if b.scale != a.scale {
        c.push(format!("scale {} -> {}", fmt_vec(b.scale), fmt_vec(a.scale)));
    }
    if b.asset_ref != a.asset_ref {
        c.push(format!("asset -> {}:{}", a.asset_ref.kind.as_str(), a.asset_ref.key));
    }
    if b.visible_on_screen != a.visible_on_screen {
        c.push(format!("visible -> {}", a.visible_on_screen));
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{AssetStore, GenPipeline};
    use crate::agents::RulePlanner;
    use crate::model::{Aabb3, RealObjectNode};
    use std::sync::Arc;

    fn setup() -> (tempfile::TempDir, Authoring, Session) {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        store.install_presets().unwrap();
        let a = Authoring {
            planner: Arc::new(RulePlanner),
            store: Arc::new(store),
            gen: Arc::new(GenPipeline::mock()),
        };
        let scene = SceneGraph::new(vec![RealObjectNode {
            id: "r0".into(),
            label: "shed".into(),
            aabb: Aabb3::new(Vec3::ZERO, Vec3::new(2.0, 2.5, 2.0)).unwrap(),
        }]);
        (dir, a, Session::new(scene))
    }

    #[test]
    fn decided_commits_assisted_waits() {
        let (_d, a, mut s) = setup();
        let o = s.command(&a, &UserCommand::new("add duck on shed", Mode::Decided), 3).unwrap();
        assert!(matches!(o, Outcome::Committed { revision: 1, .. }));
        assert_eq!(s.scene.virtual_objects.len(), 1);
        let o = s.command(&a, &UserCommand::new("add hat on shed", Mode::Assisted), 3).unwrap();
        assert!(matches!(o, Outcome::Pending { revision: 1, candidates: 3, .. }));
        assert_eq!(s.selected, Some(0));
        assert!(matches!(s.commit(5), Err(SessionError::BadIndex { index: 5, len: 3 })));
        assert_eq!(s.commit(2).unwrap(), 2);
        assert!(s.pending.is_none());
        assert!(matches!(s.commit(0), Err(SessionError::NoPending)));
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.history[1].kind, EntryKind::Commit);
    }

    #[test]
    fn manual_edits() {
        let (_d, a, mut s) = setup();
        s.command(&a, &UserCommand::new("add duck", Mode::Decided), 1).unwrap();
        let guid = s.scene.virtual_objects[0].guid.clone();
        let before = s.scene.clone();
        let edit = ManualEdit {
            guid: guid.clone(),
            position: Some(Vec3::new(1.0, 0.0, 1.0)),
            scale: Some(ScaleArg::Uniform(2.0)),
            ..Default::default()
        };
        assert_eq!(s.manual(&edit).unwrap(), 2);
        let d = scene_diff(&before, &s.scene);
        assert_eq!(d.len(), 1);
        assert!(d[0].starts_with("~ duck") && d[0].contains("scale [1.000, 1.000, 1.000] -> [2.000, 2.000, 2.000]"));
        let bad = ManualEdit {
            guid: guid.clone(),
            scale: Some(ScaleArg::Uniform(0.0)),
            ..Default::default()
        };
        assert!(matches!(s.manual(&bad), Err(SessionError::Invalid(_))));
        assert!(matches!(
            s.manual(&ManualEdit { guid: "nope".into(), ..Default::default() }),
            Err(SessionError::UnknownGuid(_))
        ));
        assert_eq!(s.revision, 2);
        let del = ManualEdit {
            guid,
            remove: Some(true),
            ..Default::default()
        };
        let before = s.scene.clone();
        s.manual(&del).unwrap();
        assert!(s.scene.virtual_objects.is_empty());
        assert!(scene_diff(&before, &s.scene)[0].starts_with("- duck"));
    }

    #[test]
    fn stale_proposals_rejected() {
        let (_d, a, mut s) = setup();
        let p = s.propose(&a, &UserCommand::new("add duck", Mode::Decided), 1).unwrap();
        s.command(&a, &UserCommand::new("add hat", Mode::Decided), 1).unwrap();
        assert!(matches!(s.apply(p), Err(SessionError::Stale { planned: 0, current: 1 })));
        assert!(matches!(
            s.command(&a, &UserCommand::new("add hat", Mode::Manual), 1),
            Err(SessionError::Agent(AgentError::ManualMode))
        ));
    }

    #[test]
    fn manual_edit_json_shapes() {
        let e: ManualEdit = serde_json::from_str(r#"{"guid":"g","scale":[1,2,3],"rotation_quat":[0,0,0,1]}"#).unwrap();
        assert_eq!(e.scale, Some(ScaleArg::Axes(Vec3::new(1.0, 2.0, 3.0))));
        let e: ManualEdit = serde_json::from_str(r#"{"guid":"g","scale":1.5,"remove":false}"#).unwrap();
        assert_eq!(e.scale, Some(ScaleArg::Uniform(1.5)));
        assert!(serde_json::from_str::<ManualEdit>(r#"{"guid":"g","rotation_quat":[0,0,0,2]}"#).is_err());
        assert!(serde_json::from_str::<ManualEdit>(r#"{"guid":"g","colour":1}"#).is_err());
    }
}

//! Line-oriented authoring loop over the same session code the HTTP service
//! uses. Plain lines are commands in the current mode; `:`-lines are meta
//! commands.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use arscene_core::agents::{Authoring, Brainstormer, Mode, UserCommand};
use arscene_core::model::{QuatRotation, SceneGraph, Vec3};
use arscene_core::session::{scene_diff, ManualEdit, Outcome, ScaleArg, Session, SessionError};

use crate::error::CliError;

const HELP: &str = "\
commands in decided/assisted mode: plain text, e.g. `add duck on shed`
commands in manual mode:
  move <name|guid> <x> <y> <z>
  rotate <name|guid> <yaw degrees>
  scale <name|guid> <s> | <sx> <sy> <sz>
  remove <name|guid>
meta:
  :decided :assisted :manual   switch mode
  :candidates                  list pending candidates
  :commit [n]                  commit pending candidate n (default 0)
  :brainstorm [text]           ask for an idea
  :scene                       print the scene graph
  :save [path]                 write the scene file
  :help  :quit";

pub struct Repl<'a> {
    pub session: Session,
    pub authoring: &'a Authoring,
    pub brainstormer: Brainstormer,
    pub mode: Mode,
    pub candidates: usize,
    pub save: Option<PathBuf>,
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Manual => "manual",
        Mode::Assisted => "assisted",
        Mode::Decided => "decided",
    }
}

impl Repl<'_> {
    /// Runs until `:quit` or end of input, then saves. Errors in individual
    /// lines are reported and the loop continues; only I/O on `out` or the
    /// final save aborts.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, out: &mut W, prompt: bool) -> Result<(), CliError> {
        let mut lines = input.lines();
        loop {
            if prompt {
                write!(out, "{}> ", mode_name(self.mode)).map_err(out_err)?;
                out.flush().map_err(out_err)?;
            }
            let Some(line) = lines.next() else { break };
            let line = line.map_err(CliError::io("<stdin>"))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if matches!(line, ":quit" | ":q" | ":exit") {
                break;
            }
            match self.line(line, out) {
                Ok(()) => {}
                Err(CliError::Io { path, source }) if path.as_os_str() == "<stdout>" => {
                    return Err(CliError::Io { path, source })
                }
                Err(e) => writeln!(out, "error ({}): {e}", e.code()).map_err(out_err)?,
            }
        }
        self.save_scene(None)?;
        if let Some(p) = &self.save {
            writeln!(out, "saved {}", p.display()).map_err(out_err)?;
        }
        Ok(())
    }

    fn line<W: Write>(&mut self, line: &str, out: &mut W) -> Result<(), CliError> {
        let (head, rest) = match line.split_once(char::is_whitespace) {
            Some((h, r)) => (h, r.trim()),
            None => (line, ""),
        };
        match head {
            ":decided" | ":assisted" | ":manual" => {
                self.mode = match head {
                    ":decided" => Mode::Decided,
                    ":assisted" => Mode::Assisted,
                    _ => Mode::Manual,
                };
                writeln!(out, "mode {}", mode_name(self.mode)).map_err(out_err)
            }
            ":help" => writeln!(out, "{HELP}").map_err(out_err),
            ":scene" => write!(out, "{}", self.session.scene.to_json_pretty()).map_err(out_err),
            ":candidates" => self.print_candidates(out),
            ":commit" => {
                let idx = if rest.is_empty() {
                    self.session.selected.unwrap_or(0)
                } else {
                    rest.parse()
                        .map_err(|_| CliError::Validation(format!("bad candidate index {rest:?}")))?
                };
                let before = self.session.scene.clone();
                self.session.commit(idx)?;
                self.committed(&before, out)
            }
            ":brainstorm" => {
                let text = (!rest.is_empty()).then_some(rest);
                let idea = self.brainstormer.ask(&self.session.scene, &self.authoring.store, text);
                writeln!(out, "idea: {}", idea.text).map_err(out_err)
            }
            ":save" => {
                let p = (!rest.is_empty()).then(|| PathBuf::from(rest));
                self.save_scene(p.clone())?;
                match p.or_else(|| self.save.clone()) {
                    Some(p) => writeln!(out, "saved {}", p.display()).map_err(out_err),
                    None => Err(CliError::Validation("no save path; use :save <path>".into())),
                }
            }
            h if h.starts_with(':') => Err(CliError::Validation(format!("unknown meta command {h}; try :help"))),
            _ if self.mode == Mode::Manual => {
                let edit = parse_manual(line, &self.session.scene)?;
                let before = self.session.scene.clone();
                self.session.manual(&edit)?;
                self.committed(&before, out)
            }
            _ => {
                let cmd = UserCommand::new(line, self.mode);
                let before = self.session.scene.clone();
                match self.session.command(self.authoring, &cmd, self.candidates)? {
                    Outcome::Committed { warnings, .. } => {
                        for w in warnings {
                            writeln!(out, "warning: {w}").map_err(out_err)?;
                        }
                        self.committed(&before, out)
                    }
                    Outcome::Pending { .. } => self.print_candidates(out),
                }
            }
        }
    }

    fn committed<W: Write>(&mut self, before: &SceneGraph, out: &mut W) -> Result<(), CliError> {
        writeln!(out, "revision {}", self.session.revision).map_err(out_err)?;
        for d in scene_diff(before, &self.session.scene) {
            writeln!(out, "  {d}").map_err(out_err)?;
        }
        self.save_scene(None)
    }

    fn print_candidates<W: Write>(&self, out: &mut W) -> Result<(), CliError> {
        let Some(p) = &self.session.pending else {
            return Err(SessionError::NoPending.into());
        };
        writeln!(out, "{} candidates for {:?}", p.candidates.len(), p.command.text).map_err(out_err)?;
        for (i, c) in p.candidates.iter().enumerate() {
            writeln!(out, "[{i}] {}", c.provenance.rationale).map_err(out_err)?;
            for d in scene_diff(&self.session.scene, &c.scene) {
                writeln!(out, "    {d}").map_err(out_err)?;
            }
            for w in &c.warnings {
                writeln!(out, "    warning: {w}").map_err(out_err)?;
            }
        }
        for w in &p.warnings {
            writeln!(out, "warning: {w}").map_err(out_err)?;
        }
        writeln!(out, "use :commit <n>").map_err(out_err)
    }

    fn save_scene(&self, path: Option<PathBuf>) -> Result<(), CliError> {
        if let Some(p) = path.as_ref().or(self.save.as_ref()) {
            self.session.save(p).map_err(CliError::io(p))?;
        }
        Ok(())
    }
}

/// Guid, or the most recently added object with that name.
fn resolve(scene: &SceneGraph, r: &str) -> Result<String, CliError> {
    if scene.virtual_object(r).is_some() {
        return Ok(r.to_string());
    }
    scene
        .virtual_objects
        .iter()
        .rev()
        .find(|v| v.name.eq_ignore_ascii_case(r))
        .map(|v| v.guid.clone())
        .ok_or_else(|| SessionError::UnknownGuid(r.to_string()).into())
}

fn parse_manual(line: &str, scene: &SceneGraph) -> Result<ManualEdit, CliError> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let bad = || CliError::Validation(format!("cannot parse manual edit {line:?}; try :help"));
    let nums = |xs: &[&str]| -> Result<Vec<f64>, CliError> {
        xs.iter().map(|x| x.parse::<f64>().map_err(|_| bad())).collect()
    };
    let (verb, target, args) = match words.as_slice() {
        [v, t, rest @ ..] => (*v, *t, rest),
        _ => return Err(bad()),
    };
    let mut edit = ManualEdit {
        guid: resolve(scene, target)?,
        ..Default::default()
    };
    match (verb, nums(args)?.as_slice()) {
        ("move", [x, y, z]) => edit.position = Some(Vec3::new(*x, *y, *z)),
        ("rotate", [deg]) => edit.rotation_quat = Some(QuatRotation::from_yaw(deg.to_radians())),
        ("scale", [s]) => edit.scale = Some(ScaleArg::Uniform(*s)),
        ("scale", [x, y, z]) => edit.scale = Some(ScaleArg::Axes(Vec3::new(*x, *y, *z))),
        ("remove" | "delete", []) => edit.remove = Some(true),
        _ => return Err(bad()),
    }
    Ok(edit)
}

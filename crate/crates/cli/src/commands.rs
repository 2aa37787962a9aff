use std::collections::HashMap;
use std::fs;
use std::io::{IsTerminal, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use arscene_core::agents::{Authoring, Mode};
use arscene_core::config::Config;
use arscene_core::depth::metric_depth;
use arscene_core::eval::{evaluate, render_markdown, TableRow};
use arscene_core::ingest::{
    frame_stem, garden_scene, load_ground_truth, load_scan, read_masks, save_ground_truth, save_scan,
    synthesize_scene, write_masks, GroundTruthScene, ScanBundle, SyntheticSpec, FRAMES_DIR,
};
use arscene_core::labeler::{label_masks, LabelRegistry, MockVlm, VlmPort, VlmRequest};
use arscene_core::live::HttpVlm;
use arscene_core::maskproc::refine_masks;
use arscene_core::model::{Mask, SceneGraph};
use arscene_core::pipeline::{frame_depths, run_pipeline};
use arscene_core::ports::PortError;
use arscene_core::assets::AssetStore;
use arscene_core::session::Session;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::repl::Repl;

/// What one stage of a shell pipeline hands to the next on stdout: paths,
/// never bulk data.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Handoff {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
}

impl Handoff {
    fn read_stdin() -> Result<Self, CliError> {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(CliError::io("<stdin>"))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("expected a handoff document on stdin: {e}")))
    }

    fn print(&self) -> Result<(), CliError> {
        println!("{}", serde_json::to_string(self)?);
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

// ---------------------------------------------------------------- synth

pub struct SynthArgs {
    pub seed: u64,
    pub objects: usize,
    pub out: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.objects == 0 {
        return Err(CliError::Validation("--objects must be at least 1".into()));
    }
    let spec = SyntheticSpec::garden_with(a.seed, a.objects);
    spec.validate().map_err(CliError::Validation)?;
    let root = a
        .out
        .unwrap_or_else(|| std::env::temp_dir().join(format!("arscene-synth-{}-{}", a.seed, a.objects)));
    let (scan, gt) = synthesize_scene(&spec);
    let scan_dir = root.join("scan");
    let gt_dir = root.join("gt");
    for d in [&scan_dir, &gt_dir] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(CliError::io(d))?;
        }
        fs::create_dir_all(d).map_err(CliError::io(d))?;
    }
    save_scan(&scan_dir, &scan)?;
    let gt_path = gt_dir.join(format!("{}.json", gt.scene_id));
    save_ground_truth(&gt_path, &gt)?;
    eprintln!(
        "synthesized {} objects, {} points, {} frames, {} masks",
        gt.instances.len(),
        scan.cloud.len(),
        scan.frames.len(),
        scan.masks_initial.len()
    );
    Handoff {
        scan: Some(scan_dir),
        gt: Some(gt_path),
        pred: None,
    }
    .print()
}

// ---------------------------------------------------------------- labels

/// Labels read from a JSON object of mask id to label; unlisted masks are
/// unknown.
struct FileVlm(HashMap<u32, String>);

impl VlmPort for FileVlm {
    fn id(&self) -> &str {
        "file"
    }
    fn classify(&self, req: &VlmRequest<'_>) -> Result<String, PortError> {
        Ok(self.0.get(&req.mask.id).cloned().unwrap_or_else(|| "unknown".into()))
    }
}

/// `mock` (ground truth carried by synthetic scans), `http:<url>`, or a
/// JSON file of `{"<mask id>": "<label>"}`.
fn labeler(spec: &str, scan: &ScanBundle, cfg: &Config) -> Result<Box<dyn VlmPort>, CliError> {
    if spec == "mock" {
        let gt = scan.point_gt.clone().ok_or_else(|| {
            CliError::Validation("--labels mock needs a synthetic scan with point_gt.json".into())
        })?;
        return Ok(Box::new(MockVlm::new(gt)));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_string() };
        return Ok(Box::new(HttpVlm::new(&url, Duration::from_secs_f64(cfg.ports.timeout_s))));
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let raw: HashMap<String, String> = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (k, v) in raw {
        let id: u32 = k
            .parse()
            .map_err(|_| CliError::Validation(format!("{}: mask id {k:?} is not a number", path.display())))?;
        map.insert(id, v);
    }
    Ok(Box::new(FileVlm(map)))
}

/// `total` counts only masks that were sent to the labeler.
fn port_check(failures: usize, total: usize) -> Result<(), CliError> {
    if total > 0 && failures == total {
        return Err(CliError::Port(format!("labeler failed for all {total} masks")));
    }
    if failures > 0 {
        tracing::warn!("labeler failed for {failures} of {total} masks; labeled unknown");
    }
    Ok(())
}

// ---------------------------------------------------------------- scene-graph

pub struct SceneGraphArgs {
    pub scan: Option<PathBuf>,
    pub labels: String,
    pub out: Option<PathBuf>,
}

pub fn scene_graph(a: SceneGraphArgs, cfg: &Config) -> Result<(), CliError> {
    let piped = a.scan.as_deref().is_none_or(|p| p == Path::new("-"));
    let mut handoff = if piped { Handoff::read_stdin()? } else { Handoff::default() };
    let scan_dir = match &a.scan {
        Some(p) if p != Path::new("-") => p.clone(),
        _ => handoff
            .scan
            .clone()
            .ok_or_else(|| CliError::Validation("no --scan and no scan in the handoff".into()))?,
    };
    cfg.pipeline.masks.validate().map_err(CliError::Validation)?;
    cfg.pipeline.cluster.hdbscan.validate().map_err(CliError::Validation)?;
    let scan = load_scan(&scan_dir)?;
    let vlm = labeler(&a.labels, &scan, cfg)?;
    let out = run_pipeline(&scan, vlm.as_ref(), &cfg.pipeline);
    port_check(out.port_failures.len(), out.counts.s_m - out.never_visible.len())?;
    let summary = format!("{} total_time={:.2}s", out.counts, out.wall_seconds);
    let json = out.scene.to_json_pretty();
    match (&a.out, piped) {
        (Some(p), false) => {
            write_file(p, &json)?;
            println!("{summary}");
        }
        (None, false) => {
            print!("{json}");
            eprintln!("{summary}");
        }
        (out_path, true) => {
            let p = out_path.clone().unwrap_or_else(|| scan_dir.join("scene.json"));
            write_file(&p, &json)?;
            eprintln!("{summary}");
            handoff.scan = Some(scan_dir);
            handoff.pred = Some(p);
            handoff.print()?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- benchmark

pub struct BenchmarkArgs {
    pub gt: PathBuf,
    pub pred: Option<PathBuf>,
    pub embedder: Option<String>,
    pub out: Option<PathBuf>,
    pub method: String,
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    Ok(v)
}

fn load_pred(path: &Path) -> Result<SceneGraph, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    SceneGraph::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Pairs ground truth with predictions: single files pair directly,
/// directories pair by file stem.
fn benchmark_pairs(gt: &Path, pred: &Path) -> Result<Vec<(GroundTruthScene, SceneGraph)>, CliError> {
    if gt.is_file() && pred.is_file() {
        return Ok(vec![(load_ground_truth(gt)?, load_pred(pred)?)]);
    }
    if !(gt.is_dir() && pred.is_dir()) {
        return Err(CliError::Validation(format!(
            "--gt {} and --pred {} must both be files or both be directories",
            gt.display(),
            pred.display()
        )));
    }
    let mut pairs = Vec::new();
    for g in json_files(gt)? {
        let p = pred.join(g.file_name().expect("file"));
        if !p.exists() {
            return Err(CliError::Validation(format!("no prediction {} for {}", p.display(), g.display())));
        }
        pairs.push((load_ground_truth(&g)?, load_pred(&p)?));
    }
    for p in json_files(pred)? {
        if !gt.join(p.file_name().expect("file")).exists() {
            tracing::warn!("prediction {} has no ground truth; skipped", p.display());
        }
    }
    Ok(pairs)
}

pub fn benchmark(a: BenchmarkArgs, cfg: &Config) -> Result<(), CliError> {
    let (gt, pred) = if a.gt == Path::new("-") {
        let h = Handoff::read_stdin()?;
        let gt = h.gt.ok_or_else(|| CliError::Validation("handoff has no gt".into()))?;
        let pred = a
            .pred
            .clone()
            .or(h.pred)
            .ok_or_else(|| CliError::Validation("no --pred and no pred in the handoff".into()))?;
        (gt, pred)
    } else {
        let pred = a.pred.clone().ok_or_else(|| CliError::Usage("--pred is required unless --gt -".into()))?;
        (a.gt.clone(), pred)
    };
    let mut cfg = cfg.clone();
    match a.embedder.as_deref() {
        None => {}
        Some("trigram") => cfg.ports.embed_url = None,
        Some(s) => match s.strip_prefix("http:") {
            Some(u) => cfg.ports.embed_url = Some(if u.starts_with("//") { format!("http:{u}") } else { u.to_string() }),
            None => return Err(CliError::Usage(format!("--embedder must be trigram or http:<url>, got {s:?}"))),
        },
    }
    let pairs = benchmark_pairs(&gt, &pred)?;
    let report = evaluate(&pairs, cfg.embedder().as_ref(), &cfg.eval)?;
    let md = render_markdown(&[TableRow::from_report(&a.method, &report)]);
    if let Some(out) = &a.out {
        let text = match out.extension().and_then(|x| x.to_str()) {
            Some("json") => {
                let mut s = serde_json::to_string_pretty(&report)?;
                s.push('\n');
                s
            }
            Some("md") => md.clone(),
            _ => return Err(CliError::Usage("--out must end in .json or .md".into())),
        };
        write_file(out, &text)?;
    }
    print!("{md}");
    for s in &report.scenes {
        let recall = s.recall.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        let ss = s.mean_ss.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        println!("scene {}: tp={}/{} recall={recall} ss={ss}", s.scene_id, s.tp, s.n_gt);
    }
    println!("mean recall: {:.4}", report.aggregate.mean_recall);
    Ok(())
}

// ---------------------------------------------------------------- stages

#[derive(Serialize)]
struct FrameFit {
    frame: String,
    scale: Option<f64>,
    shift: Option<f64>,
    inliers: usize,
    densified: bool,
    invalid_before: usize,
    invalid_after: usize,
}

pub fn depth_enhance(scan_dir: &Path, out: Option<PathBuf>, cfg: &Config) -> Result<(), CliError> {
    let scan = load_scan(scan_dir)?;
    let out = out.unwrap_or_else(|| scan_dir.join(FRAMES_DIR));
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let max = cfg.pipeline.depth.max_range;
    // Densified output is clamped to the range, so `max` itself is valid.
    let invalid = |d: &[f32]| d.iter().filter(|&&v| !(v.is_finite() && v > 0.0 && (v as f64) <= max)).count();
    for (i, f) in scan.frames.iter().enumerate() {
        let (dense, fit) = metric_depth(f, &cfg.pipeline.depth);
        let stem = frame_stem(i);
        let path = out.join(format!("{stem}.metric.f32"));
        let bytes: Vec<u8> = dense.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        let usable = fit.filter(|f| !f.degenerate);
        let line = FrameFit {
            frame: stem,
            scale: usable.map(|f| f.scale),
            shift: usable.map(|f| f.shift),
            inliers: usable.map_or(0, |f| f.inlier_count),
            densified: usable.is_some(),
            invalid_before: invalid(&f.sensor_depth),
            invalid_after: invalid(&dense),
        };
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(())
}

fn masks_for(scan: &ScanBundle, masks: Option<&Path>) -> Result<Vec<Mask>, CliError> {
    match masks {
        Some(p) => Ok(read_masks(p)?),
        None => Ok(scan.masks_initial.clone()),
    }
}

pub fn refine(scan_dir: &Path, masks: Option<&Path>, out: Option<PathBuf>, cfg: &Config) -> Result<(), CliError> {
    cfg.pipeline.masks.validate().map_err(CliError::Validation)?;
    let scan = load_scan(scan_dir)?;
    let input = masks_for(&scan, masks)?;
    let refined = refine_masks(&input, &cfg.pipeline.masks);
    let summary = format!("S_I={} S_M={}", input.len(), refined.len());
    match out {
        Some(p) => {
            write_masks(&p, &refined)?;
            println!("{summary}");
        }
        None => {
            println!("{}", serde_json::to_string(&refined)?);
            eprintln!("{summary}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelLine {
    mask_id: u32,
    label: String,
    points: usize,
}

#[derive(Serialize)]
struct LabelReport {
    labels: Vec<String>,
    instances: Vec<LabelLine>,
    never_visible: Vec<u32>,
    port_failures: Vec<u32>,
}

pub fn label(scan_dir: &Path, masks: Option<&Path>, labels: &str, out: Option<PathBuf>, cfg: &Config) -> Result<(), CliError> {
    let scan = load_scan(scan_dir)?;
    let input = masks_for(&scan, masks)?;
    let vlm = labeler(labels, &scan, cfg)?;
    let depths = frame_depths(&scan, &cfg.pipeline);
    let mut registry = LabelRegistry::new();
    let res = label_masks(&input, &scan.cloud, &scan.frames, &depths, vlm.as_ref(), &mut registry, &cfg.pipeline.labeler);
    port_check(res.port_failures.len(), input.len() - res.never_visible.len())?;
    let report = LabelReport {
        labels: registry.labels().to_vec(),
        instances: res
            .instances
            .iter()
            .map(|i| LabelLine {
                mask_id: i.mask.id,
                label: i.label.clone(),
                points: i.mask.len(),
            })
            .collect(),
        never_visible: res.never_visible,
        port_failures: res.port_failures,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match out {
        Some(p) => write_file(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- authoring

fn load_scene(path: Option<&Path>) -> Result<SceneGraph, CliError> {
    match path {
        Some(p) => load_pred(p),
        None => Ok(garden_scene()),
    }
}

fn authoring(cfg: &Config) -> Result<Authoring, CliError> {
    let store = AssetStore::open(&cfg.assets.store_dir)
        .map_err(|e| CliError::Validation(format!("asset store {}: {e}", cfg.assets.store_dir.display())))?;
    store
        .install_presets()
        .map_err(|e| CliError::Validation(format!("installing presets: {e}")))?;
    Ok(Authoring {
        planner: cfg.planner(),
        store: Arc::new(store),
        gen: Arc::new(cfg.gen_pipeline()),
    })
}

pub struct AuthorArgs {
    pub scene: Option<PathBuf>,
    pub save: PathBuf,
    pub mode: Mode,
}

pub fn author(a: AuthorArgs, cfg: &Config) -> Result<(), CliError> {
    let scene = load_scene(a.scene.as_deref())?;
    let auth = authoring(cfg)?;
    let mut repl = Repl {
        session: Session::new(scene),
        authoring: &auth,
        brainstormer: cfg.brainstormer(),
        mode: a.mode,
        candidates: cfg.agents.candidates,
        save: Some(a.save),
    };
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut out = std::io::stdout().lock();
    repl.run(stdin.lock(), &mut out, interactive)?;
    out.flush().map_err(CliError::io("<stdout>"))
}

pub struct ServeArgs {
    pub load: Option<PathBuf>,
    pub save: Option<PathBuf>,
    pub viewer: Option<PathBuf>,
}

pub fn serve(a: ServeArgs, cfg: &Config) -> Result<(), CliError> {
    let scene = load_scene(a.load.as_deref())?;
    let auth = authoring(cfg)?;
    let mut state = arscene_service::AppState::new(Session::new(scene), auth, cfg.brainstormer(), cfg.agents.candidates);
    if let Some(p) = a.save {
        state = state.with_save(p);
    }
    let addr: std::net::SocketAddr = format!("{}:{}", cfg.service.bind, cfg.service.port)
        .parse()
        .map_err(|e| CliError::Validation(format!("bad bind address {}:{}: {e}", cfg.service.bind, cfg.service.port)))?;
    if let Some(v) = &a.viewer {
        if !v.is_dir() {
            return Err(CliError::Validation(format!("viewer directory {} not found", v.display())));
        }
    }
    let rt = tokio::runtime::Runtime::new().map_err(CliError::io("<runtime>"))?;
    rt.block_on(arscene_service::serve(addr, Arc::new(state), a.viewer, |bound| {
        eprintln!("listening on http://{bound}");
    }))
    .map_err(|e| CliError::Validation(format!("serving on {addr}: {e}")))
}

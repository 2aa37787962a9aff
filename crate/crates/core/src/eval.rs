//! Benchmarking predicted scene graphs against ground truth.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ingest::GroundTruthScene;
use crate::model::{Aabb3, SceneGraph};

/// Intersection over union of two boxes; 0 when the union has no volume.
pub fn aabb_iou(a: &Aabb3, b: &Aabb3) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Maximum-gain assignment of `min(rows, cols)` pairs, returned as
/// `(row, col)` sorted by row.
pub fn hungarian(gain: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = gain.len();
    let cols = gain.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    assert!(gain.iter().all(|r| r.len() == cols), "ragged gain matrix");
    // The solver needs rows <= cols; transpose otherwise.
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| {
        let g = if transposed { gain[j][i] } else { gain[i][j] };
        -g
    };

    // Shortest augmenting path with potentials, 1-based with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| {
            let (r, c) = (p[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt: usize,
    pub pred: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// True positives only.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Forbid sub-threshold pairs before matching instead of filtering after.
    pub pre_threshold: bool,
    /// Average label similarity over all true positives instead of per scene.
    pub pooled_ss: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            pre_threshold: false,
            pooled_ss: false,
        }
    }
}

pub fn match_boxes(gt: &[Aabb3], pred: &[Aabb3], cfg: &EvalConfig) -> MatchResult {
    let gain: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| {
                    let iou = aabb_iou(g, p);
                    if cfg.pre_threshold && iou < cfg.iou_threshold {
                        0.0
                    } else {
                        iou
                    }
                })
                .collect()
        })
        .collect();
    let mut result = MatchResult::default();
    let mut gt_hit = vec![false; gt.len()];
    let mut pred_hit = vec![false; pred.len()];
    for (g, p) in hungarian(&gain) {
        let iou = aabb_iou(&gt[g], &pred[p]);
        if iou >= cfg.iou_threshold {
            gt_hit[g] = true;
            pred_hit[p] = true;
            result.pairs.push(MatchedPair { gt: g, pred: p, iou });
        }
    }
    result.unmatched_gt = (0..gt.len()).filter(|&i| !gt_hit[i]).collect();
    result.unmatched_pred = (0..pred.len()).filter(|&i| !pred_hit[i]).collect();
    result
}

pub fn match_scene(gt: &GroundTruthScene, pred: &SceneGraph, cfg: &EvalConfig) -> MatchResult {
    let g: Vec<Aabb3> = gt.instances.iter().map(|i| i.aabb).collect();
    let p: Vec<Aabb3> = pred.real_objects.iter().map(|o| o.aabb).collect();
    match_boxes(&g, &p, cfg)
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("empty label")]
    EmptyLabel,
}

pub trait LabelEmbedder {
    /// Unit-norm vector of a fixed dimension.
    fn embed(&self, label: &str) -> Result<Vec<f64>, EmbedError>;
}

pub const TRIGRAM_DIM: usize = 512;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character-trigram bag hashed into [`TRIGRAM_DIM`] buckets.
pub fn trigram_embed(label: &str) -> Vec<f64> {
    let padded: Vec<char> = format!("#{label}#").chars().collect();
    let mut v = vec![0.0; TRIGRAM_DIM];
    for w in padded.windows(3) {
        let tri: String = w.iter().collect();
        v[(fnv1a(tri.as_bytes()) % TRIGRAM_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl LabelEmbedder for TrigramEmbedder {
    fn embed(&self, label: &str) -> Result<Vec<f64>, EmbedError> {
        if label.is_empty() {
            return Err(EmbedError::EmptyLabel);
        }
        Ok(trigram_embed(label))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity of two labels; identical labels score exactly 1.
pub fn label_similarity(e: &dyn LabelEmbedder, a: &str, b: &str) -> Result<f64, EmbedError> {
    if a == b {
        return Ok(1.0);
    }
    Ok(cosine(&e.embed(a)?, &e.embed(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub n_pred: usize,
    pub n_gt: usize,
    pub tp: usize,
    /// Absent for scenes without ground-truth instances.
    pub recall: Option<f64>,
    pub mean_ss: Option<f64>,
    pub pairs: Vec<ReportedPair>,
    /// Set when the scene is excluded from mean recall.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedPair {
    pub gt_label: String,
    pub pred_label: String,
    pub iou: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_total: usize,
    pub mean_recall: f64,
    pub mean_ss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneReport>,
    pub aggregate: Aggregate,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("benchmark has no scenes")]
    NoScenes,
    #[error("no scene has ground-truth instances")]
    NoGroundTruth,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores every (ground truth, prediction) pair and aggregates per scene.
pub fn evaluate(
    benchmark: &[(GroundTruthScene, SceneGraph)],
    embedder: &dyn LabelEmbedder,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if benchmark.is_empty() {
        return Err(EvalError::NoScenes);
    }
    let mut scenes = Vec::with_capacity(benchmark.len());
    let mut pooled = Vec::new();
    for (gt, pred) in benchmark {
        let m = match_scene(gt, pred, cfg);
        let mut pairs = Vec::with_capacity(m.pairs.len());
        for p in &m.pairs {
            let gl = &gt.instances[p.gt].label;
            let pl = &pred.real_objects[p.pred].label;
            let similarity = label_similarity(embedder, gl, pl)?;
            pairs.push(ReportedPair {
                gt_label: gl.clone(),
                pred_label: pl.clone(),
                iou: p.iou,
                similarity,
            });
        }
        let sims: Vec<f64> = pairs.iter().map(|p| p.similarity).collect();
        pooled.extend(&sims);
        let n_gt = gt.instances.len();
        scenes.push(SceneReport {
            scene_id: gt.scene_id.clone(),
            n_pred: pred.real_objects.len(),
            n_gt,
            tp: pairs.len(),
            recall: (n_gt > 0).then(|| pairs.len() as f64 / n_gt as f64),
            mean_ss: mean(&sims),
            pairs,
            flag: (n_gt == 0).then(|| "no ground-truth instances; excluded from mean recall".to_string()),
        });
    }
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let recalls: Vec<f64> = scenes.iter().filter_map(|s| s.recall).collect();
    let mean_recall = mean(&recalls).ok_or(EvalError::NoGroundTruth)?;
    let mean_ss = if cfg.pooled_ss {
        pooled.sort_by(f64::total_cmp);
        mean(&pooled)
    } else {
        let per_scene: Vec<f64> = scenes.iter().filter_map(|s| s.mean_ss).collect();
        mean(&per_scene)
    };
    Ok(EvalReport {
        aggregate: Aggregate {
            n_total: scenes.iter().map(|s| s.n_pred).sum(),
            mean_recall,
            mean_ss,
        },
        scenes,
    })
}

/// One row of the ablation table; `*_sd` are spreads across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub n: f64,
    pub n_sd: Option<f64>,
    pub mean_recall: f64,
    pub recall_sd: Option<f64>,
    pub mean_ss: Option<f64>,
    pub ss_sd: Option<f64>,
}

impl TableRow {
    pub fn from_report(method: &str, report: &EvalReport) -> Self {
        Self {
            method: method.to_string(),
            n: report.aggregate.n_total as f64,
            n_sd: None,
            mean_recall: report.aggregate.mean_recall,
            recall_sd: None,
            mean_ss: report.aggregate.mean_ss,
            ss_sd: None,
        }
    }

    /// Mean and sample standard deviation over repeated runs of one method.
    pub fn from_runs(method: &str, runs: &[EvalReport]) -> Self {
        let stats = |v: Vec<f64>| -> (f64, Option<f64>) {
            let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let sd = (v.len() > 1).then(|| {
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            });
            (m, sd)
        };
        let (n, n_sd) = stats(runs.iter().map(|r| r.aggregate.n_total as f64).collect());
        let (mean_recall, recall_sd) = stats(runs.iter().map(|r| r.aggregate.mean_recall).collect());
        let ss: Vec<f64> = runs.iter().filter_map(|r| r.aggregate.mean_ss).collect();
        let (mean_ss, ss_sd) = if ss.is_empty() {
            (None, None)
        } else {
            let (m, sd) = stats(ss);
            (Some(m), sd)
        };
        Self {
            method: method.to_string(),
            n,
            n_sd,
            mean_recall,
            recall_sd,
            mean_ss,
            ss_sd,
        }
    }
}

fn with_sd(value: String, sd: Option<String>) -> String {
    match sd {
        Some(sd) => format!("{value} (± {sd})"),
        None => value,
    }
}

/// Markdown table with columns Method | N | mean Recall | mean SS.
pub fn render_markdown(rows: &[TableRow]) -> String {
    let mut out = String::from("| Method | N | mean Recall | mean SS |\n|---|---|---|---|\n");
    for r in rows {
        let n = with_sd(format!("{:.0}", r.n), r.n_sd.map(|s| format!("{s:.0}")));
        let rec = with_sd(format!("{:.3}", r.mean_recall), r.recall_sd.map(|s| format!("{s:.3}")));
        let ss = match r.mean_ss {
            Some(v) => with_sd(format!("{v:.3}"), r.ss_sd.map(|s| format!("{s:.3}"))),
            None => "n/a".to_string(),
        };
        let _ = writeln!(out, "| {} | {n} | {rec} | {ss} |", r.method);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GroundTruthInstance;
    use crate::model::{RealObjectNode, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(min: [f64; 3], max: [f64; 3]) -> Aabb3 {
        Aabb3::new(Vec3::from_array(min), Vec3::from_array(max)).unwrap()
    }

    fn brute_force(gain: &[Vec<f64>]) -> f64 {
        fn go(gain: &[Vec<f64>], row: usize, used: &mut Vec<bool>, need: usize) -> f64 {
            if need == 0 || row == gain.len() {
                return if need == 0 { 0.0 } else { f64::NEG_INFINITY };
            }
            let mut best = if gain.len() - row > need {
                go(gain, row + 1, used, need)
            } else {
                f64::NEG_INFINITY
            };
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(gain[row][c] + go(gain, row + 1, used, need - 1));
                    used[c] = false;
                }
            }
            best
        }
        let cols = gain[0].len();
        go(gain, 0, &mut vec![false; cols], gain.len().min(cols))
    }

    #[test]
    fn iou_examples() {
        let unit = bx([0.0; 3], [1.0; 3]);
        assert_eq!(aabb_iou(&unit, &unit), 1.0);
        assert_eq!(aabb_iou(&unit, &bx([2.0; 3], [3.0; 3])), 0.0);
        let a = bx([0.0; 3], [2.0; 3]);
        let b = bx([1.0, 0.0, 0.0], [3.0, 2.0, 2.0]);
        assert!((aabb_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let flat = bx([0.0; 3], [0.0, 1.0, 1.0]);
        assert_eq!(aabb_iou(&flat, &flat), 0.0);
    }

    #[test]
    fn hungarian_examples() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(hungarian(&id), vec![(0, 0), (1, 1), (2, 2)]);
        let g = vec![vec![0.9, 0.1], vec![0.8, 0.7]];
        assert_eq!(hungarian(&g), vec![(0, 0), (1, 1)]);
        assert!(hungarian(&[]).is_empty());
    }

    #[test]
    fn hungarian_matches_brute_force_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let r = rng.random_range(1..=6);
            let c = rng.random_range(1..=6);
            let g: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let pairs = hungarian(&g);
            assert_eq!(pairs.len(), r.min(c));
            let total: f64 = pairs.iter().map(|&(i, j)| g[i][j]).sum();
            assert!((total - brute_force(&g)).abs() < 1e-12);
        }
    }

    #[test]
    fn trigram_examples() {
        let cos = |a: &str, b: &str| cosine(&trigram_embed(a), &trigram_embed(b));
        assert!((cos("bench", "bench") - 1.0).abs() < 1e-15);
        assert!(cos("road", "tree") < 0.05);
        assert!((cos("road", "roads") - 3.0 / 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fixture_trigrams_are_collision_free() {
        for w in ["road", "roads", "tree"] {
            let padded: Vec<char> = format!("#{w}#").chars().collect();
            let mut buckets: Vec<u64> = padded
                .windows(3)
                .map(|t| fnv1a(t.iter().collect::<String>().as_bytes()) % TRIGRAM_DIM as u64)
                .collect();
            let n = buckets.len();
            buckets.sort();
            buckets.dedup();
            assert_eq!(buckets.len(), n, "{w}");
        }
    }

    fn gt(id: &str, items: &[(&str, Aabb3)]) -> GroundTruthScene {
        GroundTruthScene {
            scene_id: id.into(),
            instances: items
                .iter()
                .map(|(l, b)| GroundTruthInstance { label: l.to_string(), aabb: *b })
                .collect(),
        }
    }

    fn pred(items: &[(&str, Aabb3)]) -> SceneGraph {
        SceneGraph::new(
            items
                .iter()
                .enumerate()
                .map(|(i, (l, b))| RealObjectNode { id: format!("r{i}"), label: l.to_string(), aabb: *b })
                .collect(),
        )
    }

    #[test]
    fn match_scene_two_of_three() {
        let a = bx([0.0; 3], [1.0; 3]);
        let b = bx([5.0, 0.0, 0.0], [6.0, 1.0, 1.0]);
        let c = bx([10.0, 0.0, 0.0], [11.0, 1.0, 1.0]);
        let g = gt("s", &[("a", a), ("b", b), ("c", c)]);
        // Shrinking x by 0.1 gives IoU 0.9; sliding x by 9/11 leaves overlap
        // 2/11 over union 20/11, IoU 0.1.
        let p = pred(&[
            ("a", bx(a.min().to_array(), [0.9, 1.0, 1.0])),
            ("b", bx(b.min().to_array(), [5.9, 1.0, 1.0])),
            ("c", c.translated(Vec3::new(9.0 / 11.0, 0.0, 0.0))),
        ]);
        assert!((aabb_iou(&c, &p.real_objects[2].aabb) - 0.1).abs() < 1e-12);
        let m = match_scene(&g, &p, &EvalConfig::default());
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.unmatched_gt, vec![2]);
        let empty = match_scene(&g, &pred(&[]), &EvalConfig::default());
        assert!(empty.pairs.is_empty());
        assert_eq!(empty.unmatched_gt.len(), 3);
    }

    #[test]
    fn evaluate_mean_recall_and_flags() {
        let a = bx([0.0; 3], [1.0; 3]);
        let b = bx([3.0, 0.0, 0.0], [4.0, 1.0, 1.0]);
        let s1 = (gt("s1", &[("tree", a)]), pred(&[("tree", a)]));
        let s2 = (gt("s2", &[("tree", a), ("bench", b)]), pred(&[("tree", a)]));
        let s3 = (gt("s3", &[]), pred(&[("rock", a)]));
        let r = evaluate(&[s1, s2, s3], &TrigramEmbedder, &EvalConfig::default()).unwrap();
        assert!((r.aggregate.mean_recall - 0.75).abs() < 1e-15);
        assert_eq!(r.aggregate.n_total, 3);
        assert!(r.scenes[2].flag.is_some());
        assert_eq!(r.aggregate.mean_ss, Some(1.0));
    }

    #[test]
    fn markdown_layout() {
        let row = TableRow {
            method: "Ours".into(),
            n: 49.0,
            n_sd: Some(1.0),
            mean_recall: 0.622,
            recall_sd: Some(0.087),
            mean_ss: Some(0.791),
            ss_sd: None,
        };
        assert_eq!(
            render_markdown(&[row]),
            "| Method | N | mean Recall | mean SS |\n|---|---|---|---|\n| Ours | 49 (± 1) | 0.622 (± 0.087) | 0.791 |\n"
        );
    }

    fn arb_box() -> impl Strategy<Value = Aabb3> {
        (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(0.0f64..3.0))
            .prop_map(|(min, ext)| bx(min, [min[0] + ext[0], min[1] + ext[1], min[2] + ext[2]]))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = aabb_iou(&a, &b);
            prop_assert_eq!(x, aabb_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn evaluate_order_invariant(boxes in prop::collection::vec(arb_box(), 1..6), shift in 0.0f64..0.5) {
            let labels = ["tree", "bench", "shed", "rock", "road", "sign"];
            let g: Vec<(&str, Aabb3)> = boxes.iter().enumerate().map(|(i, b)| (labels[i], *b)).collect();
            let p: Vec<(&str, Aabb3)> = g.iter().map(|(l, b)| (*l, b.translated(Vec3::new(shift, 0.0, 0.0)))).collect();
            let mut p_rev = p.clone();
            p_rev.reverse();
            let fwd = vec![(gt("a", &g), pred(&p)), (gt("b", &g[..1]), pred(&p[..1]))];
            let rev = vec![(gt("b", &g[..1]), pred(&p[..1])), (gt("a", &g), pred(&p_rev))];
            let cfg = EvalConfig::default();
            let r1 = evaluate(&fwd, &TrigramEmbedder, &cfg).unwrap();
            let r2 = evaluate(&rev, &TrigramEmbedder, &cfg).unwrap();
            prop_assert!((r1.aggregate.mean_recall - r2.aggregate.mean_recall).abs() < 1e-12);
            prop_assert_eq!(r1.aggregate.n_total, r2.aggregate.n_total);
            match (r1.aggregate.mean_ss, r2.aggregate.mean_ss) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}

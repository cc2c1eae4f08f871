//! Manifest-driven synthetic pipeline.
//!
//! Stages run in a fixed order over files in the output directory. After
//! every stage `run.json` is rewritten with the stage's config hash and the
//! content hashes of its inputs and outputs; a rerun skips any stage whose
//! config, inputs and outputs still match.

use std::io::Write;
use std::path::{Path, PathBuf};

use affect_geometry::geometry::{choice_rsm, rsm_correlation, vector_rsm, CorrelationMethod};
use affect_geometry::graph::{build_graph, communities, pagerank, prune_components, PruningCurve};
use affect_geometry::spose::{heldout_accuracy, predicted_odd, reproducibility, train, SplitSpec};
use affect_geometry::triplets::{
    feature_oracle, judge_all, position_bias, read_judgments, read_trials, write_judgments, write_trials,
    FeatureTable, TrialSampler,
};
use affect_geometry::{Embedding, Error, Judgment, JudgmentSource, Observation, Result, StimulusId};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::files::{create, load_observations, open, sha256_file, write_json};
use crate::manifest::{Manifest, OracleKind, Stage, SynthesizeConfig};
use crate::report::{self, num, Table};

pub const RUN_RECORD: &str = "run.json";

const TRUTH: &str = "truth.csv";
const TRIALS: &str = "trials.jsonl";
const JUDGMENTS: &str = "judgments.jsonl";
const EMBEDDING: &str = "embedding.csv";
const CHECKPOINT: &str = "embedding.ckpt";
const HISTORY: &str = "history.csv";
const VALIDATION: &str = "validation.json";
const PRUNING: &str = "pruning.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_sha256: String,
    pub status: StageStatus,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub name: String,
    pub manifest_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub ok: bool,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl RunRecord {
    pub fn load(out_dir: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(open(&out_dir.join(RUN_RECORD))?)?)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

/// Held-out evaluation written by the validate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub n_train: usize,
    pub n_heldout: usize,
    /// Held-out accuracy of each training run; entry 0 is the primary run.
    pub heldout_accuracy: Vec<f64>,
    /// Accuracy of each run against held-out labels replaced by a seeded
    /// uniform draw from the trial's members.
    pub shuffled_control: Vec<f64>,
    /// Agreement of the planted truth's inner-product choices with the
    /// held-out labels.
    pub truth_accuracy: f64,
    /// Per-run, per-dimension matched scores; empty with a single run.
    pub reproducibility: Vec<Vec<Option<f64>>>,
    pub position_frequencies: [f64; 3],
    pub position_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsmSummary {
    pub n_stimuli: usize,
    pub low_count_pairs: usize,
    pub spearman: f64,
    pub pearson: f64,
}

struct Ctx<'a> {
    m: &'a Manifest,
    out: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn run_paths(&self) -> Vec<String> {
        (0..self.m.train.runs).map(|r| format!("runs/run_{r}.csv")).collect()
    }

    fn split(&self) -> SplitSpec {
        SplitSpec { heldout_fraction: self.m.train.heldout_fraction, seed: self.m.stage_seed(Stage::Train) }
    }

    fn observations(&self) -> Result<Vec<Observation>> {
        load_observations(&self.path(TRIALS), &self.path(JUDGMENTS))
    }

    fn embedding(&self, name: &str) -> Result<Embedding> {
        Embedding::load(self.path(name))
    }
}

fn inputs(ctx: &Ctx, stage: Stage) -> Vec<String> {
    let mut v: Vec<String> = match stage {
        Stage::Synthesize | Stage::Sample => vec![],
        Stage::Judge => vec![TRUTH.into(), TRIALS.into()],
        Stage::Train => vec![TRIALS.into(), JUDGMENTS.into()],
        Stage::Validate => vec![TRUTH.into(), TRIALS.into(), JUDGMENTS.into()],
        Stage::Rsm | Stage::Graph => vec![TRIALS.into(), JUDGMENTS.into(), EMBEDDING.into()],
        Stage::Report => vec![VALIDATION.into(), HISTORY.into(), PRUNING.into()],
    };
    if stage == Stage::Validate {
        v.extend(ctx.run_paths());
    }
    v
}

fn relative(out: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(out).unwrap_or(p);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn hash_all(out: &Path, rel: &[String]) -> Result<Vec<FileHash>> {
    rel.iter()
        .map(|r| {
            let p = out.join(r);
            if !p.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("missing artifact {r} in {}", out.display()),
                )));
            }
            Ok(FileHash { path: r.clone(), sha256: sha256_file(&p)? })
        })
        .collect()
}

fn still_valid(out: &Path, prev: &StageRecord, config: &str, inputs: &[FileHash]) -> bool {
    prev.status != StageStatus::Failed
        && prev.config_sha256 == config
        && prev.inputs == inputs
        && prev.outputs.iter().all(|o| {
            let p = out.join(&o.path);
            p.is_file() && sha256_file(&p).is_ok_and(|h| h == o.sha256)
        })
}

/// Runs the listed stages in order on a pool of `manifest.threads` workers.
/// The run record is written even when a stage fails; the error is returned.
pub fn run(m: &Manifest, manifest_sha256: &str) -> Result<RunRecord> {
    let out = m.out_dir.as_path();
    std::fs::create_dir_all(out)?;
    let previous = match RunRecord::load(out) {
        Ok(r) => Some(r),
        Err(_) => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut record = RunRecord {
        tool: "affect-geometry".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        name: m.name.clone(),
        manifest_sha256: manifest_sha256.into(),
        seed: m.seed,
        threads: m.threads,
        ok: true,
        failed_stage: None,
        error: None,
        stages: Vec::new(),
    };
    let ctx = Ctx { m, out };
    let mut result = Ok(());
    for stage in Stage::ALL.into_iter().filter(|s| m.stages.contains(s)) {
        let config = m.stage_hash(stage);
        let attempt = (|| -> Result<StageRecord> {
            let ins = hash_all(out, &inputs(&ctx, stage))?;
            if let Some(prev) = previous.as_ref().and_then(|p| p.stage(stage)) {
                if still_valid(out, prev, &config, &ins) {
                    log::info!("{}: up to date", stage.name());
                    return Ok(StageRecord { status: StageStatus::Cached, ..prev.clone() });
                }
            }
            log::info!("{}: running", stage.name());
            let produced = pool.install(|| run_stage(&ctx, stage))?;
            let rel: Vec<String> = produced.iter().map(|p| relative(out, p)).collect();
            let outputs = hash_all(out, &rel)?;
            Ok(StageRecord { stage, config_sha256: config.clone(), status: StageStatus::Ran, inputs: ins, outputs })
        })();
        match attempt {
            Ok(rec) => record.stages.push(rec),
            Err(e) => {
                record.stages.push(StageRecord {
                    stage,
                    config_sha256: config,
                    status: StageStatus::Failed,
                    inputs: vec![],
                    outputs: vec![],
                });
                record.ok = false;
                record.failed_stage = Some(stage);
                record.error = Some(e.to_string());
                result = Err(e);
            }
        }
        write_json(&out.join(RUN_RECORD), &record)?;
        if result.is_err() {
            break;
        }
    }
    result.map(|_| record)
}

fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Synthesize => synthesize(ctx),
        Stage::Sample => sample(ctx),
        Stage::Judge => judge(ctx),
        Stage::Train => train_stage(ctx),
        Stage::Validate => validate(ctx),
        Stage::Rsm => rsm(ctx),
        Stage::Graph => graph(ctx),
        Stage::Report => report_stage(ctx),
    }
}

/// Sparse non-negative truth: each entry is nonzero with probability
/// `density`, drawn from `U(low, high)`. All-zero rows are redrawn.
pub fn planted_truth(cfg: &SynthesizeConfig, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < cfg.density {
            rng.random_range(cfg.low..=cfg.high)
        } else {
            0.0
        }
    };
    let mut x = Array2::zeros((cfg.n_stimuli, cfg.dim));
    for mut row in x.outer_iter_mut() {
        while row.iter().all(|&v| v == 0.0) {
            row.iter_mut().for_each(|v| *v = draw(&mut rng));
        }
    }
    x
}

fn synthesize(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let x = planted_truth(&ctx.m.synthesize, ctx.m.stage_seed(Stage::Synthesize));
    let p = ctx.path(TRUTH);
    std::fs::create_dir_all(ctx.out)?;
    FeatureTable::new(x)?.save(&p)?;
    Ok(vec![p])
}

fn sample(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let n = ctx.m.synthesize.n_stimuli;
    let trials = TrialSampler::new(n, ctx.m.sample.per_dyad, ctx.m.stage_seed(Stage::Sample))?;
    let p = ctx.path(TRIALS);
    write_trials(create(&p)?, trials, 4096)?;
    Ok(vec![p])
}

fn judge(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let table = FeatureTable::load(ctx.path(TRUTH))?;
    let trials = read_trials(open(&ctx.path(TRIALS))?)?;
    let tie = ctx.m.judge.tie;
    let judgments = match ctx.m.judge.oracle {
        OracleKind::Cosine => judge_all(&trials, |t| feature_oracle(t, &table, tie))?,
        OracleKind::Dot => {
            let truth = Embedding::new(table.values().clone())?;
            let n = truth.n_stimuli();
            judge_all(&trials, |t| {
                if let Some(s) = t.members().iter().find(|s| s.0 >= n) {
                    return Err(Error::InvalidArgument(format!("stimulus {s} outside truth of {n} rows")));
                }
                Judgment::for_trial(t, predicted_odd(&truth, t.members()), JudgmentSource::FeatureOracle)
            })?
        }
    };
    let p = ctx.path(JUDGMENTS);
    write_judgments(create(&p)?, &judgments)?;
    Ok(vec![p])
}

fn train_stage(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let obs = ctx.observations()?;
    let (train_set, heldout) = ctx.split().split(&obs);
    let n = ctx.m.synthesize.n_stimuli;
    let base = ctx.m.stage_seed(Stage::Train);
    let mut outputs = Vec::new();
    for (r, rel) in ctx.run_paths().iter().enumerate() {
        let mut cfg = ctx.m.train.spose.clone();
        cfg.seed = base.wrapping_add(r as u64);
        let outcome = train(n, &train_set, Some(&heldout), &cfg)?;
        let p = ctx.path(rel);
        write_embedding(&p, &outcome.embedding)?;
        outputs.push(p);
        if r == 0 {
            let p = ctx.path(EMBEDDING);
            write_embedding(&p, &outcome.embedding)?;
            let ck = ctx.path(CHECKPOINT);
            outcome.embedding.save_checkpoint(&ck)?;
            let mut t = Table::new(&["epoch", "loss", "heldout_accuracy"]);
            for s in &outcome.history {
                t.push(vec![s.epoch.to_string(), num(s.loss), s.heldout_accuracy.map(num).unwrap_or_default()]);
            }
            let h = ctx.path(HISTORY);
            t.write_csv(&h)?;
            outputs.extend([p, ck, h]);
        }
    }
    Ok(outputs)
}

pub fn write_embedding(path: &Path, e: &Embedding) -> Result<()> {
    let mut w = create(path)?;
    e.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Accuracy against labels redrawn uniformly from each trial's members.
pub fn shuffled_control(e: &Embedding, heldout: &[Observation], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffled: Vec<Observation> = heldout
        .iter()
        .map(|o| Observation { odd: o.members[rng.random_range(0..3)], ..*o })
        .collect();
    heldout_accuracy(e, &shuffled)
}

fn validate(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let obs = ctx.observations()?;
    let (train_set, heldout) = ctx.split().split(&obs);
    let truth = Embedding::new(FeatureTable::load(ctx.path(TRUTH))?.values().clone())?;
    let runs: Vec<Embedding> = ctx.run_paths().iter().map(|p| ctx.embedding(p)).collect::<Result<_>>()?;
    let seed = ctx.m.stage_seed(Stage::Validate);
    let heldout_acc = runs.iter().map(|e| heldout_accuracy(e, &heldout)).collect::<Result<Vec<_>>>()?;
    let shuffled = runs
        .iter()
        .enumerate()
        .map(|(r, e)| shuffled_control(e, &heldout, seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let repro = if runs.len() > 1 { reproducibility(&runs)?.scores } else { Vec::new() };
    let judgments = read_judgments(open(&ctx.path(JUDGMENTS))?)?;
    let bias = position_bias(&judgments)?;
    let v = Validation {
        n_train: train_set.len(),
        n_heldout: heldout.len(),
        heldout_accuracy: heldout_acc,
        shuffled_control: shuffled,
        truth_accuracy: heldout_accuracy(&truth, &heldout)?,
        reproducibility: repro,
        position_frequencies: bias.frequencies,
        position_p_value: bias.p_value,
    };
    let p = ctx.path(VALIDATION);
    write_json(&p, &v)?;
    Ok(vec![p])
}

fn rsm(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let obs = ctx.observations()?;
    let e = ctx.embedding(EMBEDDING)?;
    let k = ctx.m.rsm.subset.unwrap_or(e.n_stimuli());
    let subset: Vec<StimulusId> = (0..k).map(StimulusId).collect();
    let choice = choice_rsm(&obs, &subset, ctx.m.rsm.min_count)?;
    let rows = e.values().slice(ndarray::s![..k, ..]);
    let model = vector_rsm(rows, subset.clone())?;
    let summary = RsmSummary {
        n_stimuli: k,
        low_count_pairs: choice.low_count_pairs.len(),
        spearman: rsm_correlation(&choice.rsm, &model, CorrelationMethod::Spearman)?,
        pearson: rsm_correlation(&choice.rsm, &model, CorrelationMethod::Pearson)?,
    };
    let (a, b, c) = (ctx.path("rsm_choice.csv"), ctx.path("rsm_embedding.csv"), ctx.path("rsm_summary.json"));
    let mut w = create(&a)?;
    choice.rsm.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&b)?;
    model.write_csv(&mut w)?;
    w.flush()?;
    write_json(&c, &summary)?;
    Ok(vec![a, b, c])
}

fn graph(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.m.graph;
    let e = ctx.embedding(EMBEDDING)?;
    let g = build_graph(e.values().view(), cfg.threshold)?;
    let edges = ctx.path("graph_edges.csv");
    let mut w = create(&edges)?;
    g.write_csv(&mut w)?;
    w.flush()?;

    let comm = ctx.path("communities.csv");
    if g.edges.is_empty() {
        log::warn!("no component pair exceeds |r| > {}; community table left empty", cfg.threshold);
        Table::new(&["component", "community"]).write_csv(&comm)?;
    } else {
        let part = communities(&g, ctx.m.stage_seed(Stage::Graph))?;
        let mut w = create(&comm)?;
        part.write_csv(&mut w)?;
        w.flush()?;
    }

    let pr = pagerank(&g, &cfg.pagerank)?;
    let mut t = Table::new(&["component", "pagerank"]);
    for (i, v) in pr.iter().enumerate() {
        t.push(vec![i.to_string(), num(*v)]);
    }
    let prp = ctx.path("pagerank.csv");
    t.write_csv(&prp)?;

    let obs = ctx.observations()?;
    let (_, heldout) = ctx.split().split(&obs);
    let curve = prune_components(&e, &heldout, &cfg.prune_targets)?;
    let pp = ctx.path(PRUNING);
    write_json(&pp, &curve)?;
    Ok(vec![edges, comm, prp, pp])
}

/// Pruning plot: accuracy against the per-stimulus budget `k`, with the band
/// between the smallest and largest target fractions of full accuracy.
pub fn pruning_report(dir: &Path, curve: &PruningCurve) -> Result<Vec<PathBuf>> {
    let mut acc = Table::new(&["k", "accuracy"]);
    let points: Vec<(f64, f64)> = curve.accuracy_by_k.iter().enumerate().map(|(i, &a)| ((i + 1) as f64, a)).collect();
    for &(k, a) in &points {
        acc.push(vec![num(k), num(a)]);
    }
    let mut targets = Table::new(&["target", "threshold", "k", "mean_k", "reachable"]);
    let thresholds: Vec<f64> = curve.points.iter().map(|p| p.target * curve.full_accuracy).collect();
    for (p, t) in curve.points.iter().zip(&thresholds) {
        targets.push(vec![num(p.target), num(*t), p.k.to_string(), num(p.mean_k), p.reachable.to_string()]);
    }
    let band = (!thresholds.is_empty()).then(|| {
        let lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let svg = report::line_plot("Held-out accuracy after pruning", "components kept per stimulus", "accuracy", &points, band);
    let mut out = report::emit(dir, "pruning_accuracy", &svg, &acc)?;
    let tp = dir.join("pruning_targets.csv");
    targets.write_csv(&tp)?;
    out.push(tp);
    Ok(out)
}

pub fn read_pruning(path: &Path) -> Result<PruningCurve> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn report_stage(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let dir = ctx.path("reports");
    let v: Validation = serde_json::from_reader(open(&ctx.path(VALIDATION))?)?;
    let mut out = Vec::new();

    let groups = vec![
        ("held-out".to_string(), v.heldout_accuracy.clone()),
        ("shuffled control".to_string(), v.shuffled_control.clone()),
    ];
    let (svg, runs, summary) = report::bar_chart("Held-out choice accuracy", "accuracy", &groups)?;
    out.extend(report::emit(&dir, "accuracy", &svg, &runs)?);
    let sp = dir.join("accuracy_summary.csv");
    summary.write_csv(&sp)?;
    out.push(sp);

    if !v.reproducibility.is_empty() {
        let rep = affect_geometry::spose::ReproducibilityReport { scores: v.reproducibility.clone() };
        let (svg, table) = report::repro_dot_plot(&rep);
        out.extend(report::emit(&dir, "reproducibility", &svg, &table)?);
    }

    let history = read_history(&ctx.path(HISTORY))?;
    let mut t = Table::new(&["epoch", "loss"]);
    for &(e, l) in &history {
        t.push(vec![num(e), num(l)]);
    }
    let svg = report::line_plot("Training loss", "epoch", "loss", &history, None);
    out.extend(report::emit(&dir, "loss", &svg, &t)?);

    out.extend(pruning_report(&dir, &read_pruning(&ctx.path(PRUNING))?)?);
    Ok(out)
}

fn read_history(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingest { line, message: e.to_string() })?;
        let field = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Ingest { line, message: "expected epoch and loss".into() })
        };
        out.push((field(0)?, field(1)?));
    }
    Ok(out)
}

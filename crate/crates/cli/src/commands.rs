//! Subcommand definitions and their execution.

use std::io::Write;
use std::path::{Path, PathBuf};

use affect_geometry::corpus::RatingKind;
use affect_geometry::geometry::{
    choice_rsm, classify_components, corrected_consistency, dominant_category, label_components,
    nearest_centroid, vector_rsm, CentroidConfig, Rsm, RsmKind,
};
use affect_geometry::graph::{build_graph, communities, pagerank, prune_components, AffectGraph, PageRankConfig};
use affect_geometry::neuro::{
    encode, log_grid, make_volume, make_volume_n, map_compare, read_map_csv, searchlight, searchlight_null,
    significance, write_map_csv, EncodeConfig, Planting, Region, SyntheticVolume, VoxelValues, SIGNIFICANCE_METHOD,
};
use affect_geometry::spose::{
    dimensionality_scan, heldout_accuracy, reproducibility, train, L1Mode, Optimizer, ReproducibilityReport,
    SplitSpec,
};
use affect_geometry::triplets::{
    count_trials, judge_all, position_bias, read_judgments, read_trials, sample_validation_trials, write_judgments,
    write_trials, CosineOracle, FeatureOracle, FeatureTable, TrialSampler,
};
use affect_geometry::{
    Embedding, Error, Observation, RatingMatrix, Result, StimulusId, TieRule, TrainConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;

use crate::files::{create, load_observations, open, parse_list, parse_subset, sha256_file, write_json};
use crate::manifest::Manifest;
use crate::pipeline::{self, pruning_report, read_pruning, shuffled_control, write_embedding};
use crate::report::{self, num, Table};

#[derive(Debug, Parser)]
#[command(name = "affect-geometry", version, about = "Triplet judgments, SPoSE embeddings and representational geometry")]
pub struct Cli {
    /// Run manifest (JSON). Its seed, threads and out_dir act as defaults.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: manifest value, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs not given an explicit path.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample odd-one-out trials (or count them with --dry-run).
    SampleTrials(SampleArgs),
    /// Judge trials with a deterministic oracle.
    Judge(JudgeArgs),
    /// Position frequencies of the odd choice and a uniformity test.
    BiasReport {
        #[arg(long)]
        judgments: PathBuf,
    },
    /// Train a sparse positive similarity embedding.
    TrainSpose(TrainArgs),
    /// Held-out accuracy of an embedding, with a shuffled-label control.
    Validate {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Held-out judgments.
        #[arg(long)]
        heldout: PathBuf,
    },
    /// Matched-dimension reproducibility across embeddings in a directory.
    Repro {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out accuracy for several embedding sizes.
    DimScan {
        #[arg(long, default_value = "10,20,30,40")]
        dims: String,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Choice-probability RSM from judgments, or cosine RSM from an embedding.
    Rsm {
        #[arg(long, requires = "judgments")]
        trials: Option<PathBuf>,
        #[arg(long, requires = "trials")]
        judgments: Option<PathBuf>,
        #[arg(long, conflicts_with = "trials")]
        embedding: Option<PathBuf>,
        /// Inline list, `lo..hi` range or file of ids (default: all stimuli).
        #[arg(long)]
        subset: Option<String>,
        #[arg(long, default_value_t = 1)]
        min_count: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reliability-corrected consistency between two judgment logs.
    Consistency {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        model_log: PathBuf,
        #[arg(long)]
        human_log: PathBuf,
        /// Trials for the human log when they differ from --trials.
        #[arg(long)]
        human_trials: Option<PathBuf>,
        #[arg(long)]
        subset: String,
    },
    /// Leave-one-out nearest-centroid classification of stimuli.
    Centroid {
        #[arg(long)]
        embedding: PathBuf,
        /// CSV `stimulus_id,label` with integer labels.
        #[arg(long, required_unless_present = "cats", conflicts_with = "cats")]
        labels: Option<PathBuf>,
        /// Category ratings; each stimulus takes its highest-rated category.
        #[arg(long)]
        cats: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        topk: usize,
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long, default_value_t = 10)]
        min_members: usize,
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label embedding components by correlated rating terms.
    Label {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        cats: PathBuf,
        #[arg(long)]
        dims: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a voxel volume with planted model signal.
    MakeVolume(MakeVolumeArgs),
    /// Voxel-wise ridge encoding with nested cross-validation.
    Encode {
        #[arg(long)]
        volume: PathBuf,
        /// Feature CSV keyed by stimulus_id (an embedding CSV works).
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value_t = 5)]
        outer: usize,
        #[arg(long, default_value_t = 6)]
        inner: usize,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spearman searchlight RSA against a model RSM.
    Searchlight {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        rsm: PathBuf,
        #[arg(long, default_value_t = 3)]
        radius: usize,
        /// Permutations for voxel p-values (0 skips the test).
        #[arg(long, default_value_t = 0)]
        permutations: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voxel-wise comparison of two maps.
    CompareMaps {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Component correlation graph of an embedding.
    Graph {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Louvain communities of a graph edge list.
    Communities {
        #[arg(long)]
        graph: PathBuf,
        /// Node count when trailing nodes are isolated.
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PageRank centrality of a graph edge list.
    Pagerank {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long, default_value_t = 0.85)]
        damping: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Components each stimulus needs to keep a fraction of held-out accuracy.
    Prune {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Held-out judgments.
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, default_value = "0.95,0.99")]
        targets: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the stages listed in --manifest.
    Run,
    /// Render plots and tables from existing artifacts into <out-dir>/reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Stimulus pool size.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub per_dyad: usize,
    /// Print counts without generating trials.
    #[arg(long)]
    pub dry_run: bool,
    /// Validation mode: prototype ids (list, range or file).
    #[arg(long, requires = "fillers")]
    pub prototypes: Option<String>,
    /// Validation mode: fillers per prototype dyad.
    #[arg(long, requires = "prototypes")]
    pub fillers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Rating,
    Feature,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TieArg {
    Lowest,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Category,
    Dimension,
}

impl From<KindArg> for RatingKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Category => RatingKind::Category,
            KindArg::Dimension => RatingKind::Dimension,
        }
    }
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long, value_enum)]
    pub oracle: OracleArg,
    #[arg(long)]
    pub trials: PathBuf,
    /// Rating matrix for the rating oracle.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "category")]
    pub kind: KindArg,
    /// Dimension ratings appended to category ratings before judging.
    #[arg(long)]
    pub dims: Option<PathBuf>,
    /// Feature table for the feature oracle.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lowest")]
    pub tie: TieArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub judgments: PathBuf,
    /// Stimulus count (default: one past the largest id in the trials).
    #[arg(long)]
    pub n_stimuli: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0025)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub heldout_fraction: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Soft-threshold instead of subgradient + clipping.
    #[arg(long)]
    pub proximal: bool,
    /// Embedding CSV; a checkpoint and history are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeVolumeArgs {
    /// Grid size `x,y,z`.
    #[arg(long, default_value = "16,16,16")]
    pub shape: String,
    /// `model=PATH,box=x0:y0:z0:x1:y1:z1` (half-open) or
    /// `model=PATH,sphere=cx:cy:cz:radius`. Repeatable.
    #[arg(long)]
    pub plant: Vec<String>,
    /// Stimulus count for a volume without plantings.
    #[arg(long)]
    pub n_stimuli: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct ReportArgs {
    /// Reproducibility table (`dimension,run,score`) from `repro`.
    #[arg(long)]
    pub repro: Option<PathBuf>,
    /// Voxel map CSV (`x,y,z,value`).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Pruning curve JSON from `prune`.
    #[arg(long)]
    pub pruning: Option<PathBuf>,
    /// Per-run values CSV (`group,value`) for a bar chart.
    #[arg(long)]
    pub bars: Option<PathBuf>,
}

/// Seed, threads and output directory after applying flag overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Settings {
    fn out(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(default))
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let manifest = cli.manifest.as_deref().map(Manifest::load).transpose()?;
    let settings = Settings {
        seed: cli.seed.or(manifest.as_ref().map(|m| m.seed)).unwrap_or(0),
        threads: cli.threads.or(manifest.as_ref().map(|m| m.threads)),
        out_dir: cli
            .out_dir
            .clone()
            .or(manifest.as_ref().map(|m| m.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    if settings.threads == Some(0) {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    if let Command::Run = cli.command {
        let path = cli
            .manifest
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("run needs --manifest".into()))?;
        let mut m = manifest.expect("manifest loaded above");
        m.seed = settings.seed;
        m.out_dir = settings.out_dir;
        if let Some(t) = settings.threads {
            m.threads = t;
        }
        let record = pipeline::run(&m, &sha256_file(path)?)?;
        return print_json(&serde_json::json!({
            "name": record.name,
            "stages": record.stages.iter().map(|s| (s.stage.name(), s.status)).collect::<Vec<_>>(),
        }));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = settings.threads {
        pool = pool.num_threads(t);
    }
    pool.build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
        .install(|| dispatch(cli.command, &settings))
}

fn dispatch(command: Command, s: &Settings) -> Result<()> {
    match command {
        Command::SampleTrials(a) => sample_trials(a, s),
        Command::Judge(a) => judge(a, s),
        Command::BiasReport { judgments } => {
            let b = position_bias(&read_judgments(open(&judgments)?)?)?;
            print_json(&serde_json::json!({
                "counts": b.counts,
                "frequencies": b.frequencies,
                "chi_square": b.chi_square,
                "p_value": b.p_value,
            }))
        }
        Command::TrainSpose(a) => train_spose(a, s),
        Command::Validate { embedding, trials, heldout } => {
            let e = Embedding::load(&embedding)?;
            let obs = load_observations(&trials, &heldout)?;
            print_json(&serde_json::json!({
                "n": obs.len(),
                "accuracy": heldout_accuracy(&e, &obs)?,
                "shuffled_control": shuffled_control(&e, &obs, s.seed)?,
            }))
        }
        Command::Repro { runs, out } => repro(&runs, &s.out(&out, "reproducibility.csv")),
        Command::DimScan { dims, train } => dim_scan(&dims, train, s),
        Command::Rsm { trials, judgments, embedding, subset, min_count, out } => {
            let out = s.out(&out, "rsm.csv");
            let rsm = match (trials, judgments, embedding) {
                (Some(t), Some(j), None) => {
                    let obs = load_observations(&t, &j)?;
                    let subset = match subset {
                        Some(sub) => parse_subset(&sub)?,
                        None => all_ids(&obs),
                    };
                    let c = choice_rsm(&obs, &subset, min_count)?;
                    if !c.low_count_pairs.is_empty() {
                        log::warn!("{} pairs have fewer than 3 co-occurrences", c.low_count_pairs.len());
                    }
                    c.rsm
                }
                (None, None, Some(e)) => {
                    let e = Embedding::load(&e)?;
                    let subset = match subset {
                        Some(sub) => parse_subset(&sub)?,
                        None => (0..e.n_stimuli()).map(StimulusId).collect(),
                    };
                    let mut rows = Array2::zeros((subset.len(), e.dim()));
                    for (i, id) in subset.iter().enumerate() {
                        if id.0 >= e.n_stimuli() {
                            return Err(Error::InvalidArgument(format!("stimulus {id} outside embedding")));
                        }
                        rows.row_mut(i).assign(&e.row(*id));
                    }
                    vector_rsm(rows.view(), subset)?
                }
                _ => return Err(Error::InvalidArgument("give --trials and --judgments, or --embedding".into())),
            };
            let mut w = create(&out)?;
            rsm.write_csv(&mut w)?;
            w.flush()?;
            print_json(&serde_json::json!({ "size": rsm.size(), "out": out }))
        }
        Command::Consistency { trials, model_log, human_log, human_trials, subset } => {
            let model = load_observations(&trials, &model_log)?;
            let human = load_observations(human_trials.as_deref().unwrap_or(&trials), &human_log)?;
            print_json(&corrected_consistency(&model, &human, &parse_subset(&subset)?, s.seed)?)
        }
        Command::Centroid { embedding, labels, cats, topk, permutations, min_members, standardize, out } => {
            let e = Embedding::load(&embedding)?;
            let labels = match (labels, cats) {
                (Some(p), _) => read_labels(&p, e.n_stimuli())?,
                (None, Some(c)) => dominant_category(&RatingMatrix::load(c, RatingKind::Category)?)?
                    .iter()
                    .map(|d| d.category)
                    .collect(),
                (None, None) => unreachable!("clap requires one label source"),
            };
            let cfg = CentroidConfig { k: topk, min_members, standardize, permutations, seed: s.seed };
            let r = nearest_centroid(e.values().view(), &labels, &cfg)?;
            write_json(&s.out(&out, "centroid.json"), &r)?;
            print_json(&serde_json::json!({
                "topk": r.topk,
                "n_classified": r.n_classified,
                "null_mean": r.null_mean,
                "null_band": r.null_band,
                "chance": r.chance,
            }))
        }
        Command::Label { embedding, cats, dims, out } => label(&embedding, &cats, &dims, &s.out(&out, "labels.csv")),
        Command::MakeVolume(a) => make_volume_cmd(a, s),
        Command::Encode { volume, embedding, outer, inner, grid, out } => {
            let vol = SyntheticVolume::load(&volume)?;
            let features = FeatureTable::load(&embedding)?;
            let cfg = EncodeConfig { outer_folds: outer, inner_folds: inner, grid: log_grid(grid, 1e-3, 1e3), ..Default::default() };
            let r = encode(&vol, features.values().view(), &cfg)?;
            let out = s.out(&out, "encoding.csv");
            let mut w = create(&out)?;
            write_map_csv(&r, &mut w)?;
            w.flush()?;
            let defined: Vec<f64> = r.r.iter().flatten().copied().collect();
            print_json(&serde_json::json!({
                "voxels": r.r.len(),
                "undefined": r.undefined_voxels().len(),
                "mean_r": affect_geometry::stats::mean(&defined),
                "out": out,
            }))
        }
        Command::Searchlight { volume, rsm, radius, permutations, alpha, out } => {
            let vol = SyntheticVolume::load(&volume)?;
            let model = Rsm::read_csv(open(&rsm)?, RsmKind::ChoiceProbability)?;
            let subset = model.ids().to_vec();
            let map = searchlight(&vol, &model, radius, &subset)?;
            let out = s.out(&out, "searchlight.csv");
            let mut w = create(&out)?;
            write_map_csv(&map, &mut w)?;
            w.flush()?;
            let mut summary = serde_json::json!({
                "peak": map.peak().map(|(i, v)| (affect_geometry::neuro::voxel_coords(map.shape, i), v)),
                "skipped": map.skipped.len(),
                "out": out,
            });
            if permutations > 0 {
                let null = searchlight_null(&vol, &model, radius, &subset, permutations, s.seed)?;
                let sig = significance(&map.values, &null, alpha)?;
                summary["method"] = SIGNIFICANCE_METHOD.into();
                summary["significant"] = sig.significant.iter().filter(|&&b| b).count().into();
                let sig_out = out.with_extension("significance.json");
                write_json(&sig_out, &sig)?;
            }
            print_json(&summary)
        }
        Command::CompareMaps { a, b, out } => {
            let ma = read_map_csv(open(&a)?)?;
            let mb = read_map_csv(open(&b)?)?;
            let c = map_compare(&ma, &mb)?;
            let out = s.out(&out, "map_diff.csv");
            let mut w = create(&out)?;
            write_map_csv(&VoxelValues { shape: ma.shape, values: c.diff.clone() }, &mut w)?;
            w.flush()?;
            print_json(&serde_json::json!({
                "n_compared": c.n_compared,
                "fraction_a": c.fraction_a,
                "mean_a": c.mean_a,
                "mean_b": c.mean_b,
                "ratio": c.ratio,
                "out": out,
            }))
        }
        Command::Graph { embedding, threshold, out } => {
            let e = Embedding::load(&embedding)?;
            let g = build_graph(e.values().view(), threshold)?;
            let out = s.out(&out, "graph_edges.csv");
            let mut w = create(&out)?;
            g.write_csv(&mut w)?;
            w.flush()?;
            print_json(&serde_json::json!({
                "nodes": g.n_nodes,
                "edges": g.edges.len(),
                "isolated": g.isolated(),
                "constant": g.constant,
                "out": out,
            }))
        }
        Command::Communities { graph, nodes, out } => {
            let g = AffectGraph::read_csv(open(&graph)?, nodes, 0.0)?;
            let p = communities(&g, s.seed)?;
            let out = s.out(&out, "communities.csv");
            let mut w = create(&out)?;
            p.write_csv(&mut w)?;
            w.flush()?;
            print_json(&serde_json::json!({
                "communities": p.groups(),
                "modularity": p.modularity,
                "isolated": p.isolated,
            }))
        }
        Command::Pagerank { graph, nodes, damping, out } => {
            let g = AffectGraph::read_csv(open(&graph)?, nodes, 0.0)?;
            let pr = pagerank(&g, &PageRankConfig { damping, ..Default::default() })?;
            let mut t = Table::new(&["component", "pagerank"]);
            for (i, v) in pr.iter().enumerate() {
                t.push(vec![i.to_string(), num(*v)]);
            }
            t.write_csv(&s.out(&out, "pagerank.csv"))?;
            print_json(&pr)
        }
        Command::Prune { embedding, trials, judgments, targets, out } => {
            let e = Embedding::load(&embedding)?;
            let obs = load_observations(&trials, &judgments)?;
            let curve = prune_components(&e, &obs, &parse_list(&targets)?)?;
            let out = s.out(&out, "pruning.csv");
            let mut w = create(&out)?;
            curve.write_csv(&mut w)?;
            w.flush()?;
            write_json(&out.with_extension("json"), &curve)?;
            print_json(&curve)
        }
        Command::Run => unreachable!("handled before dispatch"),
        Command::Report(a) => report_cmd(a, s),
    }
}

fn all_ids(obs: &[Observation]) -> Vec<StimulusId> {
    let n = obs.iter().flat_map(|o| o.members).map(|m| m.0 + 1).max().unwrap_or(0);
    (0..n).map(StimulusId).collect()
}

fn sample_trials(a: SampleArgs, s: &Settings) -> Result<()> {
    let out = s.out(&a.out, "trials.jsonl");
    if let (Some(p), Some(f)) = (&a.prototypes, a.fillers) {
        let protos = parse_subset(p)?;
        if a.dry_run {
            let dyads = (protos.len() * protos.len().saturating_sub(1) / 2) as u64;
            return print_json(&serde_json::json!({ "dyads": dyads, "trials": dyads * f as u64 }));
        }
        let trials = sample_validation_trials(&protos, f, a.n, s.seed)?;
        let n = write_trials(create(&out)?, trials, 4096)?;
        return print_json(&serde_json::json!({ "trials": n, "out": out }));
    }
    let counts = count_trials(a.n, a.per_dyad)?;
    if !a.dry_run {
        write_trials(create(&out)?, TrialSampler::new(a.n, a.per_dyad, s.seed)?, 4096)?;
    }
    print_json(&serde_json::json!({
        "dyads": counts.dyads,
        "trials": counts.trials,
        "out": (!a.dry_run).then_some(out),
    }))
}

fn judge(a: JudgeArgs, s: &Settings) -> Result<()> {
    let trials = read_trials(open(&a.trials)?)?;
    let tie = match a.tie {
        TieArg::Lowest => TieRule::LowestIndexPair,
        TieArg::Random => TieRule::SeededRandom { seed: s.seed },
    };
    let judgments = match a.oracle {
        OracleArg::Rating => {
            let path = a.ratings.ok_or_else(|| Error::InvalidArgument("rating oracle needs --ratings".into()))?;
            let m = RatingMatrix::load(path, a.kind.into())?;
            let oracle = match a.dims {
                Some(d) => {
                    let dims = RatingMatrix::load(d, RatingKind::Dimension)?;
                    CosineOracle::from_rows(&RatingMatrix::concat(&m, &dims)?, tie)?
                }
                None => CosineOracle::from_ratings(&m, tie)?,
            };
            judge_all(&trials, |t| oracle.judge(t))?
        }
        OracleArg::Feature => {
            let path = a.features.ok_or_else(|| Error::InvalidArgument("feature oracle needs --features".into()))?;
            let table = FeatureTable::load(path)?;
            let oracle = FeatureOracle { table: &table, tie };
            judge_all(&trials, |t| oracle.judge(t))?
        }
    };
    let out = s.out(&a.out, "judgments.jsonl");
    let n = write_judgments(create(&out)?, &judgments)?;
    print_json(&serde_json::json!({ "judgments": n, "out": out }))
}

fn train_config(a: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        dim: a.dim,
        lambda: a.lambda,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        patience: a.patience,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        l1_mode: if a.proximal { L1Mode::Proximal } else { L1Mode::Subgradient },
        ..TrainConfig::default()
    }
}

fn split_observations(a: &TrainArgs, seed: u64) -> Result<(usize, Vec<Observation>, Vec<Observation>)> {
    let obs = load_observations(&a.trials, &a.judgments)?;
    let n = a.n_stimuli.unwrap_or_else(|| all_ids(&obs).len());
    let (train_set, heldout) = SplitSpec { heldout_fraction: a.heldout_fraction, seed }.split(&obs);
    Ok((n, train_set, heldout))
}

fn train_spose(a: TrainArgs, s: &Settings) -> Result<()> {
    let cfg = train_config(&a, s.seed);
    let (n, train_set, heldout) = split_observations(&a, s.seed)?;
    let outcome = train(n, &train_set, Some(&heldout), &cfg)?;
    let out = s.out(&a.out, "embedding.csv");
    write_embedding(&out, &outcome.embedding)?;
    outcome.embedding.save_checkpoint(out.with_extension("ckpt"))?;
    let mut t = Table::new(&["epoch", "loss", "heldout_accuracy"]);
    for e in &outcome.history {
        t.push(vec![e.epoch.to_string(), num(e.loss), e.heldout_accuracy.map(num).unwrap_or_default()]);
    }
    t.write_csv(&sibling(&out, "history.csv"))?;
    let acc = if heldout.is_empty() { None } else { Some(heldout_accuracy(&outcome.embedding, &heldout)?) };
    print_json(&serde_json::json!({
        "epochs": outcome.history.len(),
        "stopped_early": outcome.stopped_early,
        "heldout_accuracy": acc,
        "out": out,
    }))
}

/// `dir/stem_suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}"))
}

fn repro(dir: &Path, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "ckpt")));
    paths.sort();
    let runs: Vec<Embedding> = paths.iter().map(Embedding::load).collect::<Result<_>>()?;
    let r = reproducibility(&runs)?;
    repro_table(&r).write_csv(out)?;
    print_json(&serde_json::json!({
        "runs": paths,
        "mean_by_dimension": r.mean_by_dimension(),
        "out": out,
    }))
}

fn repro_table(r: &ReproducibilityReport) -> Table {
    report::repro_dot_plot(r).1
}

fn dim_scan(dims: &str, a: TrainArgs, s: &Settings) -> Result<()> {
    let dims: Vec<usize> = parse_list(dims)?;
    let (n, train_set, heldout) = split_observations(&a, s.seed)?;
    let scan = dimensionality_scan(n, &train_set, &heldout, &dims, &train_config(&a, s.seed))?;
    let mut t = Table::new(&["dim", "heldout_accuracy"]);
    for (d, acc) in &scan {
        t.push(vec![d.to_string(), num(*acc)]);
    }
    t.write_csv(&s.out(&a.out, "dim_scan.csv"))?;
    print_json(&scan)
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut labels = vec![None; n];
    for (i, rec) in rd.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingest { line, message: e.to_string() })?;
        let field = |k: usize| -> Result<usize> {
            rec.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Ingest { line, message: "expected stimulus_id,label integers".into() })
        };
        let (id, label) = (field(0)?, field(1)?);
        match labels.get_mut(id) {
            Some(slot @ None) => *slot = Some(label),
            Some(Some(_)) => return Err(Error::Ingest { line, message: format!("stimulus {id} labeled twice") }),
            None => return Err(Error::Ingest { line, message: format!("stimulus {id} outside embedding of {n}") }),
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Schema(format!("stimulus {i} has no label"))))
        .collect()
}

fn label(embedding: &Path, cats: &Path, dims: &Path, out: &Path) -> Result<()> {
    let e = Embedding::load(embedding)?;
    let cats = RatingMatrix::load(cats, RatingKind::Category)?;
    let dims = RatingMatrix::load(dims, RatingKind::Dimension)?;
    let labels = label_components(e.values().view(), &cats, &dims)?;
    let tags = classify_components(&labels);
    let mut t = Table::new(&["component", "term1", "r1", "term2", "r2", "term3", "r3", "class"]);
    for (l, tag) in labels.iter().zip(&tags) {
        let mut row = vec![l.component.to_string()];
        for k in 0..3 {
            match l.terms.get(k) {
                Some(term) => row.extend([term.label(), num(term.r)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(tag.class.to_string());
        t.push(row);
    }
    t.write_csv(out)?;
    print_json(&serde_json::json!({ "components": labels.len(), "out": out }))
}

fn parse_coords<const N: usize>(s: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad coordinate {p:?}: {e}"))))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::InvalidArgument(format!("expected {N} `:`-separated values in {s:?}")))
}

fn as_voxel(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("voxel coordinate {v} is not a non-negative integer")))
    }
}

/// Parses one `--plant` value into a model path and a region.
pub fn parse_plant(s: &str) -> Result<(PathBuf, Region)> {
    let (mut model, mut region) = (None, None);
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value in {part:?}")))?;
        match k.trim() {
            "model" => model = Some(PathBuf::from(v.trim())),
            "box" => {
                let c: [f64; 6] = parse_coords(v)?;
                let c: Vec<usize> = c.iter().map(|&x| as_voxel(x)).collect::<Result<_>>()?;
                region = Some(Region::Box { min: [c[0], c[1], c[2]], max: [c[3], c[4], c[5]] });
            }
            "sphere" => {
                let c: [f64; 4] = parse_coords(v)?;
                let center = [as_voxel(c[0])?, as_voxel(c[1])?, as_voxel(c[2])?];
                region = Some(Region::Sphere { center, radius: c[3] });
            }
            other => return Err(Error::InvalidArgument(format!("unknown plant key {other:?}"))),
        }
    }
    match (model, region) {
        (Some(m), Some(r)) => Ok((m, r)),
        _ => Err(Error::InvalidArgument(format!("plant {s:?} needs model= and box= or sphere="))),
    }
}

fn make_volume_cmd(a: MakeVolumeArgs, s: &Settings) -> Result<()> {
    let shape: Vec<usize> = parse_list(&a.shape)?;
    let shape: [usize; 3] =
        shape.try_into().map_err(|_| Error::InvalidArgument("--shape needs three sizes".into()))?;
    let mut model_paths: Vec<PathBuf> = Vec::new();
    let mut plantings = Vec::new();
    for p in &a.plant {
        let (path, region) = parse_plant(p)?;
        let model = match model_paths.iter().position(|q| *q == path) {
            Some(i) => i,
            None => {
                model_paths.push(path);
                model_paths.len() - 1
            }
        };
        plantings.push(Planting { region, model });
    }
    let tables: Vec<FeatureTable> = model_paths.iter().map(FeatureTable::load).collect::<Result<_>>()?;
    let views: Vec<_> = tables.iter().map(|t| t.values().view()).collect();
    let vol = match a.n_stimuli {
        Some(n) => make_volume_n(shape, n, &views, &plantings, a.noise, s.seed)?,
        None => make_volume(shape, &views, &plantings, a.noise, s.seed)?,
    };
    let out = s.out(&a.out, "volume.agv");
    vol.save(&out)?;
    print_json(&serde_json::json!({ "meta": vol.meta, "models": model_paths, "out": out }))
}

fn report_cmd(a: ReportArgs, s: &Settings) -> Result<()> {
    let dir = s.out_dir.join("reports");
    let mut written = Vec::new();
    if let Some(p) = &a.repro {
        let r = read_repro_table(p)?;
        let (svg, table) = report::repro_dot_plot(&r);
        written.extend(report::emit(&dir, "reproducibility", &svg, &table)?);
    }
    if let Some(p) = &a.map {
        let map = read_map_csv(open(p)?)?;
        let mut w = create(&dir.join("map.csv"))?;
        write_map_csv(&map, &mut w)?;
        w.flush()?;
        written.push(dir.join("map.csv"));
        for (z, svg) in report::slice_heatmaps(&map).iter().enumerate() {
            let path = dir.join(format!("map_z{z:03}.svg"));
            report::write_svg(&path, svg)?;
            written.push(path);
        }
    }
    if let Some(p) = &a.pruning {
        written.extend(pruning_report(&dir, &read_pruning(p)?)?);
    }
    if let Some(p) = &a.bars {
        let groups = read_groups(p)?;
        let (svg, runs, summary) = report::bar_chart("Per-run values", "value", &groups)?;
        written.extend(report::emit(&dir, "bars", &svg, &runs)?);
        summary.write_csv(&dir.join("bars_summary.csv"))?;
        written.push(dir.join("bars_summary.csv"));
    }
    print_json(&written)
}

/// Reads the `dimension,run,score` table written by `repro`.
pub fn read_repro_table(path: &Path) -> Result<ReproducibilityReport> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut cells: Vec<(usize, usize, Option<f64>)> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingest { line, message: e.to_string() })?;
        let bad = || Error::Ingest { line, message: "expected dimension,run,score".into() };
        let dim: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let run: usize = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let score = match rec.get(2).ok_or_else(bad)? {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad())?),
        };
        if dim == 0 {
            return Err(bad());
        }
        cells.push((dim - 1, run, score));
    }
    let d = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let r = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != d * r {
        return Err(Error::Schema(format!("{} rows for {d} dimensions × {r} runs", cells.len())));
    }
    let mut scores = vec![vec![None; d]; r];
    for (k, run, v) in cells {
        scores[run][k] = v;
    }
    Ok(ReproducibilityReport { scores })
}

/// Reads `group,value` rows, keeping groups in first-appearance order.
fn read_groups(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Ingest { line, message: e.to_string() })?;
        let (Some(g), Some(v)) = (rec.get(0), rec.get(1).and_then(|v| v.trim().parse::<f64>().ok())) else {
            return Err(Error::Ingest { line, message: "expected group,value".into() });
        };
        match groups.iter_mut().find(|(name, _)| name == g) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((g.to_string(), vec![v])),
        }
    }
    Ok(groups)
}

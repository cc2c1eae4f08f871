//! Declarative run configuration.

use std::path::{Path, PathBuf};

use affect_geometry::graph::PageRankConfig;
use affect_geometry::spose::SplitSpec;
use affect_geometry::{Error, Result, TieRule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::files::sha256_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synthesize,
    Sample,
    Judge,
    Train,
    Validate,
    Rsm,
    Graph,
    Report,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Synthesize,
        Stage::Sample,
        Stage::Judge,
        Stage::Train,
        Stage::Validate,
        Stage::Rsm,
        Stage::Graph,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synthesize => "synthesize",
            Stage::Sample => "sample",
            Stage::Judge => "judge",
            Stage::Train => "train",
            Stage::Validate => "validate",
            Stage::Rsm => "rsm",
            Stage::Graph => "graph",
            Stage::Report => "report",
        }
    }
}

/// Planted sparse non-negative ground truth: each entry is nonzero with
/// probability `density`, drawn from `U(low, high)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub n_stimuli: usize,
    pub dim: usize,
    pub density: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        Self { n_stimuli: 40, dim: 5, density: 0.45, low: 1.0, high: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub per_dyad: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { per_dyad: 26 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Largest inner product of the planted truth rows.
    #[default]
    Dot,
    /// Cosine feature oracle over the planted truth rows.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub oracle: OracleKind,
    pub tie: TieRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    /// Independent training runs; run 0 is the primary embedding.
    pub runs: usize,
    pub heldout_fraction: f64,
    pub spose: TrainConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            runs: 2,
            heldout_fraction: SplitSpec::default().heldout_fraction,
            spose: TrainConfig {
                dim: 5,
                batch_size: 256,
                epochs: 1500,
                patience: 1500,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsmConfig {
    /// Number of leading stimuli in the choice RSM; all when absent.
    pub subset: Option<usize>,
    pub min_count: u32,
}

impl Default for RsmConfig {
    fn default() -> Self {
        Self { subset: None, min_count: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub threshold: f64,
    pub pagerank: PageRankConfig,
    pub prune_targets: Vec<f64>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { threshold: 0.2, pagerank: PageRankConfig::default(), prune_targets: vec![0.95, 0.99] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    /// Relative paths resolve against the manifest's directory.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub synthesize: SynthesizeConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub train: TrainStageConfig,
    #[serde(default)]
    pub rsm: RsmConfig,
    #[serde(default)]
    pub graph: GraphConfig,
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let mut m = Self::parse(&text)?;
        if m.out_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            m.out_dir = base.join(&m.out_dir);
        }
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("manifest: {m}")));
        if self.name.trim().is_empty() {
            return bad("name is empty".into());
        }
        if self.stages.is_empty() {
            return bad("no stages listed".into());
        }
        let mut sorted = self.stages.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("a stage is listed twice".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        let s = &self.synthesize;
        if s.n_stimuli < 3 || s.dim == 0 {
            return bad("synthesize needs n_stimuli >= 3 and dim >= 1".into());
        }
        if !(s.density > 0.0 && s.density <= 1.0) || !(s.low > 0.0 && s.low <= s.high) || !s.high.is_finite() {
            return bad("synthesize needs density in (0, 1] and 0 < low <= high".into());
        }
        if self.train.runs == 0 {
            return bad("train.runs must be at least 1".into());
        }
        if !(self.train.heldout_fraction > 0.0 && self.train.heldout_fraction < 1.0) {
            return bad("train.heldout_fraction must lie in (0, 1)".into());
        }
        self.train.spose.validate()?;
        if let Some(k) = self.rsm.subset {
            if k < 3 || k > s.n_stimuli {
                return bad(format!("rsm.subset {k} outside 3..={}", s.n_stimuli));
            }
        }
        if !(0.0..1.0).contains(&self.graph.threshold) {
            return bad("graph.threshold must lie in [0, 1)".into());
        }
        if self.graph.prune_targets.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("graph.prune_targets must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Seed for one stage, derived from the manifest seed and the stage name.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let h = sha256_bytes(format!("{}:{}", self.seed, stage.name()).as_bytes());
        u64::from_str_radix(&h[..16], 16).unwrap()
    }

    /// Canonical JSON of the settings that determine a stage's outputs.
    pub fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let seed = self.stage_seed(stage);
        let cfg = match stage {
            Stage::Synthesize => serde_json::to_value(&self.synthesize),
            Stage::Sample => serde_json::to_value(&self.sample),
            Stage::Judge => serde_json::to_value(&self.judge),
            Stage::Train => serde_json::to_value(&self.train),
            Stage::Validate => Ok(serde_json::Value::Null),
            Stage::Rsm => serde_json::to_value(&self.rsm),
            Stage::Graph => serde_json::to_value(&self.graph),
            Stage::Report => Ok(serde_json::Value::Null),
        }
        .expect("stage config serializes");
        serde_json::json!({
            "stage": stage.name(),
            "seed": seed,
            "config": cfg,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    pub fn stage_hash(&self, stage: Stage) -> String {
        sha256_bytes(self.stage_config(stage).to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stage_list_rejected() {
        let e = Manifest::parse(r#"{"name": "x", "stages": []}"#).unwrap_err();
        assert!(matches!(e, Error::InvalidArgument(_)));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(Manifest::parse(r#"{"name": "x", "stages": ["sample"], "sede": 3}"#).is_err());
        assert!(Manifest::parse(r#"{"name": "x", "stages": ["sampel"]}"#).is_err());
        assert!(Manifest::parse(r#"{"name": "x", "stages": ["sample", "sample"]}"#).is_err());
    }

    #[test]
    fn stage_hash_tracks_config() {
        let a = Manifest::parse(r#"{"name": "x", "stages": ["sample"]}"#).unwrap();
        let mut b = a.clone();
        assert_eq!(a.stage_hash(Stage::Sample), b.stage_hash(Stage::Sample));
        b.sample.per_dyad = 5;
        assert_ne!(a.stage_hash(Stage::Sample), b.stage_hash(Stage::Sample));
        assert_eq!(a.stage_hash(Stage::Train), b.stage_hash(Stage::Train));
        b.seed = 1;
        assert_ne!(a.stage_seed(Stage::Train), b.stage_seed(Stage::Train));
    }
}

//! Experiment configurations: strict JSON schemas with runnable defaults.
//!
//! One config kind per experiment. Parsing is strict — unknown fields are
//! rejected at every nesting level — while every field carries the shipped
//! default, so `{"kind": "..."}` alone is a valid, fully specified run.
//! Defaults resolve deterministically (iteration budgets by task size, batch
//! size by objective), and the resolved values are what the run manifest
//! records and the config hash covers.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::ctmc::ChainKind;
use crate::error::{CoreError, Result};
use crate::eval::VARIANCE_T_GRID;
use crate::training::{HybridWeight, TimeSampler, TimeSamplerKind, TrainSettings, FD_STEP};

/// Minimum time gap ε for exact-chain experiments.
pub const EXACT_EPSILON: f64 = 0.01;
/// Minimum time gap ε for sequence experiments.
pub const SEQ_EPSILON: f64 = 0.02;

/// The seeds every multi-seed experiment averages over by default.
pub fn default_seeds() -> Vec<u64> {
    vec![42, 123, 2024]
}

fn default_seed() -> u64 {
    42
}

fn default_ring() -> ChainKind {
    ChainKind::Ring { n: 3, lambda_f: 2.0, lambda_b: 1.0 }
}

fn default_chains() -> Vec<ChainKind> {
    vec![
        ChainKind::TwoState { lambda: 2.0 },
        default_ring(),
        ChainKind::BirthDeath { n: 10, birth: 1.5, death: 1.0 },
    ]
}

/// Reference iteration budget for an exact chain.
pub fn exact_iterations_for(chain: &ChainKind) -> usize {
    match chain {
        ChainKind::TwoState { .. } => 15_000,
        ChainKind::Ring { .. } => 20_000,
        ChainKind::BirthDeath { .. } => 30_000,
    }
}

/// Reference iteration budget for a sequence task, by |V|·D.
pub fn seq_iterations_for(vocab_size: usize, seq_len: usize) -> usize {
    match vocab_size * seq_len {
        0..=64 => 12_000,
        65..=256 => 15_000,
        _ => 20_000,
    }
}

// ── Shared sub-specs ───────────────────────────────────────────────────────

/// Optimizer and loop knobs. `iterations`/`batch_size` default per task when
/// absent; everything else carries the shared training defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSpec {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Cosine floor as a fraction of `lr`.
    pub lr_floor: f64,
    pub snapshot_every: usize,
}

impl Default for OptimSpec {
    fn default() -> Self {
        OptimSpec {
            iterations: None,
            batch_size: None,
            lr: 3e-4,
            weight_decay: 1e-5,
            clip_norm: 1.0,
            lr_floor: 0.01,
            snapshot_every: 500,
        }
    }
}

impl OptimSpec {
    /// Concrete loop settings, with task defaults filling the blanks.
    pub fn settings(&self, default_iterations: usize, default_batch: usize) -> TrainSettings {
        TrainSettings {
            iterations: self.iterations.unwrap_or(default_iterations),
            batch_size: self.batch_size.unwrap_or(default_batch),
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            lr_floor: self.lr_floor,
            fd_step: FD_STEP,
            snapshot_every: self.snapshot_every,
        }
    }

    fn diagnostics(&self, out: &mut Vec<String>) {
        if self.iterations == Some(0) {
            out.push("optim.iterations: must be ≥ 1".into());
        }
        if self.batch_size == Some(0) {
            out.push("optim.batch_size: must be ≥ 1".into());
        }
        if !(self.lr > 0.0) {
            out.push(format!("optim.lr: must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 {
            out.push(format!("optim.weight_decay: must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            out.push(format!("optim.clip_norm: must be positive, got {}", self.clip_norm));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            out.push(format!("optim.lr_floor: must lie in [0, 1], got {}", self.lr_floor));
        }
        if self.snapshot_every == 0 {
            out.push("optim.snapshot_every: must be ≥ 1".into());
        }
    }
}

/// Time-pair sampling knobs. `epsilon` defaults per lane (0.01 exact, 0.02
/// sequences) when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub sampler: TimeSamplerKind,
    pub epsilon: Option<f64>,
    /// Fraction of draws kept as wide (r < t) intervals.
    pub rt_ratio: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { sampler: TimeSamplerKind::Uniform, epsilon: None, rt_ratio: 1.0 }
    }
}

impl TimeSpec {
    pub fn build(&self, lane_epsilon: f64) -> Result<TimeSampler> {
        TimeSampler::new(self.sampler, self.epsilon.unwrap_or(lane_epsilon), self.rt_ratio)
    }

    fn diagnostics(&self, out: &mut Vec<String>) {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                out.push(format!("time.epsilon: must lie in (0, 1), got {eps}"));
            }
        }
        if !(0.0..=1.0).contains(&self.rt_ratio) {
            out.push(format!("time.rt_ratio: must lie in [0, 1], got {}", self.rt_ratio));
        }
    }
}

/// Synthetic sequence data family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Independent,
    Bigram,
}

/// Which synthetic distribution, its shape, and the seed that freezes the
/// task instance. The instance stays fixed while training seeds vary, so
/// multi-seed results describe one task rather than a family of tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    pub data: DataKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub data_seed: u64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec { data: DataKind::Independent, vocab_size: 4, seq_len: 8, data_seed: 2718 }
    }
}

impl SourceSpec {
    pub fn build(&self) -> Result<crate::data::SequenceSource> {
        match self.data {
            DataKind::Independent => {
                crate::data::make_independent(self.vocab_size, self.seq_len, self.data_seed)
            }
            DataKind::Bigram => {
                crate::data::make_bigram(self.vocab_size, self.seq_len, self.data_seed)
            }
        }
    }

    pub fn default_iterations(&self) -> usize {
        seq_iterations_for(self.vocab_size, self.seq_len)
    }

    fn diagnostics(&self, out: &mut Vec<String>) {
        if self.vocab_size < 2 {
            out.push(format!("source.vocab_size: must be ≥ 2, got {}", self.vocab_size));
        }
        if self.seq_len == 0 {
            out.push("source.seq_len: must be ≥ 1".into());
        }
    }
}

/// Training objective for sequence tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveSpec {
    Kr,
    Pr,
    Kce,
    Hybrid(HybridWeight),
}

impl ObjectiveSpec {
    /// Stable identifier for paths, manifests, and summaries.
    pub fn label(&self) -> String {
        match self {
            ObjectiveSpec::Kr => "kr".into(),
            ObjectiveSpec::Pr => "pr".into(),
            ObjectiveSpec::Kce => "kce".into(),
            ObjectiveSpec::Hybrid(w) => format!("hybrid-{}", w.label()),
        }
    }

    /// Reference batch size: 128 for posterior regression, 256 otherwise.
    pub fn default_batch(&self) -> usize {
        match self {
            ObjectiveSpec::Pr => 128,
            _ => 256,
        }
    }
}

impl Serialize for ObjectiveSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ObjectiveSpec::Kr => s.serialize_str("kr"),
            ObjectiveSpec::Pr => s.serialize_str("pr"),
            ObjectiveSpec::Kce => s.serialize_str("kce"),
            ObjectiveSpec::Hybrid(w) => {
                let mut map = serde_json::Map::new();
                map.insert("hybrid".into(), serde_json::to_value(w).map_err(serde::ser::Error::custom)?);
                Value::Object(map).serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for ObjectiveSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match &v {
            Value::String(s) => match s.as_str() {
                "kr" => Ok(ObjectiveSpec::Kr),
                "pr" => Ok(ObjectiveSpec::Pr),
                "kce" => Ok(ObjectiveSpec::Kce),
                other => Err(D::Error::custom(format!(
                    "objective: expected \"kr\", \"pr\", \"kce\" or {{\"hybrid\": λ}}, got \"{other}\""
                ))),
            },
            Value::Object(map) if map.len() == 1 && map.contains_key("hybrid") => {
                let w: HybridWeight =
                    serde_json::from_value(map["hybrid"].clone()).map_err(D::Error::custom)?;
                Ok(ObjectiveSpec::Hybrid(w))
            }
            other => Err(D::Error::custom(format!(
                "objective: expected \"kr\", \"pr\", \"kce\" or {{\"hybrid\": λ}}, got {other}"
            ))),
        }
    }
}

// ── Experiment kinds ───────────────────────────────────────────────────────

/// Train the interval-kernel model on a reference chain and grade the final
/// kernel on an error grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactTrainConfig {
    pub chain: ChainKind,
    /// When set, train the unconstrained-softmax baseline with this boundary
    /// penalty weight instead of the mixture construction.
    pub boundary_penalty: Option<f64>,
    pub time: TimeSpec,
    pub optim: OptimSpec,
    pub grid_n: usize,
    pub seed: u64,
}

impl Default for ExactTrainConfig {
    fn default() -> Self {
        ExactTrainConfig {
            chain: default_ring(),
            boundary_penalty: None,
            time: TimeSpec::default(),
            optim: OptimSpec::default(),
            grid_n: 20,
            seed: default_seed(),
        }
    }
}

/// Grade a saved exact-kernel checkpoint: error grid, heatmap, and one-step
/// generation TV per start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactEvalConfig {
    pub chain: ChainKind,
    pub checkpoint: String,
    pub grid_n: usize,
    pub heatmap: bool,
    /// Samples per start state for the one-step generation TV; 0 skips it.
    pub gen_samples: usize,
    pub seed: u64,
}

impl Default for ExactEvalConfig {
    fn default() -> Self {
        ExactEvalConfig {
            chain: default_ring(),
            checkpoint: String::new(),
            grid_n: 20,
            heatmap: true,
            gen_samples: 10_000,
            seed: default_seed(),
        }
    }
}

/// Train a sequence model (kernel or posterior) and grade one-step
/// generation against the exact marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqTrainConfig {
    pub source: SourceSpec,
    pub objective: ObjectiveSpec,
    pub time: TimeSpec,
    pub optim: OptimSpec,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        SeqTrainConfig {
            source: SourceSpec::default(),
            objective: ObjectiveSpec::Kr,
            time: TimeSpec::default(),
            optim: OptimSpec::default(),
            eval_samples: 5000,
            seed: default_seed(),
        }
    }
}

/// Grade a saved sequence checkpoint at one or more step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqEvalConfig {
    pub source: SourceSpec,
    pub checkpoint: String,
    pub steps: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SeqEvalConfig {
    fn default() -> Self {
        SeqEvalConfig {
            source: SourceSpec::default(),
            checkpoint: String::new(),
            steps: vec![1],
            n_samples: 5000,
            seed: default_seed(),
        }
    }
}

/// Draw samples from a saved checkpoint and write them out with their
/// empirical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub checkpoint: String,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Start state for exact-chain checkpoints; ignored for sequences.
    pub x0: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            checkpoint: String::new(),
            n_samples: 5000,
            n_steps: 1,
            x0: 0,
            seed: default_seed(),
        }
    }
}

/// Model-free probe of the two training targets' per-element variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceProbeConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_samples: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for VarianceProbeConfig {
    fn default() -> Self {
        VarianceProbeConfig {
            vocab_size: 8,
            seq_len: 16,
            n_samples: 5000,
            t_grid: VARIANCE_T_GRID.to_vec(),
            seed: default_seed(),
        }
    }
}

/// Construction-vs-penalty boundary ablation over a seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateBoundaryConfig {
    pub chain: ChainKind,
    pub lambda_bdy: f64,
    pub seeds: Vec<u64>,
    pub time: TimeSpec,
    pub optim: OptimSpec,
    pub grid_n: usize,
    pub gen_samples: usize,
    pub seed: u64,
}

impl Default for AblateBoundaryConfig {
    fn default() -> Self {
        AblateBoundaryConfig {
            chain: default_ring(),
            lambda_bdy: 10.0,
            seeds: default_seeds(),
            time: TimeSpec::default(),
            optim: OptimSpec::default(),
            grid_n: 20,
            gen_samples: 10_000,
            seed: default_seed(),
        }
    }
}

/// Sweep the wide-interval fraction rt_ratio and grade each setting's
/// kernel TV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateRatioConfig {
    pub chain: ChainKind,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sampler: TimeSamplerKind,
    pub epsilon: Option<f64>,
    pub optim: OptimSpec,
    pub grid_n: usize,
    pub seed: u64,
}

impl Default for AblateRatioConfig {
    fn default() -> Self {
        AblateRatioConfig {
            chain: default_ring(),
            ratios: vec![0.0, 0.25, 0.5, 1.0],
            seeds: default_seeds(),
            sampler: TimeSamplerKind::Uniform,
            epsilon: None,
            optim: OptimSpec::default(),
            grid_n: 20,
            seed: default_seed(),
        }
    }
}

/// Sweep the time-sampling distribution and grade each setting's kernel TV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSamplerConfig {
    pub chain: ChainKind,
    pub samplers: Vec<TimeSamplerKind>,
    pub seeds: Vec<u64>,
    pub rt_ratio: f64,
    pub epsilon: Option<f64>,
    pub optim: OptimSpec,
    pub grid_n: usize,
    pub seed: u64,
}

impl Default for AblateSamplerConfig {
    fn default() -> Self {
        AblateSamplerConfig {
            chain: default_ring(),
            samplers: vec![
                TimeSamplerKind::Uniform,
                TimeSamplerKind::LogitNormal { mu: 0.0 },
                TimeSamplerKind::LogitNormal { mu: -0.4 },
            ],
            seeds: default_seeds(),
            rt_ratio: 1.0,
            epsilon: None,
            optim: OptimSpec::default(),
            grid_n: 20,
            seed: default_seed(),
        }
    }
}

/// Sweep the hybrid objective's CE weight λ on one sequence task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSweepConfig {
    pub source: SourceSpec,
    pub lambdas: Vec<HybridWeight>,
    pub seeds: Vec<u64>,
    pub time: TimeSpec,
    pub optim: OptimSpec,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for HybridSweepConfig {
    fn default() -> Self {
        HybridSweepConfig {
            source: SourceSpec::default(),
            lambdas: vec![
                HybridWeight::Finite(0.0),
                HybridWeight::Finite(0.1),
                HybridWeight::Finite(1.0),
                HybridWeight::Finite(10.0),
                HybridWeight::Infinite,
            ],
            seeds: default_seeds(),
            time: TimeSpec::default(),
            optim: OptimSpec::default(),
            eval_samples: 5000,
            seed: default_seed(),
        }
    }
}

/// Check the oracle invariants and the interval-rate identity numerically
/// on a list of reference chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOracleConfig {
    pub chains: Vec<ChainKind>,
    /// Points per axis of the (r, t) check grid.
    pub grid_n: usize,
    /// Step for the forward-equation residual check.
    pub fe_h: f64,
    /// Simpson panels for the integral-form check.
    pub quad_panels: usize,
    pub tol_column_sum: f64,
    pub tol_semigroup: f64,
    pub tol_forward_eq: f64,
    pub tol_identity: f64,
    pub tol_integral: f64,
    pub seed: u64,
}

impl Default for VerifyOracleConfig {
    fn default() -> Self {
        VerifyOracleConfig {
            chains: default_chains(),
            grid_n: 10,
            fe_h: 1e-5,
            quad_panels: 64,
            tol_column_sum: 1e-12,
            tol_semigroup: 1e-10,
            tol_forward_eq: 1e-6,
            tol_identity: 1e-5,
            tol_integral: 1e-8,
            seed: default_seed(),
        }
    }
}

// ── The tagged union ───────────────────────────────────────────────────────

/// Every runnable experiment, dispatched on the JSON `kind` field.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    ExactTrain(ExactTrainConfig),
    ExactEval(ExactEvalConfig),
    SeqTrain(SeqTrainConfig),
    SeqEval(SeqEvalConfig),
    Generate(GenerateConfig),
    VarianceProbe(VarianceProbeConfig),
    AblateBoundary(AblateBoundaryConfig),
    AblateRatio(AblateRatioConfig),
    AblateSampler(AblateSamplerConfig),
    HybridSweep(HybridSweepConfig),
    VerifyOracle(VerifyOracleConfig),
}

/// All recognized `kind` tags, in display order.
pub const EXPERIMENT_KINDS: [&str; 11] = [
    "exact-train",
    "exact-eval",
    "seq-train",
    "seq-eval",
    "generate",
    "variance-probe",
    "ablate-boundary",
    "ablate-ratio",
    "ablate-sampler",
    "hybrid-sweep",
    "verify-oracle",
];

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::ExactTrain(_) => "exact-train",
            ExperimentConfig::ExactEval(_) => "exact-eval",
            ExperimentConfig::SeqTrain(_) => "seq-train",
            ExperimentConfig::SeqEval(_) => "seq-eval",
            ExperimentConfig::Generate(_) => "generate",
            ExperimentConfig::VarianceProbe(_) => "variance-probe",
            ExperimentConfig::AblateBoundary(_) => "ablate-boundary",
            ExperimentConfig::AblateRatio(_) => "ablate-ratio",
            ExperimentConfig::AblateSampler(_) => "ablate-sampler",
            ExperimentConfig::HybridSweep(_) => "hybrid-sweep",
            ExperimentConfig::VerifyOracle(_) => "verify-oracle",
        }
    }

    /// The default config for a kind tag, when the tag is recognized.
    pub fn defaults_for(kind: &str) -> Result<Self> {
        match kind {
            "exact-train" => Ok(ExperimentConfig::ExactTrain(ExactTrainConfig::default())),
            "exact-eval" => Ok(ExperimentConfig::ExactEval(ExactEvalConfig::default())),
            "seq-train" => Ok(ExperimentConfig::SeqTrain(SeqTrainConfig::default())),
            "seq-eval" => Ok(ExperimentConfig::SeqEval(SeqEvalConfig::default())),
            "generate" => Ok(ExperimentConfig::Generate(GenerateConfig::default())),
            "variance-probe" => {
                Ok(ExperimentConfig::VarianceProbe(VarianceProbeConfig::default()))
            }
            "ablate-boundary" => {
                Ok(ExperimentConfig::AblateBoundary(AblateBoundaryConfig::default()))
            }
            "ablate-ratio" => Ok(ExperimentConfig::AblateRatio(AblateRatioConfig::default())),
            "ablate-sampler" => {
                Ok(ExperimentConfig::AblateSampler(AblateSamplerConfig::default()))
            }
            "hybrid-sweep" => Ok(ExperimentConfig::HybridSweep(HybridSweepConfig::default())),
            "verify-oracle" => Ok(ExperimentConfig::VerifyOracle(VerifyOracleConfig::default())),
            other => Err(CoreError::Config(format!(
                "kind: unknown experiment \"{other}\"; expected one of {}",
                EXPERIMENT_KINDS.join(", ")
            ))),
        }
    }

    /// Strict parse: top-level object, recognized `kind`, no unknown fields
    /// anywhere. Errors name the offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| CoreError::Config(format!("not valid JSON: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CoreError::Config("top level: must be a JSON object".into()))?;
        let kind = match obj.remove("kind") {
            Some(Value::String(s)) => s,
            Some(other) => {
                return Err(CoreError::Config(format!("kind: must be a string, got {other}")))
            }
            None => {
                return Err(CoreError::Config(format!(
                    "kind: missing; expected one of {}",
                    EXPERIMENT_KINDS.join(", ")
                )))
            }
        };
        let field_err = |e: serde_json::Error| CoreError::Config(format!("{kind}: {e}"));
        let parsed = match kind.as_str() {
            "exact-train" => ExperimentConfig::ExactTrain(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "exact-eval" => {
                ExperimentConfig::ExactEval(serde_json::from_value(value).map_err(field_err)?)
            }
            "seq-train" => {
                ExperimentConfig::SeqTrain(serde_json::from_value(value).map_err(field_err)?)
            }
            "seq-eval" => {
                ExperimentConfig::SeqEval(serde_json::from_value(value).map_err(field_err)?)
            }
            "generate" => {
                ExperimentConfig::Generate(serde_json::from_value(value).map_err(field_err)?)
            }
            "variance-probe" => ExperimentConfig::VarianceProbe(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "ablate-boundary" => ExperimentConfig::AblateBoundary(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "ablate-ratio" => ExperimentConfig::AblateRatio(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "ablate-sampler" => ExperimentConfig::AblateSampler(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "hybrid-sweep" => ExperimentConfig::HybridSweep(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            "verify-oracle" => ExperimentConfig::VerifyOracle(
                serde_json::from_value(value).map_err(field_err)?,
            ),
            other => {
                return Err(CoreError::Config(format!(
                    "kind: unknown experiment \"{other}\"; expected one of {}",
                    EXPERIMENT_KINDS.join(", ")
                )))
            }
        };
        let diags = parsed.diagnostics();
        if diags.is_empty() {
            Ok(parsed)
        } else {
            Err(CoreError::Config(diags.join("\n")))
        }
    }

    /// The config as a JSON object with its `kind` tag restored.
    pub fn to_value(&self) -> Value {
        let mut v = match self {
            ExperimentConfig::ExactTrain(c) => serde_json::to_value(c),
            ExperimentConfig::ExactEval(c) => serde_json::to_value(c),
            ExperimentConfig::SeqTrain(c) => serde_json::to_value(c),
            ExperimentConfig::SeqEval(c) => serde_json::to_value(c),
            ExperimentConfig::Generate(c) => serde_json::to_value(c),
            ExperimentConfig::VarianceProbe(c) => serde_json::to_value(c),
            ExperimentConfig::AblateBoundary(c) => serde_json::to_value(c),
            ExperimentConfig::AblateRatio(c) => serde_json::to_value(c),
            ExperimentConfig::AblateSampler(c) => serde_json::to_value(c),
            ExperimentConfig::HybridSweep(c) => serde_json::to_value(c),
            ExperimentConfig::VerifyOracle(c) => serde_json::to_value(c),
        }
        .expect("configs serialize");
        v.as_object_mut()
            .expect("configs are objects")
            .insert("kind".into(), Value::String(self.kind().into()));
        v
    }

    /// The seed stored in the config (the CLI may override it).
    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::ExactTrain(c) => c.seed,
            ExperimentConfig::ExactEval(c) => c.seed,
            ExperimentConfig::SeqTrain(c) => c.seed,
            ExperimentConfig::SeqEval(c) => c.seed,
            ExperimentConfig::Generate(c) => c.seed,
            ExperimentConfig::VarianceProbe(c) => c.seed,
            ExperimentConfig::AblateBoundary(c) => c.seed,
            ExperimentConfig::AblateRatio(c) => c.seed,
            ExperimentConfig::AblateSampler(c) => c.seed,
            ExperimentConfig::HybridSweep(c) => c.seed,
            ExperimentConfig::VerifyOracle(c) => c.seed,
        }
    }

    /// Semantic checks beyond the schema; empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ExperimentConfig::ExactTrain(c) => {
                c.time.diagnostics(&mut out);
                c.optim.diagnostics(&mut out);
                if let Some(l) = c.boundary_penalty {
                    if !(l >= 0.0) {
                        out.push(format!("boundary_penalty: must be ≥ 0, got {l}"));
                    }
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
            }
            ExperimentConfig::ExactEval(c) => {
                if c.checkpoint.is_empty() {
                    out.push("checkpoint: must be a file path".into());
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
            }
            ExperimentConfig::SeqTrain(c) => {
                c.source.diagnostics(&mut out);
                c.time.diagnostics(&mut out);
                c.optim.diagnostics(&mut out);
                if c.eval_samples == 0 {
                    out.push("eval_samples: must be ≥ 1".into());
                }
            }
            ExperimentConfig::SeqEval(c) => {
                c.source.diagnostics(&mut out);
                if c.checkpoint.is_empty() {
                    out.push("checkpoint: must be a file path".into());
                }
                if c.steps.is_empty() {
                    out.push("steps: must list at least one step count".into());
                }
                if c.steps.iter().any(|&s| s == 0) {
                    out.push("steps: step counts must be ≥ 1".into());
                }
                if c.n_samples == 0 {
                    out.push("n_samples: must be ≥ 1".into());
                }
            }
            ExperimentConfig::Generate(c) => {
                if c.checkpoint.is_empty() {
                    out.push("checkpoint: must be a file path".into());
                }
                if c.n_samples == 0 {
                    out.push("n_samples: must be ≥ 1".into());
                }
                if c.n_steps == 0 {
                    out.push("n_steps: must be ≥ 1".into());
                }
            }
            ExperimentConfig::VarianceProbe(c) => {
                if c.vocab_size < 2 {
                    out.push(format!("vocab_size: must be ≥ 2, got {}", c.vocab_size));
                }
                if c.seq_len == 0 {
                    out.push("seq_len: must be ≥ 1".into());
                }
                if c.n_samples < 2 {
                    out.push("n_samples: must be ≥ 2 for sample variances".into());
                }
                if c.t_grid.is_empty() {
                    out.push("t_grid: must list at least one t".into());
                }
                if c.t_grid.iter().any(|&t| !(0.0..1.0).contains(&t)) {
                    out.push("t_grid: every t must lie in [0, 1)".into());
                }
            }
            ExperimentConfig::AblateBoundary(c) => {
                c.time.diagnostics(&mut out);
                c.optim.diagnostics(&mut out);
                if !(c.lambda_bdy >= 0.0) {
                    out.push(format!("lambda_bdy: must be ≥ 0, got {}", c.lambda_bdy));
                }
                if c.seeds.is_empty() {
                    out.push("seeds: must list at least one seed".into());
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
                if c.gen_samples == 0 {
                    out.push("gen_samples: must be ≥ 1".into());
                }
            }
            ExperimentConfig::AblateRatio(c) => {
                c.optim.diagnostics(&mut out);
                if c.ratios.is_empty() {
                    out.push("ratios: must list at least one value".into());
                }
                if c.ratios.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    out.push("ratios: every value must lie in [0, 1]".into());
                }
                if c.seeds.is_empty() {
                    out.push("seeds: must list at least one seed".into());
                }
                if let Some(eps) = c.epsilon {
                    if !(eps > 0.0 && eps < 1.0) {
                        out.push(format!("epsilon: must lie in (0, 1), got {eps}"));
                    }
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
            }
            ExperimentConfig::AblateSampler(c) => {
                c.optim.diagnostics(&mut out);
                if c.samplers.is_empty() {
                    out.push("samplers: must list at least one sampler".into());
                }
                if c.seeds.is_empty() {
                    out.push("seeds: must list at least one seed".into());
                }
                if !(0.0..=1.0).contains(&c.rt_ratio) {
                    out.push(format!("rt_ratio: must lie in [0, 1], got {}", c.rt_ratio));
                }
                if let Some(eps) = c.epsilon {
                    if !(eps > 0.0 && eps < 1.0) {
                        out.push(format!("epsilon: must lie in (0, 1), got {eps}"));
                    }
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
            }
            ExperimentConfig::HybridSweep(c) => {
                c.source.diagnostics(&mut out);
                c.time.diagnostics(&mut out);
                c.optim.diagnostics(&mut out);
                if c.lambdas.is_empty() {
                    out.push("lambdas: must list at least one weight".into());
                }
                if c.seeds.is_empty() {
                    out.push("seeds: must list at least one seed".into());
                }
                if c.eval_samples == 0 {
                    out.push("eval_samples: must be ≥ 1".into());
                }
            }
            ExperimentConfig::VerifyOracle(c) => {
                if c.chains.is_empty() {
                    out.push("chains: must list at least one chain".into());
                }
                if c.grid_n < 2 {
                    out.push(format!("grid_n: must be ≥ 2, got {}", c.grid_n));
                }
                if !(c.fe_h > 0.0) {
                    out.push(format!("fe_h: must be positive, got {}", c.fe_h));
                }
                if c.quad_panels == 0 {
                    out.push("quad_panels: must be ≥ 1".into());
                }
                for (name, tol) in [
                    ("tol_column_sum", c.tol_column_sum),
                    ("tol_semigroup", c.tol_semigroup),
                    ("tol_forward_eq", c.tol_forward_eq),
                    ("tol_identity", c.tol_identity),
                    ("tol_integral", c.tol_integral),
                ] {
                    if !(tol > 0.0) {
                        out.push(format!("{name}: must be positive, got {tol}"));
                    }
                }
            }
        }
        out
    }

    /// Derived hyperparameters that the schema leaves implicit: iteration
    /// and batch defaults, lane ε, the finite-difference step, and the
    /// α-schedule constant where one exists.
    pub fn resolved_extras(&self) -> Result<Value> {
        Ok(match self {
            ExperimentConfig::ExactTrain(c) => {
                let q = c.chain.build()?;
                json!({
                    "iterations": c.optim.iterations.unwrap_or_else(|| exact_iterations_for(&c.chain)),
                    "batch_size": c.optim.batch_size.unwrap_or(256),
                    "epsilon": c.time.epsilon.unwrap_or(EXACT_EPSILON),
                    "fd_step": FD_STEP,
                    "alpha_c": 2.0 * q.max_abs_entry(),
                    "n_states": q.n_states(),
                })
            }
            ExperimentConfig::SeqTrain(c) => json!({
                "iterations": c.optim.iterations.unwrap_or_else(|| c.source.default_iterations()),
                "batch_size": c.optim.batch_size.unwrap_or_else(|| c.objective.default_batch()),
                "epsilon": c.time.epsilon.unwrap_or(SEQ_EPSILON),
                "fd_step": FD_STEP,
                "objective": c.objective.label(),
                "alphabet": c.source.vocab_size + 1,
            }),
            ExperimentConfig::AblateBoundary(c) => json!({
                "iterations": c.optim.iterations.unwrap_or_else(|| exact_iterations_for(&c.chain)),
                "batch_size": c.optim.batch_size.unwrap_or(256),
                "epsilon": c.time.epsilon.unwrap_or(EXACT_EPSILON),
                "fd_step": FD_STEP,
            }),
            ExperimentConfig::AblateRatio(c) => json!({
                "iterations": c.optim.iterations.unwrap_or_else(|| exact_iterations_for(&c.chain)),
                "batch_size": c.optim.batch_size.unwrap_or(256),
                "epsilon": c.epsilon.unwrap_or(EXACT_EPSILON),
                "fd_step": FD_STEP,
            }),
            ExperimentConfig::AblateSampler(c) => json!({
                "iterations": c.optim.iterations.unwrap_or_else(|| exact_iterations_for(&c.chain)),
                "batch_size": c.optim.batch_size.unwrap_or(256),
                "epsilon": c.epsilon.unwrap_or(EXACT_EPSILON),
                "fd_step": FD_STEP,
            }),
            ExperimentConfig::HybridSweep(c) => json!({
                "iterations": c.optim.iterations.unwrap_or_else(|| c.source.default_iterations()),
                "batch_size": c.optim.batch_size.unwrap_or(256),
                "epsilon": c.time.epsilon.unwrap_or(SEQ_EPSILON),
                "fd_step": FD_STEP,
            }),
            ExperimentConfig::Generate(_) | ExperimentConfig::SeqEval(_) => json!({
                "step_schedule": "equal intervals over [0, 1]",
            }),
            _ => json!({}),
        })
    }

    /// The fully resolved config object: fields, `kind`, the effective
    /// `seed`, and a `resolved` block of derived hyperparameters. This is
    /// what manifests record and what the config hash covers (seed aside).
    pub fn resolved_value(&self, seed: u64) -> Result<Value> {
        let mut v = self.to_value();
        let obj = v.as_object_mut().expect("configs are objects");
        obj.insert("seed".into(), json!(seed));
        obj.insert("resolved".into(), self.resolved_extras()?);
        Ok(v)
    }
}

// ── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_kind_parses_to_the_defaults() {
        for kind in EXPERIMENT_KINDS {
            let parsed = ExperimentConfig::parse(&format!("{{\"kind\": \"{kind}\"}}"));
            match kind {
                // Eval/generate kinds demand a checkpoint path.
                "exact-eval" | "seq-eval" | "generate" => {
                    assert!(parsed.is_err(), "FAIL: {kind} without a checkpoint must not parse")
                }
                _ => {
                    let cfg = parsed.unwrap_or_else(|e| panic!("FAIL: {kind} defaults: {e}"));
                    assert_eq!(cfg.kind(), kind);
                    assert_eq!(cfg.seed(), 42);
                }
            }
        }
    }

    #[test]
    fn unknown_fields_are_rejected_at_every_level() {
        let cases = [
            r#"{"kind": "exact-train", "learning_rate": 1.0}"#,
            r#"{"kind": "exact-train", "optim": {"lr2": 1.0}}"#,
            r#"{"kind": "exact-train", "time": {"eps": 0.01}}"#,
            r#"{"kind": "exact-train", "chain": {"kind": "ring", "n": 3, "lambda_f": 1.0, "lambda_b": 1.0, "extra": 2}}"#,
            r#"{"kind": "seq-train", "source": {"data": "independent", "vocab": 4}}"#,
        ];
        for text in cases {
            let err = ExperimentConfig::parse(text).unwrap_err().to_string();
            assert!(
                err.contains("unknown field") || err.contains("unknown variant"),
                "FAIL: expected a field-level rejection for {text}, got: {err}"
            );
        }
    }

    #[test]
    fn unknown_kind_is_rejected_with_the_full_menu() {
        let err = ExperimentConfig::parse(r#"{"kind": "train"}"#).unwrap_err().to_string();
        assert!(err.contains("exact-train") && err.contains("verify-oracle"), "got: {err}");
        let err = ExperimentConfig::parse(r#"{"seed": 1}"#).unwrap_err().to_string();
        assert!(err.contains("missing"), "got: {err}");
        assert!(ExperimentConfig::parse("[1, 2]").is_err());
        assert!(ExperimentConfig::parse("not json").is_err());
    }

    #[test]
    fn objective_spellings_round_trip() {
        let texts = [
            (r#""kr""#, "kr"),
            (r#""pr""#, "pr"),
            (r#""kce""#, "kce"),
            (r#"{"hybrid": 0.1}"#, "hybrid-0.1"),
            (r#"{"hybrid": "inf"}"#, "hybrid-inf"),
        ];
        for (text, label) in texts {
            let o: ObjectiveSpec = serde_json::from_str(text).unwrap();
            assert_eq!(o.label(), label);
            let back = serde_json::to_string(&o).unwrap();
            let again: ObjectiveSpec = serde_json::from_str(&back).unwrap();
            assert_eq!(o, again, "FAIL: objective {label} does not round-trip");
        }
        assert!(serde_json::from_str::<ObjectiveSpec>(r#""mse""#).is_err());
        assert!(serde_json::from_str::<ObjectiveSpec>(r#"{"hybrid": -1.0}"#).is_err());
    }

    #[test]
    fn semantic_diagnostics_name_the_field() {
        let err = ExperimentConfig::parse(
            r#"{"kind": "exact-train", "grid_n": 1, "optim": {"lr": 0.0}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("grid_n") && err.contains("optim.lr"), "got: {err}");

        let err = ExperimentConfig::parse(
            r#"{"kind": "ablate-ratio", "ratios": [0.5, 1.5], "seeds": []}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("ratios") && err.contains("seeds"), "got: {err}");
    }

    #[test]
    fn iteration_budgets_follow_the_task_size() {
        assert_eq!(exact_iterations_for(&ChainKind::TwoState { lambda: 2.0 }), 15_000);
        assert_eq!(exact_iterations_for(&default_ring()), 20_000);
        assert_eq!(
            exact_iterations_for(&ChainKind::BirthDeath { n: 10, birth: 1.5, death: 1.0 }),
            30_000
        );
        assert_eq!(seq_iterations_for(4, 8), 12_000);
        assert_eq!(seq_iterations_for(8, 16), 15_000);
        assert_eq!(seq_iterations_for(16, 32), 20_000);
    }

    #[test]
    fn resolved_values_fill_the_derived_hyperparameters() {
        let cfg = ExperimentConfig::parse(r#"{"kind": "exact-train"}"#).unwrap();
        let v = cfg.resolved_value(7).unwrap();
        assert_eq!(v["seed"], json!(7));
        assert_eq!(v["resolved"]["iterations"], json!(20_000));
        assert_eq!(v["resolved"]["batch_size"], json!(256));
        assert_eq!(v["resolved"]["epsilon"], json!(0.01));
        assert_eq!(v["resolved"]["alpha_c"], json!(6.0)); // 2 · max|entry| = 2 · 3

        let cfg = ExperimentConfig::parse(
            r#"{"kind": "seq-train", "objective": "pr", "source": {"vocab_size": 8, "seq_len": 16}}"#,
        )
        .unwrap();
        let v = cfg.resolved_value(42).unwrap();
        assert_eq!(v["resolved"]["iterations"], json!(15_000));
        assert_eq!(v["resolved"]["batch_size"], json!(128), "FAIL: PR defaults to batch 128");
        assert_eq!(v["resolved"]["epsilon"], json!(0.02));
    }

    #[test]
    fn explicit_settings_override_the_defaults() {
        let cfg = ExperimentConfig::parse(
            r#"{"kind": "exact-train", "optim": {"iterations": 77, "batch_size": 3}}"#,
        )
        .unwrap();
        let v = cfg.resolved_value(1).unwrap();
        assert_eq!(v["resolved"]["iterations"], json!(77));
        assert_eq!(v["resolved"]["batch_size"], json!(3));
    }

    #[test]
    fn to_value_round_trips_through_parse() {
        for kind in EXPERIMENT_KINDS {
            let mut cfg = ExperimentConfig::defaults_for(kind).unwrap();
            // Give path-requiring kinds a checkpoint so they re-validate.
            match &mut cfg {
                ExperimentConfig::ExactEval(c) => c.checkpoint = "x.ckpt".into(),
                ExperimentConfig::SeqEval(c) => c.checkpoint = "x.ckpt".into(),
                ExperimentConfig::Generate(c) => c.checkpoint = "x.ckpt".into(),
                _ => {}
            }
            let text = serde_json::to_string(&cfg.to_value()).unwrap();
            let again = ExperimentConfig::parse(&text)
                .unwrap_or_else(|e| panic!("FAIL: {kind} round-trip: {e}"));
            assert_eq!(cfg, again, "FAIL: {kind} changed across serialize/parse");
        }
    }
}

//! Evaluation protocols: mislabeled-data detection AUC, influence-guided
//! retraining, cross-source retrieval, the compression-size sweep, and the
//! compression/iHVP timing bench.
//!
//! Seed runs are paired: every method sees the same generated data, trained
//! model, and gradients for a given seed.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{self, CompressError, Method};
use crate::gradstore::{ActivationStore, ExampleMeta, GradStoreError, GradientDataset, Split};
use crate::influence::{
    self, DampingConfig, Engine, EngineConfig, EngineInput, InfluenceError, InfluenceReport,
    PreparedEngine,
};
use crate::rng;
use crate::trainer::{
    self, DataSplit, Hyper, LabeledDataset, ModelSpec, SyntheticTask, TaskKind, TestMetrics,
    TrainerError,
};

use rand::Rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least one flipped and one clean example")]
    DegenerateClasses,
    #[error("flipped flags length {got} != scored examples {want}")]
    FlagArity { got: usize, want: usize },
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Grad(#[from] GradStoreError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Scoring method selector shared by the protocol harnesses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodSpec {
    Orig,
    HessianFree,
    Lissa { iterations: usize },
    DataInf,
    Compressed(Method),
    /// Random scores; baseline for retrieval.
    Random,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Orig => "orig".into(),
            MethodSpec::HessianFree => "hessian_free".into(),
            MethodSpec::Lissa { iterations } => format!("lissa(T={iterations})"),
            MethodSpec::DataInf => "datainf".into(),
            MethodSpec::Compressed(m) => m.as_str().into(),
            MethodSpec::Random => "random".into(),
        }
    }

    pub fn needs_activations(&self) -> bool {
        matches!(self, MethodSpec::Compressed(Method::Logra))
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "orig" => Ok(MethodSpec::Orig),
            "hessian_free" | "hessian-free" => Ok(MethodSpec::HessianFree),
            "lissa" => Ok(MethodSpec::Lissa { iterations: 10 }),
            "datainf" => Ok(MethodSpec::DataInf),
            "random" => Ok(MethodSpec::Random),
            other => other
                .parse::<Method>()
                .map(MethodSpec::Compressed)
                .map_err(|_| format!("unknown method `{other}`")),
        }
    }
}

/// Common knobs of the three protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub task: SyntheticTask,
    pub model: ModelSpec,
    pub hyper: Hyper,
    pub damping: DampingConfig,
    pub r: usize,
    pub seeds: Vec<u64>,
}

impl ProtocolConfig {
    /// Reference detection setup: binary blobs, 1000/200/200 split,
    /// 20 features, logistic regression, SGD lr 0.1 for 100 epochs.
    pub fn reference_detection() -> Self {
        Self {
            task: SyntheticTask::blobs(2, 20, 4.0, 1000, 200, 200, 0),
            model: ModelSpec::logistic(20, 2),
            hyper: Hyper::default(),
            damping: DampingConfig::PaperRule,
            r: 16,
            seeds: (0..5).collect(),
        }
    }

    /// Reference retrieval setup: six sources on orthogonal feature blocks.
    pub fn reference_retrieval() -> Self {
        Self {
            task: SyntheticTask::multi_source_orthogonal(6, 4, 6.0, 600, 120, 120, 0),
            model: ModelSpec::logistic(24, 6),
            hyper: Hyper::default(),
            damping: DampingConfig::PaperRule,
            r: 32,
            seeds: (0..5).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let classes = match &self.task.kind {
            TaskKind::GaussianBlobs { classes, feature_dim, .. } => {
                if *feature_dim != self.model.feature_dim {
                    return Err(EvalError::BadConfig("feature_dim mismatch".into()));
                }
                *classes
            }
            TaskKind::MultiSource { sources } => {
                if sources[0].center.len() != self.model.feature_dim {
                    return Err(EvalError::BadConfig("feature_dim mismatch".into()));
                }
                sources.len()
            }
        };
        if classes != self.model.n_classes {
            return Err(EvalError::BadConfig("class count mismatch".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::BadConfig("need at least one seed".into()));
        }
        Ok(())
    }
}

// --- Mann-Whitney AUC ---

/// Mann-Whitney AUC of `score(flipped) > score(clean)`, ties counted 0.5,
/// computed via midranks.
pub fn auc_mislabel(report: &InfluenceReport, flipped: &[bool]) -> Result<f64> {
    if flipped.len() != report.scores.len() {
        return Err(EvalError::FlagArity { got: flipped.len(), want: report.scores.len() });
    }
    auc_from_scores(&report.scores, flipped)
}

pub fn auc_from_scores(scores: &[f64], flipped: &[bool]) -> Result<f64> {
    let n_pos = flipped.iter().filter(|&&f| f).count();
    let n_neg = flipped.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateClasses);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tie groups
    let mut rank_sum_pos = 0.0_f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &ix in &order[i..=j] {
            if flipped[ix] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

// --- detection ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: String,
    /// Paired per-seed AUCs, aligned with the config's seed list.
    pub per_seed_aucs: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

/// Per-seed artifacts shared by every method: generated data, trained
/// model, per-example gradients, flip flags.
pub struct SeedArtifacts {
    pub seed: u64,
    pub dataset: LabeledDataset,
    pub grads: GradientDataset,
    pub acts: Option<ActivationStore>,
    pub flipped_flags: Vec<bool>,
}

pub fn detection_artifacts(
    cfg: &ProtocolConfig,
    flip_fraction: f64,
    seed: u64,
    capture_activations: bool,
) -> Result<SeedArtifacts> {
    let task = cfg.task.clone().with_seed(seed);
    let clean = trainer::gen_task(&task)?;
    let noisy = trainer::flip_labels(&clean, flip_fraction, seed)?;
    let hyper = Hyper { seed, ..cfg.hyper.clone() };
    let record = trainer::train(&cfg.model, &noisy, &hyper)?;
    let (grads, acts) = trainer::per_example_gradients(&record.model, &noisy, capture_activations)?;
    let flipped_flags = grads
        .train_indices()
        .into_iter()
        .map(|i| grads.meta()[i].flipped)
        .collect();
    Ok(SeedArtifacts { seed, dataset: noisy, grads, acts, flipped_flags })
}

/// Scores the training split of prepared gradients with one method,
/// stamping compression time and the run seed into the report.
pub fn score_with_method(
    method: &MethodSpec,
    grads: &GradientDataset,
    acts: Option<&ActivationStore>,
    r: usize,
    seed: u64,
    damping: &DampingConfig,
) -> Result<InfluenceReport> {
    let cfg = EngineConfig {
        damping: damping.clone(),
        ..EngineConfig::new(Engine::Orig)
    };
    let mut report = match method {
        MethodSpec::Orig => influence::influence_orig(grads, &cfg)?,
        MethodSpec::HessianFree => influence::influence_hessian_free(grads)?,
        MethodSpec::Lissa { iterations } => influence::influence_lissa(grads, &cfg, *iterations)?,
        MethodSpec::DataInf => influence::influence_datainf(grads, &cfg)?,
        MethodSpec::Compressed(m) => {
            let started = Instant::now();
            let plan = compress::make_plan(*m, r, seed, grads.layers(), Some(grads))?;
            let cds = compress::compress_dataset(&plan, grads, acts)?;
            let compression_seconds = started.elapsed().as_secs_f64();
            let mut rep = influence::influence_compressed(&cds, &cfg)?;
            rep.timings.compression_seconds = compression_seconds;
            rep
        }
        MethodSpec::Random => {
            let train = grads.train_indices();
            let ids: Vec<u64> = train.iter().map(|&i| grads.meta()[i].example_id).collect();
            let mut stream = rng::stream(seed, "random-scores", 0);
            let scores: Vec<f64> = ids.iter().map(|_| stream.gen_range(-1.0..1.0)).collect();
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(ids[a].cmp(&ids[b]))
            });
            InfluenceReport {
                method: "random".into(),
                seed,
                ranking: order.iter().map(|&i| ids[i]).collect(),
                example_ids: ids,
                scores,
                damping: vec![],
                lissa_scales: None,
                timings: Default::default(),
            }
        }
    };
    report.seed = seed;
    Ok(report)
}

/// Full detection protocol: gen, flip, train, gradients, (compress),
/// influence, AUC, aggregated over paired seeds.
pub fn detection_experiment(
    cfg: &ProtocolConfig,
    flip_fraction: f64,
    methods: &[MethodSpec],
) -> Result<Vec<DetectionResult>> {
    cfg.validate()?;
    let capture = methods.iter().any(MethodSpec::needs_activations);
    let mut per_method: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    for &seed in &cfg.seeds {
        let art = detection_artifacts(cfg, flip_fraction, seed, capture)?;
        for (mi, method) in methods.iter().enumerate() {
            let report =
                score_with_method(method, &art.grads, art.acts.as_ref(), cfg.r, seed, &cfg.damping)?;
            per_method[mi].push(auc_mislabel(&report, &art.flipped_flags)?);
        }
    }
    Ok(methods
        .iter()
        .zip(per_method)
        .map(|(m, aucs)| {
            let (mean, stddev) = mean_stddev(&aucs);
            DetectionResult { method: m.label(), per_seed_aucs: aucs, mean, stddev }
        })
        .collect())
}

pub fn detection_csv(results: &[DetectionResult], seeds: &[u64]) -> String {
    let mut out = String::from("method,mean,stddev");
    for s in seeds {
        out.push_str(&format!(",auc_seed{s}"));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!("{},{},{}", r.method, r.mean, r.stddev));
        for a in &r.per_seed_aucs {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
    }
    out
}

// --- retraining ---

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Exclude the most influential fraction.
    RemoveTop,
    /// Train only on the most influential fraction.
    KeepTop,
    /// Seed-shuffled selection of equal size.
    Random,
}

impl SelectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMode::RemoveTop => "remove_top",
            SelectionMode::KeepTop => "keep_top",
            SelectionMode::Random => "random",
        }
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "remove_top" | "remove-top" => Ok(SelectionMode::RemoveTop),
            "keep_top" | "keep-top" => Ok(SelectionMode::KeepTop),
            "random" => Ok(SelectionMode::Random),
            other => Err(format!("unknown selection mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainResult {
    pub method: String,
    pub mode: SelectionMode,
    pub fractions: Vec<f64>,
    /// `metrics[fraction_idx][seed_idx]`.
    pub metrics: Vec<Vec<TestMetrics>>,
    pub accuracy_means: Vec<f64>,
    pub accuracy_stddevs: Vec<f64>,
    pub ce_means: Vec<f64>,
    pub perplexity_means: Vec<f64>,
    /// Full-data baseline per seed, and its mean accuracy.
    pub baseline: Vec<TestMetrics>,
    pub baseline_accuracy_mean: f64,
}

/// Retraining protocol. Examples are ranked by influence; "most
/// influential" means the examples whose removal hurts validation loss the
/// most (largest `v^T (H+lambda I)^{-1} g`).
pub fn retrain_experiment(
    cfg: &ProtocolConfig,
    method: &MethodSpec,
    fractions: &[f64],
    mode: SelectionMode,
) -> Result<RetrainResult> {
    cfg.validate()?;
    if fractions.is_empty()
        || fractions.windows(2).any(|w| w[0] >= w[1])
        || fractions.iter().any(|&f| f <= 0.0 || f > 1.0)
    {
        return Err(EvalError::BadConfig(
            "fractions must be strictly increasing within (0, 1]".into(),
        ));
    }
    let mut metrics: Vec<Vec<TestMetrics>> = vec![Vec::new(); fractions.len()];
    let mut baseline = Vec::new();
    for &seed in &cfg.seeds {
        let task = cfg.task.clone().with_seed(seed);
        let ds = trainer::gen_task(&task)?;
        let hyper = Hyper { seed, ..cfg.hyper.clone() };
        let base = trainer::train(&cfg.model, &ds, &hyper)?;
        baseline.push(base.metrics.clone());
        let (grads, acts) =
            trainer::per_example_gradients(&base.model, &ds, method.needs_activations())?;
        let influential: Vec<u64> = if *method == MethodSpec::Random {
            Vec::new()
        } else {
            score_with_method(method, &grads, acts.as_ref(), cfg.r, seed, &cfg.damping)?
                .ranking_by_helpfulness()
        };
        let train_ids: Vec<u64> = grads
            .train_indices()
            .into_iter()
            .map(|i| grads.meta()[i].example_id)
            .collect();
        let n_train = train_ids.len();
        for (fi, &fraction) in fractions.iter().enumerate() {
            let count = ((fraction * n_train as f64).round() as usize).min(n_train);
            let selected: BTreeSet<u64> = if mode == SelectionMode::Random
                || *method == MethodSpec::Random
            {
                let mut stream = rng::stream(seed, "random-selection", fi as u64);
                rand::seq::index::sample(&mut stream, n_train, count)
                    .into_iter()
                    .map(|i| train_ids[i])
                    .collect()
            } else {
                influential.iter().take(count).copied().collect()
            };
            let exclude: BTreeSet<u64> = match mode {
                SelectionMode::RemoveTop | SelectionMode::Random => selected,
                SelectionMode::KeepTop => {
                    train_ids.iter().filter(|id| !selected.contains(id)).copied().collect()
                }
            };
            let record = trainer::retrain_without(&ds, &exclude, &cfg.model, &hyper)?;
            metrics[fi].push(record.metrics);
        }
    }
    let mut accuracy_means = Vec::new();
    let mut accuracy_stddevs = Vec::new();
    let mut ce_means = Vec::new();
    let mut perplexity_means = Vec::new();
    for per_seed in &metrics {
        let accs: Vec<f64> = per_seed.iter().map(|m| m.accuracy).collect();
        let (am, asd) = mean_stddev(&accs);
        accuracy_means.push(am);
        accuracy_stddevs.push(asd);
        let ces: Vec<f64> = per_seed.iter().map(|m| m.mean_cross_entropy).collect();
        ce_means.push(mean_stddev(&ces).0);
        let ppls: Vec<f64> = per_seed.iter().map(|m| m.perplexity).collect();
        perplexity_means.push(mean_stddev(&ppls).0);
    }
    let baseline_accuracy_mean =
        mean_stddev(&baseline.iter().map(|m| m.accuracy).collect::<Vec<_>>()).0;
    Ok(RetrainResult {
        method: method.label(),
        mode,
        fractions: fractions.to_vec(),
        metrics,
        accuracy_means,
        accuracy_stddevs,
        ce_means,
        perplexity_means,
        baseline,
        baseline_accuracy_mean,
    })
}

pub fn retrain_csv(results: &[RetrainResult], seeds: &[u64]) -> String {
    let mut out = String::from("method,mode,fraction,seed,accuracy,mean_cross_entropy,perplexity\n");
    for r in results {
        for (fi, f) in r.fractions.iter().enumerate() {
            for (si, m) in r.metrics[fi].iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.method,
                    r.mode.as_str(),
                    f,
                    seeds[si],
                    m.accuracy,
                    m.mean_cross_entropy,
                    m.perplexity
                ));
            }
        }
    }
    out
}

pub fn retrain_summary_csv(results: &[RetrainResult]) -> String {
    let mut out =
        String::from("method,mode,fraction,accuracy_mean,accuracy_stddev,ce_mean,perplexity_mean\n");
    for r in results {
        for (fi, f) in r.fractions.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                r.mode.as_str(),
                f,
                r.accuracy_means[fi],
                r.accuracy_stddevs[fi],
                r.ce_means[fi],
                r.perplexity_means[fi]
            ));
        }
    }
    out
}

// --- retrieval ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub method: String,
    pub per_seed_top1: Vec<f64>,
    pub per_seed_top3: Vec<f64>,
    /// Proportion of test examples whose top-1 most influential training
    /// example shares their source.
    pub top1_same_class: f64,
    /// Proportion where all of the top-3 share the source.
    pub top3_same_class: f64,
}

/// Cross-source retrieval: each test example's own gradient is the query
/// (m = 1); counts whether the most influential (most helpful) training
/// examples share its source tag.
pub fn retrieval_experiment(cfg: &ProtocolConfig, method: &MethodSpec) -> Result<RetrievalResult> {
    cfg.validate()?;
    if !matches!(cfg.task.kind, TaskKind::MultiSource { .. }) {
        return Err(EvalError::BadConfig("retrieval needs a multi_source task".into()));
    }
    let mut per_seed_top1 = Vec::new();
    let mut per_seed_top3 = Vec::new();
    for &seed in &cfg.seeds {
        let task = cfg.task.clone().with_seed(seed);
        let ds = trainer::gen_task(&task)?;
        let hyper = Hyper { seed, ..cfg.hyper.clone() };
        let record = trainer::train(&cfg.model, &ds, &hyper)?;
        let (grads, acts) =
            trainer::per_example_gradients(&record.model, &ds, method.needs_activations())?;
        let train_rows = grads.train_indices();
        let train_sources: Vec<&str> =
            train_rows.iter().map(|&i| grads.meta()[i].source.as_str()).collect();
        let train_ids: Vec<u64> =
            train_rows.iter().map(|&i| grads.meta()[i].example_id).collect();
        let test_ix = ds.indices_of(DataSplit::Test);

        let engine_cfg = EngineConfig {
            damping: cfg.damping.clone(),
            ..EngineConfig::new(Engine::Orig)
        };
        // per-seed shared state: compression plan and prepared engine
        enum Scorer<'a> {
            Prepared { engine: PreparedEngine<'a>, plan: Option<compress::CompressionPlan> },
            Random,
        }
        let compressed_store;
        let scorer = match method {
            MethodSpec::Random => Scorer::Random,
            MethodSpec::Compressed(m) => {
                let plan = compress::make_plan(*m, cfg.r, seed, grads.layers(), Some(&grads))?;
                compressed_store = compress::compress_dataset(&plan, &grads, acts.as_ref())?;
                let engine = PreparedEngine::prepare(
                    EngineInput::Compressed(&compressed_store),
                    &engine_cfg,
                )?;
                Scorer::Prepared { engine, plan: Some(plan) }
            }
            MethodSpec::Orig => {
                let engine = PreparedEngine::prepare(EngineInput::Full(&grads), &engine_cfg)?;
                Scorer::Prepared { engine, plan: None }
            }
            MethodSpec::HessianFree => {
                let engine = PreparedEngine::prepare(
                    EngineInput::Full(&grads),
                    &EngineConfig { engine: Engine::HessianFree, ..engine_cfg.clone() },
                )?;
                Scorer::Prepared { engine, plan: None }
            }
            MethodSpec::Lissa { iterations } => {
                let engine = PreparedEngine::prepare(
                    EngineInput::Full(&grads),
                    &EngineConfig {
                        engine: Engine::Lissa { iterations: *iterations },
                        ..engine_cfg.clone()
                    },
                )?;
                Scorer::Prepared { engine, plan: None }
            }
            MethodSpec::DataInf => {
                let engine = PreparedEngine::prepare(
                    EngineInput::Full(&grads),
                    &EngineConfig { engine: Engine::DataInf, ..engine_cfg.clone() },
                )?;
                Scorer::Prepared { engine, plan: None }
            }
        };

        let mut hit1 = 0usize;
        let mut hit3 = 0usize;
        for (ti, &t) in test_ix.iter().enumerate() {
            let example = &ds.examples[t];
            let top: Vec<usize> = match &scorer {
                Scorer::Random => {
                    let mut stream = rng::stream(seed, "random-retrieval", ti as u64);
                    let scores: Vec<f64> =
                        (0..train_ids.len()).map(|_| stream.gen_range(-1.0..1.0)).collect();
                    top_k_by(&scores, 3, |a, b| b.partial_cmp(&a).unwrap())
                }
                Scorer::Prepared { engine, plan } => {
                    let g = record.model.example_gradient(&example.x, example.label);
                    let query = match plan {
                        Some(p) if p.method == Method::Logra => {
                            compress::compress_example_logra(p, &g.pairs)?
                        }
                        Some(p) => compress::compress_example(p, &g.gradient)?,
                        None => g.gradient,
                    };
                    let scores = engine.scores_for_query(&query)?;
                    // most helpful = most negative score
                    top_k_by(&scores, 3, |a, b| a.partial_cmp(&b).unwrap())
                }
            };
            if train_sources[top[0]] == example.source {
                hit1 += 1;
            }
            if top.iter().all(|&k| train_sources[k] == example.source) {
                hit3 += 1;
            }
        }
        per_seed_top1.push(hit1 as f64 / test_ix.len() as f64);
        per_seed_top3.push(hit3 as f64 / test_ix.len() as f64);
    }
    let top1 = mean_stddev(&per_seed_top1).0;
    let top3 = mean_stddev(&per_seed_top3).0;
    Ok(RetrievalResult {
        method: method.label(),
        per_seed_top1,
        per_seed_top3,
        top1_same_class: top1,
        top3_same_class: top3,
    })
}

/// Indices of the best `k` entries under `cmp` (first = best); ties broken
/// by lower index.
fn top_k_by(scores: &[f64], k: usize, mut cmp: impl FnMut(f64, f64) -> std::cmp::Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp(scores[a], scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn retrieval_csv(results: &[RetrievalResult]) -> String {
    let mut out = String::from("method,top1_same_source,top3_same_source\n");
    for r in results {
        out.push_str(&format!("{},{},{}\n", r.method, r.top1_same_class, r.top3_same_class));
    }
    out
}

// --- compression-size sweep ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub r: usize,
    pub per_seed_aucs: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Detection AUC as a function of compression size r, with min/mean/max
/// bands over seeds. Per-seed artifacts are shared across every (method, r)
/// cell.
pub fn sweep_r(
    cfg: &ProtocolConfig,
    flip_fraction: f64,
    methods: &[MethodSpec],
    r_list: &[usize],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if methods.iter().any(|m| !matches!(m, MethodSpec::Compressed(_))) {
        return Err(EvalError::BadConfig("sweep-r only makes sense for compressed methods".into()));
    }
    let capture = methods.iter().any(MethodSpec::needs_activations);
    let artifacts: Vec<SeedArtifacts> = cfg
        .seeds
        .iter()
        .map(|&s| detection_artifacts(cfg, flip_fraction, s, capture))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for method in methods {
        for &r in r_list {
            let mut aucs = Vec::new();
            for art in &artifacts {
                let report = score_with_method(
                    method,
                    &art.grads,
                    art.acts.as_ref(),
                    r,
                    art.seed,
                    &cfg.damping,
                )?;
                aucs.push(auc_mislabel(&report, &art.flipped_flags)?);
            }
            let (mean, _) = mean_stddev(&aucs);
            let min = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            rows.push(SweepRow { method: method.label(), r, per_seed_aucs: aucs, mean, min, max });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow], seeds: &[u64]) -> String {
    let mut out = String::from("method,r,mean,min,max");
    for s in seeds {
        out.push_str(&format!(",auc_seed{s}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}", r.method, r.r, r.mean, r.min, r.max));
        for a in &r.per_seed_aucs {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
    }
    out
}

// --- timing bench ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub plan_seconds: f64,
    pub compress_seconds: f64,
    pub ihvp_seconds: f64,
}

/// Wall-clock split of the compression phase (plan construction and
/// per-gradient application) and the iHVP phase, on a synthetic
/// single-layer dataset of `n` gradients of width `d`.
pub fn bench_methods(
    n: usize,
    d: usize,
    r: usize,
    methods: &[MethodSpec],
    seed: u64,
) -> Result<Vec<BenchResult>> {
    use crate::gradstore::LayerSpec;
    let layers = vec![LayerSpec::generic(0, "g", d)];
    let mut stream = rng::stream(seed, "bench-data", 0);
    let mut grads = Vec::with_capacity((n + 1) * d);
    for _ in 0..(n + 1) * d {
        grads.push(stream.gen_range(-1.0_f64..1.0));
    }
    let meta: Vec<ExampleMeta> = (0..=n)
        .map(|i| ExampleMeta {
            example_id: i as u64,
            label: 0,
            source: String::new(),
            split: if i < n { Split::Train } else { Split::Val },
            flipped: false,
        })
        .collect();
    let ds = GradientDataset::new(layers, meta, grads)?;
    let damping = DampingConfig::Fixed(0.1);
    let engine_cfg = EngineConfig { damping: damping.clone(), ..EngineConfig::new(Engine::Orig) };

    let mut out = Vec::new();
    for method in methods {
        let (plan_seconds, compress_seconds, ihvp_seconds) = match method {
            MethodSpec::Compressed(m) => {
                let t0 = Instant::now();
                let plan = compress::make_plan(*m, r, seed, ds.layers(), Some(&ds))?;
                let plan_seconds = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let cds = compress::compress_dataset(&plan, &ds, None)?;
                let compress_seconds = t1.elapsed().as_secs_f64();
                let rep = influence::influence_compressed(&cds, &engine_cfg)?;
                (plan_seconds, compress_seconds, rep.timings.ihvp_seconds)
            }
            MethodSpec::Orig => {
                let rep = influence::influence_orig(&ds, &engine_cfg)?;
                (0.0, 0.0, rep.timings.ihvp_seconds)
            }
            MethodSpec::HessianFree => {
                let rep = influence::influence_hessian_free(&ds)?;
                (0.0, 0.0, rep.timings.ihvp_seconds)
            }
            MethodSpec::Lissa { iterations } => {
                let rep = influence::influence_lissa(&ds, &engine_cfg, *iterations)?;
                (0.0, 0.0, rep.timings.ihvp_seconds)
            }
            MethodSpec::DataInf => {
                let rep = influence::influence_datainf(&ds, &engine_cfg)?;
                (0.0, 0.0, rep.timings.ihvp_seconds)
            }
            MethodSpec::Random => (0.0, 0.0, 0.0),
        };
        out.push(BenchResult {
            method: method.label(),
            n,
            d,
            r,
            plan_seconds,
            compress_seconds,
            ihvp_seconds,
        });
    }
    Ok(out)
}

pub fn bench_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("method,n,d,r,plan_seconds,compress_seconds,ihvp_seconds\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.method, r.n, r.d, r.r, r.plan_seconds, r.compress_seconds, r.ihvp_seconds
        ));
    }
    out
}

//! Influence scoring engines over full or compressed gradient datasets.
//!
//! Every engine produces `score_k = -v^T (H_l + lambda_l I)^{-1} g_k^(l)`
//! summed over layer blocks (or its engine-specific approximation), where
//! `H_l` is the Gauss-Newton block `(1/n) sum_i g_i g_i^T` of the training
//! split and `v` the query vector. Positive scores mark training examples
//! whose upweighting increases validation loss; the most helpful examples
//! (the ones worth keeping) sit at the negative end.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::CompressedDataset;
use crate::gradstore::{self, GradStoreError, GradientDataset};
use crate::linalg::{self, Cholesky, DenseMatrix, LinalgError};

/// Dense-solve feasibility cutoff; larger blocks fall back to the Woodbury
/// route when the training split is smaller than the block.
pub const DENSE_FEASIBLE_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum InfluenceError {
    #[error("all training gradients are zero in block `{0}`; paper-rule damping undefined")]
    AllZeroGradients(String),
    #[error("block `{name}` infeasible: width {width} > {DENSE_FEASIBLE_DIM} and n={n} >= width")]
    InfeasibleDense { name: String, width: usize, n: usize },
    #[error("damping must be positive (got {0})")]
    NonPositiveDamping(f64),
    #[error("explicit damping supplies {got} values for {want} blocks")]
    DampingArity { got: usize, want: usize },
    #[error("no training examples to score")]
    NoTrainExamples,
    #[error("query width {got} != dataset width {want}")]
    QueryWidth { got: usize, want: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Grad(#[from] GradStoreError),
}

pub type Result<T> = std::result::Result<T, InfluenceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DampingConfig {
    /// `lambda_l = 0.1 * (n d_l)^{-1} sum_i ||g_i^(l)||^2`, computed on
    /// whatever gradient space the engine consumes.
    PaperRule,
    /// One positive value for every block.
    Fixed(f64),
    /// Caller-supplied per-block values; zero is allowed and invertibility
    /// becomes the caller's responsibility.
    PerLayerExplicit(Vec<f64>),
}

impl Default for DampingConfig {
    fn default() -> Self {
        DampingConfig::PaperRule
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BlockMode {
    /// Block-diagonal per-layer Hessian: each layer solved independently,
    /// scores summed.
    #[default]
    PerLayer,
    /// One block over the whole concatenated gradient.
    SingleBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OrigRoute {
    /// Dense when the block width allows it, else Woodbury when n < width.
    #[default]
    Auto,
    ForceDense,
    ForceWoodbury,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Engine {
    Orig,
    Compressed,
    Lissa { iterations: usize },
    DataInf,
    HessianFree,
}

impl Engine {
    pub fn lissa_default() -> Self {
        Engine::Lissa { iterations: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub engine: Engine,
    pub damping: DampingConfig,
    pub block_mode: BlockMode,
    pub orig_route: OrigRoute,
}

impl EngineConfig {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            damping: DampingConfig::PaperRule,
            block_mode: BlockMode::PerLayer,
            orig_route: OrigRoute::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub ihvp_seconds: f64,
    pub compression_seconds: f64,
}

/// Per-training-example influence scores with provenance and ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub method: String,
    pub seed: u64,
    /// Training example ids in dataset order, aligned with `scores`.
    pub example_ids: Vec<u64>,
    pub scores: Vec<f64>,
    /// Example ids by descending score, ties broken by ascending id.
    pub ranking: Vec<u64>,
    /// Resolved per-block damping values.
    pub damping: Vec<(String, f64)>,
    /// LiSSA normalization constants per block, when that engine ran.
    pub lissa_scales: Option<Vec<f64>>,
    pub timings: Timings,
}

impl InfluenceReport {
    /// Ids ordered by how much removing the example would hurt validation
    /// loss: largest `v^T (H+lambda I)^{-1} g_k` first (ascending score).
    pub fn ranking_by_helpfulness(&self) -> Vec<u64> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[a]
                .partial_cmp(&self.scores[b])
                .unwrap()
                .then(self.example_ids[a].cmp(&self.example_ids[b]))
        });
        order.into_iter().map(|i| self.example_ids[i]).collect()
    }

    /// CSV rows `example_id,score,rank,method,seed` in dataset order; rank 1
    /// is the highest score.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        let mut rank_of = std::collections::HashMap::new();
        for (pos, id) in self.ranking.iter().enumerate() {
            rank_of.insert(*id, pos + 1);
        }
        writeln!(w, "example_id,score,rank,method,seed")?;
        for (id, score) in self.example_ids.iter().zip(&self.scores) {
            writeln!(w, "{},{:.17e},{},{},{}", id, score, rank_of[id], self.method, self.seed)?;
        }
        Ok(())
    }

    /// One-line JSON run record: config echo, damping, timings, summary.
    pub fn run_record(&self, config_echo: &serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "seed": self.seed,
            "n_scored": self.scores.len(),
            "damping": self.damping,
            "lissa_scales": self.lissa_scales,
            "timings": { "ihvp_seconds": self.timings.ihvp_seconds,
                         "compression_seconds": self.timings.compression_seconds },
            "top5": self.ranking.iter().take(5).collect::<Vec<_>>(),
            "config": config_echo,
        })
    }
}

fn block_ranges(ds: &GradientDataset, mode: BlockMode) -> (Vec<Range<usize>>, Vec<String>) {
    match mode {
        BlockMode::PerLayer => {
            let ranges = (0..ds.layers().len()).map(|l| ds.layer_range(l)).collect();
            let names = ds.layers().iter().map(|l| l.name.clone()).collect();
            (ranges, names)
        }
        BlockMode::SingleBlock => (vec![0..ds.total_dim()], vec!["all".to_string()]),
    }
}

/// Resolves per-block damping for a dataset under the given policy.
pub fn resolve_damping(
    ds: &GradientDataset,
    mode: BlockMode,
    cfg: &DampingConfig,
) -> Result<Vec<(String, f64)>> {
    let (ranges, names) = block_ranges(ds, mode);
    let values = match cfg {
        DampingConfig::PaperRule => paper_rule_values(ds, &ranges, &names)?,
        DampingConfig::Fixed(v) => {
            if *v <= 0.0 {
                return Err(InfluenceError::NonPositiveDamping(*v));
            }
            vec![*v; ranges.len()]
        }
        DampingConfig::PerLayerExplicit(vs) => {
            if vs.len() != ranges.len() {
                return Err(InfluenceError::DampingArity { got: vs.len(), want: ranges.len() });
            }
            vs.clone()
        }
    };
    Ok(names.into_iter().zip(values).collect())
}

/// `lambda_l = 0.1 * (n d_l)^{-1} sum_i ||g_i^(l)||^2` over the training
/// split of whichever gradient space `ds` holds.
pub fn damping_from_paper_rule(
    ds: &GradientDataset,
    mode: BlockMode,
) -> Result<Vec<(String, f64)>> {
    resolve_damping(ds, mode, &DampingConfig::PaperRule)
}

fn paper_rule_values(
    ds: &GradientDataset,
    ranges: &[Range<usize>],
    names: &[String],
) -> Result<Vec<f64>> {
    let train = ds.train_indices();
    if train.is_empty() {
        return Err(InfluenceError::NoTrainExamples);
    }
    let mut out = Vec::with_capacity(ranges.len());
    for (range, name) in ranges.iter().zip(names) {
        let mut sum_sq = 0.0_f64;
        for &i in &train {
            let block = &ds.row(i)[range.clone()];
            sum_sq += linalg::dot(block, block);
        }
        if sum_sq == 0.0 {
            return Err(InfluenceError::AllZeroGradients(name.clone()));
        }
        out.push(0.1 * sum_sq / (train.len() as f64 * range.len() as f64));
    }
    Ok(out)
}

// --- iHVP routes ---

/// Dense route: factor `H + lambda I` with `H = (1/n) G^T G` materialized.
pub fn ihvp_dense(g: &DenseMatrix, lambda: f64, v: &[f64]) -> Result<Vec<f64>> {
    let chol = dense_factor(g, lambda)?;
    Ok(chol.solve(v))
}

fn dense_factor(g: &DenseMatrix, lambda: f64) -> Result<Cholesky> {
    let n = g.rows();
    let w = g.cols();
    let mut h = DenseMatrix::zeros(w, w);
    for i in 0..n {
        let row = g.row(i);
        for a in 0..w {
            let ga = row[a];
            if ga == 0.0 {
                continue;
            }
            for b in 0..w {
                h.set(a, b, h.get(a, b) + ga * row[b]);
            }
        }
    }
    let h = h.scaled(1.0 / n as f64).add_diagonal(lambda);
    Ok(Cholesky::factor(&h)?)
}

/// Woodbury route for `n < width`:
/// `(lambda I + (1/n) G^T G)^{-1} v = (1/lambda)(v - G^T (n lambda I_n + G G^T)^{-1} G v)`.
pub fn ihvp_woodbury(g: &DenseMatrix, lambda: f64, v: &[f64]) -> Result<Vec<f64>> {
    let chol = woodbury_factor(g, lambda)?;
    Ok(woodbury_apply(g, &chol, lambda, v))
}

fn woodbury_factor(g: &DenseMatrix, lambda: f64) -> Result<Cholesky> {
    let n = g.rows();
    let mut gram = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d = linalg::dot(g.row(i), g.row(j));
            gram.set(i, j, d);
            gram.set(j, i, d);
        }
    }
    let inner = gram.add_diagonal(n as f64 * lambda);
    Ok(Cholesky::factor(&inner)?)
}

fn woodbury_apply(g: &DenseMatrix, chol: &Cholesky, lambda: f64, v: &[f64]) -> Vec<f64> {
    let gv = g.matvec(v);
    let y = chol.solve(&gv);
    let gty = g.matvec_t(&y);
    v.iter().zip(&gty).map(|(vi, gi)| (vi - gi) / lambda).collect()
}

enum PreparedBlock {
    Dense { chol: Cholesky },
    Woodbury { g: DenseMatrix, chol: Cholesky, lambda: f64 },
    DataInf { g: DenseMatrix, denom: Vec<f64>, lambda: f64 },
    Lissa { g: DenseMatrix, scale: f64, iterations: usize, lambda: f64 },
    HessFree,
}

impl PreparedBlock {
    fn ihvp(&self, v: &[f64]) -> Vec<f64> {
        match self {
            PreparedBlock::Dense { chol } => chol.solve(v),
            PreparedBlock::Woodbury { g, chol, lambda } => woodbury_apply(g, chol, *lambda, v),
            PreparedBlock::DataInf { g, denom, lambda } => {
                let n = g.rows();
                let mut acc: Vec<f64> = v.iter().map(|x| x * n as f64).collect();
                for (i, d) in denom.iter().enumerate() {
                    let row = g.row(i);
                    let coef = linalg::dot(row, v) / d;
                    for (a, &r) in acc.iter_mut().zip(row) {
                        *a -= coef * r;
                    }
                }
                let s = 1.0 / (n as f64 * lambda);
                acc.iter_mut().for_each(|a| *a *= s);
                acc
            }
            PreparedBlock::Lissa { g, scale, iterations, lambda } => {
                let n = g.rows() as f64;
                let apply_scaled = |s: &[f64]| -> Vec<f64> {
                    // ((1/n) G^T (G s) + lambda s) / scale
                    let gs = g.matvec(s);
                    let gtgs = g.matvec_t(&gs);
                    gtgs.iter().zip(s).map(|(h, si)| (h / n + lambda * si) / scale).collect()
                };
                let mut s = v.to_vec();
                for _ in 0..*iterations {
                    let hs = apply_scaled(&s);
                    for ((si, vi), hi) in s.iter_mut().zip(v).zip(&hs) {
                        *si = vi + *si - hi;
                    }
                }
                s.iter().map(|x| x / scale).collect()
            }
            PreparedBlock::HessFree => v.to_vec(),
        }
    }
}

enum Route {
    Dense,
    Woodbury,
}

/// An engine with its shared per-block factorization done, ready to score
/// any number of query vectors against the training split.
pub struct PreparedEngine<'a> {
    ds: &'a GradientDataset,
    train: Vec<usize>,
    ranges: Vec<Range<usize>>,
    blocks: Vec<PreparedBlock>,
    pub damping: Vec<(String, f64)>,
    pub lissa_scales: Option<Vec<f64>>,
    pub method: String,
    pub prepare_seconds: f64,
}

pub enum EngineInput<'a> {
    Full(&'a GradientDataset),
    Compressed(&'a CompressedDataset),
}

impl<'a> EngineInput<'a> {
    fn dataset(&self) -> &'a GradientDataset {
        match self {
            EngineInput::Full(ds) => ds,
            EngineInput::Compressed(cds) => &cds.data,
        }
    }

    fn method_label(&self, engine: &Engine) -> String {
        match (self, engine) {
            (EngineInput::Compressed(cds), _) => {
                let fp = &cds.fingerprint;
                format!("{}(r={},seed={})", fp.method, fp.r_total, fp.seed)
            }
            (EngineInput::Full(_), Engine::Orig) => "orig".into(),
            (EngineInput::Full(_), Engine::Lissa { iterations }) => {
                format!("lissa(T={iterations})")
            }
            (EngineInput::Full(_), Engine::DataInf) => "datainf".into(),
            (EngineInput::Full(_), Engine::HessianFree) => "hessian_free".into(),
            (EngineInput::Full(_), Engine::Compressed) => "compressed".into(),
        }
    }
}

impl<'a> PreparedEngine<'a> {
    /// Runs the shared phase: damping resolution and per-block
    /// factorizations. Single-threaded and deterministic.
    pub fn prepare(input: EngineInput<'a>, cfg: &EngineConfig) -> Result<Self> {
        let started = Instant::now();
        let ds = input.dataset();
        let train = ds.train_indices();
        if train.is_empty() {
            return Err(InfluenceError::NoTrainExamples);
        }
        let (ranges, names) = block_ranges(ds, cfg.block_mode);
        let damping = resolve_damping(ds, cfg.block_mode, &cfg.damping)?;
        let n = train.len();

        let mut blocks = Vec::with_capacity(ranges.len());
        let mut lissa_scales = Vec::new();
        for (bi, range) in ranges.iter().enumerate() {
            let lambda = damping[bi].1;
            let width = range.len();
            let block = match &cfg.engine {
                Engine::HessianFree => PreparedBlock::HessFree,
                Engine::DataInf => {
                    let g = extract_block(ds, &train, range);
                    let denom =
                        (0..n).map(|i| lambda + linalg::dot(g.row(i), g.row(i))).collect();
                    PreparedBlock::DataInf { g, denom, lambda }
                }
                Engine::Lissa { iterations } => {
                    let g = extract_block(ds, &train, range);
                    // sigma_max(H + lambda I) = sigma_max(H) + lambda for PSD H
                    let sigma = linalg::psd_operator_norm(width, |v| {
                        let gv = g.matvec(v);
                        let mut h = g.matvec_t(&gv);
                        h.iter_mut().for_each(|x| *x /= n as f64);
                        h
                    }) + lambda;
                    // rescale only when the convergence condition H+lI <= I fails
                    let scale = (sigma * (1.0 + 1e-6)).max(1.0);
                    lissa_scales.push(scale);
                    PreparedBlock::Lissa { g, scale, iterations: *iterations, lambda }
                }
                Engine::Orig | Engine::Compressed => {
                    let route = match cfg.orig_route {
                        OrigRoute::ForceDense => Route::Dense,
                        OrigRoute::ForceWoodbury => Route::Woodbury,
                        OrigRoute::Auto => {
                            if width <= DENSE_FEASIBLE_DIM {
                                Route::Dense
                            } else if n < width {
                                Route::Woodbury
                            } else {
                                return Err(InfluenceError::InfeasibleDense {
                                    name: names[bi].clone(),
                                    width,
                                    n,
                                });
                            }
                        }
                    };
                    let g = extract_block(ds, &train, range);
                    match route {
                        Route::Dense => PreparedBlock::Dense { chol: dense_factor(&g, lambda)? },
                        Route::Woodbury => {
                            let chol = woodbury_factor(&g, lambda)?;
                            PreparedBlock::Woodbury { g, chol, lambda }
                        }
                    }
                }
            };
            blocks.push(block);
        }
        let method = input.method_label(&cfg.engine);
        Ok(Self {
            ds,
            train,
            ranges,
            blocks,
            damping,
            lissa_scales: (!lissa_scales.is_empty()).then_some(lissa_scales),
            method,
            prepare_seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn train_example_ids(&self) -> Vec<u64> {
        self.train.iter().map(|&i| self.ds.meta()[i].example_id).collect()
    }

    /// Scores every training example against one query vector:
    /// `score_k = -sum_blocks x_b^T g_k^(b)` with `x_b` the block iHVP of
    /// the query. Per-example scoring is parallel; results are independent
    /// of thread count.
    pub fn scores_for_query(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.ds.total_dim() {
            return Err(InfluenceError::QueryWidth {
                got: query.len(),
                want: self.ds.total_dim(),
            });
        }
        let mut x_full = vec![0.0_f64; self.ds.total_dim()];
        for (range, block) in self.ranges.iter().zip(&self.blocks) {
            let x = block.ihvp(&query[range.clone()]);
            x_full[range.clone()].copy_from_slice(&x);
        }
        Ok(self.train.par_iter().map(|&i| -linalg::dot(self.ds.row(i), &x_full)).collect())
    }

    fn report_for_query(&self, query: &[f64], extra_seconds: f64) -> Result<InfluenceReport> {
        let started = Instant::now();
        let scores = self.scores_for_query(query)?;
        let ids = self.train_example_ids();
        let ranking = rank_descending(&ids, &scores);
        Ok(InfluenceReport {
            method: self.method.clone(),
            seed: 0,
            example_ids: ids,
            scores,
            ranking,
            damping: self.damping.clone(),
            lissa_scales: self.lissa_scales.clone(),
            timings: Timings {
                ihvp_seconds: self.prepare_seconds
                    + extra_seconds
                    + started.elapsed().as_secs_f64(),
                compression_seconds: 0.0,
            },
        })
    }
}

fn extract_block(ds: &GradientDataset, rows: &[usize], range: &Range<usize>) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), range.len(), |i, j| ds.row(rows[i])[range.start + j])
}

fn rank_descending(ids: &[u64], scores: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(ids[a].cmp(&ids[b])));
    order.into_iter().map(|i| ids[i]).collect()
}

/// Runs an engine end to end with the averaged-validation query.
pub fn run_engine(input: EngineInput<'_>, cfg: &EngineConfig) -> Result<InfluenceReport> {
    let started = Instant::now();
    let query = gradstore::build_query(input.dataset())?;
    let query_seconds = started.elapsed().as_secs_f64();
    let prepared = PreparedEngine::prepare(input, cfg)?;
    prepared.report_for_query(&query.data, query_seconds)
}

/// Original influence over full gradients, dense or Woodbury route.
pub fn influence_orig(ds: &GradientDataset, cfg: &EngineConfig) -> Result<InfluenceReport> {
    let cfg = EngineConfig { engine: Engine::Orig, ..cfg.clone() };
    run_engine(EngineInput::Full(ds), &cfg)
}

/// Influence over compressed gradients: per-block `H~ = (1/n) sum g~ g~^T`
/// solved densely in the r-dimensional space.
pub fn influence_compressed(
    cds: &CompressedDataset,
    cfg: &EngineConfig,
) -> Result<InfluenceReport> {
    let cfg = EngineConfig { engine: Engine::Compressed, ..cfg.clone() };
    run_engine(EngineInput::Compressed(cds), &cfg)
}

/// LiSSA iterations `s_{i+1} = v + (I - (H + lambda I)/c) s_i` on a system
/// rescaled by `c = max(1, sigma_max(H + lambda I) (1 + 1e-6))`, final
/// iterate divided by `c`.
pub fn influence_lissa(
    ds: &GradientDataset,
    cfg: &EngineConfig,
    iterations: usize,
) -> Result<InfluenceReport> {
    let cfg = EngineConfig { engine: Engine::Lissa { iterations }, ..cfg.clone() };
    run_engine(EngineInput::Full(ds), &cfg)
}

/// Closed-form approximation that swaps inversion and averaging; each
/// rank-one term inverted exactly by Sherman-Morrison.
pub fn influence_datainf(ds: &GradientDataset, cfg: &EngineConfig) -> Result<InfluenceReport> {
    let cfg = EngineConfig { engine: Engine::DataInf, ..cfg.clone() };
    run_engine(EngineInput::Full(ds), &cfg)
}

/// Plain gradient dot products: `score_k = -v^T g_k`.
pub fn influence_hessian_free(ds: &GradientDataset) -> Result<InfluenceReport> {
    let cfg = EngineConfig::new(Engine::HessianFree);
    run_engine(EngineInput::Full(ds), &cfg)
}

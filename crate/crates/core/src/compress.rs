//! Gradient compression plans: dropout coordinate retention, dense Gaussian
//! projection, FJLT, PCA, and Kronecker-factored (LOGRA-style) projection.
//!
//! A plan maps d-dimensional per-layer gradients to r-dimensional compressed
//! gradients. Plans are deterministic in `(method, seed, layers)`, immutable
//! after construction, and shareable across threads.

use rand::distributions::Distribution;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradstore::{
    ActivationStore, GradStoreError, GradientDataset, LayerKind, LayerSpec,
};
use crate::linalg::{self, DenseMatrix};
use crate::rng;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("budget {r_total} exceeds total gradient width {d_total}")]
    BudgetTooLarge { r_total: usize, d_total: usize },
    #[error("budget {r_total} cannot give every one of {n_layers} layers at least one coordinate")]
    BudgetTooSmall { r_total: usize, n_layers: usize },
    #[error("pca plans need training gradients")]
    PcaNeedsGradients,
    #[error("logra plans need linear-kind layers (layer {0} is generic)")]
    LograNeedsLinearLayers(usize),
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Grad(#[from] GradStoreError),
}

pub type Result<T> = std::result::Result<T, CompressError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Dropout,
    Gaussian,
    Fjlt,
    Pca,
    Logra,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dropout => "dropout",
            Method::Gaussian => "gaussian",
            Method::Fjlt => "fjlt",
            Method::Pca => "pca",
            Method::Logra => "logra",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dropout" => Ok(Method::Dropout),
            "gaussian" => Ok(Method::Gaussian),
            "fjlt" => Ok(Method::Fjlt),
            "pca" => Ok(Method::Pca),
            "logra" => Ok(Method::Logra),
            other => Err(format!("unknown compression method `{other}`")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-layer compression state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerPlan {
    /// Sorted distinct retained coordinates; the selection matrix is never
    /// materialized.
    DropoutIndices(Vec<usize>),
    /// r_l x d_l i.i.d. standard normal rows.
    GaussianRows(DenseMatrix),
    /// Sign diagonal over the padded (power-of-two) width, sampled output
    /// coordinates, and the sqrt(d_pad / r_l) rescale.
    FjltPlan {
        signs: Vec<f64>,
        sampled: Vec<usize>,
        scale: f64,
    },
    /// Orthonormal rows: top right-singular vectors of the training
    /// gradient stack.
    PcaRows(DenseMatrix),
    /// Kronecker factors applied to (h, delta) activation pairs.
    KronPlan { p_in: DenseMatrix, p_out: DenseMatrix },
}

impl LayerPlan {
    pub fn output_dim(&self) -> usize {
        match self {
            LayerPlan::DropoutIndices(ix) => ix.len(),
            LayerPlan::GaussianRows(m) | LayerPlan::PcaRows(m) => m.rows(),
            LayerPlan::FjltPlan { sampled, .. } => sampled.len(),
            LayerPlan::KronPlan { p_in, p_out } => p_in.rows() * p_out.rows(),
        }
    }
}

/// Identifies the plan that produced a compressed dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFingerprint {
    pub method: Method,
    pub seed: u64,
    pub r_total: usize,
    pub gaussian_scaled: bool,
}

impl PlanFingerprint {
    fn encode(&self) -> String {
        format!(
            "fp:{}:{}:{}:{}",
            self.method.as_str(),
            self.seed,
            self.r_total,
            self.gaussian_scaled as u8
        )
    }

    fn decode(s: &str) -> Option<Self> {
        let mut it = s.strip_prefix("fp:")?.split(':');
        let method: Method = it.next()?.parse().ok()?;
        let seed = it.next()?.parse().ok()?;
        let r_total = it.next()?.parse().ok()?;
        let gaussian_scaled = it.next()? == "1";
        Some(Self { method, seed, r_total, gaussian_scaled })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub method: Method,
    pub r_total: usize,
    pub seed: u64,
    /// When set, Gaussian outputs are scaled by 1/sqrt(r_l) for
    /// Johnson-Lindenstrauss-style norm preservation. Off by default: the
    /// error-bound analysis assumes unit-variance entries.
    pub gaussian_scaled: bool,
    /// Source layer specs the plan was built for.
    pub source_layers: Vec<LayerSpec>,
    pub per_layer: Vec<LayerPlan>,
}

impl CompressionPlan {
    pub fn fingerprint(&self) -> PlanFingerprint {
        PlanFingerprint {
            method: self.method,
            seed: self.seed,
            r_total: self.r_total,
            gaussian_scaled: self.gaussian_scaled,
        }
    }

    pub fn layer_budgets(&self) -> Vec<usize> {
        self.per_layer.iter().map(|p| p.output_dim()).collect()
    }

    /// Layer specs of the compressed space.
    pub fn compressed_layers(&self) -> Vec<LayerSpec> {
        self.source_layers
            .iter()
            .zip(&self.per_layer)
            .map(|(spec, lp)| match lp {
                LayerPlan::KronPlan { p_in, p_out } => LayerSpec::linear(
                    spec.layer_id,
                    spec.name.clone(),
                    p_in.rows(),
                    p_out.rows(),
                ),
                other => LayerSpec::generic(spec.layer_id, spec.name.clone(), other.output_dim()),
            })
            .collect()
    }

    /// Assembles a plan from externally built layer plans. Used by tests and
    /// the bound-verification harness to pin exact maps.
    pub fn from_layer_plans(
        method: Method,
        seed: u64,
        source_layers: Vec<LayerSpec>,
        per_layer: Vec<LayerPlan>,
    ) -> Self {
        let r_total = per_layer.iter().map(|p| p.output_dim()).sum();
        Self { method, r_total, seed, gaussian_scaled: false, source_layers, per_layer }
    }

    pub fn with_jl_scaling(mut self) -> Self {
        self.gaussian_scaled = true;
        self
    }

    /// Materializes the explicit r_l x d_l map of one layer. Dropout, FJLT,
    /// and the Kronecker plan are reconstructed from their structure;
    /// Gaussian and PCA already store rows.
    pub fn materialize_map(&self, layer: usize) -> DenseMatrix {
        let d = self.source_layers[layer].dim;
        match &self.per_layer[layer] {
            LayerPlan::GaussianRows(m) => {
                if self.gaussian_scaled {
                    m.scaled(1.0 / (m.rows() as f64).sqrt())
                } else {
                    m.clone()
                }
            }
            LayerPlan::PcaRows(m) => m.clone(),
            LayerPlan::DropoutIndices(ix) => {
                let mut m = DenseMatrix::zeros(ix.len(), d);
                for (r, &j) in ix.iter().enumerate() {
                    m.set(r, j, 1.0);
                }
                m
            }
            LayerPlan::KronPlan { p_in, p_out } => {
                let (ri, ro) = (p_in.rows(), p_out.rows());
                let (d_in, d_out) = (p_in.cols(), p_out.cols());
                DenseMatrix::from_fn(ri * ro, d_in * d_out, |r, c| {
                    p_in.get(r / ro, c / d_out) * p_out.get(r % ro, c % d_out)
                })
            }
            LayerPlan::FjltPlan { signs, sampled, scale } => {
                // column j of the map = compression of e_j
                let d_pad = signs.len();
                let mut m = DenseMatrix::zeros(sampled.len(), d);
                let mut col = vec![0.0_f64; d_pad];
                for j in 0..d {
                    col.iter_mut().for_each(|x| *x = 0.0);
                    col[j] = signs[j];
                    linalg::hadamard_in_place(&mut col);
                    for (r, &k) in sampled.iter().enumerate() {
                        m.set(r, j, col[k] * scale);
                    }
                }
                m
            }
        }
    }
}

/// Splits `r_total` across layers proportionally to their widths, with a
/// largest-remainder correction so budgets sum exactly while staying in
/// `[1, d_l]`.
fn apportion(r_total: usize, dims: &[usize]) -> Result<Vec<usize>> {
    let d_total: usize = dims.iter().sum();
    if r_total > d_total {
        return Err(CompressError::BudgetTooLarge { r_total, d_total });
    }
    if r_total < dims.len() || r_total == 0 {
        return Err(CompressError::BudgetTooSmall { r_total, n_layers: dims.len() });
    }
    let ideals: Vec<f64> = dims
        .iter()
        .map(|&d| r_total as f64 * d as f64 / d_total as f64)
        .collect();
    let mut budgets: Vec<usize> = ideals
        .iter()
        .zip(dims)
        .map(|(&q, &d)| (q.round() as usize).clamp(1, d))
        .collect();
    loop {
        let total: usize = budgets.iter().sum();
        if total == r_total {
            break;
        }
        if total < r_total {
            // most under-served layer with headroom
            let pick = (0..dims.len())
                .filter(|&l| budgets[l] < dims[l])
                .max_by(|&a, &b| {
                    let ra = ideals[a] - budgets[a] as f64;
                    let rb = ideals[b] - budgets[b] as f64;
                    ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
                })
                .expect("feasible budget has headroom");
            budgets[pick] += 1;
        } else {
            // most over-served layer that can shrink
            let pick = (0..dims.len())
                .filter(|&l| budgets[l] > 1)
                .min_by(|&a, &b| {
                    let ra = ideals[a] - budgets[a] as f64;
                    let rb = ideals[b] - budgets[b] as f64;
                    ra.partial_cmp(&rb).unwrap().then(a.cmp(&b))
                })
                .expect("feasible budget can shrink");
            budgets[pick] -= 1;
        }
    }
    Ok(budgets)
}

/// Builds a compression plan. Deterministic for fixed `(method, seed,
/// layers)`; plan construction draws from per-layer streams keyed by
/// `(seed, layer_id)`.
pub fn make_plan(
    method: Method,
    r_total: usize,
    seed: u64,
    layers: &[LayerSpec],
    training_grads: Option<&GradientDataset>,
) -> Result<CompressionPlan> {
    let dims: Vec<usize> = layers.iter().map(|l| l.dim).collect();
    let budgets = apportion(r_total, &dims)?;
    let mut per_layer = Vec::with_capacity(layers.len());
    for (l, spec) in layers.iter().enumerate() {
        let r_l = budgets[l];
        let d_l = spec.dim;
        let mut stream = rng::stream(seed, "plan", spec.layer_id as u64);
        let plan = match method {
            Method::Dropout => {
                let mut ix = index_sample(&mut stream, d_l, r_l).into_vec();
                ix.sort_unstable();
                LayerPlan::DropoutIndices(ix)
            }
            Method::Gaussian => {
                LayerPlan::GaussianRows(gaussian_matrix(r_l, d_l, &mut stream))
            }
            Method::Fjlt => {
                let d_pad = d_l.next_power_of_two();
                let signs: Vec<f64> = (0..d_pad)
                    .map(|_| if stream.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let mut sampled = index_sample(&mut stream, d_pad, r_l).into_vec();
                sampled.sort_unstable();
                let scale = (d_pad as f64 / r_l as f64).sqrt();
                LayerPlan::FjltPlan { signs, sampled, scale }
            }
            Method::Pca => {
                let ds = training_grads.ok_or(CompressError::PcaNeedsGradients)?;
                LayerPlan::PcaRows(pca_rows(ds, l, r_l)?)
            }
            Method::Logra => {
                let (d_in, d_out) = match spec.kind {
                    LayerKind::Linear { in_dim, out_dim } => (in_dim, out_dim),
                    LayerKind::Generic => {
                        return Err(CompressError::LograNeedsLinearLayers(spec.layer_id))
                    }
                };
                let s = ((r_l as f64).sqrt().floor() as usize).max(1);
                let r_in = s.min(d_in);
                let r_out = s.min(d_out);
                let p_in = gaussian_matrix(r_in, d_in, &mut stream);
                let p_out = gaussian_matrix(r_out, d_out, &mut stream);
                LayerPlan::KronPlan { p_in, p_out }
            }
        };
        per_layer.push(plan);
    }
    let r_actual = per_layer.iter().map(|p| p.output_dim()).sum();
    Ok(CompressionPlan {
        method,
        r_total: r_actual,
        seed,
        gaussian_scaled: false,
        source_layers: layers.to_vec(),
        per_layer,
    })
}

fn gaussian_matrix(rows: usize, cols: usize, stream: &mut impl Rng) -> DenseMatrix {
    let normal = StandardNormal;
    DenseMatrix::from_fn(rows, cols, |_, _| normal.sample(stream))
}

/// Top right-singular vectors of the training-split stack of layer `l`,
/// uncentered. When the stack has fewer components than requested, the rows
/// are completed to an orthonormal set from the standard basis.
fn pca_rows(ds: &GradientDataset, l: usize, r_l: usize) -> Result<DenseMatrix> {
    let train = ds.train_indices();
    if train.is_empty() {
        return Err(CompressError::PcaNeedsGradients);
    }
    let range = ds.layer_range(l);
    let d_l = range.len();
    let stack = DenseMatrix::from_fn(train.len(), d_l, |i, j| ds.row(train[i])[range.start + j]);
    let svd = linalg::svd_thin(&stack)?;
    let avail = svd.vt.rows().min(r_l);
    let mut rows = DenseMatrix::zeros(r_l, d_l);
    for r in 0..avail {
        for j in 0..d_l {
            rows.set(r, j, svd.vt.get(r, j));
        }
    }
    for r in avail..r_l {
        fill_orthonormal_row(&mut rows, r);
    }
    Ok(rows)
}

fn fill_orthonormal_row(rows: &mut DenseMatrix, slot: usize) {
    let d = rows.cols();
    for cand in 0..d {
        let mut v = vec![0.0_f64; d];
        v[cand] = 1.0;
        for _ in 0..2 {
            for r in 0..rows.rows() {
                if r == slot {
                    continue;
                }
                let proj = linalg::dot(rows.row(r), &v);
                for (j, x) in v.iter_mut().enumerate() {
                    *x -= proj * rows.get(r, j);
                }
            }
        }
        let n = linalg::norm2(&v);
        if n > 1e-6 {
            for (j, x) in v.iter().enumerate() {
                rows.set(slot, j, x / n);
            }
            return;
        }
    }
}

/// Compresses one gradient row (all layers concatenated). Logra plans need
/// activation pairs instead; see [`compress_example_logra`].
pub fn compress_example(plan: &CompressionPlan, g: &[f64]) -> Result<Vec<f64>> {
    let d_total: usize = plan.source_layers.iter().map(|l| l.dim).sum();
    if g.len() != d_total {
        return Err(CompressError::PlanMismatch(format!(
            "row width {} != plan width {}",
            g.len(),
            d_total
        )));
    }
    if plan.method == Method::Logra {
        return Err(CompressError::PlanMismatch(
            "logra compression needs activation pairs".into(),
        ));
    }
    let mut out = Vec::with_capacity(plan.r_total);
    let mut offset = 0usize;
    for (spec, lp) in plan.source_layers.iter().zip(&plan.per_layer) {
        let block = &g[offset..offset + spec.dim];
        offset += spec.dim;
        compress_block(lp, plan.gaussian_scaled, block, &mut out);
    }
    Ok(out)
}

fn compress_block(lp: &LayerPlan, gaussian_scaled: bool, block: &[f64], out: &mut Vec<f64>) {
    match lp {
        LayerPlan::DropoutIndices(ix) => {
            // O(r) gather; no matrix is ever materialized
            out.extend(ix.iter().map(|&j| block[j]));
        }
        LayerPlan::GaussianRows(m) => {
            let y = m.matvec(block);
            if gaussian_scaled {
                let s = 1.0 / (m.rows() as f64).sqrt();
                out.extend(y.iter().map(|v| v * s));
            } else {
                out.extend(y);
            }
        }
        LayerPlan::PcaRows(m) => out.extend(m.matvec(block)),
        LayerPlan::FjltPlan { signs, sampled, scale } => {
            let d_pad = signs.len();
            let mut padded = vec![0.0_f64; d_pad];
            for (i, &g) in block.iter().enumerate() {
                padded[i] = g * signs[i];
            }
            linalg::hadamard_in_place(&mut padded);
            out.extend(sampled.iter().map(|&k| padded[k] * scale));
        }
        LayerPlan::KronPlan { .. } => unreachable!("logra handled separately"),
    }
}

/// Compresses one example through a logra plan from its per-layer
/// `(h, delta)` pairs: `(P_in h) x (P_out delta)`, laid out input-major to
/// match the flattened gradient block.
pub fn compress_example_logra(
    plan: &CompressionPlan,
    acts: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    if plan.method != Method::Logra {
        return Err(CompressError::PlanMismatch("plan is not logra".into()));
    }
    if acts.len() != plan.per_layer.len() {
        return Err(CompressError::PlanMismatch(format!(
            "{} activation pairs for {} layers",
            acts.len(),
            plan.per_layer.len()
        )));
    }
    let mut out = Vec::with_capacity(plan.r_total);
    for (lp, (h, delta)) in plan.per_layer.iter().zip(acts) {
        let LayerPlan::KronPlan { p_in, p_out } = lp else {
            return Err(CompressError::PlanMismatch("non-kron layer in logra plan".into()));
        };
        if h.len() != p_in.cols() || delta.len() != p_out.cols() {
            return Err(CompressError::PlanMismatch(format!(
                "activation dims ({}, {}) != ({}, {})",
                h.len(),
                delta.len(),
                p_in.cols(),
                p_out.cols()
            )));
        }
        let ph = p_in.matvec(h);
        let pd = p_out.matvec(delta);
        for a in &ph {
            for b in &pd {
                out.push(a * b);
            }
        }
    }
    Ok(out)
}

/// Compressed gradients plus the fingerprint of the plan that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedDataset {
    pub fingerprint: PlanFingerprint,
    pub data: GradientDataset,
}

/// Compresses every row of `ds`. Rows are independent, so the work is
/// parallel with order-preserving collection; output is identical for any
/// thread count. Logra plans require the activation store.
pub fn compress_dataset(
    plan: &CompressionPlan,
    ds: &GradientDataset,
    acts: Option<&ActivationStore>,
) -> Result<CompressedDataset> {
    if ds.layers() != plan.source_layers.as_slice() {
        return Err(CompressError::PlanMismatch(
            "dataset layers differ from the plan's source layers".into(),
        ));
    }
    let n = ds.n_examples();
    let rows: Vec<Vec<f64>> = if plan.method == Method::Logra {
        let store = acts.ok_or_else(|| {
            CompressError::PlanMismatch("logra compression needs an activation store".into())
        })?;
        if store.pairs.len() != n {
            return Err(CompressError::PlanMismatch(format!(
                "activation store covers {} examples, dataset has {n}",
                store.pairs.len()
            )));
        }
        (0..n)
            .into_par_iter()
            .map(|i| compress_example_logra(plan, &store.pairs[i]))
            .collect::<Result<_>>()?
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| compress_example(plan, ds.row(i)))
            .collect::<Result<_>>()?
    };
    let mut flat = Vec::with_capacity(n * plan.r_total);
    for r in rows {
        flat.extend(r);
    }
    let data = GradientDataset::new(plan.compressed_layers(), ds.meta().to_vec(), flat)?;
    Ok(CompressedDataset { fingerprint: plan.fingerprint(), data })
}

impl CompressedDataset {
    /// Re-labels layers with the plan fingerprint so the compressed dataset
    /// serializes through the ordinary GRDS container.
    pub fn to_grds_dataset(&self) -> GradientDataset {
        let tag = self.fingerprint.encode();
        let layers = self
            .data
            .layers()
            .iter()
            .map(|l| LayerSpec {
                layer_id: l.layer_id,
                name: format!("{}|{}", l.name, tag),
                dim: l.dim,
                kind: l.kind.clone(),
            })
            .collect();
        GradientDataset::new(
            layers,
            self.data.meta().to_vec(),
            (0..self.data.n_examples()).flat_map(|i| self.data.row(i).to_vec()).collect(),
        )
        .expect("re-labelled dataset stays valid")
    }

    /// Recovers a compressed dataset from a GRDS-loaded dataset whose layer
    /// names carry a fingerprint tag.
    pub fn from_grds_dataset(ds: GradientDataset) -> Result<Self> {
        let first = ds.layers().first().ok_or_else(|| {
            CompressError::PlanMismatch("dataset has no layers".into())
        })?;
        let (_, tag) = first.name.rsplit_once('|').ok_or_else(|| {
            CompressError::PlanMismatch("layer names carry no plan fingerprint".into())
        })?;
        let fingerprint = PlanFingerprint::decode(tag).ok_or_else(|| {
            CompressError::PlanMismatch(format!("bad fingerprint tag `{tag}`"))
        })?;
        let layers = ds
            .layers()
            .iter()
            .map(|l| LayerSpec {
                layer_id: l.layer_id,
                name: l.name.rsplit_once('|').map(|(n, _)| n.to_string()).unwrap_or_else(|| l.name.clone()),
                dim: l.dim,
                kind: l.kind.clone(),
            })
            .collect();
        let data = GradientDataset::new(
            layers,
            ds.meta().to_vec(),
            (0..ds.n_examples()).flat_map(|i| ds.row(i).to_vec()).collect(),
        )?;
        Ok(Self { fingerprint, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradstore::{ExampleMeta, Split};
    use rand::Rng;

    fn meta_row(i: u64) -> ExampleMeta {
        ExampleMeta {
            example_id: i,
            label: 0,
            source: String::new(),
            split: Split::Train,
            flipped: false,
        }
    }

    fn random_dataset(n: usize, layers: Vec<LayerSpec>, seed: u64) -> GradientDataset {
        let total: usize = layers.iter().map(|l| l.dim).sum();
        let mut g = rng::stream(seed, "cds-test", 0);
        let grads: Vec<f64> = (0..n * total).map(|_| g.gen_range(-1.0..1.0)).collect();
        let meta = (0..n as u64).map(meta_row).collect();
        GradientDataset::new(layers, meta, grads).unwrap()
    }

    #[test]
    fn dropout_full_budget_keeps_everything() {
        let layers = vec![LayerSpec::generic(0, "l", 6)];
        let plan = make_plan(Method::Dropout, 6, 3, &layers, None).unwrap();
        assert_eq!(plan.per_layer[0], LayerPlan::DropoutIndices((0..6).collect()));
    }

    #[test]
    fn dropout_indices_sorted_distinct() {
        let layers = vec![LayerSpec::generic(0, "l", 4)];
        let plan = make_plan(Method::Dropout, 2, 11, &layers, None).unwrap();
        let LayerPlan::DropoutIndices(ix) = &plan.per_layer[0] else { panic!() };
        assert_eq!(ix.len(), 2);
        assert!(ix[0] < ix[1]);
        assert!(ix[1] < 4);
        // deterministic
        let again = make_plan(Method::Dropout, 2, 11, &layers, None).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn budget_apportionment_sums_and_bounds() {
        let dims = [8usize, 4, 20];
        for r in 3..=32 {
            let budgets = apportion(r, &dims).unwrap();
            assert_eq!(budgets.iter().sum::<usize>(), r);
            for (b, d) in budgets.iter().zip(&dims) {
                assert!(*b >= 1 && b <= d);
            }
        }
        assert!(matches!(apportion(40, &dims), Err(CompressError::BudgetTooLarge { .. })));
        assert!(matches!(apportion(2, &dims), Err(CompressError::BudgetTooSmall { .. })));
    }

    #[test]
    fn pca_recovers_low_rank_subspace() {
        // gradients spanning a 3-dim subspace; r=3 rows must span it
        let d = 8;
        let basis = [
            {
                let mut v = vec![0.0; 8];
                v[0] = 1.0;
                v
            },
            {
                let mut v = vec![0.0; 8];
                v[3] = 1.0;
                v
            },
            {
                let mut v = vec![0.0; 8];
                v[6] = 1.0;
                v
            },
        ];
        let mut g = rng::stream(5, "pca-test", 0);
        let n = 20;
        let mut grads = Vec::new();
        for _ in 0..n {
            let mut row = vec![0.0; d];
            for b in &basis {
                let c: f64 = g.gen_range(-2.0..2.0);
                for (r, x) in row.iter_mut().zip(b) {
                    *r += c * x;
                }
            }
            grads.extend(row);
        }
        let layers = vec![LayerSpec::generic(0, "l", d)];
        let ds = GradientDataset::new(layers.clone(), (0..n as u64).map(meta_row).collect(), grads)
            .unwrap();
        let plan = make_plan(Method::Pca, 3, 1, &layers, Some(&ds)).unwrap();
        let rows = plan.materialize_map(0);
        // orthogonal-projector comparison: rows^T rows == projector onto span
        let proj = rows.transpose().matmul(&rows);
        let mut want = DenseMatrix::zeros(d, d);
        for b in &basis {
            for i in 0..d {
                for j in 0..d {
                    want.set(i, j, want.get(i, j) + b[i] * b[j]);
                }
            }
        }
        assert!(proj.sub(&want).max_abs() < 1e-8);
    }

    #[test]
    fn pca_requires_training_gradients() {
        let layers = vec![LayerSpec::generic(0, "l", 4)];
        assert!(matches!(
            make_plan(Method::Pca, 2, 0, &layers, None),
            Err(CompressError::PcaNeedsGradients)
        ));
    }

    #[test]
    fn pca_rows_orthonormal_and_span_lift() {
        let layers = vec![LayerSpec::generic(0, "l", 10)];
        let ds = random_dataset(6, layers.clone(), 77);
        let plan = make_plan(Method::Pca, 5, 0, &layers, Some(&ds)).unwrap();
        let rows = plan.materialize_map(0);
        for p in 0..5 {
            for q in 0..5 {
                let d = linalg::dot(rows.row(p), rows.row(q));
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
        // a vector already in the row span lifts back exactly
        let mut v = vec![0.0; 10];
        for (j, x) in v.iter_mut().enumerate() {
            *x = 0.3 * rows.get(0, j) - 1.7 * rows.get(3, j);
        }
        let c = compress_example(&plan, &v).unwrap();
        let lift = rows.matvec_t(&c);
        for (a, b) in lift.iter().zip(&v) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn dropout_gather_semantics() {
        let layers = vec![LayerSpec::generic(0, "l", 4)];
        let plan = CompressionPlan::from_layer_plans(
            Method::Dropout,
            0,
            layers,
            vec![LayerPlan::DropoutIndices(vec![0, 2])],
        );
        assert_eq!(compress_example(&plan, &[5.0, 6.0, 7.0, 8.0]).unwrap(), vec![5.0, 7.0]);
    }

    #[test]
    fn gaussian_identity_projection() {
        let layers = vec![LayerSpec::generic(0, "l", 3)];
        let plan = CompressionPlan::from_layer_plans(
            Method::Gaussian,
            0,
            layers,
            vec![LayerPlan::GaussianRows(DenseMatrix::identity(3))],
        );
        let g = [0.5, -1.5, 2.0];
        assert_eq!(compress_example(&plan, &g).unwrap(), g.to_vec());
    }

    #[test]
    fn logra_identity_matches_flattened_outer_product() {
        let layers = vec![LayerSpec::linear(0, "l", 2, 2)];
        let plan = CompressionPlan::from_layer_plans(
            Method::Logra,
            0,
            layers,
            vec![LayerPlan::KronPlan {
                p_in: DenseMatrix::identity(2),
                p_out: DenseMatrix::identity(2),
            }],
        );
        let h = vec![1.0, 2.0];
        let delta = vec![3.0, 4.0];
        let out = compress_example_logra(&plan, &[(h, delta)]).unwrap();
        assert_eq!(out, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn logra_factored_equals_full_projection() {
        let layers = vec![LayerSpec::linear(0, "l", 5, 3)];
        let plan = make_plan(Method::Logra, 6, 9, &layers, None).unwrap();
        let mut g = rng::stream(10, "logra-test", 0);
        let h: Vec<f64> = (0..5).map(|_| g.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..3).map(|_| g.gen_range(-1.0..1.0)).collect();
        let factored = compress_example_logra(&plan, &[(h.clone(), delta.clone())]).unwrap();
        // flattened gradient h x delta, then the explicit Kronecker map
        let flat: Vec<f64> = h.iter().flat_map(|a| delta.iter().map(move |b| a * b)).collect();
        let full = plan.materialize_map(0).matvec(&flat);
        for (a, b) in factored.iter().zip(&full) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn logra_requires_linear_layers() {
        let layers = vec![LayerSpec::generic(0, "l", 4)];
        assert!(matches!(
            make_plan(Method::Logra, 4, 0, &layers, None),
            Err(CompressError::LograNeedsLinearLayers(0))
        ));
    }

    #[test]
    fn compress_dataset_empty_and_full_retention() {
        let layers = vec![LayerSpec::generic(0, "a", 3), LayerSpec::generic(1, "b", 2)];
        let empty = random_dataset(0, layers.clone(), 0);
        let plan = make_plan(Method::Dropout, 5, 0, &layers, None).unwrap();
        let cds = compress_dataset(&plan, &empty, None).unwrap();
        assert_eq!(cds.data.n_examples(), 0);

        let ds = random_dataset(7, layers, 1);
        let cds = compress_dataset(&plan, &ds, None).unwrap();
        for i in 0..7 {
            assert_eq!(cds.data.row(i), ds.row(i));
        }
    }

    #[test]
    fn gaussian_rows_match_naive_multiply_oracle() {
        let layers = vec![LayerSpec::generic(0, "l", 256)];
        let ds = random_dataset(64, layers.clone(), 2);
        let plan = make_plan(Method::Gaussian, 16, 3, &layers, None).unwrap();
        let cds = compress_dataset(&plan, &ds, None).unwrap();
        let LayerPlan::GaussianRows(m) = &plan.per_layer[0] else { panic!() };
        for i in 0..64 {
            let row = ds.row(i);
            for r in 0..16 {
                // independent naive accumulation
                let mut acc = 0.0_f64;
                for j in 0..256 {
                    acc += m.get(r, j) * row[j];
                }
                assert!((cds.data.row(i)[r] - acc).abs() < 1e-12 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let layers = vec![LayerSpec::generic(0, "l", 32)];
        let ds = random_dataset(40, layers.clone(), 4);
        let plan = make_plan(Method::Fjlt, 8, 5, &layers, None).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| compress_dataset(&plan, &ds, None).unwrap());
        let b = many.install(|| compress_dataset(&plan, &ds, None).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn linearity_exact_for_dropout_close_for_dense_maps() {
        let layers = vec![LayerSpec::generic(0, "l", 16)];
        let mut g = rng::stream(6, "lin-test", 0);
        let g1: Vec<f64> = (0..16).map(|_| g.gen_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..16).map(|_| g.gen_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 1.5 * a - 0.25 * b).collect();
        for method in [Method::Dropout, Method::Gaussian, Method::Fjlt] {
            let plan = make_plan(method, 6, 7, &layers, None).unwrap();
            let c1 = compress_example(&plan, &g1).unwrap();
            let c2 = compress_example(&plan, &g2).unwrap();
            let cc = compress_example(&plan, &combo).unwrap();
            for ((a, b), c) in c1.iter().zip(&c2).zip(&cc) {
                let lin = 1.5 * a - 0.25 * b;
                let tol = if method == Method::Dropout { 0.0 } else { 1e-10 };
                assert!((lin - c).abs() <= tol, "{method}: {lin} vs {c}");
            }
        }
    }

    #[test]
    fn fjlt_norm_concentration() {
        let d = 1024;
        let r = 64;
        let layers = vec![LayerSpec::generic(0, "l", d)];
        let plan = make_plan(Method::Fjlt, r, 13, &layers, None).unwrap();
        let mut g = rng::stream(14, "fjlt-test", 0);
        let mut total = 0.0_f64;
        for _ in 0..200 {
            let mut v: Vec<f64> = (0..d).map(|_| g.gen_range(-1.0..1.0)).collect();
            let n = linalg::norm2(&v);
            v.iter_mut().for_each(|x| *x /= n);
            let c = compress_example(&plan, &v).unwrap();
            total += linalg::dot(&c, &c);
        }
        let mean = total / 200.0;
        assert!((0.8..=1.2).contains(&mean), "mean squared norm {mean}");
    }

    #[test]
    fn grds_fingerprint_round_trip() {
        let layers = vec![LayerSpec::generic(0, "l", 12)];
        let ds = random_dataset(5, layers.clone(), 8);
        let plan = make_plan(Method::Dropout, 4, 21, &layers, None).unwrap();
        let cds = compress_dataset(&plan, &ds, None).unwrap();
        let tagged = cds.to_grds_dataset();
        let bytes = crate::gradstore::encode_grds(&tagged, crate::gradstore::Dtype::F64).unwrap();
        let (loaded, _) = crate::gradstore::decode_grds(&bytes).unwrap();
        let back = CompressedDataset::from_grds_dataset(loaded).unwrap();
        assert_eq!(back, cds);
    }

    #[test]
    fn fjlt_materialized_map_matches_pipeline() {
        let layers = vec![LayerSpec::generic(0, "l", 10)];
        let plan = make_plan(Method::Fjlt, 4, 17, &layers, None).unwrap();
        let m = plan.materialize_map(0);
        let mut g = rng::stream(18, "fjlt-map", 0);
        let v: Vec<f64> = (0..10).map(|_| g.gen_range(-1.0..1.0)).collect();
        let direct = compress_example(&plan, &v).unwrap();
        let viamap = m.matvec(&v);
        for (a, b) in direct.iter().zip(&viamap) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

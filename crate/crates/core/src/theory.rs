//! Numerical verification of the compression error bounds: explicit
//! delta-Hessian construction at small dimension, the dropout and Gaussian
//! bound chains, the Woodbury identity, and the extreme-singular-value
//! convergence probe.
//!
//! All checks compute both sides of their inequality with dense inverses
//! and report pass/fail plus the margin; a failed check is a result, not an
//! error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{self, CompressError, CompressionPlan, Method};
use crate::gradstore::LayerSpec;
use crate::linalg::{self, DenseMatrix, LinalgError};
use crate::rng;

use rand::distributions::Distribution;

/// Condition-number threshold above which `lambda I + P^T P H` counts as
/// numerically singular and the case is skipped.
pub const SKIP_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("lambda I + P^T P H is numerically singular (condition {cond:.3e})")]
    SingularIntermediate { cond: f64 },
    #[error("input matrix is numerically singular")]
    SingularInput,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Compress(#[from] CompressError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Case parameters for the Monte Carlo suites; `H` is always the
/// Gauss-Newton matrix of `n` random gradients in `d` dimensions (the
/// rank-deficient n < d regime).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaHessianCase {
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub delta_norm: f64,
    pub bound_value: f64,
    /// `bound - actual`; nonnegative when the check passes.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianChainCheck {
    pub delta_norm: f64,
    pub chain_value: f64,
    pub margin: f64,
    pub pass: bool,
    pub sigma_max_ptp: f64,
    /// Whether the asymptotic step `sigma_max(P^T P) <= d` happened to hold
    /// for this draw; recorded, never asserted.
    pub asymptotic_step_held: bool,
}

/// Synthetic Gauss-Newton Hessian `(1/n) sum g_i g_i^T` from standard
/// normal gradients, plus the gradient stack itself.
pub fn synth_hessian(d: usize, n: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut stream = rng::stream(seed, "theory-h", 0);
    let normal = rand_distr::StandardNormal;
    let g = DenseMatrix::from_fn(n, d, |_, _| normal.sample(&mut stream));
    let mut h = DenseMatrix::zeros(d, d);
    for i in 0..n {
        let row = g.row(i);
        for a in 0..d {
            for b in 0..d {
                h.set(a, b, h.get(a, b) + row[a] * row[b] / n as f64);
            }
        }
    }
    (h, g)
}

/// Single-layer plan over a `d`-wide generic layer.
pub fn single_layer_plan(method: Method, d: usize, r: usize, seed: u64) -> Result<CompressionPlan> {
    let layers = vec![LayerSpec::generic(0, "g", d)];
    Ok(compress::make_plan(method, r, seed, &layers, None)?)
}

/// Explicit compression error matrix
/// `(lambda I_d + H)^{-1} - M^T (lambda I_r + M H M^T)^{-1} M`
/// where `M` is the plan's materialized map. Dense inverses; d <= 256.
pub fn delta_h(h: &DenseMatrix, lambda: f64, plan: &CompressionPlan) -> Result<DenseMatrix> {
    let d = h.rows();
    let m = plan.materialize_map(0);
    assert_eq!(m.cols(), d, "plan width mismatch");
    let full_inv = linalg::inv_spd(&h.add_diagonal(lambda))?;
    let mh = m.matmul(h);
    let mid = mh.matmul(&m.transpose()).add_diagonal(lambda);
    let mid_inv = linalg::inv_spd(&mid)?;
    let lift = m.transpose().matmul(&mid_inv).matmul(&m);
    Ok(full_inv.sub(&lift))
}

/// Dropout bound: `||delta H||_2 <= 2/lambda + sigma_max(H)/lambda^2`.
pub fn check_dropout_bound(h: &DenseMatrix, lambda: f64, plan: &CompressionPlan) -> Result<BoundCheck> {
    let dh = delta_h(h, lambda, plan)?;
    let delta_norm = linalg::spectral_norm(&dh);
    let bound_value = 2.0 / lambda + linalg::spectral_norm(h) / (lambda * lambda);
    Ok(BoundCheck {
        delta_norm,
        bound_value,
        margin: bound_value - delta_norm,
        pass: delta_norm <= bound_value,
    })
}

/// Gaussian chain:
/// `||delta H|| <= 1/smin(lI+H) + smax(P^T P)/l + smax(P^T P)^2 smax(H) / (l smin(lI + P^T P H))`
/// with every factor computed numerically; `smin` is the smallest singular
/// value since `lI + P^T P H` is not symmetric.
pub fn check_gaussian_bound(
    h: &DenseMatrix,
    lambda: f64,
    plan: &CompressionPlan,
) -> Result<GaussianChainCheck> {
    let d = h.rows();
    let m = plan.materialize_map(0);
    let ptp = m.transpose().matmul(&m);
    let inner = ptp.matmul(h).add_diagonal(lambda);
    let inner_svd = linalg::svd_thin(&inner)?;
    let cond = inner_svd.smax() / inner_svd.smin().max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > SKIP_CONDITION {
        return Err(TheoryError::SingularIntermediate { cond });
    }
    let damped_svd = linalg::svd_thin(&h.add_diagonal(lambda))?;
    let sigma_max_ptp = linalg::spectral_norm(&ptp);
    let sigma_max_h = linalg::spectral_norm(h);
    let chain_value = 1.0 / damped_svd.smin()
        + sigma_max_ptp / lambda
        + sigma_max_ptp * sigma_max_ptp * sigma_max_h / (lambda * inner_svd.smin());
    let dh = delta_h(h, lambda, plan)?;
    let delta_norm = linalg::spectral_norm(&dh);
    Ok(GaussianChainCheck {
        delta_norm,
        chain_value,
        margin: chain_value - delta_norm,
        pass: delta_norm <= chain_value,
        sigma_max_ptp,
        asymptotic_step_held: sigma_max_ptp <= d as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WoodburyCheck {
    pub residual: f64,
    pub reference_norm: f64,
    pub pass: bool,
}

/// SVD-based inverse of a general square matrix.
fn general_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = linalg::svd_thin(a)?;
    if svd.smin() <= svd.smax() * 1e-13 || svd.smax() == 0.0 {
        return Err(TheoryError::SingularInput);
    }
    // A^{-1} = V S^{-1} U^T
    let k = svd.s.len();
    let mut vs = svd.vt.transpose();
    for row in 0..vs.rows() {
        for col in 0..k {
            vs.set(row, col, vs.get(row, col) / svd.s[col]);
        }
    }
    Ok(vs.matmul(&svd.u.transpose()))
}

/// Woodbury identity check:
/// `(A + U V)^{-1} = A^{-1} - A^{-1} U (I_k + V A^{-1} U)^{-1} V A^{-1}`,
/// asserted within 1e-8 relative in spectral norm.
pub fn check_woodbury(a: &DenseMatrix, u: &DenseMatrix, v: &DenseMatrix) -> Result<WoodburyCheck> {
    let b = a.add(&u.matmul(v));
    let lhs = general_inverse(&b)?;
    let a_inv = general_inverse(a)?;
    let v_ainv_u = v.matmul(&a_inv).matmul(u);
    let k = u.cols();
    let small = v_ainv_u.add(&DenseMatrix::identity(k)).sub(&DenseMatrix::zeros(k, k));
    let small_inv = general_inverse(&small)?;
    let correction = a_inv.matmul(u).matmul(&small_inv).matmul(&v.matmul(&a_inv));
    let rhs = a_inv.sub(&correction);
    let residual = linalg::spectral_norm(&lhs.sub(&rhs));
    let reference_norm = linalg::spectral_norm(&lhs);
    Ok(WoodburyCheck {
        residual,
        reference_norm,
        pass: residual <= 1e-8 * reference_norm,
    })
}

// --- extreme singular value probe ---

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub k: usize,
    pub n: usize,
    pub smax_over_sqrt_k: f64,
    pub smin_over_sqrt_k: f64,
    pub predicted_smax: f64,
    pub predicted_smin: f64,
    /// `|smax/sqrt(k) - (1 + sqrt(kappa))| <= 0.15`, evaluated at k >= 512.
    pub within_band: Option<bool>,
}

/// Samples a `k x ceil(kappa k)` standard normal matrix per entry of
/// `k_list` and reports extreme singular values against the limits
/// `1 -/+ sqrt(kappa)` (times sqrt(k)).
pub fn singular_value_convergence_probe(k_list: &[usize], kappa: f64, seed: u64) -> Result<Vec<ProbeRow>> {
    assert!(kappa > 0.0 && kappa <= 1.0, "kappa must lie in (0, 1]");
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let n = ((kappa * k as f64).ceil() as usize).max(1);
        let mut stream = rng::stream(seed, "probe", k as u64);
        let normal = rand_distr::StandardNormal;
        let a = DenseMatrix::from_fn(k, n, |_, _| normal.sample(&mut stream));
        let smax = linalg::spectral_norm(&a);
        let smin = smallest_singular_value(&a)?;
        let sqrt_k = (k as f64).sqrt();
        let predicted_smax = 1.0 + kappa.sqrt();
        let predicted_smin = 1.0 - kappa.sqrt();
        let ratio_max = smax / sqrt_k;
        rows.push(ProbeRow {
            k,
            n,
            smax_over_sqrt_k: ratio_max,
            smin_over_sqrt_k: smin / sqrt_k,
            predicted_smax,
            predicted_smin,
            within_band: (k >= 512).then(|| (ratio_max - predicted_smax).abs() <= 0.15),
        });
    }
    Ok(rows)
}

/// Smallest singular value of a tall matrix: thin SVD for narrow ones,
/// inverse power iteration on the Gram matrix otherwise.
fn smallest_singular_value(a: &DenseMatrix) -> Result<f64> {
    let n = a.cols();
    if n <= 64 {
        return Ok(linalg::svd_thin(a)?.smin());
    }
    let mut gram = DenseMatrix::zeros(n, n);
    for i in 0..a.rows() {
        let row = a.row(i);
        for p in 0..n {
            let rp = row[p];
            if rp == 0.0 {
                continue;
            }
            for q in 0..n {
                gram.set(p, q, gram.get(p, q) + rp * row[q]);
            }
        }
    }
    let chol = linalg::Cholesky::factor(&gram)?;
    let inv_lambda = linalg::psd_operator_norm(n, |v| chol.solve(v));
    Ok((1.0 / inv_lambda).sqrt())
}

// --- Monte Carlo suites and the verification report ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub label: String,
    pub cases: usize,
    pub passes: usize,
    pub skips: usize,
    pub worst_margin: f64,
    /// Gaussian suite only: how often sigma_max(P^T P) <= d held.
    pub asymptotic_step_held: Option<usize>,
}

impl SuiteSummary {
    pub fn all_passed(&self) -> bool {
        self.passes + self.skips == self.cases
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub cases: usize,
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub lambda: f64,
    pub seed: u64,
    pub probe_k: Vec<usize>,
    pub probe_kappa: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            d: 64,
            n: 16,
            r: 8,
            lambda: 0.1,
            seed: 0,
            probe_k: vec![128, 512],
            probe_kappa: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: VerificationConfig,
    pub dropout: SuiteSummary,
    pub gaussian: SuiteSummary,
    pub woodbury: SuiteSummary,
    pub probe: Vec<ProbeRow>,
}

/// Dropout bound over `cases` random draws; parallel, order-independent.
pub fn mc_dropout_suite(cfg: &VerificationConfig) -> Result<SuiteSummary> {
    let results: Vec<BoundCheck> = (0..cfg.cases as u64)
        .into_par_iter()
        .map(|case| {
            let (h, _) = synth_hessian(cfg.d, cfg.n, splitmix(cfg.seed, case));
            let plan = single_layer_plan(Method::Dropout, cfg.d, cfg.r, splitmix(cfg.seed, case) ^ 0x5eed)?;
            check_dropout_bound(&h, cfg.lambda, &plan)
        })
        .collect::<Result<_>>()?;
    Ok(summarize("dropout bound", &results.iter().map(|c| (c.pass, c.margin)).collect::<Vec<_>>(), 0, None))
}

/// Gaussian chain over `cases` random draws; numerically singular
/// intermediates are skipped and counted.
pub fn mc_gaussian_suite(cfg: &VerificationConfig) -> Result<SuiteSummary> {
    let outcomes: Vec<Option<GaussianChainCheck>> = (0..cfg.cases as u64)
        .into_par_iter()
        .map(|case| {
            let (h, _) = synth_hessian(cfg.d, cfg.n, splitmix(cfg.seed ^ 0xa5a5, case));
            let plan = single_layer_plan(
                Method::Gaussian,
                cfg.d,
                cfg.r,
                splitmix(cfg.seed ^ 0xa5a5, case) ^ 0x5eed,
            )?;
            match check_gaussian_bound(&h, cfg.lambda, &plan) {
                Ok(check) => Ok(Some(check)),
                Err(TheoryError::SingularIntermediate { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let skips = outcomes.iter().filter(|o| o.is_none()).count();
    let flat: Vec<(bool, f64)> =
        outcomes.iter().flatten().map(|c| (c.pass, c.margin)).collect();
    let held = outcomes.iter().flatten().filter(|c| c.asymptotic_step_held).count();
    Ok(summarize("gaussian chain", &flat, skips, Some(held)))
}

/// Woodbury identity over random (A, U, V) draws at d=16, k=4.
pub fn mc_woodbury_suite(cases: usize, seed: u64) -> Result<SuiteSummary> {
    let results: Vec<WoodburyCheck> = (0..cases as u64)
        .into_par_iter()
        .map(|case| {
            let mut stream = rng::stream(seed, "woodbury", case);
            let normal = rand_distr::StandardNormal;
            let a = DenseMatrix::from_fn(16, 16, |i, j| {
                let base: f64 = normal.sample(&mut stream);
                base + if i == j { 4.0 } else { 0.0 }
            });
            let u = DenseMatrix::from_fn(16, 4, |_, _| normal.sample(&mut stream));
            let v = DenseMatrix::from_fn(4, 16, |_, _| normal.sample(&mut stream));
            check_woodbury(&a, &u, &v)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(bool, f64)> = results
        .iter()
        .map(|c| (c.pass, 1e-8 * c.reference_norm - c.residual))
        .collect();
    Ok(summarize("woodbury identity", &flat, 0, None))
}

fn summarize(
    label: &str,
    outcomes: &[(bool, f64)],
    skips: usize,
    asymptotic: Option<usize>,
) -> SuiteSummary {
    SuiteSummary {
        label: label.to_string(),
        cases: outcomes.len() + skips,
        passes: outcomes.iter().filter(|(p, _)| *p).count(),
        skips,
        worst_margin: outcomes.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min),
        asymptotic_step_held: asymptotic,
    }
}

/// Runs every suite plus the probe and bundles the outcome.
pub fn run_verification(cfg: &VerificationConfig) -> Result<VerificationReport> {
    let dropout = mc_dropout_suite(cfg)?;
    let gaussian = mc_gaussian_suite(cfg)?;
    let woodbury = mc_woodbury_suite(20, cfg.seed)?;
    let probe = singular_value_convergence_probe(&cfg.probe_k, cfg.probe_kappa, cfg.seed)?;
    Ok(VerificationReport { config: cfg.clone(), dropout, gaussian, woodbury, probe })
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.dropout.all_passed()
            && self.gaussian.all_passed()
            && self.woodbury.all_passed()
            && self.probe.iter().all(|p| p.within_band.unwrap_or(true))
    }

    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        for s in [&self.dropout, &self.gaussian, &self.woodbury] {
            out.push_str(&format!(
                "{}: {}/{} passed, {} skipped, worst margin {:.6e}",
                s.label,
                s.passes,
                s.cases - s.skips,
                s.skips,
                s.worst_margin
            ));
            if let Some(held) = s.asymptotic_step_held {
                out.push_str(&format!(
                    " (sigma_max(PtP) <= d held in {held}/{})",
                    s.cases - s.skips
                ));
            }
            out.push('\n');
        }
        for p in &self.probe {
            out.push_str(&format!(
                "probe k={} n={}: smax/sqrt(k)={:.4} (limit {:.4}), smin/sqrt(k)={:.4} (limit {:.4}){}\n",
                p.k,
                p.n,
                p.smax_over_sqrt_k,
                p.predicted_smax,
                p.smin_over_sqrt_k,
                p.predicted_smin,
                match p.within_band {
                    Some(true) => " [in band]",
                    Some(false) => " [OUT OF BAND]",
                    None => "",
                }
            ));
        }
        out
    }
}

fn splitmix(seed: u64, case: u64) -> u64 {
    let mut z = seed ^ case.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x7f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::LayerPlan;

    /// Independent LU inverse (partial pivoting) for the delta-Hessian
    /// oracle; deliberately separate from the Cholesky production path.
    fn lu_inverse_oracle(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut lu: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| lu[i][k].abs().partial_cmp(&lu[j][k].abs()).unwrap())
                .unwrap();
            lu.swap(k, piv);
            perm.swap(k, piv);
            for i in k + 1..n {
                let f = lu[i][k] / lu[k][k];
                lu[i][k] = f;
                for j in k + 1..n {
                    lu[i][j] -= f * lu[k][j];
                }
            }
        }
        let mut inv = DenseMatrix::zeros(n, n);
        for col in 0..n {
            let mut b = vec![0.0_f64; n];
            for (i, &p) in perm.iter().enumerate() {
                b[i] = if p == col { 1.0 } else { 0.0 };
            }
            for i in 0..n {
                for k in 0..i {
                    b[i] = b[i] - lu[i][k] * b[k];
                }
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    b[i] = b[i] - lu[i][k] * b[k];
                }
                b[i] /= lu[i][i];
            }
            for i in 0..n {
                inv.set(i, col, b[i]);
            }
        }
        inv
    }

    #[test]
    fn delta_h_zero_at_full_retention() {
        let (h, _) = synth_hessian(12, 5, 1);
        let plan = single_layer_plan(Method::Dropout, 12, 12, 0).unwrap();
        let dh = delta_h(&h, 0.3, &plan).unwrap();
        assert!(linalg::spectral_norm(&dh) <= 1e-10);
    }

    #[test]
    fn delta_h_zero_hessian_structure() {
        // H = 0, lambda = 1: delta H = I - P^T P; for dropout that is a
        // 0/1 diagonal with zeros at retained coordinates
        let d = 10;
        let h = DenseMatrix::zeros(d, d);
        let plan = single_layer_plan(Method::Dropout, d, 4, 7).unwrap();
        let dh = delta_h(&h, 1.0, &plan).unwrap();
        let LayerPlan::DropoutIndices(kept) = &plan.per_layer[0] else { panic!() };
        for i in 0..d {
            for j in 0..d {
                let want = if i == j && !kept.contains(&i) { 1.0 } else { 0.0 };
                assert!((dh.get(i, j) - want).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn delta_h_matches_independent_lu_oracle() {
        let (h, _) = synth_hessian(32, 8, 3);
        let lambda = 0.2;
        let plan = single_layer_plan(Method::Gaussian, 32, 8, 5).unwrap();
        let dh = delta_h(&h, lambda, &plan).unwrap();
        // oracle: both inverses via LU
        let m = plan.materialize_map(0);
        let full_inv = lu_inverse_oracle(&h.add_diagonal(lambda));
        let mid = m.matmul(&h).matmul(&m.transpose()).add_diagonal(lambda);
        let lift = m.transpose().matmul(&lu_inverse_oracle(&mid)).matmul(&m);
        let want = full_inv.sub(&lift);
        assert!(dh.sub(&want).max_abs() < 1e-8);
    }

    #[test]
    fn delta_h_symmetric_for_orthonormal_maps() {
        let (h, _) = synth_hessian(16, 6, 9);
        for method in [Method::Dropout, Method::Pca] {
            let plan = match method {
                Method::Pca => {
                    // orthonormal rows from dropout indices double as a PCA
                    // stand-in; build explicit orthonormal rows instead
                    let mut rows = DenseMatrix::zeros(4, 16);
                    for (r, c) in [(0, 1), (1, 5), (2, 9), (3, 14)] {
                        rows.set(r, c, 1.0);
                    }
                    CompressionPlan::from_layer_plans(
                        Method::Pca,
                        0,
                        vec![LayerSpec::generic(0, "g", 16)],
                        vec![LayerPlan::PcaRows(rows)],
                    )
                }
                _ => single_layer_plan(method, 16, 4, 11).unwrap(),
            };
            let dh = delta_h(&h, 0.5, &plan).unwrap();
            let asym = dh.sub(&dh.transpose()).max_abs();
            assert!(asym <= 1e-10, "{method}: {asym}");
        }
    }

    #[test]
    fn dropout_bound_zero_hessian() {
        let d = 8;
        let h = DenseMatrix::zeros(d, d);
        let plan = single_layer_plan(Method::Dropout, d, 3, 1).unwrap();
        let check = check_dropout_bound(&h, 1.0, &plan).unwrap();
        assert!((check.delta_norm - 1.0).abs() < 1e-10);
        assert!((check.bound_value - 2.0).abs() < 1e-12);
        assert!(check.pass);
    }

    #[test]
    fn dropout_bound_large_lambda_dominated_by_first_term() {
        let (h, _) = synth_hessian(24, 6, 13);
        let plan = single_layer_plan(Method::Dropout, 24, 6, 13).unwrap();
        let check = check_dropout_bound(&h, 100.0, &plan).unwrap();
        assert!(check.pass);
        assert!(check.margin > 0.0);
        assert!(2.0 / 100.0 >= 0.9 * check.bound_value, "2/lambda should dominate");
    }

    #[test]
    fn gaussian_chain_zero_hessian_reduction() {
        let d = 12;
        let h = DenseMatrix::zeros(d, d);
        let lambda = 0.5;
        let plan = single_layer_plan(Method::Gaussian, d, 4, 3).unwrap();
        let check = check_gaussian_bound(&h, lambda, &plan).unwrap();
        // chain reduces to 1/lambda + smax(PtP)/lambda, delta H = (I - PtP)/lambda
        let want_chain = 1.0 / lambda + check.sigma_max_ptp / lambda;
        assert!((check.chain_value - want_chain).abs() < 1e-9 * want_chain);
        assert!(check.pass);
    }

    #[test]
    fn sigma_min_is_singular_value_not_eigenvalue() {
        // non-normal matrix: eigenvalues both 1 but smin << 1
        let m = DenseMatrix::new(2, 2, vec![1.0, 100.0, 0.0, 1.0]).unwrap();
        let svd = linalg::svd_thin(&m).unwrap();
        assert!(svd.smin() < 0.02);
        assert!(svd.smax() > 99.0);
    }

    #[test]
    fn woodbury_zero_update_and_rank_one() {
        let (a, _) = synth_hessian(6, 8, 17);
        let a = a.add_diagonal(1.0);
        let zero_u = DenseMatrix::zeros(6, 2);
        let zero_v = DenseMatrix::zeros(2, 6);
        let check = check_woodbury(&a, &zero_u, &zero_v).unwrap();
        assert!(check.pass);
        assert!(check.residual <= 1e-10 * check.reference_norm);

        // rank one on A = I reduces to Sherman-Morrison; cross-check the
        // closed form (I + u u^T)^{-1} v = v - u (u.v) / (1 + u.u)
        let u_vec = [0.3, -0.7, 0.2, 0.9, -0.1, 0.4];
        let a = DenseMatrix::identity(6);
        let u = DenseMatrix::from_fn(6, 1, |i, _| u_vec[i]);
        let v = DenseMatrix::from_fn(1, 6, |_, j| u_vec[j]);
        let check = check_woodbury(&a, &u, &v).unwrap();
        assert!(check.pass);
        let b_inv = general_inverse(&a.add(&u.matmul(&v))).unwrap();
        let probe = [1.0, 0.0, -1.0, 0.5, 0.25, -0.5];
        let got = b_inv.matvec(&probe);
        let uu = linalg::dot(&u_vec, &u_vec);
        let uv = linalg::dot(&u_vec, &probe);
        for i in 0..6 {
            let want = probe[i] - u_vec[i] * uv / (1.0 + uu);
            assert!((got[i] - want).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn woodbury_random_cases_pass() {
        let summary = mc_woodbury_suite(20, 3).unwrap();
        assert_eq!(summary.passes, 20);
    }

    #[test]
    fn woodbury_rejects_singular_input() {
        let a = DenseMatrix::zeros(4, 4);
        let u = DenseMatrix::zeros(4, 1);
        let v = DenseMatrix::zeros(1, 4);
        assert!(matches!(check_woodbury(&a, &u, &v), Err(TheoryError::SingularInput)));
    }

    #[test]
    fn mc_suites_pass_at_reference_parameters() {
        let cfg = VerificationConfig { cases: 25, ..VerificationConfig::default() };
        let dropout = mc_dropout_suite(&cfg).unwrap();
        assert!(dropout.all_passed(), "{dropout:?}");
        assert!(dropout.worst_margin > 0.0);
        let gaussian = mc_gaussian_suite(&cfg).unwrap();
        assert!(gaussian.all_passed(), "{gaussian:?}");
    }

    #[test]
    fn probe_square_case_near_limit_two() {
        let rows = singular_value_convergence_probe(&[1024], 1.0, 5).unwrap();
        let r = &rows[0];
        assert_eq!(r.n, 1024);
        assert!(
            (1.85..=2.15).contains(&r.smax_over_sqrt_k),
            "smax/sqrt(k) = {}",
            r.smax_over_sqrt_k
        );
        assert_eq!(r.within_band, Some(true));
        // square case: smin/sqrt(k) approaches 0
        assert!(r.smin_over_sqrt_k < 0.1);
    }

    #[test]
    fn probe_thin_aspect_ratio() {
        let rows = singular_value_convergence_probe(&[1024], 1.0 / 64.0, 6).unwrap();
        let r = &rows[0];
        // limit 1 + 1/8 = 1.125
        assert_eq!(r.within_band, Some(true));
        assert!((r.smax_over_sqrt_k - 1.125).abs() <= 0.15);
    }

    #[test]
    fn probe_documentation_case_orthogonal_matrix() {
        // orthogonal matrices violate the Gaussian assumption: every
        // singular value is 1, so smax/smin = 1 instead of the
        // (1+sqrt(kappa))/(1-sqrt(kappa)) spread. No band assertion.
        let k = 32;
        let mut q = DenseMatrix::zeros(k, k);
        for j in 0..k {
            let mut col = vec![0.0; k];
            col[j] = 1.0;
            linalg::hadamard_in_place(&mut col);
            for i in 0..k {
                q.set(i, j, col[i]);
            }
        }
        let svd = linalg::svd_thin(&q).unwrap();
        assert!((svd.smax() - 1.0).abs() < 1e-10);
        assert!((svd.smin() - 1.0).abs() < 1e-10);
        assert!((svd.smax() / svd.smin() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn verification_report_runs_and_summarizes() {
        let cfg = VerificationConfig {
            cases: 10,
            probe_k: vec![128],
            ..VerificationConfig::default()
        };
        let report = run_verification(&cfg).unwrap();
        assert!(report.all_passed(), "{}", report.human_summary());
        let text = report.human_summary();
        assert!(text.contains("dropout bound"));
        assert!(text.contains("gaussian chain"));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("worst_margin"));
    }
}

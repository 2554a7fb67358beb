//! Run configuration: a flat TOML document with dotted sections, strict
//! about unknown keys. Precedence: built-in defaults < config file <
//! `INFKIT_*` environment overrides < `--set key=value` < direct flags.

use infkit_core::eval::MethodSpec;
use infkit_core::influence::DampingConfig;
use infkit_core::theory::VerificationConfig;
use infkit_core::trainer::{Hyper, ModelSpec, Sgd, SyntheticTask};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "INFKIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker pool size; 0 means one worker per logical core.
    pub threads: usize,
    pub out_dir: String,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub hyper: HyperConfig,
    pub method: MethodConfig,
    pub damping: DampingSection,
    pub detect: DetectConfig,
    pub retrain: RetrainConfig,
    pub retrieve: RetrieveConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    pub theory: TheoryConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            out_dir: "runs".into(),
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            hyper: HyperConfig::default(),
            method: MethodConfig::default(),
            damping: DampingSection::default(),
            detect: DetectConfig::default(),
            retrain: RetrainConfig::default(),
            retrieve: RetrieveConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            theory: TheoryConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// `blobs` or `multi_source_orthogonal`.
    pub kind: String,
    pub classes: usize,
    pub feature_dim: usize,
    pub separation: f64,
    pub sources: usize,
    pub block_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: "blobs".into(),
            classes: 2,
            feature_dim: 20,
            separation: 4.0,
            sources: 6,
            block_dim: 4,
            n_train: 1000,
            n_val: 200,
            n_test: 200,
        }
    }
}

impl TaskConfig {
    pub fn to_task(&self, seed: u64) -> Result<SyntheticTask, String> {
        match self.kind.as_str() {
            "blobs" => Ok(SyntheticTask::blobs(
                self.classes,
                self.feature_dim,
                self.separation,
                self.n_train,
                self.n_val,
                self.n_test,
                seed,
            )),
            "multi_source_orthogonal" => Ok(SyntheticTask::multi_source_orthogonal(
                self.sources,
                self.block_dim,
                self.separation,
                self.n_train,
                self.n_val,
                self.n_test,
                seed,
            )),
            other => Err(format!("unknown task.kind `{other}`")),
        }
    }

    pub fn feature_dim_effective(&self) -> usize {
        match self.kind.as_str() {
            "multi_source_orthogonal" => self.sources * self.block_dim,
            _ => self.feature_dim,
        }
    }

    pub fn classes_effective(&self) -> usize {
        match self.kind.as_str() {
            "multi_source_orthogonal" => self.sources,
            _ => self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `logistic` or `mlp`.
    pub kind: String,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: "logistic".into(), hidden: 32 }
    }
}

impl ModelConfig {
    pub fn to_spec(&self, feature_dim: usize, classes: usize) -> Result<ModelSpec, String> {
        match self.kind.as_str() {
            "logistic" => Ok(ModelSpec::logistic(feature_dim, classes)),
            "mlp" => Ok(ModelSpec::mlp(feature_dim, self.hidden, classes)),
            other => Err(format!("unknown model.kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.0, weight_decay: 0.0, epochs: 100, batch_size: 32 }
    }
}

impl HyperConfig {
    pub fn to_hyper(&self, seed: u64) -> Hyper {
        Hyper {
            optimizer: Sgd {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub name: String,
    pub r: usize,
    pub lissa_iterations: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self { name: "dropout".into(), r: 16, lissa_iterations: 10 }
    }
}

impl MethodConfig {
    pub fn to_spec(&self) -> Result<MethodSpec, String> {
        let mut spec: MethodSpec = self.name.parse()?;
        if let MethodSpec::Lissa { iterations } = &mut spec {
            *iterations = self.lissa_iterations;
        }
        Ok(spec)
    }
}

pub fn parse_methods(list: &str, lissa_iterations: usize) -> Result<Vec<MethodSpec>, String> {
    list.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut spec: MethodSpec = s.parse()?;
            if let MethodSpec::Lissa { iterations } = &mut spec {
                *iterations = lissa_iterations;
            }
            Ok(spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingSection {
    /// `paper_rule` or `fixed`.
    pub policy: String,
    pub fixed_value: f64,
}

impl Default for DampingSection {
    fn default() -> Self {
        Self { policy: "paper_rule".into(), fixed_value: 0.1 }
    }
}

impl DampingSection {
    pub fn to_config(&self) -> Result<DampingConfig, String> {
        match self.policy.as_str() {
            "paper_rule" => Ok(DampingConfig::PaperRule),
            "fixed" => Ok(DampingConfig::Fixed(self.fixed_value)),
            other => Err(format!("unknown damping.policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub flip_fraction: f64,
    pub methods: String,
    /// Number of paired seeds; run seeds are `seed..seed+seeds`.
    pub seeds: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            flip_fraction: 0.2,
            methods: "orig,dropout,gaussian,datainf,lissa,hessian_free,pca,fjlt".into(),
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainConfig {
    pub fractions: String,
    pub mode: String,
    pub methods: String,
    pub seeds: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            fractions: "0.05,0.15,0.25,0.35".into(),
            mode: "remove_top".into(),
            methods: "dropout,random".into(),
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieveConfig {
    pub methods: String,
    pub seeds: u64,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self { methods: "dropout,random".into(), seeds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub r_list: String,
    pub methods: String,
    pub flip_fraction: f64,
    pub seeds: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            r_list: "1,2,4,8,16".into(),
            methods: "dropout,gaussian".into(),
            flip_fraction: 0.2,
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub methods: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n: 256, d: 100000, r: 64, methods: "dropout,gaussian".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub cases: usize,
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub lambda: f64,
    pub probe_k: String,
    pub probe_kappa: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            d: 64,
            n: 16,
            r: 8,
            lambda: 0.1,
            probe_k: "128,512".into(),
            probe_kappa: 0.25,
        }
    }
}

impl TheoryConfig {
    pub fn to_verification(&self, seed: u64) -> Result<VerificationConfig, String> {
        Ok(VerificationConfig {
            cases: self.cases,
            d: self.d,
            n: self.n,
            r: self.r,
            lambda: self.lambda,
            seed,
            probe_k: parse_list(&self.probe_k)?,
            probe_kappa: self.probe_kappa,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// GRDS gradient storage width: `f32` (default, halves disk) or `f64`
    /// (bit-exact for arbitrary doubles).
    pub dtype: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { dtype: "f32".into() }
    }
}

impl IoConfig {
    pub fn to_dtype(&self) -> Result<infkit_core::gradstore::Dtype, String> {
        match self.dtype.as_str() {
            "f32" => Ok(infkit_core::gradstore::Dtype::F32),
            "f64" => Ok(infkit_core::gradstore::Dtype::F64),
            other => Err(format!("unknown io.dtype `{other}` (want f32 or f64)")),
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| format!("bad list entry `{x}`")))
        .collect()
}

const SECTIONS: &[&str] = &[
    "task", "model", "hyper", "method", "damping", "detect", "retrain", "retrieve", "sweep",
    "bench", "theory", "io",
];

/// Loads the layered configuration. `file` is optional TOML; `sets` are
/// `key=value` dotted overrides applied after environment variables.
pub fn load(
    file: Option<&std::path::Path>,
    sets: &[String],
    env: impl Iterator<Item = (String, String)>,
) -> Result<RunConfig, String> {
    // start from defaults rendered to a TOML table so overrides can land
    let defaults =
        toml::to_string(&RunConfig::default()).map_err(|e| format!("default config: {e}"))?;
    let mut table: toml::Table = defaults.parse().map_err(|e| format!("default config: {e}"))?;

    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        let file_table: toml::Table =
            text.parse().map_err(|e| format!("parsing {}: {e}", path.display()))?;
        merge_tables(&mut table, file_table);
    }

    for (name, value) in env {
        if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
            let key = env_to_dotted(rest);
            set_dotted(&mut table, &key, &value)?;
        }
    }

    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| format!("--set needs key=value, got `{set}`"))?;
        set_dotted(&mut table, key.trim(), value.trim())?;
    }

    table.try_into::<RunConfig>().map_err(|e| format!("invalid config: {e}"))
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => merge_tables(bt, ot),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `TASK_N_TRAIN` -> `task.n_train`; names without a section prefix map to
/// top-level keys (`SEED` -> `seed`, `OUT_DIR` -> `out_dir`).
fn env_to_dotted(rest: &str) -> String {
    let lower = rest.to_ascii_lowercase();
    for section in SECTIONS {
        if let Some(tail) = lower.strip_prefix(&format!("{section}_")) {
            return format!("{section}.{tail}");
        }
    }
    lower
}

fn set_dotted(table: &mut toml::Table, dotted: &str, raw: &str) -> Result<(), String> {
    let parts: Vec<&str> = dotted.split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{part}` in `{dotted}` is not a section"))?;
    }
    let key = parts[parts.len() - 1].to_string();
    // coerce to the type of the value being replaced (the defaults populate
    // every known key), falling back to scalar sniffing
    let value = match current.get(&key) {
        Some(toml::Value::String(_)) => toml::Value::String(raw.to_string()),
        Some(toml::Value::Float(_)) => toml::Value::Float(
            raw.parse::<f64>().map_err(|_| format!("`{dotted}` expects a number, got `{raw}`"))?,
        ),
        Some(toml::Value::Integer(_)) => toml::Value::Integer(
            raw.parse::<i64>()
                .map_err(|_| format!("`{dotted}` expects an integer, got `{raw}`"))?,
        ),
        Some(toml::Value::Boolean(_)) => toml::Value::Boolean(
            raw.parse::<bool>()
                .map_err(|_| format!("`{dotted}` expects true/false, got `{raw}`"))?,
        ),
        _ => parse_scalar(raw),
    };
    current.insert(key, value);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

/// Canonical echo used for hashing and the run-directory record.
pub fn canonical_toml(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_without_inputs() {
        let cfg = load(None, &[], std::iter::empty()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn env_and_set_precedence() {
        let env = vec![
            ("INFKIT_SEED".to_string(), "9".to_string()),
            ("INFKIT_TASK_N_TRAIN".to_string(), "50".to_string()),
            ("INFKIT_METHOD_R".to_string(), "4".to_string()),
        ];
        let sets = vec!["method.r=8".to_string()];
        let cfg = load(None, &sets, env.into_iter()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.task.n_train, 50);
        assert_eq!(cfg.method.r, 8); // --set beats env
    }

    #[test]
    fn unknown_keys_rejected() {
        let path = temp_file("unknown.toml");
        std::fs::write(&path, "nonsense_key = 1\n").unwrap();
        assert!(load(Some(&path), &[], std::iter::empty()).is_err());
        std::fs::write(&path, "[task]\nn_trian = 5\n").unwrap();
        assert!(load(Some(&path), &[], std::iter::empty()).is_err());
        let _ = std::fs::remove_file(path);
    }

    #[test]
    fn file_values_override_defaults() {
        let path = temp_file("override.toml");
        std::fs::write(&path, "seed = 3\n[hyper]\nepochs = 7\n").unwrap();
        let cfg = load(Some(&path), &[], std::iter::empty()).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.hyper.epochs, 7);
        assert_eq!(cfg.hyper.batch_size, 32); // untouched default
        let _ = std::fs::remove_file(path);
    }

    fn temp_file(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("infkit-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }
}

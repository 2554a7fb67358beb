//! `infkit`: data generation, training, gradient export, compression,
//! influence scoring, the three evaluation protocols, the compression-size
//! sweep, timing benches, and the error-bound checks, all driven by one
//! layered configuration.

mod config;
mod errors;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::Digest;

use config::RunConfig;
use errors::CliError;
use infkit_core::compress;
use infkit_core::eval::{self, MethodSpec, SelectionMode};
use infkit_core::gradstore::{self, ActivationStore};
use infkit_core::influence::{self, Engine, EngineConfig};
use infkit_core::plot::{band_plot_svg, BandSeries};
use infkit_core::theory;
use infkit_core::trainer::{self, LabeledDataset, TrainRecord};

#[derive(Parser)]
#[command(name = "infkit", version, about = "Training-data influence scoring toolkit")]
struct Cli {
    /// TOML config file; flags and INFKIT_* env vars override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted config override, e.g. --set task.n_train=500 (repeatable).
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker pool size (0 = logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (optionally with flipped labels)
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of training labels to flip.
        #[arg(long)]
        flip: Option<f64>,
    },
    /// Train the configured model on a dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-example train/val gradients to a GRDS file
    Grads {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Storage width: f32 (default) or f64.
        #[arg(long)]
        dtype: Option<String>,
        /// Also capture (h, delta) activation pairs for logra.
        #[arg(long)]
        capture_activations: bool,
        #[arg(long)]
        acts_out: Option<PathBuf>,
    },
    /// Compress a GRDS gradient file with one of the five schemes
    Compress {
        #[arg(long)]
        grds: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        r: Option<usize>,
        /// Activation store JSON (required for logra).
        #[arg(long)]
        acts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dtype: Option<String>,
    },
    /// Score training examples of a GRDS file (full or compressed)
    Influence {
        #[arg(long)]
        grds: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        acts: Option<PathBuf>,
        /// Output CSV path (default: <run-dir>/report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mislabeled-data detection AUC over paired seeds
    Detect {
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        flip: Option<f64>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        r: Option<usize>,
    },
    /// Retrain after removing/keeping the most influential examples
    RetrainEval {
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        r: Option<usize>,
    },
    /// Cross-source retrieval: top-1/top-3 same-source proportions
    Retrieve {
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        r: Option<usize>,
    },
    /// Detection AUC as a function of compression size r
    SweepR {
        #[arg(long)]
        r_list: Option<String>,
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        flip: Option<f64>,
    },
    /// Wall-clock split of compression vs iHVP per method
    Bench {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        methods: Option<String>,
    },
    /// Numerically verify the compression error bounds
    TheoryCheck {
        #[arg(long)]
        cases: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.stderr_line());
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(threads) = cli.threads {
        sets.push(format!("threads={threads}"));
    }
    if let Some(dir) = &cli.out_dir {
        sets.push(format!("out_dir={dir}"));
    }
    push_command_sets(&cli.command, &mut sets);
    let cfg =
        config::load(cli.config.as_deref(), &sets, std::env::vars()).map_err(CliError::config)?;

    if cfg.threads > 0 {
        // ignore the error when a pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }

    match cli.command {
        Command::Gen { out, .. } => cmd_gen(&cfg, out),
        Command::Train { data, out } => cmd_train(&cfg, &data, out),
        Command::Grads { data, model, out, capture_activations, acts_out, .. } => {
            cmd_grads(&cfg, &data, &model, out, capture_activations, acts_out)
        }
        Command::Compress { grds, acts, out, .. } => cmd_compress(&cfg, &grds, acts, out),
        Command::Influence { grds, acts, out, .. } => cmd_influence(&cfg, &grds, acts, out),
        Command::Detect { .. } => cmd_detect(&cfg),
        Command::RetrainEval { .. } => cmd_retrain_eval(&cfg),
        Command::Retrieve { .. } => cmd_retrieve(&cfg),
        Command::SweepR { .. } => cmd_sweep_r(&cfg),
        Command::Bench { .. } => cmd_bench(&cfg),
        Command::TheoryCheck { .. } => cmd_theory_check(&cfg),
    }
}

/// Folds the ergonomic per-command flags into dotted overrides so a single
/// precedence chain covers everything.
fn push_command_sets(command: &Command, sets: &mut Vec<String>) {
    match command {
        Command::Gen { flip, .. } => {
            if let Some(f) = flip {
                sets.push(format!("detect.flip_fraction={f}"));
            }
        }
        Command::Grads { dtype, .. } => {
            if let Some(d) = dtype {
                sets.push(format!("io.dtype={d}"));
            }
        }
        Command::Compress { method, r, dtype, .. } => {
            if let Some(m) = method {
                sets.push(format!("method.name={m}"));
            }
            if let Some(r) = r {
                sets.push(format!("method.r={r}"));
            }
            if let Some(d) = dtype {
                sets.push(format!("io.dtype={d}"));
            }
        }
        Command::Influence { method, r, .. } => {
            if let Some(m) = method {
                sets.push(format!("method.name={m}"));
            }
            if let Some(r) = r {
                sets.push(format!("method.r={r}"));
            }
        }
        Command::Detect { methods, flip, seeds, r } => {
            if let Some(m) = methods {
                sets.push(format!("detect.methods={m}"));
            }
            if let Some(f) = flip {
                sets.push(format!("detect.flip_fraction={f}"));
            }
            if let Some(s) = seeds {
                sets.push(format!("detect.seeds={s}"));
            }
            if let Some(r) = r {
                sets.push(format!("method.r={r}"));
            }
        }
        Command::RetrainEval { methods, fractions, mode, seeds, r } => {
            if let Some(m) = methods {
                sets.push(format!("retrain.methods={m}"));
            }
            if let Some(f) = fractions {
                sets.push(format!("retrain.fractions={f}"));
            }
            if let Some(m) = mode {
                sets.push(format!("retrain.mode={m}"));
            }
            if let Some(s) = seeds {
                sets.push(format!("retrain.seeds={s}"));
            }
            if let Some(r) = r {
                sets.push(format!("method.r={r}"));
            }
        }
        Command::Retrieve { methods, seeds, r } => {
            if let Some(m) = methods {
                sets.push(format!("retrieve.methods={m}"));
            }
            if let Some(s) = seeds {
                sets.push(format!("retrieve.seeds={s}"));
            }
            if let Some(r) = r {
                sets.push(format!("method.r={r}"));
            }
        }
        Command::SweepR { r_list, methods, seeds, flip } => {
            if let Some(l) = r_list {
                sets.push(format!("sweep.r_list={l}"));
            }
            if let Some(m) = methods {
                sets.push(format!("sweep.methods={m}"));
            }
            if let Some(s) = seeds {
                sets.push(format!("sweep.seeds={s}"));
            }
            if let Some(f) = flip {
                sets.push(format!("sweep.flip_fraction={f}"));
            }
        }
        Command::Bench { n, d, r, methods } => {
            if let Some(n) = n {
                sets.push(format!("bench.n={n}"));
            }
            if let Some(d) = d {
                sets.push(format!("bench.d={d}"));
            }
            if let Some(r) = r {
                sets.push(format!("bench.r={r}"));
            }
            if let Some(m) = methods {
                sets.push(format!("bench.methods={m}"));
            }
        }
        Command::TheoryCheck { cases } => {
            if let Some(c) = cases {
                sets.push(format!("theory.cases={c}"));
            }
        }
        _ => {}
    }
}

/// `runs/<unix-seconds>-<8-hex config hash>/` with the resolved config
/// echoed inside. Reruns differ only in the directory name; deterministic
/// outputs stay byte-identical.
struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(cfg: &RunConfig) -> Result<Self, CliError> {
        let echo = config::canonical_toml(cfg);
        let mut hasher = sha2::Sha256::new();
        hasher.update(echo.as_bytes());
        let hash = hex_prefix(&hasher.finalize(), 8);
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let path = Path::new(&cfg.out_dir).join(format!("{ts}-{hash}"));
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.toml"), echo)?;
        Ok(Self { path })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<String>()[..chars].to_string()
}

fn default_out(
    cfg: &RunConfig,
    explicit: Option<PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            Ok(p)
        }
        None => {
            let dir = RunDir::create(cfg)?;
            Ok(dir.file(name))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string(value)?)?;
    Ok(())
}

fn seeds_of(cfg: &RunConfig, count: u64) -> Vec<u64> {
    (cfg.seed..cfg.seed + count).collect()
}

fn protocol_config(cfg: &RunConfig, seeds: Vec<u64>) -> Result<eval::ProtocolConfig, CliError> {
    let task = cfg.task.to_task(cfg.seed).map_err(CliError::config)?;
    let model = cfg
        .model
        .to_spec(cfg.task.feature_dim_effective(), cfg.task.classes_effective())
        .map_err(CliError::config)?;
    Ok(eval::ProtocolConfig {
        task,
        model,
        hyper: cfg.hyper.to_hyper(cfg.seed),
        damping: cfg.damping.to_config().map_err(CliError::config)?,
        r: cfg.method.r,
        seeds,
    })
}

fn cmd_gen(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let task = cfg.task.to_task(cfg.seed).map_err(CliError::config)?;
    let mut ds = trainer::gen_task(&task)?;
    if cfg.detect.flip_fraction > 0.0 {
        ds = trainer::flip_labels(&ds, cfg.detect.flip_fraction, cfg.seed)?;
    }
    let path = default_out(cfg, out, "dataset.json")?;
    write_json(&path, &ds)?;
    println!("wrote dataset ({} examples) to {}", ds.examples.len(), path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ds: LabeledDataset = read_json(data)?;
    let spec = cfg.model.to_spec(ds.feature_dim, ds.n_classes).map_err(CliError::config)?;
    let record = trainer::train(&spec, &ds, &cfg.hyper.to_hyper(cfg.seed))?;
    let path = default_out(cfg, out, "train_record.json")?;
    write_json(&path, &record)?;
    println!(
        "trained: test accuracy {:.4}, mean ce {:.4}, perplexity {:.4} -> {}",
        record.metrics.accuracy,
        record.metrics.mean_cross_entropy,
        record.metrics.perplexity,
        path.display()
    );
    Ok(())
}

fn cmd_grads(
    cfg: &RunConfig,
    data: &Path,
    model: &Path,
    out: Option<PathBuf>,
    capture: bool,
    acts_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ds: LabeledDataset = read_json(data)?;
    let record: TrainRecord = read_json(model)?;
    let (grads, acts) = trainer::per_example_gradients(&record.model, &ds, capture)?;
    let path = default_out(cfg, out, "gradients.grds")?;
    let dtype = cfg.io.to_dtype().map_err(CliError::config)?;
    gradstore::write_grds(&grads, &path, dtype)?;
    println!(
        "wrote {} gradient rows (width {}) to {}",
        grads.n_examples(),
        grads.total_dim(),
        path.display()
    );
    if capture {
        let acts_path = acts_out.unwrap_or_else(|| path.with_extension("acts.json"));
        write_json(&acts_path, &acts.expect("captured"))?;
        println!("wrote activation store to {}", acts_path.display());
    }
    Ok(())
}

fn cmd_compress(
    cfg: &RunConfig,
    grds: &Path,
    acts: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ds = gradstore::read_grds(grds)?;
    let spec = cfg.method.to_spec().map_err(CliError::config)?;
    let MethodSpec::Compressed(method) = spec else {
        return Err(CliError::config(format!(
            "`{}` is not a compression method",
            cfg.method.name
        )));
    };
    let store: Option<ActivationStore> =
        acts.map(|p| read_json::<ActivationStore>(&p)).transpose()?;
    let plan = compress::make_plan(method, cfg.method.r, cfg.seed, ds.layers(), Some(&ds))?;
    let cds = compress::compress_dataset(&plan, &ds, store.as_ref())?;
    let path = default_out(cfg, out, "compressed.grds")?;
    let dtype = cfg.io.to_dtype().map_err(CliError::config)?;
    gradstore::write_grds(&cds.to_grds_dataset(), &path, dtype)?;
    println!(
        "compressed {} rows from width {} to {} -> {}",
        cds.data.n_examples(),
        ds.total_dim(),
        cds.data.total_dim(),
        path.display()
    );
    Ok(())
}

fn cmd_influence(
    cfg: &RunConfig,
    grds: &Path,
    acts: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ds = gradstore::read_grds(grds)?;
    let damping = cfg.damping.to_config().map_err(CliError::config)?;
    let engine_cfg = EngineConfig { damping, ..EngineConfig::new(Engine::Orig) };

    // compressed files carry their plan fingerprint in the layer names
    let mut report = if let Ok(cds) = compress::CompressedDataset::from_grds_dataset(ds.clone()) {
        influence::influence_compressed(&cds, &engine_cfg)?
    } else {
        let spec = cfg.method.to_spec().map_err(CliError::config)?;
        match spec {
            MethodSpec::Compressed(_) => {
                let store: Option<ActivationStore> =
                    acts.map(|p| read_json::<ActivationStore>(&p)).transpose()?;
                eval::score_with_method(
                    &spec,
                    &ds,
                    store.as_ref(),
                    cfg.method.r,
                    cfg.seed,
                    &engine_cfg.damping,
                )?
            }
            MethodSpec::Orig => influence::influence_orig(&ds, &engine_cfg)?,
            MethodSpec::HessianFree => influence::influence_hessian_free(&ds)?,
            MethodSpec::Lissa { iterations } => {
                influence::influence_lissa(&ds, &engine_cfg, iterations)?
            }
            MethodSpec::DataInf => influence::influence_datainf(&ds, &engine_cfg)?,
            MethodSpec::Random => {
                return Err(CliError::config("`random` is not an influence engine"))
            }
        }
    };
    report.seed = cfg.seed;

    let path = default_out(cfg, out, "report.csv")?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(&path, csv)?;
    let echo = serde_json::to_value(cfg)?;
    let record = report.run_record(&echo);
    let record_path = path.with_extension("runrecord.jsonl");
    let mut f = fs::File::create(&record_path)?;
    writeln!(f, "{record}")?;
    println!(
        "scored {} training examples with {} -> {}",
        report.scores.len(),
        report.method,
        path.display()
    );
    Ok(())
}

fn cmd_detect(cfg: &RunConfig) -> Result<(), CliError> {
    let methods = config::parse_methods(&cfg.detect.methods, cfg.method.lissa_iterations)
        .map_err(CliError::config)?;
    let pc = protocol_config(cfg, seeds_of(cfg, cfg.detect.seeds))?;
    let results = eval::detection_experiment(&pc, cfg.detect.flip_fraction, &methods)?;
    let dir = RunDir::create(cfg)?;
    let csv = eval::detection_csv(&results, &pc.seeds);
    fs::write(dir.file("detection.csv"), &csv)?;
    println!("mislabeled-data detection (flip {:.0}%):", cfg.detect.flip_fraction * 100.0);
    for r in &results {
        println!("  {:<18} auc {:.4} +/- {:.4}", r.method, r.mean, r.stddev);
    }
    println!("wrote {}", dir.file("detection.csv").display());
    Ok(())
}

fn cmd_retrain_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let methods = config::parse_methods(&cfg.retrain.methods, cfg.method.lissa_iterations)
        .map_err(CliError::config)?;
    let fractions: Vec<f64> =
        config::parse_list(&cfg.retrain.fractions).map_err(CliError::config)?;
    let mode: SelectionMode = cfg.retrain.mode.parse().map_err(CliError::config)?;
    let pc = protocol_config(cfg, seeds_of(cfg, cfg.retrain.seeds))?;
    let mut results = Vec::new();
    for method in &methods {
        let m_mode = if *method == MethodSpec::Random { SelectionMode::Random } else { mode };
        results.push(eval::retrain_experiment(&pc, method, &fractions, m_mode)?);
    }
    let dir = RunDir::create(cfg)?;
    fs::write(dir.file("retrain.csv"), eval::retrain_csv(&results, &pc.seeds))?;
    fs::write(dir.file("retrain_summary.csv"), eval::retrain_summary_csv(&results))?;
    println!(
        "retraining ({}), baseline accuracy {:.4}:",
        mode.as_str(),
        results.first().map(|r| r.baseline_accuracy_mean).unwrap_or(f64::NAN)
    );
    for r in &results {
        let cells: Vec<String> = r
            .fractions
            .iter()
            .zip(&r.accuracy_means)
            .map(|(f, a)| format!("{:.0}%: {:.4}", f * 100.0, a))
            .collect();
        println!("  {:<18} {}", r.method, cells.join("  "));
    }
    println!("wrote {}", dir.file("retrain_summary.csv").display());
    Ok(())
}

fn cmd_retrieve(cfg: &RunConfig) -> Result<(), CliError> {
    let methods = config::parse_methods(&cfg.retrieve.methods, cfg.method.lissa_iterations)
        .map_err(CliError::config)?;
    // retrieval is defined for the multi-source task; build it from the
    // task section regardless of task.kind
    let mut task_cfg = cfg.task.clone();
    task_cfg.kind = "multi_source_orthogonal".into();
    let task = task_cfg.to_task(cfg.seed).map_err(CliError::config)?;
    let model = cfg
        .model
        .to_spec(task_cfg.feature_dim_effective(), task_cfg.classes_effective())
        .map_err(CliError::config)?;
    let pc = eval::ProtocolConfig {
        task,
        model,
        hyper: cfg.hyper.to_hyper(cfg.seed),
        damping: cfg.damping.to_config().map_err(CliError::config)?,
        r: cfg.method.r,
        seeds: seeds_of(cfg, cfg.retrieve.seeds),
    };
    let mut results = Vec::new();
    for method in &methods {
        results.push(eval::retrieval_experiment(&pc, method)?);
    }
    let dir = RunDir::create(cfg)?;
    fs::write(dir.file("retrieval.csv"), eval::retrieval_csv(&results))?;
    println!("cross-source retrieval ({} sources):", cfg.task.sources);
    for r in &results {
        println!(
            "  {:<18} top-1 {:.3}  top-3 {:.3}",
            r.method, r.top1_same_class, r.top3_same_class
        );
    }
    println!("wrote {}", dir.file("retrieval.csv").display());
    Ok(())
}

fn cmd_sweep_r(cfg: &RunConfig) -> Result<(), CliError> {
    let methods = config::parse_methods(&cfg.sweep.methods, cfg.method.lissa_iterations)
        .map_err(CliError::config)?;
    let r_list: Vec<usize> = config::parse_list(&cfg.sweep.r_list).map_err(CliError::config)?;
    let pc = protocol_config(cfg, seeds_of(cfg, cfg.sweep.seeds))?;
    let rows = eval::sweep_r(&pc, cfg.sweep.flip_fraction, &methods, &r_list)?;
    let dir = RunDir::create(cfg)?;
    fs::write(dir.file("sweep.csv"), eval::sweep_csv(&rows, &pc.seeds))?;

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let series: Vec<BandSeries> = methods
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let label = m.label();
            let of_method: Vec<&eval::SweepRow> =
                rows.iter().filter(|row| row.method == label).collect();
            BandSeries {
                name: label,
                color: palette[mi % palette.len()].to_string(),
                xs: of_method.iter().map(|row| row.r as f64).collect(),
                mins: of_method.iter().map(|row| row.min).collect(),
                means: of_method.iter().map(|row| row.mean).collect(),
                maxs: of_method.iter().map(|row| row.max).collect(),
            }
        })
        .collect();
    let svg = band_plot_svg("detection AUC vs compression size", "r", "AUC", &series);
    fs::write(dir.file("sweep.svg"), svg)?;
    for row in &rows {
        println!(
            "  {:<10} r={:<4} auc mean {:.4} band [{:.4}, {:.4}]",
            row.method, row.r, row.mean, row.min, row.max
        );
    }
    println!("wrote {} and sweep.svg", dir.file("sweep.csv").display());
    Ok(())
}

fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let methods = config::parse_methods(&cfg.bench.methods, cfg.method.lissa_iterations)
        .map_err(CliError::config)?;
    let results = eval::bench_methods(cfg.bench.n, cfg.bench.d, cfg.bench.r, &methods, cfg.seed)?;
    let dir = RunDir::create(cfg)?;
    fs::write(dir.file("bench.csv"), eval::bench_csv(&results))?;
    println!(
        "bench n={} d={} r={} (wall-clock seconds):",
        cfg.bench.n, cfg.bench.d, cfg.bench.r
    );
    for r in &results {
        println!(
            "  {:<14} plan {:.4}  compress {:.4}  ihvp {:.4}",
            r.method, r.plan_seconds, r.compress_seconds, r.ihvp_seconds
        );
    }
    println!("wrote {}", dir.file("bench.csv").display());
    Ok(())
}

fn cmd_theory_check(cfg: &RunConfig) -> Result<(), CliError> {
    let vcfg = cfg.theory.to_verification(cfg.seed).map_err(CliError::config)?;
    let report = theory::run_verification(&vcfg)?;
    let dir = RunDir::create(cfg)?;
    write_json(&dir.file("theory.json"), &report)?;
    print!("{}", report.human_summary());
    println!("wrote {}", dir.file("theory.json").display());
    if !report.all_passed() {
        return Err(CliError::new("TheoremViolated", "a bound check failed; see theory.json"));
    }
    Ok(())
}

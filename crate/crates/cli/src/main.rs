//! `contesta`: batch driver for the pipeline.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.

mod config;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use contesta_core::cohort::{stratified_split, Cohort, Feature};
use contesta_core::extract::{default_demographics_path, extract_cohort};
use contesta_core::global_explain::{explain, ImportanceReport};
use contesta_core::io::{read_cohort, read_json, write_atomic, write_cohort, write_json};
use contesta_core::local_explain::{base_record_id, contest, LatentSpaceConfig};
use contesta_core::models::{evaluate, fit, TrainedModel};
use contesta_core::pipeline::{probe_contest, ProbeConfig, RunConfig};
use contesta_core::seed::{stage_seed, Stage};
use contesta_core::synth::{generate_cohort, Probe, ProbeMode, SynthTruth};
use contesta_core::vif::prune_multicollinearity;
use contesta_core::EpisodeRecord;

use crate::config::{Config, Echo};

/// Bad input or configuration; exits with code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "contesta", version, about = "Explainable, contestable LOS/NEC recognition from neonatal vital signs")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: epoch CSVs, manifest, demographics, truth.
    Synth(SynthArgs),
    /// Extract daily features from a manifest of epoch CSVs.
    Extract(ExtractArgs),
    /// Remove collinear features by iterative VIF pruning.
    Prune(PruneArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Fit a classifier with cross-validated random search.
    Train(TrainArgs),
    /// Threshold metrics and AUC on a held-out set.
    Evaluate(EvaluateArgs),
    /// Permutation importance and partial dependence, with charts.
    ExplainGlobal(ExplainGlobalArgs),
    /// Latent-space neighbour panels and a justify/contest verdict for one case.
    ExplainLocal(ExplainLocalArgs),
    /// Plant a misclassification probe and contest it.
    Probe(ProbeArgs),
    /// Serve the REST API (and optionally the built UI).
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Illness contrast; 0 makes the classes indistinguishable.
    #[arg(long)]
    contrast: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to demographics.csv beside the manifest.
    #[arg(long)]
    demographics: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_lag: Option<usize>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vif_threshold: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    train_frac: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Rf,
    Svm,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ExplainGlobalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    permutations: Option<usize>,
}

#[derive(Args)]
struct ExplainLocalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reference cohort the neighbours are drawn from.
    #[arg(long)]
    cohort: PathBuf,
    /// Case id; looked up in the cohort unless --probe supplies the record.
    #[arg(long)]
    case: Option<String>,
    /// probe.json written by `contesta probe`; its record is the case.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated panel features.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Importance report used to pick panel features when none are given.
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Violating,
    Consistent,
}

impl From<ModeArg> for ProbeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Violating => ProbeMode::PatternViolating,
            ModeArg::Consistent => ProbeMode::PatternConsistent,
        }
    }
}

#[derive(Args)]
struct ProbeArgs {
    /// Directory written by `contesta synth` (reads truth.json).
    #[arg(long)]
    synth_dir: PathBuf,
    /// Cohort the probe is planted into.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CONTESTA_PORT")]
    port: Option<u16>,
    #[arg(long, env = "CONTESTA_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<contesta_core::Error>() {
            return if core.is_validation() { 2 } else { 3 };
        }
    }
    3
}

fn load(path: &Path) -> anyhow::Result<Cohort> {
    Ok(read_cohort(path)?)
}

fn load_model(path: &Path) -> anyhow::Result<TrainedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainedModel::from_json(&text)?)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn echo(dir: &Path, command: &str, config: &Config, inputs: &[(&str, &Path)], outputs: &[(&str, &Path)]) -> anyhow::Result<()> {
    let pairs = |v: &[(&str, &Path)]| v.iter().map(|(k, p)| (k.to_string(), show(p))).collect();
    let doc = Echo {
        command,
        inputs: pairs(inputs),
        outputs: pairs(outputs),
        config,
    }
    .to_toml()?;
    Ok(write_atomic(&dir.join(format!("{command}.effective.toml")), doc.as_bytes())?)
}

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Extract(a) => extract(cfg, a),
        Command::Prune(a) => prune(cfg, a),
        Command::Split(a) => split(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(cfg, a),
        Command::ExplainGlobal(a) => explain_global(cfg, a),
        Command::ExplainLocal(a) => explain_local(cfg, a),
        Command::Probe(a) => probe(cfg, a),
        Command::Serve(a) => serve(cfg, a),
    }
}

fn synth(mut cfg: Config, a: SynthArgs) -> anyhow::Result<()> {
    cfg.synth.seed = cfg.seed;
    if let Some(n) = a.n_per_class {
        cfg.synth.n_per_class = n;
    }
    if let Some(c) = a.contrast {
        cfg.synth.illness_contrast = c;
    }
    let data = generate_cohort(&cfg.synth).map_err(contesta_core::Error::from)?;
    let name = a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "synth".into());
    let staging = parent(&a.out).join(format!(".{name}.staging"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    data.write_dir(&staging)?;
    echo(&staging, "synth", &cfg, &[], &[("dir", &a.out)])?;
    if a.out.exists() {
        fs::remove_dir_all(&a.out).with_context(|| format!("replacing {}", a.out.display()))?;
    }
    fs::rename(&staging, &a.out)?;
    println!("wrote {} infant-days to {}", data.demographics.len(), a.out.display());
    Ok(())
}

fn extract(mut cfg: Config, a: ExtractArgs) -> anyhow::Result<()> {
    if let Some(l) = a.max_lag {
        cfg.extract.max_lag_s = l;
    }
    let demo = a.demographics.clone().unwrap_or_else(|| default_demographics_path(&a.manifest));
    let cohort = extract_cohort(&a.manifest, &demo, cfg.extract.max_lag_s)?;
    write_cohort(&a.out, &cohort)?;
    echo(&parent(&a.out), "extract", &cfg, &[("manifest", &a.manifest), ("demographics", &demo)], &[("cohort", &a.out)])?;
    println!("extracted {} records to {}", cohort.len(), a.out.display());
    Ok(())
}

fn removal_log_path(out: &Path) -> PathBuf {
    out.with_extension("removal.json")
}

fn prune(mut cfg: Config, a: PruneArgs) -> anyhow::Result<()> {
    if let Some(t) = a.vif_threshold {
        cfg.prune.vif_threshold = t;
    }
    let cohort = load(&a.cohort)?;
    let (pruned, log) =
        prune_multicollinearity(&cohort, cfg.prune.vif_threshold).map_err(contesta_core::Error::from)?;
    write_cohort(&a.out, &pruned)?;
    let log_path = removal_log_path(&a.out);
    write_json(&log_path, &log)?;
    echo(&parent(&a.out), "prune", &cfg, &[("cohort", &a.cohort)], &[("cohort", &a.out), ("removal_log", &log_path)])?;
    let removed: Vec<String> = log.removed().iter().map(|f| f.to_string()).collect();
    println!("removed [{}]; {} features remain", removed.join(", "), pruned.active_features().len());
    Ok(())
}

fn run_config(cfg: &Config) -> RunConfig {
    RunConfig {
        algorithm: cfg.train.algorithm,
        seed: cfg.seed,
        train_fraction: cfg.split.train_fraction,
        permutations: cfg.explain_global.permutations,
        threshold: cfg.evaluate.threshold,
        spec: cfg.train.spec.clone(),
    }
}

fn split(mut cfg: Config, a: SplitArgs) -> anyhow::Result<()> {
    if let Some(f) = a.train_frac {
        cfg.split.train_fraction = f;
    }
    let cohort = load(&a.cohort)?;
    let rc = run_config(&cfg);
    let (train, test) = stratified_split(&cohort, rc.train_fraction, rc.split_seed()).map_err(contesta_core::Error::from)?;
    fs::create_dir_all(&a.out_dir)?;
    let (tp, sp) = (a.out_dir.join("train.csv"), a.out_dir.join("test.csv"));
    write_cohort(&tp, &train)?;
    write_cohort(&sp, &test)?;
    echo(&a.out_dir, "split", &cfg, &[("cohort", &a.cohort)], &[("train", &tp), ("test", &sp)])?;
    println!("train {} / test {}", train.len(), test.len());
    Ok(())
}

fn train(mut cfg: Config, a: TrainArgs) -> anyhow::Result<()> {
    if let Some(algo) = a.algo {
        cfg.train.algorithm = match algo {
            AlgoArg::Rf => contesta_core::models::Algorithm::RandomForest,
            AlgoArg::Svm => contesta_core::models::Algorithm::RbfSvm,
        };
    }
    let data = load(&a.train)?;
    let model = fit(&run_config(&cfg).effective_spec(), &data).map_err(contesta_core::Error::from)?;
    write_atomic(&a.out, model.to_json().as_bytes())?;
    echo(&parent(&a.out), "train", &cfg, &[("train", &a.train)], &[("model", &a.out)])?;
    println!("trained {} on {} records: {:?}", model.algorithm(), data.len(), model.chosen_hypers);
    Ok(())
}

fn evaluate_cmd(mut cfg: Config, a: EvaluateArgs) -> anyhow::Result<()> {
    if let Some(t) = a.threshold {
        cfg.evaluate.threshold = t;
    }
    let model = load_model(&a.model)?;
    let test = load(&a.test)?;
    let report = evaluate(&model, &test, cfg.evaluate.threshold).map_err(contesta_core::Error::from)?;
    write_json(&a.out, &report)?;
    echo(&parent(&a.out), "evaluate", &cfg, &[("model", &a.model), ("test", &a.test)], &[("evaluation", &a.out)])?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!(
        "accuracy {:.3}, sensitivity {}, specificity {}, AUC {}",
        report.accuracy,
        opt(report.sensitivity),
        opt(report.specificity),
        opt(report.auc)
    );
    Ok(())
}

fn explain_global(mut cfg: Config, a: ExplainGlobalArgs) -> anyhow::Result<()> {
    if let Some(p) = a.permutations {
        cfg.explain_global.permutations = p;
    }
    let model = load_model(&a.model)?;
    let data = load(&a.cohort)?;
    let seed = stage_seed(cfg.seed, Stage::Importance);
    let bundle = explain(&model, &data, cfg.explain_global.permutations, seed).map_err(contesta_core::Error::from)?;
    fs::create_dir_all(&a.out_dir)?;
    let json = a.out_dir.join("explanation.json");
    write_json(&json, &bundle)?;
    let title = format!("Permutation importance ({}, {} permutations)", model.algorithm(), bundle.importance.permutations);
    write_atomic(&a.out_dir.join("importance.svg"), svg::importance(&bundle.importance, &title).as_bytes())?;
    for c in &bundle.pdp_1d {
        write_atomic(&a.out_dir.join(format!("pdp_{}.svg", c.feature)), svg::pdp_curve(c).as_bytes())?;
    }
    for s in &bundle.pdp_2d {
        let name = format!("pdp2d_{}_{}.svg", s.static_feature, s.dynamic_feature);
        write_atomic(&a.out_dir.join(name), svg::pdp_surface(s).as_bytes())?;
    }
    echo(&a.out_dir, "explain-global", &cfg, &[("model", &a.model), ("cohort", &a.cohort)], &[("explanation", &json)])?;
    let top: Vec<String> = bundle.importance.top(3).iter().map(|f| f.to_string()).collect();
    println!("top features: {}", top.join(", "));
    Ok(())
}

fn panel_features(cfg: &Config, importance: Option<&Path>, model: &TrainedModel, reference: &Cohort) -> anyhow::Result<Vec<Feature>> {
    if !cfg.explain_local.features.is_empty() {
        return cfg
            .explain_local
            .features
            .iter()
            .map(|s| s.parse::<Feature>().map_err(|e| invalid(e.to_string())))
            .collect();
    }
    let report: ImportanceReport = match importance {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            // accepts a bare report or an explain-global bundle
            let inner = v.get("importance").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => contesta_core::global_explain::permutation_importance(
            model,
            reference,
            cfg.explain_global.permutations,
            stage_seed(cfg.seed, Stage::Importance),
        )
        .map_err(contesta_core::Error::from)?,
    };
    Ok(report.top_dynamic(2))
}

fn explain_local(mut cfg: Config, a: ExplainLocalArgs) -> anyhow::Result<()> {
    if let Some(k) = a.k {
        cfg.explain_local.k = k;
    }
    if let Some(f) = a.features.clone() {
        cfg.explain_local.features = f;
    }
    let model = load_model(&a.model)?;
    let reference = load(&a.cohort)?;
    let query: EpisodeRecord = match (&a.probe, &a.case) {
        (Some(p), _) => read_json::<Probe>(p)?.record,
        (None, Some(id)) => reference
            .get(id)
            .cloned()
            .ok_or_else(|| invalid(format!("case '{id}' not found in {}", a.cohort.display())))?,
        (None, None) => return Err(invalid("either --case or --probe is required")),
    };
    let features = panel_features(&cfg, a.importance.as_deref(), &model, &reference)?;
    let space = LatentSpaceConfig {
        weights: cfg.explain_local.weights,
        k: cfg.explain_local.k,
        panel_features: features.clone(),
        overlap_cutoff: cfg.explain_local.overlap_cutoff,
    };
    cfg.explain_local.features = features.iter().map(|f| f.to_string()).collect();
    let name = a.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let report = contest(&query, &model, &name, &reference, &space).map_err(contesta_core::Error::from)?;
    fs::create_dir_all(&a.out_dir)?;
    let stem = format!("contest_{}", base_record_id(&query.record_id));
    let json = a.out_dir.join(format!("{stem}.json"));
    write_json(&json, &report)?;
    write_atomic(&a.out_dir.join(format!("{stem}.svg")), svg::contest(&report).as_bytes())?;
    echo(&a.out_dir, "explain-local", &cfg, &[("model", &a.model), ("cohort", &a.cohort)], &[("report", &json)])?;
    for line in &report.narrative {
        println!("{line}");
    }
    Ok(())
}

fn probe(mut cfg: Config, a: ProbeArgs) -> anyhow::Result<()> {
    if let Some(c) = a.copies {
        cfg.probe.copies = c;
    }
    let truth: SynthTruth = read_json(&a.synth_dir.join("truth.json"))?;
    let cohort = load(&a.cohort)?;
    let pc = ProbeConfig {
        copies: cfg.probe.copies,
        permutations: cfg.explain_global.permutations,
        ..ProbeConfig::default()
    };
    let outcome = probe_contest(&cohort, &truth, a.mode.into(), cfg.seed, &pc)?;
    fs::create_dir_all(&a.out_dir)?;
    let training = cohort
        .extended(outcome.probe.training_copies(pc.copies))
        .map_err(contesta_core::Error::from)?;
    let (train_path, probe_path, outcome_path) =
        (a.out_dir.join("train.csv"), a.out_dir.join("probe.json"), a.out_dir.join("outcome.json"));
    write_cohort(&train_path, &training)?;
    write_json(&probe_path, &outcome.probe)?;
    write_json(&outcome_path, &outcome)?;
    write_atomic(
        &a.out_dir.join(format!("contest_{}.svg", outcome.probe.record.record_id)),
        svg::contest(&outcome.report).as_bytes(),
    )?;
    echo(
        &a.out_dir,
        "probe",
        &cfg,
        &[("synth_dir", &a.synth_dir), ("cohort", &a.cohort)],
        &[("train", &train_path), ("probe", &probe_path), ("outcome", &outcome_path)],
    )?;
    println!(
        "probe {} trained as {}: predicted {}, verdict {} (expected {})",
        outcome.probe.record.record_id,
        outcome.probe.training_label,
        outcome.report.prediction,
        outcome.report.verdict,
        outcome.probe.expected
    );
    Ok(())
}

fn serve(mut cfg: Config, a: ServeArgs) -> anyhow::Result<()> {
    if let Some(p) = a.port {
        cfg.serve.port = p;
    }
    if let Some(d) = a.data_dir {
        cfg.serve.data_dir = d;
    }
    if let Some(h) = a.host {
        cfg.serve.host = h;
    }
    if let Some(s) = a.static_dir {
        cfg.serve.static_dir = Some(s);
    }
    fs::create_dir_all(&cfg.serve.data_dir)?;
    echo(&cfg.serve.data_dir, "serve", &cfg, &[], &[])?;
    let service = contesta_service::ServiceConfig {
        host: cfg.serve.host.clone(),
        port: cfg.serve.port,
        data_dir: cfg.serve.data_dir.clone(),
        static_dir: cfg.serve.static_dir.clone(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(contesta_service::serve(service))?;
    Ok(())
}

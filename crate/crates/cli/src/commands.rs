use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowam::am::{BaselineRegConfig, ExplanationResult, FlowAmConfig, InitMode, Method, NoiseConfig, NoiseSite};
use flowam::data::{self, generate_synthetic, load_directory, LabeledDataset, Provenance, ShapeFamily, Split, SyntheticSpec};
use flowam::flow::{
    flow_report, load_profiles, save_profiles, select_layers, AlignmentPlan, FlowConfig, Metric,
};
use flowam::metrics::{EvalConfig, LabeledExplanation};
use flowam::nn::{build_model, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainingMetadata, Widths};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::experiments::{self, Workbench, DESK_INSTANCES, DESK_POINTS};
use crate::render::{render_png, Axis, RenderOptions, View};

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "flowam", version, about = "Activation maximization workbench for point-cloud classifiers")]
pub struct Cli {
    /// Global seed; falls back to FLOWAM_SEED, then 0.
    #[arg(long, global = true, env = "FLOWAM_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for class-level jobs (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a classifier and write its checkpoint and history.
    Train(TrainArgs),
    /// Intra- versus inter-class activation similarity per layer.
    FlowReport(FlowReportArgs),
    /// Generate explanations for one method.
    Generate(GenerateArgs),
    /// Score explanations of several methods against class references.
    Evaluate(EvaluateArgs),
    /// Explain parameter-dropout corruptions of the model.
    Sanity(SanityArgs),
    /// Flow explanations with each loss term removed in turn.
    Ablate(AblateArgs),
    /// Flow explanations across trade-off coefficients.
    SweepBeta(SweepBetaArgs),
    /// Render point-cloud files to PNG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthPreset {
    Desk,
    Full,
}

impl WidthPreset {
    fn widths(self) -> Widths {
        match self {
            WidthPreset::Desk => Widths::desk(),
            WidthPreset::Full => Widths::default(),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Load `<root>/<class>/{train,test}/*` instead of synthesizing data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Synthetic shape classes.
    #[arg(long, value_delimiter = ',', default_value = "sphere,cube,cylinder,cone,torus,table,chair,vase")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = DESK_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = DESK_POINTS)]
    pub points: usize,
    /// Dataset seed (default: the global seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = WidthPreset::Desk)]
    pub widths: WidthPreset,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().ortho_weight)]
    pub ortho_weight: f64,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data directory overriding the dataset recorded in the checkpoint.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug, Serialize)]
pub struct FlowReportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Sampled pairs per class for each of the intra and inter columns.
    #[arg(long, default_value_t = FlowConfig::default().pairs_per_class)]
    pub pairs: usize,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    /// Compare every instance with itself (a calibration mode).
    #[arg(long)]
    pub self_pairs: bool,
    /// Minimum gap for a layer to enter the suggested alignment plan.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Average,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Xyz,
    Ply,
}

/// Explanation settings shared by every generating command.
#[derive(Args, Debug, Serialize)]
pub struct AmArgs {
    /// Target classes by name, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub classes: Vec<String>,
    /// Trade-off between latent alignment and point continuity.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Legal boundary B of the continuity term.
    #[arg(long, default_value_t = 1.0)]
    pub boundary: f64,
    /// Legal constraint C of the legality term.
    #[arg(long, default_value_t = 1.0)]
    pub constraint: f64,
    /// Alignment layers and weights as `layer=weight,...` (default: the
    /// default five-layer plan).
    #[arg(long)]
    pub plan: Option<AlignmentPlan>,
    /// Build the plan from a flow report: layers whose gap exceeds this
    /// threshold, each with weight 1.
    #[arg(long, conflicts_with = "plan")]
    pub auto_plan: Option<f64>,
    /// Class profiles written by `flow-report` (default: recomputed).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    /// Points per explanation.
    #[arg(long, default_value_t = DESK_POINTS)]
    pub points: usize,
    /// Initialization (default: average for flow, uniform for baselines).
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long, default_value = "none")]
    pub noise_site: NoiseSite,
    #[arg(long, default_value_t = 0.0)]
    pub noise_amplitude: f64,
    #[arg(long, default_value_t = BaselineRegConfig::default().theta_l2)]
    pub theta_l2: f64,
    #[arg(long, default_value_t = BaselineRegConfig::default().blur_sigma)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = BaselineRegConfig::default().blur_k)]
    pub blur_k: usize,
    #[arg(long, default_value_t = BaselineRegConfig::default().tv_weight)]
    pub tv_weight: f64,
    #[arg(long, value_enum, default_value_t = CloudFormat::Xyz)]
    pub format: CloudFormat,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, default_value_t = EvalConfig::default().refs_per_class)]
    pub refs_per_class: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "flow")]
    pub method: Method,
    #[command(flatten)]
    pub am: AmArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "vanilla,l2,gaussian-blur,total-variation,flow")]
    pub methods: Vec<Method>,
    /// Score the explanations in this directory (written by `generate`)
    /// instead of generating new ones.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[command(flatten)]
    pub am: AmArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SanityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "flow")]
    pub method: Method,
    /// Parameter dropout probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub dropout: Vec<f64>,
    /// Dropout masks drawn per probability.
    #[arg(long, default_value_t = 3)]
    pub dropout_seeds: u64,
    #[command(flatten)]
    pub am: AmArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub am: AmArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepBetaArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.3,0.5,1")]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub am: AmArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    /// Cloud files (.xyz, .ply, .off).
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Rotation axis (default: chosen from the class in a sidecar file).
    #[arg(long)]
    pub axis: Option<Axis>,
    /// Rotation angle in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub angle: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// Half-width of the rendered square in world units.
    #[arg(long, default_value_t = 1.25)]
    pub extent: f64,
    /// Splat radius in pixels.
    #[arg(long, default_value_t = 2)]
    pub radius: u32,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?
            .install(|| dispatch(&cli)),
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let seed = cli.seed;
    match &cli.command {
        Command::Train(a) => cmd_train(a, seed),
        Command::FlowReport(a) => cmd_flow_report(a, seed),
        Command::Generate(a) => cmd_generate(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, seed),
        Command::Sanity(a) => cmd_sanity(a, seed),
        Command::Ablate(a) => cmd_ablate(a, seed),
        Command::SweepBeta(a) => cmd_sweep_beta(a, seed),
        Command::Render(a) => cmd_render(a),
    }
}

// ---- output plumbing -------------------------------------------------------

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> CliResult<Output> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        s.push('\n');
        self.write(name, s)
    }

    /// Writes `manifest.json` describing the run. Contains no timestamps or
    /// host details, so identical runs produce identical manifests.
    fn finish(mut self, command: &str, seed: u64, config: &impl Serialize, extra: serde_json::Value) -> CliResult {
        self.files.sort();
        let manifest = json!({
            "tool": "flowam",
            "command": command,
            "seed": seed,
            "versions": {
                "flowam-cli": env!("CARGO_PKG_VERSION"),
                "flowam-core": flowam_core_version(),
            },
            "config": config,
            "details": extra,
            "outputs": self.files,
        });
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        s.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, s).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
    }
}

fn flowam_core_version() -> &'static str {
    // Both crates share the workspace version.
    env!("CARGO_PKG_VERSION")
}

fn cloud_text(cloud: &data::PointCloud, fmt: CloudFormat) -> (String, &'static str) {
    match fmt {
        CloudFormat::Xyz => (data::io::xyz_string(cloud), "xyz"),
        CloudFormat::Ply => (data::io::ply_string(cloud), "ply"),
    }
}

fn write_explanation(out: &mut Output, stem: &str, r: &ExplanationResult, fmt: CloudFormat) -> CliResult {
    let (text, ext) = cloud_text(&r.cloud, fmt);
    out.write(&format!("{stem}.{ext}"), text)?;
    out.json(&format!("{stem}.json"), &r.sidecar())?;
    out.write(&format!("{stem}_trace.csv"), r.trace.to_csv())
}

fn stem(label: &str, class_name: &str) -> String {
    format!("{label}_{class_name}")
}

// ---- shared setup ----------------------------------------------------------

fn load_workbench(m: &ModelArgs, profiles: Option<&Path>) -> CliResult<(Workbench, Checkpoint)> {
    let ck = load_checkpoint(&m.checkpoint)?;
    let data = match (&m.data_dir, &ck.metadata.dataset) {
        (Some(dir), _) => {
            let seed = match &ck.metadata.dataset {
                Some(Provenance::Directory { seed, .. }) => *seed,
                _ => 0,
            };
            load_directory(dir, DESK_POINTS, seed)?
        }
        (None, Some(p)) => data::rebuild(p)?,
        (None, None) => {
            return Err(CliError::Input(format!(
                "{} records no dataset; pass --data-dir",
                m.checkpoint.display()
            )))
        }
    };
    if data.classes != ck.class_names {
        return Err(CliError::Input(format!(
            "dataset classes {:?} do not match the checkpoint's {:?}",
            data.classes, ck.class_names
        )));
    }
    let wb = match profiles {
        Some(p) => {
            let prof = load_profiles(p)?;
            Workbench::with_profiles(ck.model.clone(), data, prof)
        }
        None => Workbench::new(ck.model.clone(), data)?,
    };
    Ok((wb, ck))
}

fn resolve_classes(names: &[String], data: &LabeledDataset) -> CliResult<Vec<usize>> {
    if names.len() == 1 && names[0] == "all" {
        return Ok((0..data.num_classes()).collect());
    }
    let mut out = Vec::new();
    for n in names {
        let c = data.class_index(n)?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

fn template(a: &AmArgs, wb: &Workbench, seed: u64) -> CliResult<FlowAmConfig> {
    let widths = wb.model.widths();
    let mut cfg = FlowAmConfig::new(0, widths);
    cfg.beta = a.beta;
    cfg.boundary = a.boundary;
    cfg.constraint = a.constraint;
    cfg.learning_rate = a.lr;
    cfg.max_iterations = a.iterations;
    cfg.tolerance = a.tolerance;
    cfg.window = a.window;
    cfg.n_points = a.points;
    cfg.seed = seed;
    cfg.noise = NoiseConfig {
        site: a.noise_site,
        amplitude: a.noise_amplitude,
    };
    cfg.init = a.init.map(|i| match i {
        InitArg::Average => InitMode::Average,
        InitArg::Uniform => InitMode::UniformRandom,
    });
    if let Some(p) = &a.plan {
        cfg.plan = p.clone();
    } else if let Some(threshold) = a.auto_plan {
        let report = flow_report(
            &wb.model,
            wb.data.split(Split::Train),
            &wb.data.classes,
            &FlowConfig {
                seed,
                ..FlowConfig::default()
            },
        )?;
        cfg.plan = select_layers(&report, threshold, false, widths)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn baseline(a: &AmArgs) -> CliResult<BaselineRegConfig> {
    let b = BaselineRegConfig {
        theta_l2: a.theta_l2,
        blur_sigma: a.blur_sigma,
        blur_k: a.blur_k,
        tv_weight: a.tv_weight,
    };
    b.validate()?;
    Ok(b)
}

fn eval_config(e: &EvalArgs, a: &AmArgs, seed: u64) -> EvalConfig {
    EvalConfig {
        refs_per_class: e.refs_per_class,
        seed,
        constraint: a.constraint,
    }
}

fn model_details(wb: &Workbench, ck_path: &Path) -> serde_json::Value {
    json!({
        "checkpoint": ck_path,
        "model_fingerprint": wb.model.fingerprint(),
        "classes": wb.data.classes,
        "dataset": wb.data.provenance,
    })
}

// ---- commands --------------------------------------------------------------

fn cmd_train(a: &TrainArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.out)?;
    let data_seed = a.data_seed.unwrap_or(seed);
    let data = match &a.data_dir {
        Some(dir) => load_directory(dir, a.points, data_seed)?,
        None => {
            let classes = a
                .classes
                .iter()
                .map(|c| c.parse::<ShapeFamily>())
                .collect::<flowam::Result<Vec<_>>>()?;
            generate_synthetic(&SyntheticSpec::new(classes, a.instances, a.points, data_seed))?
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        ortho_weight: a.ortho_weight,
        augment: !a.no_augment,
        seed,
    };
    cfg.validate()?;
    let mut model = build_model(data.num_classes(), a.widths.widths(), seed)?;
    let history = train(&mut model, &data, &cfg)?;

    let mut csv = String::from("epoch,loss,train_accuracy,test_accuracy\n");
    for e in &history {
        let test = e.test_accuracy.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", e.epoch, e.loss, e.train_accuracy, test);
    }
    let fingerprint = model.fingerprint();
    let ck = Checkpoint {
        model,
        class_names: data.classes.clone(),
        metadata: TrainingMetadata {
            dataset: Some(data.provenance.clone()),
            config: Some(cfg.clone()),
            history: history.clone(),
        },
    };
    save_checkpoint(&ck, a.out.join("model.ckpt"))?;
    out.files.push("model.ckpt".into());
    out.write("history.csv", csv)?;
    let last = history.last();
    println!(
        "trained {} classes, final loss {:.4}, test accuracy {}",
        data.num_classes(),
        last.map_or(f64::NAN, |e| e.loss),
        last.and_then(|e| e.test_accuracy)
            .map_or("n/a".to_string(), |t| format!("{t:.3}"))
    );
    out.finish(
        "train",
        seed,
        a,
        json!({
            "train_config": cfg,
            "dataset": data.provenance,
            "model_fingerprint": fingerprint,
        }),
    )
}

fn cmd_flow_report(a: &FlowReportArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, None)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let cfg = FlowConfig {
        pairs_per_class: a.pairs,
        seed,
        metric: a.metric,
        self_pairs: a.self_pairs,
    };
    let report = flow_report(&wb.model, wb.data.split(split), &wb.data.classes, &cfg)?;
    out.write("flow_report.csv", report.to_csv())?;
    out.write("flow_report.json", report.to_json()? + "\n")?;
    save_profiles(&wb.profiles, a.model.out.join("profiles.bin"))?;
    out.files.push("profiles.bin".into());
    let plan = match select_layers(&report, a.threshold, false, wb.model.widths()) {
        Ok(p) => {
            out.write("plan.txt", format!("{p}\n"))?;
            json!(p.to_string())
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    for l in &report.layers {
        println!("{:8} gap {:+.4} (z {:+.1}, separation {:+.2})", l.layer, l.gap, l.z_score(), l.separation());
    }
    let mut details = model_details(&wb, &a.model.checkpoint);
    details["suggested_plan"] = plan;
    out.finish("flow-report", seed, a, details)
}

fn cmd_generate(a: &GenerateArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, a.am.profiles.as_deref())?;
    let classes = resolve_classes(&a.am.classes, &wb.data)?;
    let tpl = template(&a.am, &wb, seed)?;
    let jobs = experiments::method_jobs(&[a.method], &classes, &tpl, &baseline(&a.am)?);
    let results = experiments::run_jobs(&wb, &jobs)?;
    for (j, r) in jobs.iter().zip(&results) {
        let name = &wb.data.classes[r.config.target];
        write_explanation(&mut out, &stem(&j.label, name), r, a.am.format)?;
        println!(
            "{:16} {:10} logit {:8.3} predicted {} after {} iterations",
            j.label,
            name,
            r.final_logit,
            wb.data.classes[r.predicted_class],
            r.trace.len()
        );
    }
    let mut details = model_details(&wb, &a.model.checkpoint);
    details["template"] = json!(tpl);
    out.finish("generate", seed, a, details)
}

/// Reads explanations written by `generate`: every `<stem>.json` sidecar
/// with a matching `<stem>.xyz` or `<stem>.ply`.
fn read_explanations(dir: &Path, data: &LabeledDataset) -> CliResult<Vec<LabeledExplanation>> {
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    sidecars.sort();
    let mut out = Vec::new();
    for side in sidecars {
        let text = fs::read_to_string(&side).map_err(flowam::Error::from)?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(flowam::Error::from)?;
        let (Some(method), Some(target)) = (v["method"].as_str(), v["target"].as_u64()) else {
            continue;
        };
        let target = target as usize;
        if target >= data.num_classes() {
            return Err(CliError::Input(format!("{}: class {target} out of range", side.display())));
        }
        let cloud = ["xyz", "ply"]
            .iter()
            .map(|ext| side.with_extension(ext))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Input(format!("{}: no cloud file next to the sidecar", side.display())))?;
        out.push(LabeledExplanation {
            method: method.to_string(),
            class: target,
            cloud: data::load_cloud(&cloud, DESK_POINTS, 0)?,
        });
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("no explanations found in {}", dir.display())));
    }
    Ok(out)
}

fn cmd_evaluate(a: &EvaluateArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, a.am.profiles.as_deref())?;
    let eval = eval_config(&a.eval, &a.am, seed);
    let report = match &a.inputs {
        Some(dir) => wb.evaluate(&read_explanations(dir, &wb.data)?, &eval)?,
        None => {
            let classes = resolve_classes(&a.am.classes, &wb.data)?;
            let tpl = template(&a.am, &wb, seed)?;
            let jobs = experiments::method_jobs(&a.methods, &classes, &tpl, &baseline(&a.am)?);
            let o = experiments::run_and_evaluate(&wb, jobs, &eval)?;
            for (j, r) in o.jobs.iter().zip(&o.results) {
                let name = &wb.data.classes[r.config.target];
                write_explanation(&mut out, &format!("explanations/{}", stem(&j.label, name)), r, a.am.format)?;
            }
            o.metrics
        }
    };
    out.write("metrics.csv", report.to_csv())?;
    out.write("metrics.json", report.to_json()? + "\n")?;
    print!("{}", report.to_csv());
    out.finish("evaluate", seed, a, model_details(&wb, &a.model.checkpoint))
}

fn cmd_sanity(a: &SanityArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, None)?;
    let classes = resolve_classes(&a.am.classes, &wb.data)?;
    let tpl = template(&a.am, &wb, seed)?;
    let seeds: Vec<u64> = (0..a.dropout_seeds).map(|i| seed.wrapping_add(i)).collect();
    let report = experiments::sanity(
        &wb,
        a.method,
        &classes,
        &a.dropout,
        &seeds,
        &tpl,
        &baseline(&a.am)?,
        &eval_config(&a.eval, &a.am, seed),
    )?;
    for (p, s, results) in &report.explanations {
        for r in results {
            let name = &wb.data.classes[r.config.target];
            write_explanation(&mut out, &format!("p{p}_seed{s}/{}", stem(a.method.name(), name)), r, a.am.format)?;
        }
    }
    out.write("sanity_runs.csv", report.runs_csv())?;
    out.write("sanity_curve.csv", report.curve_csv())?;
    print!("{}", report.curve_csv());
    out.finish("sanity", seed, a, model_details(&wb, &a.model.checkpoint))
}

fn cmd_ablate(a: &AblateArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, a.am.profiles.as_deref())?;
    let classes = resolve_classes(&a.am.classes, &wb.data)?;
    let tpl = template(&a.am, &wb, seed)?;
    let (o, rows) = experiments::ablate(&wb, &classes, &tpl, &eval_config(&a.eval, &a.am, seed))?;
    for (j, r) in o.jobs.iter().zip(&o.results) {
        let name = &wb.data.classes[r.config.target];
        write_explanation(&mut out, &format!("explanations/{}", stem(&j.label, name)), r, a.am.format)?;
    }
    out.write("ablation.csv", experiments::summaries_csv(&rows))?;
    out.write("ablation_metrics.csv", o.metrics.to_csv())?;
    print!("{}", experiments::summaries_csv(&rows));
    out.finish("ablate", seed, a, model_details(&wb, &a.model.checkpoint))
}

fn cmd_sweep_beta(a: &SweepBetaArgs, seed: u64) -> CliResult {
    let mut out = Output::create(&a.model.out)?;
    let (wb, _) = load_workbench(&a.model, a.am.profiles.as_deref())?;
    let classes = resolve_classes(&a.am.classes, &wb.data)?;
    let tpl = template(&a.am, &wb, seed)?;
    let o = experiments::sweep_beta(&wb, &classes, &a.betas, &tpl, &eval_config(&a.eval, &a.am, seed))?;
    for r in &o.results {
        let name = &wb.data.classes[r.config.target];
        write_explanation(
            &mut out,
            &format!("beta_{}/{}", r.config.beta, stem("flow", name)),
            r,
            a.am.format,
        )?;
    }
    let mut csv = String::from("beta,class,logit,log_softmax,cd,fid,legality\n");
    for (b, row) in a.betas.iter().flat_map(|b| {
        let label = format!("beta={b}");
        o.metrics.rows.iter().filter(move |r| r.method == label).map(move |r| (*b, r))
    }) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            b, row.class_name, row.logit, row.log_softmax, row.cd, row.fid, row.legality
        );
    }
    out.write("sweep_beta.csv", &csv)?;
    print!("{csv}");
    out.finish("sweep-beta", seed, a, model_details(&wb, &a.model.checkpoint))
}

fn cmd_render(a: &RenderArgs) -> CliResult {
    let mut out = Output::create(&a.out)?;
    let mut views = Vec::new();
    for input in &a.inputs {
        let cloud = data::load_cloud(input, DESK_POINTS, 0)?;
        let class = fs::read_to_string(input.with_extension("json"))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v["class_name"].as_str().map(str::to_string))
            .or_else(|| cloud.class_name.clone());
        let mut view = View::for_class(class.as_deref());
        if let Some(axis) = a.axis {
            view.axis = axis;
        }
        if let Some(angle) = a.angle {
            view.angle = angle;
        }
        let opts = RenderOptions {
            view,
            size: a.size,
            extent: a.extent,
            radius: a.radius,
        };
        let png = render_png(&cloud, &opts)?;
        let name = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cloud".into());
        out.write(&format!("{name}.png"), png)?;
        views.push(json!({ "input": input, "view": opts.view }));
    }
    out.finish("render", 0, a, json!({ "views": views }))
}

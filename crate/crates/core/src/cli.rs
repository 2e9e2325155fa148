//! Command-line workflow: synth, train, segment, classify, evaluate.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::arch::network::derive_seed;
use crate::arch::{
    build_mini_cnn_with, build_mini_fcn_with, load_checkpoint, save_checkpoint, staged_train, ArchKind, CnnConfig,
    FcnConfig, FcnVariant, HeadReinit, Network, NetworkSpec, StageReport, HEAD_INIT_STD,
};
use crate::error::CliError;
use crate::imgdata::{
    connected_components, read_gray, write_gray, LabelMap, Manifest, MicrographSample, ObjectRegion, Split,
    MIN_OBJECT_AREA,
};
use crate::metrics::{confusion_from_labels, object_report, ConfusionMatrix, ObjectReport, SegmentationMetrics};
use crate::optim::{train_with_state, write_loss_csv, SgdConfig, TrainState};
use crate::pipeline::dataprep::{cnn_training_set, fcn_training_set, region_truth_class, sample_class};
use crate::pipeline::output::{objects_csv, render_labels, write_object_png};
use crate::pipeline::{
    classify_object_cnn, classify_whole_image, max_vote_objects, segment_image, ImageClass, ObjectClassification,
};
use crate::synthgen::{generate_dataset, SynthConfig};
use crate::tensor::{Precision, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fcn32s,
    Fcn16s,
    Fcn8s,
    Cnn,
}

impl Model {
    fn fcn_stages(self) -> Option<usize> {
        match self {
            Model::Fcn32s => Some(1),
            Model::Fcn16s => Some(2),
            Model::Fcn8s => Some(3),
            Model::Cnn => None,
        }
    }
}

/// Everything a run depends on. Every subcommand writes the resolved value to `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub precision: Precision,
    pub model: Model,
    /// Number of constituent classes; the matrix adds one more segmentation class.
    pub classes: usize,
    pub synth: SynthConfig,
    pub fcn: FcnConfig,
    /// One optimizer setting per FCN stage (32s, 16s, 8s).
    pub stages: Vec<SgdConfig>,
    pub cnn: CnnConfig,
    pub cnn_sgd: SgdConfig,
    pub cnn_input: usize,
    /// Side of training patches and inference tiles.
    pub patch: usize,
    /// Inference tile stride.
    pub stride: usize,
    /// Training patches per image class.
    pub balance_target: usize,
    pub augment: bool,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stage = |lr, iters| SgdConfig {
            batch_size: 8,
            ..SgdConfig::new(lr, 0.9, 5e-4, iters)
        };
        Self {
            seed: 2024,
            threads: 0,
            precision: Precision::F32,
            model: Model::Fcn8s,
            classes: 4,
            synth: SynthConfig::default(),
            fcn: FcnConfig {
                dropout: 0.0,
                ..FcnConfig::default()
            },
            stages: vec![stage(0.02, 300), stage(0.015, 400), stage(0.01, 1200)],
            cnn: CnnConfig::default(),
            cnn_sgd: SgdConfig {
                batch_size: 8,
                ..SgdConfig::new(0.01, 0.9, 5e-4, 400)
            },
            cnn_input: 32,
            patch: 64,
            stride: 64,
            balance_target: 100,
            augment: false,
            manifest: None,
            checkpoint: None,
            predictions: None,
            split: Split::Test,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.classes == 0 || self.classes > 254 {
            return Err(CliError::Config(format!("classes {} must lie in 1..=254", self.classes)));
        }
        if self.patch == 0 || self.stride == 0 || self.stride > self.patch {
            return Err(CliError::Config(format!(
                "stride {} must lie in 1..={}",
                self.stride, self.patch
            )));
        }
        if self.stages.is_empty() || self.stages.len() > 3 {
            return Err(CliError::Config("between one and three FCN stages are required".into()));
        }
        for s in self.stages.iter().chain([&self.cnn_sgd]) {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvfcnn", version, about = "Classify micrograph constituents by max-voted FCN segmentation or an object CNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Manifest split to process.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}, expected train or test")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic micrograph dataset.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the object CNN or the staged FCN.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        variant: Option<Model>,
        /// Initialize from this checkpoint; the head is redrawn if the architecture differs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        patch: Option<usize>,
    },
    /// Segment manifest images with an FCN checkpoint.
    Segment {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Classify mask objects and whole images.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory written by `segment`; FCN checkpoints segment on the fly without it.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Score predictions against manifest truth.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory of `classify` or `segment`, or a manifest to score as prediction.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command, and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn common(cmd: &Command) -> &CommonArgs {
    match cmd {
        Command::Synth { common }
        | Command::Train { common, .. }
        | Command::Segment { common, .. }
        | Command::Classify { common, .. }
        | Command::Evaluate { common, .. } => common,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth { .. } => "synth",
        Command::Train { .. } => "train",
        Command::Segment { .. } => "segment",
        Command::Classify { .. } => "classify",
        Command::Evaluate { .. } => "evaluate",
    }
}

/// Config file values overridden by any flags given.
fn resolve(cmd: &Command) -> Result<RunConfig, CliError> {
    let c = common(cmd);
    let mut cfg: RunConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    let mut apply_data = |d: &DataArgs| {
        if let Some(m) = &d.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(s) = d.split {
            cfg.split = s;
        }
    };
    match cmd {
        Command::Synth { .. } => {}
        Command::Train { data, .. } | Command::Segment { data, .. } | Command::Classify { data, .. } | Command::Evaluate { data, .. } => {
            apply_data(data)
        }
    }
    let (variant, checkpoint, predictions, patch, stride) = match cmd {
        Command::Synth { .. } => (None, None, None, None, None),
        Command::Train { variant, checkpoint, patch, .. } => (*variant, checkpoint.clone(), None, *patch, None),
        Command::Segment { checkpoint, patch, stride, .. } => (None, checkpoint.clone(), None, *patch, *stride),
        Command::Classify { checkpoint, predictions, patch, stride, .. } => {
            (None, checkpoint.clone(), predictions.clone(), *patch, *stride)
        }
        Command::Evaluate { predictions, .. } => (None, None, predictions.clone(), None, None),
    };
    if let Some(v) = variant {
        cfg.model = v;
    }
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    if predictions.is_some() {
        cfg.predictions = predictions;
    }
    if let Some(p) = patch {
        cfg.patch = p;
    }
    if let Some(s) = stride {
        cfg.stride = s;
    }
    cfg.synth.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.command)?;
    let out = common(&cli.command).out.clone();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let command = name(&cli.command);
    log::info!("{command}: output under {}", out.display());
    pool.install(|| match cfg.precision {
        Precision::F32 => dispatch::<f32>(command, &cfg, &out),
        Precision::F64 => dispatch::<f64>(command, &cfg, &out),
    })?;
    write_json(&out.join("run.json"), &RunRecord { command, config: &cfg })
}

fn dispatch<R: Real>(command: &str, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    match command {
        "synth" => {
            generate_dataset(&cfg.synth, out)?;
            Ok(())
        }
        "train" => train::<R>(cfg, out),
        "segment" => segment::<R>(cfg, out),
        "classify" => classify::<R>(cfg, out),
        _ => evaluate(cfg, out),
    }
}

fn manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    Ok(Manifest::read(cfg.manifest.as_deref().ok_or(CliError::Missing("manifest"))?)?)
}

fn load_split(m: &Manifest, split: Split) -> Result<Vec<(String, MicrographSample)>, CliError> {
    m.split(split).map(|e| Ok((e.id.clone(), m.load_sample(e)?))).collect()
}

fn load_network<R: Real>(cfg: &RunConfig) -> Result<Network<R>, CliError> {
    let path = cfg.checkpoint.as_deref().ok_or(CliError::Missing("checkpoint"))?;
    Ok(load_checkpoint(path)?.network())
}

fn model_spec(cfg: &RunConfig, model: Model) -> Result<NetworkSpec, CliError> {
    Ok(match model {
        Model::Cnn => build_mini_cnn_with(cfg.cnn_input, cfg.classes, &cfg.cnn)?,
        Model::Fcn32s => build_mini_fcn_with(FcnVariant::Fcn32s, cfg.classes + 1, &cfg.fcn),
        Model::Fcn16s => build_mini_fcn_with(FcnVariant::Fcn16s, cfg.classes + 1, &cfg.fcn),
        Model::Fcn8s => build_mini_fcn_with(FcnVariant::Fcn8s, cfg.classes + 1, &cfg.fcn),
    })
}

/// Fresh weights, or weights taken from `--checkpoint` with the head redrawn when the architecture differs.
fn initial_network<R: Real>(cfg: &RunConfig, spec: NetworkSpec) -> Result<Network<R>, CliError> {
    match &cfg.checkpoint {
        None => Ok(Network::init(spec, derive_seed(cfg.seed, 2))?),
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let reinit = (ckpt.spec.digest() != spec.digest()).then_some(HeadReinit {
                std: HEAD_INIT_STD,
                seed: derive_seed(cfg.seed, 2),
            });
            Ok(ckpt.into_network(&spec, reinit)?)
        }
    }
}

fn write_history(path: &Path, history: &[(u64, f64)]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_loss_csv(history, &mut buf).map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}

#[derive(Serialize)]
struct TrainSummary {
    model: Model,
    training_samples: usize,
    stages: Vec<StageReport>,
}

fn train<R: Real>(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let samples: Vec<MicrographSample> = load_split(&m, Split::Train)?.into_iter().map(|(_, s)| s).collect();
    let Some(n_stages) = cfg.model.fcn_stages() else {
        let data = cnn_training_set::<R>(&samples, cfg.cnn_input, cfg.augment)?;
        log::info!("object CNN: {} training objects", data.len());
        let mut net = initial_network::<R>(cfg, model_spec(cfg, Model::Cnn)?)?;
        let mut state = TrainState::new(&net.params);
        train_with_state(&mut net, &data, &cfg.cnn_sgd, derive_seed(cfg.seed, 3), &mut state)?;
        save_checkpoint(&net, Some(&state), &out.join("model.ckpt"))?;
        write_history(&out.join("loss.csv"), &state.loss_history)?;
        return write_json(
            &out.join("train.json"),
            &TrainSummary {
                model: cfg.model,
                training_samples: data.len(),
                stages: vec![],
            },
        );
    };
    let stages = cfg
        .stages
        .get(..n_stages)
        .ok_or_else(|| CliError::Config(format!("{:?} needs {n_stages} stages", cfg.model)))?;
    let data = fcn_training_set::<R>(&samples, cfg.patch, cfg.balance_target, cfg.augment, derive_seed(cfg.seed, 1))?;
    log::info!("FCN: {} training patches", data.len());
    let initial = initial_network::<R>(cfg, model_spec(cfg, Model::Fcn32s)?)?;
    let outcome = staged_train(&data, stages, initial, derive_seed(cfg.seed, 3))?;
    let mut history = String::from("stage,iteration,loss\n");
    for ((net, state), report) in outcome.networks.iter().zip(&outcome.states).zip(&outcome.reports) {
        save_checkpoint(net, Some(state), &out.join(format!("{}.ckpt", report.variant)))?;
        for (i, l) in &state.loss_history {
            let _ = writeln!(history, "{},{i},{l}", report.variant);
        }
    }
    save_checkpoint(outcome.final_network(), outcome.states.last(), &out.join("model.ckpt"))?;
    write_text(&out.join("loss.csv"), &history)?;
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            model: cfg.model,
            training_samples: data.len(),
            stages: outcome.reports,
        },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PredictionEntry {
    id: String,
    /// Relative to the file listing it.
    label_map: PathBuf,
}

fn require_fcn<R: Real>(net: &Network<R>) -> Result<(), CliError> {
    match net.spec.arch {
        ArchKind::Fcn(_) => Ok(()),
        ArchKind::Cnn => Err(CliError::Config("segmentation needs an FCN checkpoint".into())),
    }
}

fn segment<R: Real>(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let net = load_network::<R>(cfg)?;
    require_fcn(&net)?;
    let mut entries = Vec::new();
    for (id, sample) in load_split(&m, cfg.split)? {
        let seg = segment_image(&net, &sample.image, cfg.patch, cfg.stride)?;
        let file = PathBuf::from(format!("{id}_pred.png"));
        write_gray(&out.join(&file), &seg.label_map)?;
        let (h, w) = seg.label_map.dims();
        crate::imgdata::write_rgb(&out.join(format!("{id}_pred_color.png")), h, w, render_labels(&seg.label_map))?;
        entries.push(PredictionEntry { id, label_map: file });
    }
    write_json(&out.join("predictions.json"), &entries)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ImageRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_map: Option<PathBuf>,
    objects: Vec<ObjectClassification>,
    image_class: ImageClass,
}

fn objects(sample: &MicrographSample) -> Vec<ObjectRegion> {
    connected_components(&sample.mask, MIN_OBJECT_AREA)
}

fn relative(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    pathdiff::diff_paths(abs(path), abs(base)).unwrap_or_else(|| path.to_path_buf())
}

fn classify<R: Real>(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let predicted: Option<Vec<PredictionEntry>> = match &cfg.predictions {
        Some(dir) => Some(read_json(&dir.join("predictions.json"))?),
        None => None,
    };
    let net = match (&predicted, &cfg.checkpoint) {
        (Some(_), _) => None,
        (None, Some(_)) => Some(load_network::<R>(cfg)?),
        (None, None) => return Err(CliError::Missing("checkpoint")),
    };
    let n_cl = cfg.classes + 1;
    let mut records = Vec::new();
    for (id, sample) in load_split(&m, cfg.split)? {
        let regions = objects(&sample);
        let (label_map, objs) = match (&predicted, &net) {
            (Some(entries), _) => {
                let dir = cfg.predictions.as_deref().expect("predictions set");
                let entry = entries
                    .iter()
                    .find(|e| e.id == id)
                    .ok_or_else(|| CliError::Config(format!("no prediction for image {id}")))?;
                let path = dir.join(&entry.label_map);
                let labels = read_gray(&path)?;
                (Some(relative(&path, out)), max_vote_objects(&labels, &regions, n_cl)?)
            }
            (None, Some(net)) if net.spec.arch == ArchKind::Cnn => {
                let objs = regions
                    .iter()
                    .map(|r| {
                        let (k, _) = classify_object_cnn(net, &sample.image, r, cfg.cnn_input)?;
                        Ok(ObjectClassification {
                            region_id: r.id,
                            voted: Some(k as u8 + 1),
                            votes: vec![],
                            area: r.area(),
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                (None, objs)
            }
            (None, Some(net)) => {
                let seg = segment_image(net, &sample.image, cfg.patch, cfg.stride)?;
                (None, max_vote_objects(&seg.label_map, &regions, n_cl)?)
            }
            (None, None) => unreachable!("checked above"),
        };
        write_text(&out.join(format!("{id}_objects.csv")), &objects_csv(&objs, n_cl))?;
        let (h, w) = sample.image.dims();
        write_object_png(&out.join(format!("{id}_objects.png")), h, w, &regions, &objs)?;
        records.push(ImageRecord {
            id,
            label_map,
            image_class: classify_whole_image(&objs),
            objects: objs,
        });
    }
    write_json(&out.join("classifications.json"), &records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub id: String,
    pub truth: Option<u8>,
    pub predicted: ImageClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub total: usize,
    pub correct: usize,
    pub unclassifiable: usize,
    pub accuracy: f64,
    pub outcomes: Vec<ImageOutcome>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Pixel metrics over all evaluated label maps, when predictions include them.
    pub pixel: Option<SegmentationMetrics>,
    pub objects: ObjectReport,
    pub images: ImageSummary,
}

fn class_names(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("class{k}")).collect()
}

/// Records from a `classify` directory, a `segment` directory, or a manifest used as prediction.
fn prediction_records(cfg: &RunConfig, truth: &[(String, MicrographSample)]) -> Result<(Vec<ImageRecord>, PathBuf), CliError> {
    let p = cfg.predictions.as_deref().ok_or(CliError::Missing("predictions"))?;
    let n_cl = cfg.classes + 1;
    let vote = |id: String, label_map: PathBuf, labels: &LabelMap, sample: &MicrographSample| -> Result<ImageRecord, CliError> {
        let objs = max_vote_objects(labels, &objects(sample), n_cl)?;
        Ok(ImageRecord {
            id,
            label_map: Some(label_map),
            image_class: classify_whole_image(&objs),
            objects: objs,
        })
    };
    if p.is_file() {
        let m = Manifest::read(p)?;
        let records = truth
            .iter()
            .map(|(id, sample)| {
                let e = m
                    .entries
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| CliError::Config(format!("no prediction for image {id}")))?;
                let labels = read_gray(&m.resolve(&e.label_map))?;
                vote(id.clone(), e.label_map.clone(), &labels, sample)
            })
            .collect::<Result<_, CliError>>()?;
        return Ok((records, m.root));
    }
    let cls = p.join("classifications.json");
    if cls.is_file() {
        return Ok((read_json(&cls)?, p.to_path_buf()));
    }
    let entries: Vec<PredictionEntry> = read_json(&p.join("predictions.json"))?;
    let records = truth
        .iter()
        .map(|(id, sample)| {
            let e = entries
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| CliError::Config(format!("no prediction for image {id}")))?;
            let labels = read_gray(&p.join(&e.label_map))?;
            vote(id.clone(), e.label_map.clone(), &labels, sample)
        })
        .collect::<Result<_, CliError>>()?;
    Ok((records, p.to_path_buf()))
}

pub fn evaluate_report(cfg: &RunConfig) -> Result<EvaluationReport, CliError> {
    let m = manifest(cfg)?;
    let truth = load_split(&m, cfg.split)?;
    let (records, base) = prediction_records(cfg, &truth)?;
    let n = cfg.classes;
    let mut pixel_cm: Option<ConfusionMatrix> = None;
    let mut pairs = Vec::new();
    let mut outcomes = Vec::new();
    for (id, sample) in &truth {
        let rec = records
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| CliError::Config(format!("no prediction for image {id}")))?;
        if let Some(rel) = &rec.label_map {
            let predicted = read_gray(&base.join(rel))?;
            let cm = confusion_from_labels(&sample.label_map, &predicted, n + 1)?;
            match &mut pixel_cm {
                Some(total) => total.merge(&cm)?,
                None => pixel_cm = Some(cm),
            }
        }
        let regions = objects(sample);
        for region in &regions {
            let Some(t) = region_truth_class(&sample.label_map, region) else {
                continue;
            };
            let voted = rec
                .objects
                .iter()
                .find(|o| o.region_id == region.id)
                .and_then(|o| o.voted);
            pairs.push((t as usize - 1, voted.map(|v| v as usize - 1)));
        }
        outcomes.push(ImageOutcome {
            id: id.clone(),
            truth: sample_class(sample),
            predicted: rec.image_class,
        });
    }
    let correct = outcomes
        .iter()
        .filter(|o| o.truth.is_some_and(|t| o.predicted == ImageClass::Class(t)))
        .count();
    let mut names = vec!["matrix".to_string()];
    names.extend(class_names(n));
    let pixel = match pixel_cm {
        Some(mut cm) => {
            cm.class_names = names;
            Some(SegmentationMetrics::from_confusion(&cm)?)
        }
        None => None,
    };
    Ok(EvaluationReport {
        pixel,
        objects: object_report(&pairs, class_names(n))?,
        images: ImageSummary {
            total: outcomes.len(),
            correct,
            unclassifiable: outcomes.iter().filter(|o| o.predicted == ImageClass::Unclassifiable).count(),
            accuracy: if outcomes.is_empty() { 0.0 } else { correct as f64 / outcomes.len() as f64 },
            outcomes,
        },
    })
}

fn evaluate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let report = evaluate_report(cfg)?;
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("object_confusion.csv"), &report.objects.confusion.to_csv())?;
    let mut text = String::new();
    if let Some(p) = &report.pixel {
        let _ = writeln!(
            text,
            "pixel accuracy {:.4}  mean accuracy {:.4}  mean IU {:.4}  fw IU {:.4}\n",
            p.pixel_accuracy, p.mean_accuracy, p.mean_iu, p.fw_iu
        );
    }
    text.push_str(&report.objects.to_table());
    let _ = writeln!(
        text,
        "\nobject accuracy {:.4} ({} not segmented; {:.4} counting them as errors)",
        report.objects.accuracy_excluding_not_segmented,
        report.objects.not_segmented,
        report.objects.accuracy_counting_not_segmented
    );
    let _ = writeln!(text, "images correct {}/{}", report.images.correct, report.images.total);
    print!("{text}");
    write_text(&out.join("report.txt"), &text)
}

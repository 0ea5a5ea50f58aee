use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use relgraph::checkpoint::{load_checkpoint, save_checkpoint};
use relgraph::graph::GraphConfig;
use relgraph::scene::{generate_scene, load_scene, scene_to_string, Scene, SceneConfig};
use relgraph::train::{
    build_structure, evaluate, finite_diff_check, train, GradCheckReport, Metrics, ModelConfig, Mode,
    Params, TrainConfig,
};

use crate::data::{
    absolute, load_scene_dir, metric_fields, metric_header, metrics_fields, scene_file_name, write_json,
    RowWriter,
};
use crate::dot::to_dot;
use crate::error::{CliError, CliResult};
use crate::manifest::{read_manifest, ManifestWriter};

#[derive(Debug, Parser)]
#[command(name = "relgraph", version, about = "Relationship reasoning over synthetic region proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes as scene_<seed>.jsonl files.
    Generate(GenerateArgs),
    /// Train one model and write a checkpoint, loss curve and summary.
    Train(TrainArgs),
    /// Train every mode over several paired seeds.
    Ablate(AblateArgs),
    /// Train the full model for each K in a list.
    SweepK(SweepArgs),
    /// Write a scene's semantic and spatial graphs as Graphviz DOT.
    ExportGraph(ExportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 4)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub regions_per_cluster: usize,
    #[arg(long, default_value_t = 24.0)]
    pub cluster_spread: f64,
    #[arg(long, default_value_t = 0.08)]
    pub shape_jitter: f64,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub ambiguity_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub prototype_seed: u64,
    #[arg(long, default_value_t = 1024.0)]
    pub image_size: f64,
}

impl SceneArgs {
    pub fn to_config(&self) -> SceneConfig {
        SceneConfig {
            image_size: (self.image_size, self.image_size),
            num_classes: self.num_classes,
            clusters_per_class: self.clusters_per_class,
            regions_per_cluster: self.regions_per_cluster,
            cluster_spread: self.cluster_spread,
            shape_jitter: self.shape_jitter,
            feature_dim: self.feature_dim,
            feature_noise: self.feature_noise,
            ambiguity_fraction: self.ambiguity_fraction,
            prototype_seed: self.prototype_seed,
            ..SceneConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 200)]
    pub scenes: u64,
    /// Seed of the first scene; scenes use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub overlap_threshold: f64,
    #[arg(long, default_value_t = relgraph::geometry::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.01)]
    pub slope: f64,
    /// Weight fused edges by semantic score (extension).
    #[arg(long)]
    pub soft_edges: bool,
    /// Weight of the same-class score regularizer on the encoder.
    #[arg(long, default_value_t = 0.0)]
    pub aux_weight: f64,
}

impl ModelArgs {
    pub fn to_config(&self, mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            graph: GraphConfig {
                k: self.k,
                overlap_threshold: self.overlap_threshold,
                lambda: self.lambda,
            },
            layers: self.layers,
            slope: self.slope,
            soft_edges: self.soft_edges,
            aux_weight: self.aux_weight,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 900)]
    pub iterations: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Learning rate at 16 scenes per batch; scaled linearly with batch size.
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

impl OptimArgs {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            base_lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
            log_every: self.log_every,
            ..TrainConfig::default()
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: relgraph::Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Directory of training scenes.
    #[arg(long)]
    pub train: PathBuf,
    /// Directory of held-out scenes.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// baseline, sem, spa or full.
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub freeze_gcn: bool,
    #[arg(long)]
    pub zero_gcn: bool,
    /// Check analytic gradients against finite differences before training.
    #[arg(long)]
    pub grad_check: bool,
    /// Regions of the first training scene used by the gradient check.
    #[arg(long, default_value_t = 16)]
    pub grad_check_regions: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of paired seeds.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,96")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    /// Scene file.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, conflicts_with = "untrained", required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,
    /// Use a freshly initialized encoder instead of a checkpoint.
    #[arg(long)]
    pub untrained: bool,
    /// Initialization seed for `--untrained`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the checkpoint's K.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Ablate(a) => ablate(&a),
        Command::SweepK(a) => sweep_k(&a),
        Command::ExportGraph(a) => export_graph(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Runs `body` between the initial and final manifest writes.
fn with_manifest<C: Serialize, T>(
    out: &Path,
    command: &str,
    config: &C,
    seeds: Vec<u64>,
    artifacts: Vec<String>,
    body: impl FnOnce() -> CliResult<T>,
) -> CliResult<T> {
    let writer = ManifestWriter::create(out, command, config, seeds, artifacts)?;
    let result = body();
    writer.finish(&result)?;
    result
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let cfg = a.scene.to_config();
    cfg.validate()?;
    let seeds: Vec<u64> = (0..a.scenes).map(|i| a.seed + i).collect();
    // render everything before touching the filesystem
    let rendered = seeds
        .iter()
        .map(|&s| Ok((scene_file_name(s), scene_to_string(&generate_scene(&cfg, s)?)?)))
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(&a.out)?;
    let names: Vec<String> = rendered.iter().map(|(n, _)| n.clone()).collect();
    with_manifest(&a.out, "generate", a, seeds, names, || {
        let mut written = Vec::new();
        for (name, text) in &rendered {
            let path = a.out.join(name);
            if let Err(e) = std::fs::write(&path, text) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::Io { path, source: e });
            }
            written.push(path);
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    mode: Mode,
    seed: u64,
    iterations: usize,
    train: Metrics,
    eval: Option<Metrics>,
    grad_check: Option<GradCheckReport>,
}

fn grad_check(scene: &Scene, model: &ModelConfig, seed: u64, regions: usize) -> CliResult<GradCheckReport> {
    let mut small = scene.clone();
    small.regions.truncate(regions.max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // same draw as the start of training
    let params = Params::init(
        &mut rng,
        scene.feature_dim(),
        scene.num_classes(),
        model.layers,
        model.slope,
    )?;
    Ok(finite_diff_check(&small, &params, model, 1e-5, 1e-5)?)
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let mut a = a.clone();
    a.train = absolute(&a.train)?;
    a.eval = a.eval.as_deref().map(absolute).transpose()?;
    let model = a.model.to_config(a.mode);
    model.validate()?;
    let tc = TrainConfig {
        freeze_gcn: a.freeze_gcn,
        zero_gcn: a.zero_gcn,
        ..a.optim.to_config(a.seed)
    };
    tc.validate()?;
    let train_scenes = load_scene_dir(&a.train)?;
    let eval_scenes = a.eval.as_deref().map(load_scene_dir).transpose()?;
    create_dir(&a.out)?;
    let artifacts = ["checkpoint.json", "metrics.csv", "summary.json"].map(String::from).to_vec();
    with_manifest(&a.out, "train", &a, vec![a.seed], artifacts, || {
        let report = if a.grad_check {
            let r = grad_check(&train_scenes[0], &model, a.seed, a.grad_check_regions)?;
            eprintln!(
                "grad-check: max rel error {:e} over {} coordinates ({} at kinks)",
                r.max_rel_error, r.checked, r.kinks
            );
            if !r.passed {
                return Err(CliError::GradCheck(Box::new(r)));
            }
            Some(r)
        } else {
            None
        };
        let outcome = train(&train_scenes, &model, &tc)?;
        save_checkpoint(&outcome.params, &model, a.out.join("checkpoint.json"))?;
        let classes = outcome.params.num_classes();
        let mut csv = RowWriter::create(&a.out.join("metrics.csv"), &metric_header(&[], classes))?;
        let seed = a.seed.to_string();
        for p in &outcome.curve {
            csv.row(&metric_fields(
                a.mode.as_str(),
                &seed,
                p.iter,
                p.loss,
                p.acc_overall,
                p.acc_ambiguous,
                &p.per_class,
            ))?;
        }
        let summary = TrainSummary {
            mode: a.mode,
            seed: a.seed,
            iterations: tc.iterations,
            train: evaluate(&train_scenes, &outcome.params, &model)?,
            eval: eval_scenes
                .as_deref()
                .map(|s| evaluate(s, &outcome.params, &model))
                .transpose()?,
            grad_check: report,
        };
        write_json(&a.out.join("summary.json"), &summary)?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    mode: Mode,
    mean_acc_overall: f64,
    mean_acc_ambiguous: Option<f64>,
    /// Seeds where this mode's ambiguous accuracy is at least the baseline's.
    seeds_at_least_baseline: usize,
    /// Seeds where it is strictly above the baseline's.
    seeds_above_baseline: usize,
    ambiguous_gap_per_seed: Vec<Option<f64>>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.iter().copied().collect();
    v.map(|v| mean(&v))
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    let mut a = a.clone();
    a.train = absolute(&a.train)?;
    a.eval = absolute(&a.eval)?;
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds must be >= 1".into()));
    }
    for mode in Mode::ALL {
        a.model.to_config(mode).validate()?;
    }
    a.optim.to_config(0).validate()?;
    let train_scenes = load_scene_dir(&a.train)?;
    let eval_scenes = load_scene_dir(&a.eval)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed_base + i).collect();
    create_dir(&a.out)?;
    let artifacts = vec!["ablation.csv".to_string(), "summary.json".to_string()];
    with_manifest(&a.out, "ablate", &a, seeds.clone(), artifacts, || {
        let classes = eval_scenes[0].num_classes();
        let mut csv = RowWriter::create(&a.out.join("ablation.csv"), &metric_header(&[], classes))?;
        let mut results: Vec<(Mode, Vec<Metrics>)> = Vec::new();
        for mode in Mode::ALL {
            let model = a.model.to_config(mode);
            let mut per_seed = Vec::new();
            for &seed in &seeds {
                let outcome = train(&train_scenes, &model, &a.optim.to_config(seed))?;
                let m = evaluate(&eval_scenes, &outcome.params, &model)?;
                eprintln!(
                    "{mode} seed {seed}: acc {:.4} ambiguous {}",
                    m.acc_overall,
                    m.acc_ambiguous.map_or("-".into(), |v| format!("{v:.4}"))
                );
                csv.row(&metrics_fields(mode.as_str(), &seed.to_string(), a.optim.iterations, &m))?;
                per_seed.push(m);
            }
            results.push((mode, per_seed));
        }
        let mut summaries = Vec::new();
        let baseline = results[0].1.clone();
        for (mode, ms) in &results {
            let per_class: Vec<Option<f64>> = (0..classes)
                .map(|c| mean_opt(&ms.iter().map(|m| m.per_class[c]).collect::<Vec<_>>()))
                .collect();
            let loss = mean(&ms.iter().map(|m| m.loss).collect::<Vec<_>>());
            let acc = mean(&ms.iter().map(|m| m.acc_overall).collect::<Vec<_>>());
            let amb = mean_opt(&ms.iter().map(|m| m.acc_ambiguous).collect::<Vec<_>>());
            csv.row(&metric_fields(mode.as_str(), "mean", a.optim.iterations, loss, acc, amb, &per_class))?;
            let gaps: Vec<Option<f64>> = ms
                .iter()
                .zip(&baseline)
                .map(|(m, b)| Some(m.acc_ambiguous? - b.acc_ambiguous?))
                .collect();
            summaries.push(ModeSummary {
                mode: *mode,
                mean_acc_overall: acc,
                mean_acc_ambiguous: amb,
                seeds_at_least_baseline: gaps.iter().filter(|g| g.is_some_and(|g| g >= 0.0)).count(),
                seeds_above_baseline: gaps.iter().filter(|g| g.is_some_and(|g| g > 0.0)).count(),
                ambiguous_gap_per_seed: gaps,
            });
        }
        write_json(&a.out.join("summary.json"), &summaries)?;
        Ok(())
    })
}

pub fn sweep_k(a: &SweepArgs) -> CliResult<()> {
    let mut a = a.clone();
    a.train = absolute(&a.train)?;
    a.eval = absolute(&a.eval)?;
    if a.ks.is_empty() {
        return Err(CliError::Config("--ks must list at least one value".into()));
    }
    a.optim.to_config(a.seed).validate()?;
    let train_scenes = load_scene_dir(&a.train)?;
    let eval_scenes = load_scene_dir(&a.eval)?;
    create_dir(&a.out)?;
    with_manifest(&a.out, "sweep-k", &a, vec![a.seed], vec!["sweep_k.csv".into()], || {
        let classes = eval_scenes[0].num_classes();
        let mut csv = RowWriter::create(&a.out.join("sweep_k.csv"), &metric_header(&["k"], classes))?;
        for &k in &a.ks {
            let model = ModelArgs { k, ..a.model.clone() }.to_config(Mode::Full);
            model.validate()?;
            let outcome = train(&train_scenes, &model, &a.optim.to_config(a.seed))?;
            let m = evaluate(&eval_scenes, &outcome.params, &model)?;
            eprintln!("k {k}: acc {:.4}", m.acc_overall);
            let mut row = vec![k.to_string()];
            row.extend(metrics_fields("full", &a.seed.to_string(), a.optim.iterations, &m));
            csv.row(&row)?;
        }
        Ok(())
    })
}

pub fn export_graph(a: &ExportArgs) -> CliResult<()> {
    let mut a = a.clone();
    a.scene = absolute(&a.scene)?;
    a.checkpoint = a.checkpoint.as_deref().map(absolute).transpose()?;
    let scene = load_scene(&a.scene).map_err(|e| match e {
        relgraph::Error::Io(source) => CliError::Io { path: a.scene.clone(), source },
        other => CliError::Config(format!("{}: {other}", a.scene.display())),
    })?;
    let (params, mut model) = match &a.checkpoint {
        Some(path) => load_checkpoint(path).map_err(|e| match e {
            relgraph::Error::Io(source) => CliError::Io { path: path.clone(), source },
            other => CliError::Config(format!("{}: {other}", path.display())),
        })?,
        None => {
            let model = ModelConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let p = Params::init(&mut rng, scene.feature_dim(), scene.num_classes(), model.layers, model.slope)?;
            (p, model)
        }
    };
    if params.feature_dim() != scene.feature_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects feature dim {}, scene has {}",
            params.feature_dim(),
            scene.feature_dim()
        )));
    }
    model.mode = Mode::Full;
    if let Some(k) = a.k {
        model.graph.k = k;
    }
    model.validate()?;
    create_dir(&a.out)?;
    with_manifest(&a.out, "export-graph", &a, vec![scene.seed], vec!["graph.dot".into()], || {
        let s = build_structure(&scene, &params, &model)?;
        let (sem, spa) = (s.semantic.expect("full mode"), s.spatial.expect("full mode"));
        let path = a.out.join("graph.dot");
        std::fs::write(&path, to_dot(&scene, &sem, &spa)?).map_err(CliError::io(&path))
    })
}

pub fn replay(a: &ReplayArgs) -> CliResult<()> {
    let m = read_manifest(&a.manifest)?;
    let mut config = m.config;
    if let Some(out) = &a.out {
        config["out"] = serde_json::to_value(out)?;
    }
    match m.command.as_str() {
        "generate" => generate(&serde_json::from_value(config)?),
        "train" => train_cmd(&serde_json::from_value(config)?),
        "ablate" => ablate(&serde_json::from_value(config)?),
        "sweep-k" => sweep_k(&serde_json::from_value(config)?),
        "export-graph" => export_graph(&serde_json::from_value(config)?),
        other => Err(CliError::Config(format!("manifest names unknown command {other:?}"))),
    }
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pdmesh::graph::{build_pair, verify_medial_line_equivalence, DualConfig, GraphDump, GraphError, GraphSummary, TheoremStatus};
use pdmesh::io::{
    augment_directory, face_colors, load_classification, load_segmentation, write_colored_ply, write_labels,
    Checkpoint, ExperimentConfig,
};
use pdmesh::mesh::{load_obj, write_obj};
use pdmesh::models::{ForwardOptions, Model, Task};
use pdmesh::train::{evaluate, synthetic_classification, synthetic_two_region, train_epoch, Dataset, TrainState};

#[derive(Parser)]
#[command(name = "pdmesh", version, about = "Primal-dual attention networks on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the primal/dual graph pair of a mesh and report its size.
    BuildGraph {
        mesh: PathBuf,
        #[arg(long, default_value = "A")]
        config: DualConfig,
        /// Also compare the medial graph of the mesh with the line graph of
        /// the primal graph.
        #[arg(long)]
        verify_theorem: bool,
        /// Write the graph pair as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset directory.
    Train {
        dataset: PathBuf,
        /// Checkpoint written after the last epoch; the best epoch goes to
        /// `<out>.best`.
        #[arg(long)]
        out: PathBuf,
        /// `key = value` experiment configuration.
        #[arg(long)]
        config_file: Option<PathBuf>,
        /// Continue from a checkpoint (its architecture is kept).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Validation dataset used to pick the best epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Per-epoch statistics as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a mesh with per-face colors (PLY).
    Export {
        mesh: PathBuf,
        #[arg(long, value_enum)]
        mode: ExportMode,
        #[arg(long)]
        out: PathBuf,
        /// Trained model; required for segmentation mode. Without it,
        /// clusters come from a freshly initialised model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of pooling layers to apply in clusters mode (default: all).
        #[arg(long)]
        pools: Option<usize>,
        /// Also write the per-face cluster or class ids, one per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Write slid-vertex copies of every mesh of a dataset directory.
    Augment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a small synthetic dataset.
    Synth {
        output: PathBuf,
        #[arg(long, value_enum, default_value = "classification")]
        task: SynthTask,
        /// Meshes per class (classification).
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportMode {
    Clusters,
    Segmentation,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthTask {
    Classification,
    Segmentation,
}

/// Overrides of configuration-file keys.
#[derive(Args, Default)]
struct Flags {
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    pool_fraction: Option<String>,
    #[arg(long)]
    pool_agg: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    width_divisor: Option<String>,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let pairs = [
            ("config", &self.config),
            ("task", &self.task),
            ("heads", &self.heads),
            ("pool_fraction", &self.pool_fraction),
            ("pool_agg", &self.pool_agg),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("batch", &self.batch),
            ("width_divisor", &self.width_divisor),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn experiment(&self, file: Option<&Path>) -> Result<ExperimentConfig> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

/// Error carrying a specific process exit code.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Exit(code)) = e.downcast_ref::<Exit>() {
                return ExitCode::from(*code);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildGraph { mesh, config, verify_theorem, out } => build_graph(&mesh, config, verify_theorem, out.as_deref()),
        Command::Train { dataset, out, config_file, resume, val, log, flags } => {
            train_cmd(&dataset, &out, config_file.as_deref(), resume.as_deref(), val.as_deref(), log.as_deref(), &flags)
        }
        Command::Eval { checkpoint, dataset, json } => eval_cmd(&checkpoint, &dataset, json.as_deref()),
        Command::Export { mesh, mode, out, checkpoint, pools, labels, flags } => {
            export_cmd(&mesh, mode, &out, checkpoint.as_deref(), pools, labels.as_deref(), &flags)
        }
        Command::Augment { input, output, copies, seed } => {
            let n = augment_directory(&input, &output, copies, seed)?;
            println!("wrote {n} augmented meshes to {}", output.display());
            Ok(())
        }
        Command::Synth { output, task, per_class, seed } => synth_cmd(&output, task, per_class, seed),
    }
}

fn build_graph(path: &Path, config: DualConfig, verify: bool, out: Option<&Path>) -> Result<()> {
    let mesh = load_obj(path)?;
    let pair = match build_pair(&mesh, config) {
        Ok(p) => p,
        Err(GraphError::NonManifold(edges)) => {
            eprintln!("error: {} non-manifold edge(s):", edges.len());
            for e in &edges {
                eprintln!("  edge {} (vertices {} {}) shared by faces {:?}", e.edge, e.vertices[0], e.vertices[1], e.faces);
            }
            return Err(Exit(2).into());
        }
        Err(e) => return Err(e.into()),
    };
    let s = GraphSummary::of(&pair);
    let counts = format!("primal {}/{}, dual {}/{}", s.primal_nodes, s.primal_edges, s.dual_nodes, s.dual_edges);
    let mut failed = false;
    if verify {
        let report = verify_medial_line_equivalence(&mesh);
        match &report.status {
            TheoremStatus::Pass => println!("theorem: pass, {counts}"),
            TheoremStatus::Fail => {
                println!("theorem: fail ({} missing, {} extra), {counts}", report.missing.len(), report.extra.len());
                failed = true;
            }
            TheoremStatus::PreconditionViolated(why) => println!("theorem: not applicable ({why}), {counts}"),
        }
    } else {
        println!("{counts}");
    }
    if let Some(out) = out {
        let file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
        serde_json::to_writer(file, &GraphDump::of(&pair))?;
    }
    if failed {
        return Err(Exit(3).into());
    }
    Ok(())
}

fn load_dataset(root: &Path, task: Task, classes: Option<usize>, config: DualConfig, augment: usize, seed: u64) -> Result<Dataset> {
    let data = match task {
        Task::Classification => load_classification(root, config, augment, seed)?,
        _ => load_segmentation(root, task, classes, config, augment, seed)?,
    };
    Ok(data)
}

fn train_cmd(
    root: &Path,
    out: &Path,
    config_file: Option<&Path>,
    resume: Option<&Path>,
    val: Option<&Path>,
    log: Option<&Path>,
    flags: &Flags,
) -> Result<()> {
    let exp = flags.experiment(config_file)?;
    let (model, mut state, train_cfg, data) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut cfg = ckpt.train;
            if let Some(e) = exp.epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = exp.lr {
                cfg.lr = lr;
            }
            let model = Model::new(ckpt.arch)?;
            let spec = &model.spec;
            let data = load_dataset(root, spec.task, Some(spec.classes), spec.config, cfg.augment, cfg.seed)?;
            if spec.task == Task::Classification && ckpt.class_names != data.class_names {
                bail!("dataset classes {:?} differ from the checkpoint's {:?}", data.class_names, ckpt.class_names);
            }
            (model, ckpt.state, cfg, data)
        }
        None => {
            let cfg = exp.train_config()?;
            // The class count is only known once the data is read.
            let probe = exp.architecture(2)?;
            let data = load_dataset(root, probe.task, exp.classes, probe.config, cfg.augment, cfg.seed)?;
            let model = Model::new(exp.architecture(data.classes)?)?;
            let state = TrainState::new(&model, &cfg);
            (model, state, cfg, data)
        }
    };
    let spec = &model.spec;
    let val_data = match val {
        Some(v) => Some(load_dataset(v, spec.task, Some(spec.classes), spec.config, 0, train_cfg.seed)?),
        None => None,
    };
    let mut log_file = match log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let best_path = PathBuf::from(format!("{}.best", out.display()));
    let mut best = f64::NEG_INFINITY;
    let checkpoint = |state: &TrainState| Checkpoint {
        arch: model.spec.clone(),
        train: train_cfg,
        class_names: data.class_names.clone(),
        state: state.clone(),
    };
    while state.epoch < train_cfg.epochs {
        let stats = train_epoch(&model, &mut state, &data, &train_cfg)?;
        let metric = match &val_data {
            Some(v) => Some(evaluate(&model, &state.params, &state.buffers, v, train_cfg.batch)?.accuracy),
            None => None,
        };
        let score = metric.unwrap_or(stats.accuracy);
        println!(
            "epoch {} loss {:.6} train-acc {:.2}{}",
            stats.epoch + 1,
            stats.mean_loss,
            stats.accuracy,
            metric.map(|m| format!(" val-acc {m:.2}")).unwrap_or_default()
        );
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::json!({"epoch": stats.epoch + 1, "loss": stats.mean_loss, "train_accuracy": stats.accuracy, "val_accuracy": metric});
            writeln!(f, "{line}")?;
        }
        if score > best {
            best = score;
            checkpoint(&state).save(&best_path)?;
        }
    }
    checkpoint(&state).save(out)?;
    let report = evaluate(&model, &state.params, &state.buffers, &data, train_cfg.batch)?;
    println!("final train accuracy {:.2} loss {:.6}", report.accuracy, report.mean_loss);
    if let Some(f) = log_file.as_mut() {
        writeln!(f, "{}", serde_json::json!({"final_train_accuracy": report.accuracy, "final_train_loss": report.mean_loss}))?;
    }
    Ok(())
}

fn eval_cmd(ckpt_path: &Path, root: &Path, json: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = Model::new(ckpt.arch)?;
    let spec = &model.spec;
    let data = match spec.task {
        Task::Classification => load_classification(root, spec.config, 0, 0)?,
        _ => load_segmentation(root, spec.task, None, spec.config, 0, 0)?,
    };
    if data.classes != spec.classes {
        bail!("dataset has {} classes but the checkpoint predicts {}", data.classes, spec.classes);
    }
    let report = evaluate(&model, &ckpt.state.params, &ckpt.state.buffers, &data, ckpt.train.batch)?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    match spec.task {
        Task::Classification => {
            println!("samples  loss      accuracy");
            println!("{:<8} {:<9.6} {:.2}", report.samples, report.mean_loss, report.accuracy);
        }
        _ => {
            println!("samples  loss      face    hard-edge  soft-edge");
            println!(
                "{:<8} {:<9.6} {:<7.2} {:<10} {}",
                report.samples,
                report.mean_loss,
                report.accuracy,
                fmt(report.hard_edge),
                fmt(report.soft_edge)
            );
        }
    }
    if let Some(p) = json {
        let file = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        serde_json::to_writer_pretty(file, &report)?;
    }
    Ok(())
}

fn export_cmd(
    mesh_path: &Path,
    mode: ExportMode,
    out: &Path,
    ckpt: Option<&Path>,
    pools: Option<usize>,
    labels: Option<&Path>,
    flags: &Flags,
) -> Result<()> {
    let mesh = load_obj(mesh_path)?;
    let (model, params, buffers) = match ckpt {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            (Model::new(c.arch)?, c.state.params, c.state.buffers)
        }
        None => {
            if matches!(mode, ExportMode::Segmentation) {
                bail!("segmentation export needs --checkpoint");
            }
            let mut exp = flags.experiment(None)?;
            exp.attention_init.get_or_insert(pdmesh::conv::AttentionInit::Glorot);
            let model = Model::new(exp.architecture(2)?)?;
            let (p, b) = model.init(exp.seed.unwrap_or(0));
            (model, p, b)
        }
    };
    let pair = build_pair(&mesh, model.spec.config)?;
    let result = model.forward(&params, &buffers, &pair, ForwardOptions::default())?;
    let ids: Vec<usize> = match mode {
        ExportMode::Clusters => {
            let n = pools.unwrap_or(result.traces.len());
            if n > result.traces.len() {
                bail!("model has {} pooling layers, {n} requested", result.traces.len());
            }
            let mut ids = pair.face_to_node();
            for trace in &result.traces[..n] {
                for id in &mut ids {
                    *id = trace.primal_map[*id];
                }
            }
            let count = ids.iter().max().map_or(0, |m| m + 1);
            println!("clusters: {count}");
            ids
        }
        ExportMode::Segmentation => {
            if model.spec.task == Task::Classification {
                bail!("checkpoint is a classification model");
            }
            let logits = result.tape.value(result.logits)?;
            let ids: Vec<usize> = logits
                .rows()
                .into_iter()
                .map(|r| r.iter().enumerate().fold(0, |best, (j, &v)| if v > r[best] { j } else { best }))
                .collect();
            let mut used = ids.clone();
            used.sort_unstable();
            used.dedup();
            println!("classes: {}", used.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
            ids
        }
    };
    let mut file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_colored_ply(&mesh, &face_colors(&ids), &mut file)?;
    if let Some(p) = labels {
        let mut f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        write_labels(&ids, &mut f)?;
    }
    Ok(())
}

fn synth_cmd(output: &Path, task: SynthTask, per_class: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(output)?;
    match task {
        SynthTask::Classification => {
            for (mesh, label) in synthetic_classification(per_class, seed) {
                let dir = output.join(["sphere", "box"][label]);
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join(format!("{}.obj", mesh.name())), write_obj(&mesh))?;
            }
            println!("wrote {} meshes to {}", 2 * per_class, output.display());
        }
        SynthTask::Segmentation => {
            let (mesh, labels) = synthetic_two_region();
            std::fs::write(output.join("two-region.obj"), write_obj(&mesh))?;
            let mut f = BufWriter::new(File::create(output.join("two-region.faces.txt"))?);
            write_labels(&labels, &mut f)?;
            println!("wrote 1 mesh with {} face labels to {}", labels.len(), output.display());
        }
    }
    Ok(())
}

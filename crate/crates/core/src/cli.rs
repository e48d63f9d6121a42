//! Command implementations behind the `sdgraph` binary.
//!
//! Checkpoints are written as three files: the parameters (`SDGC`), the
//! run config next to them (`<ckpt>.cfg`) and a small key=value record of
//! the task and head sizes (`<ckpt>.meta`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::cell::RefCell;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::batch::SketchBatch;
use crate::config::{ConfigError, RetrievalMode, RunConfig};
use crate::data::{pad_all, prepare, split_fraction, PrepSummary};
use crate::fusion::{AblationFlags, ArchToggles};
use crate::io::{format_stroke3_text, parse_quickdraw_ndjson, read_cache, sketch_to_svg, write_cache, CategoryTable, FormatError};
use crate::preprocess::{PaddedSketch, PreprocessError};
use crate::sketch::Sketch;
use crate::synth::synth_dataset;
use crate::tasks::{
    fit_layout, hard_negatives, layout_padded, read_embeddings, read_pairs, retrieval_eval, Classifier, EmbeddingTable, Generator,
    MetricsLog, RetrievalModel, TaskError,
};
use crate::tensor::{
    check_gradients, primitive_suite, read_checkpoint, record_structure, replay_structure, set_precision, write_checkpoint, Precision,
    Structure, TensorError, FD_FLOOR, FD_STEP,
};

/// Relative-error bound for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: max relative error {0:.3e}")]
    GradCheck(f64),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Task(_) => 4,
            CliError::GradCheck(_) => 5,
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Task(e.into())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Task(e.into())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn fmt_err(path: &Path) -> impl FnOnce(FormatError) -> CliError + '_ {
    move |source| CliError::Format {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Generate,
    Retrieve,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cls" => Ok(Task::Classify),
            "gen" => Ok(Task::Generate),
            "ret" => Ok(Task::Retrieve),
            _ => Err(format!("unknown task {s:?} (expected cls, gen or ret)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "cls",
            Task::Generate => "gen",
            Task::Retrieve => "ret",
        })
    }
}

/// Loads a config file (or the defaults), applies `SDG_SEED` and validates.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar(ckpt: &Path, ext: &str) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

// ---------------------------------------------------------------- prep

fn ndjson_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(io_err(input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Usage(format!("{}: no .ndjson files", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_owned()])
    }
}

/// Reads QuickDraw ndjson (a file or a directory of `*.ndjson`), returning
/// the parsed sketches, the category names and the number of unusable
/// records (each logged with its file and line).
pub fn read_quickdraw(input: &Path, cfg: &RunConfig) -> Result<(Vec<Sketch>, Vec<String>, usize), CliError> {
    let mut table = if cfg.categories.is_empty() {
        CategoryTable::growable()
    } else {
        CategoryTable::fixed(&cfg.categories)
    };
    let mut sketches = Vec::new();
    let mut bad = 0;
    for file in ndjson_inputs(input)? {
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let parsed = parse_quickdraw_ndjson(&text, &mut table);
        for e in &parsed.errors {
            log::warn!("{}:{}: {}", file.display(), e.line, e.message);
        }
        bad += parsed.errors.len() + parsed.skipped_empty;
        sketches.extend(parsed.sketches);
    }
    Ok((sketches, table.names().to_vec(), bad))
}

/// Parses, preprocesses and caches a QuickDraw export. With `raw` the
/// parsed sketches are cached without preprocessing. The category names
/// go to `<out>.categories`, one per line.
pub fn cmd_prep(input: &Path, out: &Path, cfg: &RunConfig, workers: usize, raw: bool) -> Result<PrepSummary, CliError> {
    cfg.validate()?;
    let (sketches, names, bad) = read_quickdraw(input, cfg)?;
    let (kept, mut summary) = if raw {
        let strokes = sketches.iter().map(|s| s.strokes.len()).sum();
        let n = sketches.len();
        (
            sketches,
            PrepSummary {
                kept: n,
                strokes_kept: strokes,
                ..Default::default()
            },
        )
    } else {
        prepare(&sketches, &cfg.preprocess, workers)?
    };
    summary.dropped += bad;
    write_cache(&kept, out).map_err(fmt_err(out))?;
    let cats = sidecar(out, ".categories");
    fs::write(&cats, names.iter().map(|n| format!("{n}\n")).collect::<String>()).map_err(io_err(&cats))?;
    Ok(summary)
}

// ---------------------------------------------------------------- checkpoints

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub task: Task,
    /// Classes for `cls`, embedding width for `ret`, unused for `gen`.
    pub out_dim: usize,
    pub epochs_trained: usize,
}

fn write_meta(path: &Path, m: &CheckpointMeta) -> Result<(), CliError> {
    let text = format!("task = {}\nout_dim = {}\nepochs_trained = {}\n", m.task, m.out_dim, m.epochs_trained);
    fs::write(path, text).map_err(io_err(path))
}

fn read_meta(path: &Path) -> Result<CheckpointMeta, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kv: HashMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let bad = || CliError::Usage(format!("{}: malformed checkpoint metadata", path.display()));
    let num = |k: &str| kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(bad);
    Ok(CheckpointMeta {
        task: kv.get("task").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
        out_dim: num("out_dim")?,
        epochs_trained: num("epochs_trained")?,
    })
}

fn save(ckpt: &Path, store: &crate::tensor::ParamStore, cfg: &RunConfig, meta: &CheckpointMeta) -> Result<(), CliError> {
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = BufWriter::new(File::create(ckpt).map_err(io_err(ckpt))?);
    write_checkpoint(store, &mut w).map_err(io_err(ckpt))?;
    w.flush().map_err(io_err(ckpt))?;
    let cfg_path = sidecar(ckpt, ".cfg");
    fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
    write_meta(&sidecar(ckpt, ".meta"), meta)
}

/// A model restored from disk.
pub enum LoadedModel {
    Classifier(Classifier),
    Generator(Generator),
    Retrieval(RetrievalModel),
}

/// Loads a checkpoint with its saved config, or with `config` instead
/// when given (the architecture must still match the parameters).
pub fn load_model(ckpt: &Path, config: Option<&Path>) -> Result<(LoadedModel, RunConfig, CheckpointMeta), CliError> {
    let meta = read_meta(&sidecar(ckpt, ".meta"))?;
    let cfg = load_config(Some(&config.map(Path::to_owned).unwrap_or_else(|| sidecar(ckpt, ".cfg"))))?;
    let entries = read_checkpoint(BufReader::new(File::open(ckpt).map_err(io_err(ckpt))?))?;
    let model = match meta.task {
        Task::Classify => LoadedModel::Classifier(Classifier::from_checkpoint(cfg.stage.clone(), meta.out_dim, entries)?),
        Task::Retrieve => LoadedModel::Retrieval(RetrievalModel::from_checkpoint(cfg.stage.clone(), meta.out_dim, entries)?),
        Task::Generate => LoadedModel::Generator(Generator::from_checkpoint(
            cfg.gen_stage(),
            cfg.gen_layout,
            cfg.schedule()?,
            meta.epochs_trained,
            entries,
        )?),
    };
    Ok((model, cfg, meta))
}

// ---------------------------------------------------------------- train

fn load_sketches(cache: &Path) -> Result<Vec<Sketch>, CliError> {
    let s = read_cache(cache).map_err(fmt_err(cache))?;
    if s.is_empty() {
        return Err(TaskError::EmptyDataset.into());
    }
    Ok(s)
}

fn num_classes(sketches: &[Sketch], cfg: &RunConfig) -> usize {
    let max = sketches.iter().filter_map(|s| s.label).max().map_or(0, |l| l as usize + 1);
    max.max(cfg.categories.len()).max(2)
}

fn layout_data(sketches: &[Sketch], cfg: &RunConfig) -> Result<Vec<PaddedSketch>, CliError> {
    sketches
        .iter()
        .filter(|s| cfg.gen_label.is_none() || s.label == cfg.gen_label)
        .map(|s| Ok(layout_padded(&fit_layout(s, cfg.gen_layout)?, cfg.gen_layout)?))
        .collect()
}

/// Retrieval inputs resolved against a cache: the image table, the paired
/// image of every sketch, and every image's category (from its pairs).
pub struct RetrievalData {
    pub images: EmbeddingTable,
    pub positive: Vec<Option<usize>>,
    pub image_label: Vec<Option<u32>>,
}

pub fn load_retrieval(sketches: &[Sketch], cfg: &RunConfig) -> Result<RetrievalData, CliError> {
    let need = |p: &Option<PathBuf>, key: &str| p.clone().ok_or_else(|| CliError::Usage(format!("config key `{key}` is required for retrieval")));
    let (emb_path, pairs_path) = (need(&cfg.ret_embeddings, "ret_embeddings")?, need(&cfg.ret_pairs, "ret_pairs")?);
    let images = read_embeddings(&mut BufReader::new(File::open(&emb_path).map_err(io_err(&emb_path))?)).map_err(fmt_err(&emb_path))?;
    let pairs = read_pairs(BufReader::new(File::open(&pairs_path).map_err(io_err(&pairs_path))?)).map_err(fmt_err(&pairs_path))?;
    let index = images.index();
    let mut positive = vec![None; sketches.len()];
    let mut image_label = vec![None; images.len()];
    for (line, (sid, iid)) in pairs.iter().enumerate() {
        let bad = |m: String| CliError::Format {
            path: pairs_path.clone(),
            source: FormatError::Text { line: line + 1, message: m },
        };
        let s: usize = sid.parse().map_err(|_| bad(format!("sketch id {sid:?} is not a cache index")))?;
        if s >= sketches.len() {
            return Err(bad(format!("sketch id {s} beyond the {} cached sketches", sketches.len())));
        }
        let &g = index.get(iid.as_str()).ok_or_else(|| bad(format!("unknown image id {iid:?}")))?;
        positive[s] = Some(g);
        image_label[g] = image_label[g].or(sketches[s].label);
    }
    Ok(RetrievalData {
        images,
        positive,
        image_label,
    })
}

pub struct TrainOutcome {
    pub log: MetricsLog,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Trains a model for `task` on a cache and writes the checkpoint set and
/// the metrics log (`metrics` key, or `<ckpt>.metrics.jsonl`).
pub fn cmd_train(task: Task, cache: &Path, cfg: &RunConfig, ckpt: &Path) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let sketches = load_sketches(cache)?;
    let tc = cfg.train_config();
    let mut log = MetricsLog::with_header(cfg.entries());
    let (report, meta) = match task {
        Task::Classify => {
            let c = num_classes(&sketches, cfg);
            let padded = pad_all(&sketches, &cfg.preprocess)?;
            let (train, val) = split_fraction(&padded, |p| p.label, cfg.val_fraction, cfg.seed);
            let mut model = Classifier::new(cfg.stage.clone(), c, cfg.seed)?;
            let r = model.train(&train, &val, &tc, &mut log)?;
            let meta = CheckpointMeta {
                task,
                out_dim: c,
                epochs_trained: tc.epochs,
            };
            save(ckpt, &model.store, cfg, &meta)?;
            (r, meta)
        }
        Task::Generate => {
            let data = layout_data(&sketches, cfg)?;
            if data.is_empty() {
                return Err(TaskError::EmptyDataset.into());
            }
            let mut model = Generator::new(cfg.gen_stage(), cfg.gen_layout, cfg.schedule()?, cfg.seed)?;
            let r = model.train(&data, &tc, &mut log)?;
            let meta = CheckpointMeta {
                task,
                out_dim: 2,
                epochs_trained: model.epochs_trained,
            };
            save(ckpt, &model.store, cfg, &meta)?;
            (r, meta)
        }
        Task::Retrieve => {
            let rd = load_retrieval(&sketches, cfg)?;
            let held: BTreeSet<u32> = cfg.ret_test_labels.iter().copied().collect();
            let padded = pad_all(&sketches, &cfg.preprocess)?;
            let (mut train, mut pos) = (Vec::new(), Vec::new());
            for (i, p) in padded.into_iter().enumerate() {
                if let Some(g) = rd.positive[i] {
                    if !p.label.is_some_and(|l| held.contains(&l)) {
                        train.push(p);
                        pos.push(g);
                    }
                }
            }
            if train.is_empty() {
                return Err(TaskError::EmptyDataset.into());
            }
            let same = |i: usize, j: usize| cfg.ret_mode == RetrievalMode::Category && rd.image_label[i].is_some() && rd.image_label[i] == rd.image_label[j];
            let negatives = hard_negatives(&rd.images, same)?;
            let mut model = RetrievalModel::new(cfg.stage.clone(), rd.images.dim, cfg.seed)?;
            let r = model.train(&train, &pos, &rd.images, &negatives, None, &tc, &mut log)?;
            let meta = CheckpointMeta {
                task,
                out_dim: rd.images.dim,
                epochs_trained: tc.epochs,
            };
            save(ckpt, &model.store, cfg, &meta)?;
            (r, meta)
        }
    };
    let metrics_path = cfg.metrics.clone().unwrap_or_else(|| sidecar(ckpt, ".metrics.jsonl"));
    fs::write(&metrics_path, log.to_text()).map_err(io_err(&metrics_path))?;
    log::info!("{} trained for {} epochs; best epoch {}", meta.task, meta.epochs_trained, report.best_epoch);
    Ok(TrainOutcome {
        log,
        initial_loss: report.initial_loss,
        epoch_losses: report.epoch_losses,
        best_epoch: report.best_epoch,
    })
}

// ---------------------------------------------------------------- eval

/// Evaluates a checkpoint on a cache; returns `(metric, value)` pairs.
pub fn cmd_eval(task: Task, cache: &Path, ckpt: &Path, config: Option<&Path>) -> Result<Vec<(String, f64)>, CliError> {
    let (model, cfg, meta) = load_model(ckpt, config)?;
    if meta.task != task {
        return Err(CliError::Usage(format!("checkpoint holds a {} model, not {task}", meta.task)));
    }
    let sketches = load_sketches(cache)?;
    match model {
        LoadedModel::Classifier(m) => {
            let padded = pad_all(&sketches, &cfg.preprocess)?;
            let mut nll = 0.0;
            let mut correct = 0usize;
            for chunk in padded.chunks(cfg.eval_batch_size) {
                let refs: Vec<&PaddedSketch> = chunk.iter().collect();
                for (row, p) in m.log_probs(&refs)?.iter().zip(chunk) {
                    let l = p.label.ok_or_else(|| CliError::Usage("evaluation sketches need labels".into()))? as usize;
                    let l = l.min(row.len() - 1);
                    nll -= row[l];
                    correct += usize::from(crate::tasks::argmax_row(row) == l);
                }
            }
            let n = padded.len() as f64;
            Ok(vec![("accuracy".into(), correct as f64 / n), ("nll".into(), nll / n)])
        }
        LoadedModel::Generator(g) => {
            let data = layout_data(&sketches, &cfg)?;
            if data.is_empty() {
                return Err(TaskError::EmptyDataset.into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (mut total, mut n) = (0.0, 0.0);
            for chunk in data.chunks(cfg.eval_batch_size) {
                let batch = SketchBatch::new(&chunk.iter().collect::<Vec<_>>())?;
                let (loss, _) = g.loss(&batch, &mut rng)?;
                total += loss * chunk.len() as f64;
                n += chunk.len() as f64;
            }
            Ok(vec![("mse".into(), total / n)])
        }
        LoadedModel::Retrieval(m) => {
            let rd = load_retrieval(&sketches, &cfg)?;
            let held: BTreeSet<u32> = cfg.ret_test_labels.iter().copied().collect();
            let in_test = |l: Option<u32>| held.is_empty() || l.is_some_and(|l| held.contains(&l));
            let gallery_idx: Vec<usize> = (0..rd.images.len()).filter(|&g| in_test(rd.image_label[g])).collect();
            let mut gallery = EmbeddingTable::new(rd.images.dim);
            for &g in &gallery_idx {
                gallery.push(rd.images.ids[g].clone(), rd.images.row(g))?;
            }
            let (mut queries, mut q_label, mut q_pos) = (Vec::new(), Vec::new(), Vec::new());
            let padded = pad_all(&sketches, &cfg.preprocess)?;
            for (i, p) in padded.into_iter().enumerate() {
                if let Some(g) = rd.positive[i].filter(|_| in_test(sketches[i].label)) {
                    queries.push(p);
                    q_label.push(sketches[i].label);
                    q_pos.push(g);
                }
            }
            if queries.is_empty() {
                return Err(TaskError::EmptyDataset.into());
            }
            let emb = m.embed_all(&queries, cfg.eval_batch_size)?;
            let k = cfg.ret_k.min(gallery.len());
            let metrics = retrieval_eval(
                &emb,
                &gallery,
                |q, g| match cfg.ret_mode {
                    RetrievalMode::Category => q_label[q].is_some() && rd.image_label[gallery_idx[g]] == q_label[q],
                    RetrievalMode::Instance => gallery_idx[g] == q_pos[q],
                },
                k,
            )?;
            Ok(vec![
                (format!("map@{k}"), metrics.map_at_k),
                (format!("prec@{k}"), metrics.prec_at_k),
                ("acc@1".into(), metrics.acc_at_1),
                ("acc@5".into(), metrics.acc_at_5),
            ])
        }
    }
}

// ---------------------------------------------------------------- sample

/// Draws `count` sketches from a generator checkpoint and writes
/// `sample_NNN.s3` and `sample_NNN.svg` into `out_dir`.
pub fn cmd_sample(ckpt: &Path, count: usize, out_dir: &Path, config: Option<&Path>) -> Result<Vec<Sketch>, CliError> {
    let (model, cfg, _) = load_model(ckpt, config)?;
    let LoadedModel::Generator(g) = model else {
        return Err(CliError::Usage("sampling needs a generator checkpoint (task gen)".into()));
    };
    let sketches = g.generate(count, cfg.eval_batch_size, cfg.seed, cfg.allow_untrained)?;
    write_samples(&sketches, out_dir)?;
    Ok(sketches)
}

pub fn write_samples(sketches: &[Sketch], out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (i, s) in sketches.iter().enumerate() {
        let s3 = out_dir.join(format!("sample_{i:03}.s3"));
        fs::write(&s3, format_stroke3_text(s)).map_err(io_err(&s3))?;
        let svg = out_dir.join(format!("sample_{i:03}.svg"));
        fs::write(&svg, sketch_to_svg(s, 1.5)).map_err(io_err(&svg))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    /// `(check name, max relative error)`.
    pub entries: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub elapsed_ms: u128,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

impl fmt::Display for GradcheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, e) in &self.entries {
            writeln!(f, "  {name:<28} {e:.3e}")?;
        }
        write!(f, "{} max_rel_err={:.3e}", if self.passed() { "PASS" } else { "FAIL" }, self.max_rel_err)
    }
}

/// Central-difference checks of every primitive and of the full
/// classification loss on a 2-sketch batch, at 64-bit precision.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckOutcome, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    set_precision(Precision::F64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries: Vec<(String, f64)> = primitive_suite(&mut rng)?.into_iter().map(|(n, e)| (n.to_owned(), e)).collect();

    let (raw, _) = prepare(&synth_dataset(1, cfg.seed), &cfg.preprocess, 1)?;
    let padded = pad_all(&raw, &cfg.preprocess)?;
    let two: Vec<&PaddedSketch> = padded.iter().filter(|p| p.num_strokes() > 1).take(2).collect();
    let batch = SketchBatch::new(&two)?;
    let mut model = Classifier::new(cfg.stage.clone(), 10, cfg.seed)?;
    let report = {
        let probe = model.clone();
        // Neighbour choices are frozen at the unperturbed pass: they are not
        // differentiable and near-ties would otherwise flip under the step.
        let frozen: RefCell<Option<Structure>> = RefCell::new(None);
        check_gradients(&mut model.store, FD_STEP, FD_FLOOR, 4, |store| -> Result<_, TaskError> {
            let eval = || -> Result<_, TaskError> {
                let mut tape = crate::tensor::Tape::with_params(store);
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let lp = probe.forward(&mut tape, &batch, &mut r)?;
                let targets: Vec<usize> = batch.labels.iter().map(|l| l.unwrap_or(0) as usize).collect();
                let loss = tape.nll_loss(lp, &targets)?;
                Ok((tape.value(loss).item(), tape.backward(loss)?))
            };
            let recorded = frozen.borrow().clone();
            match recorded {
                Some(s) => replay_structure(&s, eval),
                None => {
                    let (out, s) = record_structure(eval);
                    *frozen.borrow_mut() = Some(s);
                    out
                }
            }
        })?
    };
    entries.push((
        format!("classification loss ({} probes, {} one-sided)", report.checked, report.one_sided),
        report.max_rel_err,
    ));
    let max_rel_err = entries.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(GradcheckOutcome {
        entries,
        max_rel_err,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    /// Effective-information flags against the baseline.
    Info,
    /// Module combinations of the two graphs, sampling and fusion.
    Arch,
}

impl FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "info" => Ok(AblationKind::Info),
            "arch" => Ok(AblationKind::Arch),
            _ => Err(format!("unknown ablation {s:?} (expected info or arch)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub process: String,
    /// Held-out accuracy per seed.
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<30} {:<8} {:>8}", "Configuration", "Process", "Accuracy")?;
        for r in &self.rows {
            writeln!(f, "{:<30} {:<8} {:>8.4}", r.name, r.process, r.mean())?;
        }
        Ok(())
    }
}

/// The variants of one ablation: `(name, process, config)`.
pub fn ablation_variants(kind: AblationKind, base: &RunConfig) -> Vec<(String, String, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match kind {
        AblationKind::Info => {
            let flags = |a: AblationFlags| {
                with(&|c: &mut RunConfig| {
                    c.stage.ablation = a;
                    c.preprocess.preserve_point_frequency = a.preserve_point_frequency;
                })
            };
            let none = AblationFlags::default();
            vec![
                ("Intra-Stroke Info.".into(), "Exclude".into(), flags(AblationFlags { exclude_sgraph: true, ..none })),
                ("Inter-Stroke Relations".into(), "Exclude".into(), flags(AblationFlags { disable_inter_stroke_edges: true, ..none })),
                ("Intra-Stroke Temporal".into(), "Exclude".into(), flags(AblationFlags { random_temporal_neighborhoods: true, ..none })),
                ("Point Frequency Info.".into(), "Include".into(), flags(AblationFlags { preserve_point_frequency: true, ..none })),
                ("Baseline".into(), String::new(), flags(none)),
            ]
        }
        AblationKind::Arch => [
            "SG",
            "SG+SS",
            "DG",
            "DG+PS",
            "SG+DG",
            "SG+SS+DG",
            "SG+DG+PS",
            "SG+SS+DG+PS",
            "SG+SS+DG+PS+IF",
        ]
        .iter()
        .map(|m| {
            let t: ArchToggles = m.parse().expect("fixed module sets are valid");
            (
                t.to_string(),
                String::new(),
                with(&|c: &mut RunConfig| {
                    c.stage.toggles = t;
                    c.stage.ablation = AblationFlags::default();
                    c.preprocess.preserve_point_frequency = false;
                }),
            )
        })
        .collect(),
    }
}

/// Trains every variant of `kind` with identical seeds and budget on the
/// same raw sketches (preprocessed per variant, so the point-frequency
/// flag can act) and reports held-out accuracy, averaged over `seeds`
/// consecutive seeds starting at the config seed.
pub fn run_ablation(raw: &[Sketch], base: &RunConfig, kind: AblationKind, seeds: usize) -> Result<AblationTable, CliError> {
    run_variants(raw, base, ablation_variants(kind, base), seeds)
}

/// [`run_ablation`] over an explicit variant list, e.g. a subset of
/// [`ablation_variants`].
pub fn run_variants(raw: &[Sketch], base: &RunConfig, variants: Vec<(String, String, RunConfig)>, seeds: usize) -> Result<AblationTable, CliError> {
    base.validate()?;
    if !(base.val_fraction > 0.0) {
        return Err(CliError::Usage("ablation needs val_fraction > 0 for its held-out split".into()));
    }
    let mut rows = Vec::new();
    for (name, process, cfg) in variants {
        let mut accuracies = Vec::with_capacity(seeds);
        // filtering precedes resampling, so every variant keeps the same
        // sketches and receives the same split for a given seed
        let (kept, _) = prepare(raw, &cfg.preprocess, 0)?;
        let padded = pad_all(&kept, &cfg.preprocess)?;
        for k in 0..seeds.max(1) as u64 {
            let seed = base.seed + k;
            let (train, test) = split_fraction(&padded, |p| p.label, cfg.val_fraction, seed);
            let mut model = Classifier::new(cfg.stage.clone(), num_classes(&kept, &cfg), seed)?;
            let tc = crate::tasks::TrainConfig { seed, ..cfg.train.clone() };
            model.train(&train, &[], &tc, &mut MetricsLog::default())?;
            let acc = model.accuracy(&test, cfg.eval_batch_size)?;
            log::info!("{name} seed {seed}: {acc:.4}");
            accuracies.push(acc);
        }
        rows.push(AblationRow { name, process, accuracies });
    }
    Ok(AblationTable { rows })
}

/// `ablate` command: runs [`run_ablation`] on a cache. For the
/// point-frequency row to differ from the baseline the cache must hold
/// unprocessed sketches (`prep --raw`).
pub fn cmd_ablate(cache: &Path, cfg: &RunConfig, kind: AblationKind, seeds: usize) -> Result<AblationTable, CliError> {
    cfg.validate()?;
    let raw = load_sketches(cache)?;
    run_ablation(&raw, cfg, kind, seeds)
}

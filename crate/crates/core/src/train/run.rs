//! Run configuration and the training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{eval_copy_accuracy, induction_score_table, EpOptions, HeadScoreTable};
use crate::data::{gen_copy_eval, gen_probe, write_jsonl, CopyEvalSample, CopyEvalSpec, Corpus, CorpusSpec, ProbeSequence};
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, ModelConfig, ModelWeights};
use crate::numeric::Rng;
use crate::optim::{adamw_step, clip_global_norm, lr_at, OptimState, TrainHyperparams};
use crate::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION};
use crate::train::heads_log::HeadLog;
use crate::train::metrics::{read_metrics, MetricsRecord, MetricsWriter};

/// Child streams of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_BENCH: u64 = 3;
const STREAM_PROBES: u64 = 4;

/// Induction-probe settings for the head tables logged during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub n_probes: usize,
    /// Half length `s`; `min(100, ctx_len / 2)` when absent.
    pub half: Option<usize>,
    /// Steps between head tables; `checkpoint_every` when absent. 0 disables.
    pub every: Option<u64>,
    pub fold_norms: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            n_probes: 16,
            half: None,
            every: None,
            fold_norms: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainHyperparams,
    pub corpus: CorpusSpec,
    pub copy_eval: CopyEvalSpec,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub probes: ProbeSettings,
}

impl RunConfig {
    /// The desk-scale default: 2-layer model, per-document Markov corpus,
    /// 40k steps.
    pub fn desk() -> Self {
        let model = ModelConfig::desk();
        Self {
            corpus: CorpusSpec::per_doc_markov(model.vocab_size, model.ctx_len + 1, 4),
            copy_eval: CopyEvalSpec::desk(),
            model,
            train: TrainHyperparams::desk(),
            seed: 1,
            checkpoint_every: 1000,
            eval_every: 200,
            out_dir: PathBuf::from("runs/desk"),
            probes: ProbeSettings::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.corpus.validate()?;
        self.copy_eval.validate()?;
        if self.checkpoint_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("checkpoint_every and eval_every must be positive".into()));
        }
        if self.corpus.vocab_size != self.model.vocab_size || self.copy_eval.vocab_size != self.model.vocab_size {
            return Err(Error::Config(format!(
                "corpus ({}) and benchmark ({}) vocabularies must equal the model's {}",
                self.corpus.vocab_size, self.copy_eval.vocab_size, self.model.vocab_size
            )));
        }
        if self.corpus.doc_len != self.model.ctx_len + 1 {
            return Err(Error::Config(format!(
                "corpus doc_len must be ctx_len + 1 = {} so each row trains on a full context",
                self.model.ctx_len + 1
            )));
        }
        self.copy_eval.check_fits(self.model.ctx_len)?;
        if self.probes.n_probes > 0 && 2 * self.probe_half() > self.model.ctx_len {
            return Err(Error::Config(format!(
                "probes of 2·{} tokens exceed the context length {}",
                self.probe_half(),
                self.model.ctx_len
            )));
        }
        if self.probes.n_probes > 0 && self.probe_half() < 2 {
            return Err(Error::Config("probe half length must be at least 2".into()));
        }
        Ok(())
    }

    pub fn probe_half(&self) -> usize {
        self.probes.half.unwrap_or((self.model.ctx_len / 2).min(100))
    }

    pub fn probe_every(&self) -> u64 {
        self.probes.every.unwrap_or(self.checkpoint_every)
    }

    /// Tokens consumed per update: `batch_size · ctx_len`.
    pub fn tokens_per_step(&self) -> u64 {
        self.train.batch_size as u64 * self.model.ctx_len as u64
    }

    /// Initial weights depend only on the architecture and the seed, so runs
    /// that differ in optimizer or batch settings start identically.
    pub fn initial_weights(&self) -> Result<ModelWeights<f32>> {
        ModelWeights::init(&self.model, &mut Rng::new(self.seed).split(STREAM_INIT))
    }

    /// The run's fixed copy benchmark.
    pub fn benchmark(&self) -> Result<Vec<CopyEvalSample>> {
        gen_copy_eval(&self.copy_eval, &mut Rng::new(self.seed).split(STREAM_BENCH))
    }

    /// Fresh probes for the head table at `step`.
    pub fn probes_at(&self, step: u64) -> Result<Vec<ProbeSequence>> {
        let mut rng = Rng::new(self.seed).split(STREAM_PROBES).split(step);
        (0..self.probes.n_probes)
            .map(|_| gen_probe(self.probe_half(), self.model.vocab_size, &mut rng))
            .collect()
    }
}

/// Resolved config plus provenance, written as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_format: u32,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            config: config.clone(),
            seed: config.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: FORMAT_VERSION,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.config.validate()?;
        Ok(m)
    }
}

/// Artifact locations inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    /// The resolved config as TOML, loadable with `RunConfig::load`.
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn heads_csv(&self) -> PathBuf {
        self.root.join("heads.csv")
    }
    pub fn heads_jsonl(&self) -> PathBuf {
        self.root.join("heads.jsonl")
    }
    pub fn bench(&self) -> PathBuf {
        self.root.join("bench.jsonl")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step_{step:08}.gklb"))
    }

    /// Checkpoint files sorted by step.
    pub fn list_checkpoints(&self) -> Result<Vec<(u64, PathBuf)>> {
        let dir = self.checkpoints();
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step_"))
                .and_then(|n| n.strip_suffix(".gklb"))
                .and_then(|n| n.parse().ok());
            if let Some(step) = step {
                out.push((step, path));
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Replace an occupied output directory.
    pub force: bool,
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    /// Stop after this step (without a final checkpoint unless one is due).
    pub stop_at: Option<u64>,
    /// Stop once an evaluation reaches this copy accuracy.
    pub stop_when_acc: Option<f64>,
    /// Print one line per metrics record to stderr.
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Stopped,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub status: RunStatus,
    pub last_step: u64,
    pub tokens_seen: u64,
    pub last_checkpoint: Option<u64>,
    pub final_train_loss: Option<f64>,
    pub final_copy_acc: Option<f64>,
    pub unigram_entropy: f64,
    pub divergence: Option<String>,
}

fn prepare_dir(cfg: &RunConfig, opts: &TrainOptions) -> Result<()> {
    let root = &cfg.out_dir;
    let occupied = std::fs::read_dir(root).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && opts.resume.is_none() {
        if !opts.force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass force to overwrite",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    let layout = RunLayout::new(root);
    std::fs::create_dir_all(layout.checkpoints()).map_err(|e| Error::io(layout.checkpoints(), e))
}

/// Trains per `cfg`, writing metrics, head tables and checkpoints under
/// `cfg.out_dir`.
///
/// On divergence the run stops, the last checkpoint stays on disk and the
/// returned summary (also written to `summary.json`) says so.
pub fn train_run(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    prepare_dir(cfg, opts)?;
    let layout = RunLayout::new(&cfg.out_dir);
    let write_json = |path: PathBuf, text: String| std::fs::write(&path, text).map_err(|e| Error::io(&path, e));
    write_json(layout.manifest(), serde_json::to_string_pretty(&Manifest::new(cfg))?)?;
    write_json(layout.config(), cfg.to_toml_string()?)?;

    let corpus = Corpus::new(&cfg.corpus)?;
    let bench = cfg.benchmark()?;
    write_jsonl(&layout.bench(), &bench)?;
    let queries = cfg.copy_eval.query_indices();
    let root_rng = Rng::new(cfg.seed);

    let (mut weights, mut optim, mut data_rng, mut dropout_rng, mut loss_sum, mut loss_count);
    let mut writer;
    let mut heads;
    match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let mut same = ck.header.run.clone();
            same.out_dir = cfg.out_dir.clone();
            if same != *cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written by a different run config",
                    path.display()
                )));
            }
            let step = ck.header.step;
            let kept: Vec<MetricsRecord> = match read_metrics(&layout.metrics()) {
                Ok(r) => r.into_iter().filter(|r| r.step <= step).collect(),
                Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(e),
            };
            writer = MetricsWriter::resume(&cfg.out_dir, &queries, &kept)?;
            heads = HeadLog::resume(&layout, step)?;
            weights = ck.weights;
            optim = ck.optim;
            data_rng = Rng::from_state(ck.header.data_rng);
            dropout_rng = Rng::from_state(ck.header.dropout_rng);
            loss_sum = f64::from_bits(ck.header.loss_sum_bits);
            loss_count = ck.header.loss_count;
        }
        None => {
            weights = cfg.initial_weights()?;
            optim = OptimState::new(&cfg.model);
            data_rng = root_rng.split(STREAM_DATA);
            dropout_rng = root_rng.split(STREAM_DROPOUT);
            loss_sum = 0.0;
            loss_count = 0;
            writer = MetricsWriter::create(&cfg.out_dir, &queries)?;
            heads = HeadLog::create(&layout)?;
        }
    }

    let checkpoint = |step: u64, w: &ModelWeights<f32>, o: &OptimState<f32>, d: &Rng, dr: &Rng, ls: f64, lc: u64| {
        let ck = Checkpoint {
            header: CheckpointHeader {
                run: cfg.clone(),
                step,
                tokens_seen: step * cfg.tokens_per_step(),
                data_rng: d.state(),
                dropout_rng: dr.state(),
                loss_sum_bits: ls.to_bits(),
                loss_count: lc,
            },
            weights: w.clone(),
            optim: o.clone(),
        };
        save_checkpoint(&layout.checkpoint(step), &ck)
    };
    let head_table = |step: u64, w: &ModelWeights<f32>| -> Result<HeadScoreTable> {
        let probes = cfg.probes_at(step)?;
        let opts = EpOptions {
            fold_norms: cfg.probes.fold_norms,
        };
        induction_score_table(&w.cast::<f64>(), &probes, step, opts)
    };

    let start_step = optim.step;
    let mut last_checkpoint = None;
    if opts.resume.is_none() {
        checkpoint(0, &weights, &optim, &data_rng, &dropout_rng, 0.0, 0)?;
        last_checkpoint = Some(0);
        if cfg.probes.n_probes > 0 && cfg.probe_every() > 0 {
            heads.append(&head_table(0, &weights)?)?;
        }
    }

    let end = opts.stop_at.map_or(cfg.train.total_steps, |s| s.min(cfg.train.total_steps));
    let clock = Instant::now();
    let unigram_entropy = corpus.unigram_entropy();
    let mut last_record: Option<MetricsRecord> = None;
    let mut step = start_step;
    let mut divergence = None;
    let mut reached = false;
    while step < end {
        let batch = corpus.batch(&mut data_rng, cfg.train.batch_size);
        let update = step + 1;
        let dr = (cfg.model.attn_dropout > 0.0).then_some(&mut dropout_rng);
        let outcome = loss_and_grads(&weights, &batch, dr).and_then(|(loss, mut grads)| {
            let norm = clip_global_norm(&mut grads, cfg.train.clip_norm)?;
            adamw_step(&mut weights, &grads, &mut optim, &cfg.train)?;
            Ok((loss, norm))
        });
        let (loss, grad_norm) = match outcome {
            Ok(v) => v,
            Err(Error::Numerical(reason)) => {
                divergence = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        };
        step = update;
        loss_sum += loss;
        loss_count += 1;

        if step % cfg.eval_every == 0 || step == cfg.train.total_steps {
            let acc = eval_copy_accuracy(&weights, &bench)?;
            let rec = MetricsRecord {
                step,
                tokens_seen: step * cfg.tokens_per_step(),
                lr: lr_at(step, &cfg.train),
                train_loss: loss_sum / loss_count as f64,
                grad_norm,
                param_norm: weights.l2_norm(),
                copy_acc: acc.overall,
                copy_acc_by_query: acc.by_query,
                wall_clock_s: clock.elapsed().as_secs_f64(),
            };
            if opts.verbose {
                eprintln!(
                    "step {:>6}  loss {:.4}  copy_acc {:.3}  {:.0}s",
                    rec.step, rec.train_loss, rec.copy_acc, rec.wall_clock_s
                );
            }
            writer.append(&rec)?;
            reached = opts.stop_when_acc.is_some_and(|t| rec.copy_acc >= t);
            last_record = Some(rec);
            loss_sum = 0.0;
            loss_count = 0;
        }
        let every = cfg.probe_every();
        if cfg.probes.n_probes > 0 && every > 0 && (step % every == 0 || step == cfg.train.total_steps) {
            heads.append(&head_table(step, &weights)?)?;
        }
        if step % cfg.checkpoint_every == 0 || step == cfg.train.total_steps || reached {
            checkpoint(step, &weights, &optim, &data_rng, &dropout_rng, loss_sum, loss_count)?;
            last_checkpoint = Some(step);
        }
        if reached {
            break;
        }
    }

    let status = match (&divergence, step == cfg.train.total_steps) {
        (Some(_), _) => RunStatus::Diverged,
        (None, true) => RunStatus::Completed,
        (None, false) => RunStatus::Stopped,
    };
    let last_checkpoint = last_checkpoint.or_else(|| {
        layout
            .list_checkpoints()
            .ok()
            .and_then(|c| c.last().map(|(s, _)| *s))
    });
    let summary = TrainSummary {
        status,
        last_step: step,
        tokens_seen: step * cfg.tokens_per_step(),
        last_checkpoint,
        final_train_loss: last_record.as_ref().map(|r| r.train_loss),
        final_copy_acc: last_record.as_ref().map(|r| r.copy_acc),
        unigram_entropy,
        divergence: divergence.clone(),
    };
    write_json(layout.summary(), serde_json::to_string_pretty(&summary)?)?;
    if let Some(reason) = divergence {
        return Err(Error::Divergence { step: step + 1, reason });
    }
    Ok(summary)
}

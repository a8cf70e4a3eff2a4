use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::{bail, Context, Result};
use copylab::analysis::{
    detect_grokking, eval_copy_accuracy, induction_score_table, write_head_csv, EpOptions, GrokParams,
    HeadScoreTable,
};
use copylab::data::{gen_copy_eval, gen_probe, read_jsonl, write_jsonl, CopyEvalSpec};
use copylab::numeric::Rng;
use copylab::planted::{planted_induction_model, PLANTED_VOCAB};
use copylab::report::{report_run, RunReport};
use copylab::sweep::{finish_sweep, prepare_sweep_dir, run_sweep, CellOutcome, SweepSpec};
use copylab::train::{load_checkpoint, read_metrics, train_run, Manifest, RunConfig, RunLayout, TrainOptions};
use serde::Serialize;

use crate::{AnalyzeHeadsArgs, DetectGrokArgs, EvalCopyArgs, GenDataArgs, ReportArgs, SweepArgs, TrainArgs};

/// Tags an error with the stage that produced it.
fn stage<T, E>(name: &str, r: Result<T, E>) -> Result<T>
where
    E: Into<anyhow::Error>,
{
    r.map_err(Into::into).with_context(|| format!("{name} stage failed"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct DataManifest<'a> {
    spec: &'a CopyEvalSpec,
    seed: u64,
    crate_version: &'a str,
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = stage("load-config", || -> Result<CopyEvalSpec> {
        Ok(match (&a.config, a.preset.as_str()) {
            (Some(p), _) => RunConfig::load(p)?.copy_eval,
            (None, "paper") => CopyEvalSpec::paper(),
            (None, "desk") => CopyEvalSpec::desk(),
            (None, other) => bail!("unknown preset {other:?}; use paper or desk"),
        })
    }())?;
    if let Some(n) = a.n_samples {
        spec.n_samples = n;
    }
    if let Some(v) = a.vocab_size {
        spec.vocab_size = v;
    }
    if a.out.exists() && !a.force {
        bail!("output stage failed: {} exists; pass --force to overwrite", a.out.display());
    }
    let samples = stage("generate", gen_copy_eval(&spec, &mut Rng::new(a.seed)))?;
    stage("output", write_jsonl(&a.out, &samples))?;
    let manifest = DataManifest {
        spec: &spec,
        seed: a.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let mpath = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    stage("output", write_file(&mpath, &serde_json::to_string_pretty(&manifest)?))?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let base = stage("load-config", || -> Result<RunConfig> {
        Ok(match (&a.config, &a.manifest) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(m)) => Manifest::load(m)?.config,
            (None, None) => RunConfig::desk(),
        })
    }())?;
    let cfg = stage("override", crate::overrides::apply(base, &a.flags))?;
    if a.dry_run {
        print!("{}", stage("override", cfg.to_toml_string())?);
        return Ok(());
    }
    let opts = TrainOptions {
        force: a.force,
        resume: a.resume.clone(),
        stop_at: a.stop_at,
        stop_when_acc: a.stop_when_acc,
        verbose: !a.quiet,
    };
    let summary = stage("train", train_run(&cfg, &opts))?;
    if !a.quiet {
        println!(
            "{:?} at step {} ({} tokens); copy_acc {}; outputs in {}",
            summary.status,
            summary.last_step,
            summary.tokens_seen,
            summary.final_copy_acc.map_or("n/a".into(), |v| format!("{v:.3}")),
            cfg.out_dir.display()
        );
    }
    Ok(())
}

pub fn eval_copy(a: EvalCopyArgs) -> Result<()> {
    let ck = stage("load-checkpoint", load_checkpoint(&a.checkpoint))?;
    let bench = stage("load-bench", read_jsonl(&a.bench))?;
    let acc = stage("evaluate", eval_copy_accuracy(&ck.weights, &bench))?;
    let mut csv = String::from("query_index,accuracy\n");
    println!("query_index  accuracy");
    for q in &acc.by_query {
        println!("{:>11}  {:.4}", q.query_index, q.accuracy);
        let _ = writeln!(csv, "{},{}", q.query_index, q.accuracy);
    }
    println!("{:>11}  {:.4}  ({} samples, step {})", "overall", acc.overall, acc.n_samples, ck.header.step);
    let _ = writeln!(csv, "overall,{}", acc.overall);
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.copy.csv", a.checkpoint.display())));
    stage("output", write_file(&out, &csv))
}

pub fn analyze_heads(a: AnalyzeHeadsArgs) -> Result<()> {
    let opts = EpOptions {
        fold_norms: a.fold_norms,
    };
    let mut tables: Vec<HeadScoreTable> = Vec::new();
    let out;
    if a.planted {
        let w = stage("build-model", planted_induction_model())?;
        let half = a.half.unwrap_or(100);
        let mut rng = Rng::new(0);
        let probes = stage(
            "probes",
            (0..a.n_probes.unwrap_or(16))
                .map(|_| gen_probe(half, PLANTED_VOCAB, &mut rng))
                .collect::<copylab::Result<Vec<_>>>(),
        )?;
        tables.push(stage("score", induction_score_table(&w, &probes, 0, opts))?);
        out = a.out.unwrap_or_else(|| PathBuf::from("planted_heads.csv"));
    } else {
        let files: Vec<PathBuf> = match &a.run {
            Some(dir) => stage("list-checkpoints", RunLayout::new(dir).list_checkpoints())?
                .into_iter()
                .map(|(_, p)| p)
                .collect(),
            None => a.checkpoint.clone(),
        };
        if files.is_empty() {
            bail!("list-checkpoints stage failed: no checkpoints given or found");
        }
        for f in &files {
            let ck = stage("load-checkpoint", load_checkpoint(f))?;
            let mut cfg = ck.header.run.clone();
            if let Some(n) = a.n_probes {
                cfg.probes.n_probes = n;
            }
            if a.half.is_some() {
                cfg.probes.half = a.half;
            }
            let probes = stage("probes", cfg.probes_at(ck.header.step))?;
            let w = ck.weights.cast::<f64>();
            tables.push(stage("score", induction_score_table(&w, &probes, ck.header.step, opts))?);
        }
        out = match (a.out, &a.run) {
            (Some(p), _) => p,
            (None, Some(dir)) => dir.join("heads_analysis.csv"),
            (None, None) => PathBuf::from("heads_analysis.csv"),
        };
    }
    println!("{:>8} {:>5} {:>4} {:>8} {:>8} {:>8} {:>8}", "step", "layer", "head", "a_bar", "ep", "i", "prev");
    for t in &tables {
        for h in &t.heads {
            println!(
                "{:>8} {:>5} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                t.step, h.layer, h.head, h.a_bar, h.ep, h.induction, h.prev_token
            );
        }
    }
    stage("output", write_head_csv(&out, &tables))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn detect_grok(a: DetectGrokArgs) -> Result<()> {
    let records = stage("load-metrics", read_metrics(&a.metrics))?;
    let params = GrokParams {
        window: a.window,
        plateau_eps: a.plateau_eps,
        acc_low: a.acc_low,
        acc_high: a.acc_high,
    };
    let report = stage("detect", detect_grokking(&records, params))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let show = |v: Option<u64>| v.map_or("none".to_string(), |s| s.to_string());
    let tokens_at = |step: Option<u64>| {
        step.and_then(|s| records.iter().find(|r| r.step == s))
            .map_or("none".to_string(), |r| r.tokens_seen.to_string())
    };
    println!("plateau_step     {} (tokens {})", show(report.plateau_step), tokens_at(report.plateau_step));
    println!("surge_low_step   {} (tokens {})", show(report.surge_low_step), tokens_at(report.surge_low_step));
    println!("surge_high_step  {} (tokens {})", show(report.surge_high_step), tokens_at(report.surge_high_step));
    println!("grok_gap         {}", show(report.grok_gap));
    println!("grokked          {}", report.grokked);
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let spec = stage("load-config", SweepSpec::load(&a.spec))?;
    let base = stage("load-config", RunConfig::load(&spec.base))?;
    let opts = TrainOptions {
        force: false,
        resume: None,
        stop_at: None,
        stop_when_acc: a.stop_when_acc,
        verbose: !a.quiet && a.jobs <= 1,
    };
    let summary = if a.jobs <= 1 {
        stage("sweep", run_sweep(&spec, &base, &TrainOptions { force: a.force, ..opts }))?
    } else {
        let cells = stage("sweep", spec.cells(&base))?;
        stage("sweep", prepare_sweep_dir(&spec, a.force))?;
        let outcomes = stage("sweep", run_parallel(&spec, &cells, a.jobs, a.stop_when_acc))?;
        stage("sweep", finish_sweep(&spec, outcomes))?
    };
    for c in &summary.cells {
        let status = if c.failed { "FAILED" } else { "ok" };
        println!("{}={} seed={} {status} {}", spec.axis.name(), c.value, c.seed, c.error.as_deref().unwrap_or(""));
    }
    println!("combined table: {}", spec.out_dir.join("sweep.csv").display());
    if summary.n_failed() == summary.cells.len() {
        bail!("sweep stage failed: every cell failed");
    }
    Ok(())
}

/// Runs each cell as a `copylab train` child process, at most `jobs` at once.
fn run_parallel(
    spec: &SweepSpec,
    cells: &[copylab::sweep::SweepCell],
    jobs: usize,
    stop_when_acc: Option<f64>,
) -> Result<Vec<CellOutcome>> {
    let exe = std::env::current_exe().context("locating the copylab executable")?;
    let cfg_dir = spec.out_dir.join("cells");
    std::fs::create_dir_all(&cfg_dir).with_context(|| format!("creating {}", cfg_dir.display()))?;
    let mut outcomes: Vec<Option<CellOutcome>> = vec![None; cells.len()];
    let mut running: Vec<(usize, Child)> = Vec::new();
    let mut next = 0;
    while next < cells.len() || !running.is_empty() {
        while next < cells.len() && running.len() < jobs {
            let cell = &cells[next];
            let path = cfg_dir.join(format!("{next:03}.toml"));
            write_file(&path, &cell.config.to_toml_string()?)?;
            let mut cmd = Command::new(&exe);
            cmd.arg("train").arg("--config").arg(&path).arg("--quiet");
            if let Some(t) = stop_when_acc {
                cmd.arg("--stop-when-acc").arg(t.to_string());
            }
            let child = cmd
                .stdout(Stdio::null())
                .stderr(Stdio::piped())
                .spawn()
                .context("spawning a sweep cell")?;
            running.push((next, child));
            next += 1;
        }
        // Wait on the oldest child; cells are similar in length.
        let (idx, child) = running.remove(0);
        let out = child.wait_with_output().context("waiting for a sweep cell")?;
        let cell = &cells[idx];
        let err = String::from_utf8_lossy(&out.stderr).trim().to_string();
        outcomes[idx] = Some(CellOutcome {
            value: cell.value.label(),
            seed: cell.seed,
            dir: cell.config.out_dir.clone(),
            failed: !out.status.success(),
            error: (!out.status.success()).then_some(err),
        });
    }
    Ok(outcomes.into_iter().map(|o| o.expect("every cell ran")).collect())
}

fn print_report(label: &str, r: &RunReport) {
    let show = |v: Option<u64>| v.map_or("-".to_string(), |s| s.to_string());
    let g = r.grok.as_ref();
    println!(
        "{label}: step {} acc {:.3} loss {:.4} | plateau {} surge {} gap {} | pre-surge acc {} | max I by layer [{}] | prev-token>0.5 at {} induction>0.5 at {}",
        r.final_step,
        r.final_copy_acc,
        r.final_train_loss,
        show(g.and_then(|g| g.plateau_step)),
        show(g.and_then(|g| g.surge_high_step)),
        show(g.and_then(|g| g.grok_gap)),
        r.pre_surge_acc.map_or("-".into(), |v| format!("{v:.3}")),
        r.final_max_induction.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
        show(r.first_prev_token_step),
        show(r.first_induction_step),
    );
}

pub fn report(a: ReportArgs) -> Result<()> {
    let sweep_summary = a.dir.join("sweep_summary.json");
    let params = GrokParams::default();
    if sweep_summary.exists() {
        let text = std::fs::read_to_string(&sweep_summary).context("reading sweep_summary.json")?;
        let summary: copylab::sweep::SweepSummary = stage("load-sweep", serde_json::from_str(&text))?;
        let mut reports = Vec::new();
        for c in &summary.cells {
            let label = format!("{}={} seed={}", summary.axis.name(), c.value, c.seed);
            match report_run(&c.dir, params) {
                Ok(r) => {
                    print_report(&label, &r);
                    reports.push(serde_json::json!({"value": c.value, "seed": c.seed, "failed": c.failed, "report": r}));
                }
                Err(e) => {
                    println!("{label}: no report ({e})");
                    reports.push(serde_json::json!({"value": c.value, "seed": c.seed, "failed": true}));
                }
            }
        }
        let out = a.dir.join("report.json");
        stage("output", write_file(&out, &serde_json::to_string_pretty(&reports)?))?;
    } else {
        let r = stage("report", report_run(&a.dir, params))?;
        print_report(&a.dir.display().to_string(), &r);
        let out = a.dir.join("report.json");
        stage("output", write_file(&out, &serde_json::to_string_pretty(&r)?))?;
    }
    Ok(())
}

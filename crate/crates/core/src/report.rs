//! Per-run summaries computed from the files a run leaves behind.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{detect_grokking, GrokParams, GrokReport, HeadScoreTable};
use crate::error::{Error, Result};
use crate::train::{read_head_tables, read_metrics, MetricsRecord, RunLayout};

/// Score above which a head counts as formed, for both head kinds.
pub const HEAD_FORMED: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub final_step: u64,
    pub final_tokens_seen: u64,
    pub final_train_loss: f64,
    pub final_copy_acc: f64,
    /// Absent when the series is too short for the plateau window.
    pub grok: Option<GrokReport>,
    /// Highest accuracy recorded at or before the plateau step.
    pub pre_surge_acc: Option<f64>,
    /// First recorded step with accuracy ≥ 0.5, and its token count.
    pub steps_to_half: Option<u64>,
    pub tokens_to_half: Option<u64>,
    /// Largest induction score per layer in the last head table.
    pub final_max_induction: Vec<f64>,
    /// First logged step where a first-layer head's previous-token score
    /// exceeds [`HEAD_FORMED`].
    pub first_prev_token_step: Option<u64>,
    /// First logged step where a last-layer head's induction score exceeds
    /// [`HEAD_FORMED`].
    pub first_induction_step: Option<u64>,
}

pub fn summarize(metrics: &[MetricsRecord], heads: &[HeadScoreTable], params: GrokParams) -> Result<RunReport> {
    let last = metrics
        .last()
        .ok_or_else(|| Error::Input("no metrics records".into()))?;
    let grok = detect_grokking(metrics, params).ok();
    let pre_surge_acc = grok.as_ref().and_then(|g| g.plateau_step).map(|p| {
        metrics
            .iter()
            .filter(|r| r.step <= p)
            .map(|r| r.copy_acc)
            .fold(0.0, f64::max)
    });
    let half = metrics.iter().find(|r| r.copy_acc >= 0.5);
    let n_layers = heads
        .iter()
        .flat_map(|t| t.heads.iter().map(|h| h.layer + 1))
        .max()
        .unwrap_or(0);
    let final_max_induction = heads
        .last()
        .map(|t| (0..n_layers).map(|l| t.max_induction(l)).collect())
        .unwrap_or_default();
    let first_where = |pred: &dyn Fn(&HeadScoreTable) -> bool| heads.iter().find(|t| pred(t)).map(|t| t.step);
    let first_prev_token_step = first_where(&|t| t.heads.iter().any(|h| h.layer == 0 && h.prev_token > HEAD_FORMED));
    let first_induction_step = first_where(&|t| {
        t.heads
            .iter()
            .any(|h| h.layer + 1 == n_layers && h.induction > HEAD_FORMED)
    });
    Ok(RunReport {
        final_step: last.step,
        final_tokens_seen: last.tokens_seen,
        final_train_loss: last.train_loss,
        final_copy_acc: last.copy_acc,
        grok,
        pre_surge_acc,
        steps_to_half: half.map(|r| r.step),
        tokens_to_half: half.map(|r| r.tokens_seen),
        final_max_induction,
        first_prev_token_step,
        first_induction_step,
    })
}

/// Reads `metrics.jsonl` and `heads.jsonl` (optional) from a run directory.
pub fn report_run(dir: &Path, params: GrokParams) -> Result<RunReport> {
    let layout = RunLayout::new(dir);
    let metrics = read_metrics(&layout.metrics())?;
    let heads = match read_head_tables(&layout.heads_jsonl()) {
        Ok(h) => h,
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    summarize(&metrics, &heads, params)
}

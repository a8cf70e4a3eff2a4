//! Detecting delayed copy-accuracy surges in a metrics series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::MetricsRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrokParams {
    /// Trailing window, in records, for the plateau test.
    pub window: usize,
    /// Relative loss decrease over the window below which loss is flat.
    pub plateau_eps: f64,
    pub acc_low: f64,
    pub acc_high: f64,
}

impl Default for GrokParams {
    fn default() -> Self {
        Self {
            window: 10,
            plateau_eps: 0.02,
            acc_low: 0.1,
            acc_high: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrokReport {
    /// Start of the first `window`-record span over which the loss falls by
    /// less than `plateau_eps` (relative). Reporting the start rather than the
    /// end keeps the step stable when the series is subsampled.
    pub plateau_step: Option<u64>,
    pub surge_low_step: Option<u64>,
    pub surge_high_step: Option<u64>,
    /// `surge_high_step − plateau_step` when the surge comes after the plateau.
    pub grok_gap: Option<u64>,
    pub grokked: bool,
    pub params: GrokParams,
}

impl GrokReport {
    /// `grok_gap` converted with a fixed tokens-per-step rate.
    pub fn gap_tokens(&self, tokens_per_step: u64) -> Option<u64> {
        self.grok_gap.map(|g| g * tokens_per_step)
    }
}

pub fn detect_grokking(metrics: &[MetricsRecord], params: GrokParams) -> Result<GrokReport> {
    if params.window == 0 {
        return Err(Error::Input("grok window must be positive".into()));
    }
    if metrics.len() < 2 * params.window {
        return Err(Error::Input(format!(
            "{} records are fewer than twice the window of {}",
            metrics.len(),
            params.window
        )));
    }
    let w = params.window;
    let plateau_step = (w..metrics.len())
        .find(|&k| {
            let before = metrics[k - w].train_loss;
            let now = metrics[k].train_loss;
            (before - now) / before.abs().max(f64::MIN_POSITIVE) < params.plateau_eps
        })
        .map(|k| metrics[k - w].step);
    let first_at = |thr: f64| metrics.iter().find(|r| r.copy_acc >= thr).map(|r| r.step);
    let surge_low_step = first_at(params.acc_low);
    let surge_high_step = first_at(params.acc_high);
    let (grokked, grok_gap) = match (plateau_step, surge_high_step) {
        (Some(p), Some(s)) if s > p => (true, Some(s - p)),
        _ => (false, None),
    };
    Ok(GrokReport {
        plateau_step,
        surge_low_step,
        surge_high_step,
        grok_gap,
        grokked,
        params,
    })
}

use anyhow::{anyhow, bail, Context, Result};
use copylab::train::RunConfig;

use crate::ConfigFlags;

/// Applies the named flags, then each `--set`, then validates.
pub fn apply(mut cfg: RunConfig, f: &ConfigFlags) -> Result<RunConfig> {
    macro_rules! set {
        ($flag:ident => $($field:tt)+) => {
            if let Some(v) = f.$flag.clone() {
                cfg.$($field)+ = v;
            }
        };
    }
    set!(seed => seed);
    set!(out_dir => out_dir);
    set!(checkpoint_every => checkpoint_every);
    set!(eval_every => eval_every);
    set!(n_layers => model.n_layers);
    set!(n_heads => model.n_heads);
    set!(d_model => model.d_model);
    set!(d_ff => model.d_ff);
    set!(attn_dropout => model.attn_dropout);
    set!(peak_lr => train.peak_lr);
    set!(weight_decay => train.weight_decay);
    set!(warmup_steps => train.warmup_steps);
    set!(clip_norm => train.clip_norm);
    set!(batch_size => train.batch_size);
    set!(total_steps => train.total_steps);
    if let Some(v) = f.vocab_size {
        cfg.model.vocab_size = v;
        cfg.corpus.vocab_size = v;
        cfg.copy_eval.vocab_size = v;
    }
    if let Some(t) = f.ctx_len {
        cfg.model.ctx_len = t;
        cfg.corpus.doc_len = t + 1;
    }
    for item in &f.set {
        cfg = set_path(cfg, item)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `a.b.c=value`, where value is TOML (bare words are taken as strings).
fn set_path(cfg: RunConfig, item: &str) -> Result<RunConfig> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects PATH=VALUE, got {item:?}"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut root = toml::Value::try_from(&cfg).context("serializing the config")?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = &mut root;
    for k in parents {
        node = node
            .get_mut(*k)
            .ok_or_else(|| anyhow!("--set {path}: no config section {k:?}"))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| anyhow!("--set {path}: parent is not a table"))?;
    table.insert(last.to_string(), value);
    match root.try_into::<RunConfig>() {
        Ok(c) => Ok(c),
        Err(e) => bail!("--set {path}: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_and_path_overrides() {
        let f = ConfigFlags {
            peak_lr: Some(2e-3),
            ctx_len: Some(128),
            set: vec!["probes.n_probes=3".into(), "corpus.branching=3".into()],
            ..Default::default()
        };
        let cfg = apply(RunConfig::desk(), &f).unwrap();
        assert_eq!(cfg.train.peak_lr, 2e-3);
        assert_eq!(cfg.corpus.doc_len, 129);
        assert_eq!(cfg.probes.n_probes, 3);
        assert_eq!(cfg.corpus.branching, 3);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let f = ConfigFlags {
            set: vec!["train.bogus=1".into()],
            ..Default::default()
        };
        assert!(apply(RunConfig::desk(), &f).is_err());
        let f = ConfigFlags {
            set: vec!["nosuch.x=1".into()],
            ..Default::default()
        };
        assert!(apply(RunConfig::desk(), &f).is_err());
    }
}

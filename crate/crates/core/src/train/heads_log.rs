//! Head-score tables logged during training (`heads.jsonl` plus CSV).

use std::io::{BufRead, Write};

use crate::analysis::{write_head_csv, HeadScoreTable};
use crate::error::{Error, Result};
use crate::train::run::RunLayout;

pub(crate) struct HeadLog {
    layout: RunLayout,
    tables: Vec<HeadScoreTable>,
}

impl HeadLog {
    pub(crate) fn create(layout: &RunLayout) -> Result<Self> {
        let log = Self {
            layout: layout.clone(),
            tables: Vec::new(),
        };
        log.flush()?;
        Ok(log)
    }

    /// Keeps the tables up to `step` from an earlier run.
    pub(crate) fn resume(layout: &RunLayout, step: u64) -> Result<Self> {
        let tables = match read_head_tables(&layout.heads_jsonl()) {
            Ok(t) => t.into_iter().filter(|t| t.step <= step).collect(),
            Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let log = Self {
            layout: layout.clone(),
            tables,
        };
        log.flush()?;
        Ok(log)
    }

    pub(crate) fn append(&mut self, t: &HeadScoreTable) -> Result<()> {
        let path = self.layout.heads_jsonl();
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(t)?).map_err(|e| Error::io(&path, e))?;
        self.tables.push(t.clone());
        write_head_csv(&self.layout.heads_csv(), &self.tables)
    }

    fn flush(&self) -> Result<()> {
        let path = self.layout.heads_jsonl();
        let mut text = String::new();
        for t in &self.tables {
            text.push_str(&serde_json::to_string(t)?);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        write_head_csv(&self.layout.heads_csv(), &self.tables)
    }
}

pub fn read_head_tables(path: &std::path::Path) -> Result<Vec<HeadScoreTable>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

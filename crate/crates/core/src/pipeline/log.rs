use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::checkpoint::Checkpoint;

/// Losses of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// global step, starting at 0
    pub step: u64,
    pub loss_total: f64,
    pub components: Vec<(&'static str, f64)>,
    pub lr: f64,
}

impl StepRecord {
    pub fn csv_header(components: &[&str]) -> String {
        let mut cols = vec!["epoch", "step", "loss_total"];
        cols.extend(components);
        cols.push("lr");
        cols.join(",")
    }

    pub fn csv_line(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            self.step.to_string(),
            self.loss_total.to_string(),
        ];
        cols.extend(self.components.iter().map(|(_, v)| v.to_string()));
        cols.push(self.lr.to_string());
        cols.join(",")
    }
}

/// Receives training progress.
pub trait Observer {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called after epoch `epochs_done` whenever a checkpoint is due.
    fn on_checkpoint(&mut self, _epochs_done: usize, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Keeps every record and the most recent checkpoint in memory.
#[derive(Debug, Default)]
pub struct Recorder {
    pub records: Vec<StepRecord>,
    pub last_checkpoint: Option<(usize, Checkpoint)>,
}

impl Observer for Recorder {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, epochs_done: usize, ckpt: &Checkpoint) -> Result<()> {
        self.last_checkpoint = Some((epochs_done, ckpt.clone()));
        Ok(())
    }
}

/// Appends records to a CSV log and overwrites one checkpoint file.
pub struct FileObserver {
    log: File,
    log_path: PathBuf,
    ckpt_path: PathBuf,
}

impl FileObserver {
    /// Opens `log_path` for appending, writing the header if the file is new
    /// or empty.
    pub fn new(log_path: &Path, ckpt_path: &Path, components: &[&str]) -> Result<Self> {
        let ctx = || format!("opening {}", log_path.display());
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|e| Error::io(ctx(), e))?;
        let empty = log.metadata().map_err(|e| Error::io(ctx(), e))?.len() == 0;
        if empty {
            writeln!(log, "{}", StepRecord::csv_header(components))
                .map_err(|e| Error::io(ctx(), e))?;
        }
        Ok(Self {
            log,
            log_path: log_path.to_path_buf(),
            ckpt_path: ckpt_path.to_path_buf(),
        })
    }
}

impl Observer for FileObserver {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.log, "{}", record.csv_line())
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io(format!("appending to {}", self.log_path.display()), e))
    }

    fn on_checkpoint(&mut self, _epochs_done: usize, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.ckpt_path)
    }
}

//! Result files: JSON-lines metrics, CSV time series, the evaluation
//! table, and the model-validation error report.
//!
//! Columns and units are documented in `docs/output-schema.md`. Numbers
//! are printed in Rust's shortest round-trip form, so a rerun that
//! computes identical values produces byte-identical files. Wall-clock
//! time is deliberately kept out of every file for the same reason.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micro_env::TrajectoryRow;

/// A buffered line-oriented text file that remembers its path for error
/// reporting.
struct TextSink {
    path: PathBuf,
    w: BufWriter<File>,
}

impl TextSink {
    fn create(path: PathBuf) -> Result<TextSink> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TextSink { path, w: BufWriter::new(f) })
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.w, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Per-step time series of one rollout: fuel rate, cell occupancy, and
/// (optionally) raw vehicle trajectories.
///
/// File names carry a caller-chosen suffix so several rollouts can share
/// a directory (`fuel.csv`, `fuel-seed3.csv`, ...).
pub struct SeriesWriter {
    fuel: TextSink,
    density: TextSink,
    traj: Option<TextSink>,
}

impl SeriesWriter {
    pub fn create(dir: &Path, suffix: &str, with_trajectories: bool) -> Result<SeriesWriter> {
        let mut fuel = TextSink::create(dir.join(format!("fuel{suffix}.csv")))?;
        fuel.line("step,rate")?;
        let mut density = TextSink::create(dir.join(format!("density{suffix}.csv")))?;
        density.line("step,cell,value")?;
        let traj = if with_trajectories {
            let mut t = TextSink::create(dir.join(format!("traj{suffix}.csv")))?;
            t.line("t,id,lane,x,v,is_platoon")?;
            Some(t)
        } else {
            None
        };
        Ok(SeriesWriter { fuel, density, traj })
    }

    /// Fuel burn rate (L/s) of the whole controlled road at one step.
    pub fn fuel_rate(&mut self, step: u64, rate: f64) -> Result<()> {
        self.fuel.line(&format!("{step},{rate}"))
    }

    /// Vehicle equivalents per cell at one step, one line per cell.
    pub fn density_rows(&mut self, step: u64, per_cell: &[f64]) -> Result<()> {
        let mut buf = String::new();
        for (cell, v) in per_cell.iter().enumerate() {
            writeln!(buf, "{step},{cell},{v}").expect("writing to a String cannot fail");
        }
        self.density.line(buf.trim_end())
    }

    /// One vehicle's position and speed at simulated time `t`.
    pub fn traj_row(&mut self, t: f64, row: &TrajectoryRow) -> Result<()> {
        let sink = self
            .traj
            .as_mut()
            .expect("trajectory logging requested on a writer created without it");
        let id = if row.is_platoon { "platoon".to_string() } else { row.id.to_string() };
        sink.line(&format!("{t},{id},{},{},{},{}", row.lane, row.x, row.v, row.is_platoon))
    }

    pub fn logs_trajectories(&self) -> bool {
        self.traj.is_some()
    }

    pub fn finish(self) -> Result<()> {
        self.fuel.finish()?;
        self.density.finish()?;
        if let Some(t) = self.traj {
            t.finish()?;
        }
        Ok(())
    }
}

/// Artifacts of one training run: `metrics.jsonl` plus the per-step
/// series, all rooted in one directory (which also receives the
/// checkpoints written by the trainer).
pub struct RunWriter {
    dir: PathBuf,
    metrics: TextSink,
    pub series: SeriesWriter,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<RunWriter> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = TextSink::create(dir.join("metrics.jsonl"))?;
        let series = SeriesWriter::create(dir, "", false)?;
        Ok(RunWriter { dir: dir.to_path_buf(), metrics, series })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append one episode record as a single JSON line.
    pub fn episode<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let json = serde_json::to_string(record)
            .map_err(|e| Error::State(format!("episode record not serializable: {e}")))?;
        self.metrics.line(&json)
    }

    pub fn finish(self) -> Result<()> {
        self.metrics.finish()?;
        self.series.finish()
    }
}

/// The per-seed evaluation table (`eval.csv`) plus one series writer per
/// evaluated seed.
pub struct EvalWriter {
    dir: PathBuf,
    table: TextSink,
}

impl EvalWriter {
    pub fn create(dir: &Path) -> Result<EvalWriter> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut table = TextSink::create(dir.join("eval.csv"))?;
        table.line("policy,seed,fuel_l,total_reward,steps,timed_out")?;
        Ok(EvalWriter { dir: dir.to_path_buf(), table })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed_row(
        &mut self,
        policy: &str,
        seed: u64,
        fuel_l: f64,
        total_reward: f64,
        steps: u64,
        timed_out: bool,
    ) -> Result<()> {
        self.table.line(&format!("{policy},{seed},{fuel_l},{total_reward},{steps},{timed_out}"))
    }

    /// Summary row: means of the numeric columns, count of timeouts.
    pub fn mean_row(
        &mut self,
        policy: &str,
        mean_fuel_l: f64,
        mean_reward: f64,
        mean_steps: f64,
        timeouts: usize,
    ) -> Result<()> {
        self.table
            .line(&format!("{policy},mean,{mean_fuel_l},{mean_reward},{mean_steps},{timeouts}"))
    }

    /// Per-step series for one evaluated seed (`fuel-seed{N}.csv`, ...).
    pub fn series(&self, seed: u64, with_trajectories: bool) -> Result<SeriesWriter> {
        SeriesWriter::create(&self.dir, &format!("-seed{seed}"), with_trajectories)
    }

    pub fn finish(self) -> Result<()> {
        self.table.finish()
    }
}

/// Mean absolute error together with its size relative to the observed
/// signal (mean absolute error ÷ mean observed magnitude, in percent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorAverages {
    pub absolute: f64,
    pub relative_pct: f64,
}

/// Run-average prediction errors of one parameter variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    /// Density error in vehicle equivalents per cell.
    pub density: ErrorAverages,
    /// Speed error in m/s.
    pub speed: ErrorAverages,
}

/// Full model-validation report: adapted filters vs. the frozen initial
/// parameters over the same driven rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateSummary {
    pub steps: u64,
    pub adapted: VariantSummary,
    pub frozen: VariantSummary,
}

/// Plain-text table of a validation summary: one Density row and one
/// Speed row per variant, absolute and relative columns.
pub fn render_validate_table(s: &ValidateSummary) -> String {
    let mut out = String::new();
    writeln!(out, "{:<8}  {:<8}  {:>14}  {:>10}", "variant", "quantity", "absolute", "relative")
        .unwrap();
    for (variant, v) in [("adapted", &s.adapted), ("frozen", &s.frozen)] {
        writeln!(
            out,
            "{:<8}  {:<8}  {:>14}  {:>9.2}%",
            variant,
            "Density",
            format!("{:.4} veh/cell", v.density.absolute),
            v.density.relative_pct
        )
        .unwrap();
        writeln!(
            out,
            "{:<8}  {:<8}  {:>14}  {:>9.2}%",
            variant,
            "Speed",
            format!("{:.4} m/s", v.speed.absolute),
            v.speed.relative_pct
        )
        .unwrap();
    }
    out
}

/// Per-step validation errors (`errors.csv`) plus the averages report
/// (`validate_summary.json`).
pub struct ValidateWriter {
    dir: PathBuf,
    errors: TextSink,
}

impl ValidateWriter {
    pub fn create(dir: &Path) -> Result<ValidateWriter> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut errors = TextSink::create(dir.join("errors.csv"))?;
        errors.line("step,density_err,speed_err,variant")?;
        Ok(ValidateWriter { dir: dir.to_path_buf(), errors })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn error_row(
        &mut self,
        step: u64,
        density_err: f64,
        speed_err: f64,
        variant: &str,
    ) -> Result<()> {
        self.errors.line(&format!("{step},{density_err},{speed_err},{variant}"))
    }

    pub fn summary(&self, s: &ValidateSummary) -> Result<()> {
        let path = self.dir.join("validate_summary.json");
        let json = serde_json::to_string_pretty(s)
            .map_err(|e| Error::State(format!("summary not serializable: {e}")))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn finish(self) -> Result<()> {
        self.errors.finish()
    }
}

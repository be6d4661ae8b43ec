//! Run directory layout: config echo, CSV time series, record file and a
//! JSON summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use cmptraj::ensemble::EnsembleStats;
use cmptraj::master::MasterResult;
use cmptraj::trajectory::TrajectoryResult;

use crate::config::ScenarioConfig;

pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path)
            .with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_config_echo(&self, config: &ScenarioConfig) -> anyhow::Result<()> {
        fs::write(self.path.join("config_echo.toml"), config.to_toml()?)
            .context("writing config echo")
    }

    pub fn write_summary<T: Serialize>(&self, summary: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(summary).context("serializing summary")?;
        fs::write(self.path.join("summary.json"), text).context("writing summary.json")
    }

    fn writer(&self, name: &str) -> anyhow::Result<std::io::BufWriter<fs::File>> {
        let file = fs::File::create(self.path.join(name))
            .with_context(|| format!("creating {name}"))?;
        Ok(std::io::BufWriter::new(file))
    }

    pub fn write_master_csv(
        &self,
        result: &MasterResult,
        observable_names: &[String],
    ) -> anyhow::Result<()> {
        let mut w = self.writer("master.csv")?;
        write!(w, "t")?;
        for name in observable_names {
            write!(w, ",{name}")?;
        }
        for level in 0..result.aux_populations.len() {
            write!(w, ",aux_population_{level}")?;
        }
        writeln!(w, ",trace_drift,min_eigenvalue")?;
        for (s, t) in result.times.iter().enumerate() {
            write!(w, "{t}")?;
            for row in &result.observables {
                write!(w, ",{}", row[s])?;
            }
            for row in &result.aux_populations {
                write!(w, ",{}", row[s])?;
            }
            writeln!(w, ",{},{}", result.trace_drift[s], result.min_eigenvalue[s])?;
        }
        Ok(())
    }

    pub fn write_trajectory_csv(
        &self,
        result: &TrajectoryResult,
        observable_names: &[String],
    ) -> anyhow::Result<()> {
        let mut w = self.writer("trajectory.csv")?;
        write!(w, "t")?;
        for name in observable_names {
            write!(w, ",{name}")?;
        }
        writeln!(w, ",trace_drift")?;
        for (s, t) in result.times.iter().enumerate() {
            write!(w, "{t}")?;
            for row in &result.observables {
                write!(w, ",{}", row[s])?;
            }
            writeln!(w, ",{}", result.trace_drift[s])?;
        }
        Ok(())
    }

    pub fn write_record(&self, result: &TrajectoryResult) -> anyhow::Result<()> {
        let mut w = self.writer("record.txt")?;
        result.record.write_to(&mut w).context("writing record.txt")
    }

    pub fn write_ensemble_csv(&self, stats: &EnsembleStats) -> anyhow::Result<()> {
        let mut w = self.writer("ensemble.csv")?;
        stats.write_csv(&mut w).context("writing ensemble.csv")
    }
}

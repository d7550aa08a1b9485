//! Output directory helpers: `run.meta`, CSV tables and solver artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use btd::hirls::{PruneMode, Regularization, SolverConfig, UpdateMode, Weighting};
use btd::io::{format_rank_report, rank_report_json, write_factors, write_trace_csv};
use btd::{BtdError, BtdFactors, RankEstimate, SolverTrace};

pub fn prepare_dir(out: Option<&PathBuf>) -> Result<PathBuf> {
    let dir = out.ok_or_else(|| BtdError::Usage("--out DIR is required".into()))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.clone())
}

/// The resolved settings of a run as `key = value` lines.
pub struct Meta(Vec<(String, String)>);

impl Meta {
    pub fn new(command: &str) -> Self {
        Meta(vec![("command".into(), command.into()), ("version".into(), env!("CARGO_PKG_VERSION").into())])
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn solver(&mut self, cfg: &SolverConfig, restarts: usize) -> &mut Self {
        match cfg.regularization {
            Regularization::Lambda(l) => self.set("lambda", l),
            Regularization::NoiseLevel(s) => self.set("sigma_hat", s),
        };
        self.set("eta", cfg.eta)
            .set("max_iters", cfg.max_iters)
            .set("rel_tol", cfg.rel_tol)
            .set("r_ini", cfg.r_ini)
            .set("l_ini", cfg.l_ini)
            .set("update_mode", update_mode_name(cfg.update_mode))
            .set("prune", prune_name(cfg.prune))
            .set("block_tol", cfg.block_tol)
            .set("col_tol", cfg.col_tol)
            .set("weighting", weighting_name(cfg.weighting))
            .set("seed", cfg.seed)
            .set("restarts", restarts)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text: String = self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(dir.join("run.meta"), text)?;
        Ok(())
    }
}

pub fn update_mode_name(m: UpdateMode) -> &'static str {
    match m {
        UpdateMode::GaussSeidel => "gauss-seidel",
        UpdateMode::Simultaneous => "simultaneous",
    }
}

pub fn prune_name(p: PruneMode) -> &'static str {
    match p {
        PruneMode::Off => "off",
        PruneMode::Blocks => "blocks",
        PruneMode::BlocksAndColumns => "blocks+columns",
    }
}

pub fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Product => "product",
        Weighting::Majorizer => "majorizer",
    }
}

pub fn join<T: ToString>(values: &[T], sep: &str) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Factors, rank report (text and JSON) and trace of one solver run.
pub fn write_solution(dir: &Path, factors: &BtdFactors, ranks: &RankEstimate, trace: &SolverTrace) -> Result<()> {
    write_factors(&dir.join("factors"), factors)?;
    fs::write(dir.join("ranks.txt"), format_rank_report(ranks))?;
    fs::write(dir.join("ranks.json"), rank_report_json(ranks))?;
    write_trace_csv(&dir.join("trace.csv"), trace)?;
    Ok(())
}

//! Sweeps over dataset size and host/guest dimension ratio, each point a
//! live job plus its replay.

use super::replay::{replay, OverheadReport, ReplayError, ReplayOutcome};
use crate::kms::Kms;
use crate::parties::dataset::named_dims;
use crate::parties::{run_job, DatasetSpec, JobConfig, JobError, JobOutcome, NoHooks, RunOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("unknown dataset size {0}")]
    UnknownSize(String),
    #[error("job {0} produced no overhead report")]
    NoReport(String),
}

/// Seed-averaged figures at one sweep position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub x: f64,
    pub runs: Vec<OverheadReport>,
}

impl SweepPoint {
    fn mean(&self, f: impl Fn(&OverheadReport) -> f64) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn comm_saved_ms(&self) -> f64 {
        self.mean(|r| r.comm_saved_ns as f64 / 1e6)
    }

    pub fn wait_saved_ms(&self) -> f64 {
        self.mean(|r| r.wait_saved_ns as f64 / 1e6)
    }

    pub fn reduction_rate(&self) -> f64 {
        self.mean(|r| r.reduction_rate)
    }

    pub fn calc_reduction_rate(&self) -> f64 {
        self.mean(|r| r.calc_reduction_rate)
    }

    pub fn bound_ratio(&self) -> f64 {
        self.mean(OverheadReport::bound_ratio)
    }
}

/// Runs `cfg` honestly under `dir`, then replays it.
pub fn run_and_replay(cfg: &JobConfig, dir: &Path) -> Result<(JobOutcome, ReplayOutcome), SweepError> {
    let kms = Kms::shared();
    let opts = RunOptions {
        job_dir: dir.to_path_buf(),
        kms: kms.clone(),
        hooks: Arc::new(NoHooks),
        schema: super::fsmgen::job_schema(cfg),
        monitor: None,
    };
    let out = run_job(cfg, opts)?;
    let rep = replay(&out.ledger_path, dir, &kms)?;
    Ok((out, rep))
}

fn point(base: &JobConfig, label: String, x: f64, spec: impl Fn(u64) -> DatasetSpec, seeds: &[u64], dir: &Path) -> Result<SweepPoint, SweepError> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone().with_seed(seed);
        cfg.job_id = format!("{}-{label}-{seed}", base.job_id);
        cfg.dataset = spec(seed);
        let jd = dir.join(&cfg.job_id);
        let (_, rep) = run_and_replay(&cfg, &jd)?;
        let report = rep.report.ok_or_else(|| SweepError::NoReport(cfg.job_id.clone()))?;
        tracing::info!(job = %cfg.job_id, t_job = report.t_job_ns, t_rep = report.t_rep_ns, "sweep point");
        runs.push(report);
        std::fs::remove_dir_all(&jd).ok();
    }
    Ok(SweepPoint { label, x, runs })
}

/// One point per named size, x = row count.
pub fn size_sweep(base: &JobConfig, sizes: &[&str], seeds: &[u64], dir: &Path) -> Result<Vec<SweepPoint>, SweepError> {
    sizes
        .iter()
        .map(|&name| {
            let (rows, _, _) = named_dims(name).ok_or_else(|| SweepError::UnknownSize(name.into()))?;
            point(base, name.to_string(), rows as f64, |seed| DatasetSpec::Named { name: name.into(), seed }, seeds, dir)
        })
        .collect()
}

/// Keeps the rows and guest width of `size`, scales the host width to
/// `ratio × guest_dim`.
pub fn rhg_sweep(base: &JobConfig, size: &str, ratios: &[usize], seeds: &[u64], dir: &Path) -> Result<Vec<SweepPoint>, SweepError> {
    let (rows, guest_dim, _) = named_dims(size).ok_or_else(|| SweepError::UnknownSize(size.into()))?;
    ratios
        .iter()
        .map(|&r| {
            let spec = |seed| DatasetSpec::Explicit { rows, guest_dim, host_dim: guest_dim * r, seed };
            point(base, format!("rhg{r}"), r as f64, spec, seeds, dir)
        })
        .collect()
}

/// Strictly increasing in order.
pub fn strictly_increasing(ys: &[f64]) -> bool {
    ys.windows(2).all(|w| w[0] < w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parties::{IntersectionKind, TrainKind};

    #[test]
    fn monotone_check() {
        assert!(strictly_increasing(&[1.0, 2.0, 3.5]));
        assert!(!strictly_increasing(&[1.0, 1.0, 3.5]));
        assert!(strictly_increasing(&[4.0]));
    }

    #[test]
    fn tiny_ratio_sweep_runs() {
        let mut c = JobConfig::example("sw", IntersectionKind::Raw, TrainKind::HeteroLr);
        c.max_iter = 1;
        c.modulus_bits = 256;
        let dir = tempfile::tempdir().unwrap();
        let mut pts = Vec::new();
        for r in [1usize, 2] {
            let spec = |seed| DatasetSpec::Explicit { rows: 40, guest_dim: 2, host_dim: 2 * r, seed };
            pts.push(point(&c, format!("r{r}"), r as f64, spec, &[1, 2], dir.path()).unwrap());
        }
        assert_eq!(pts[0].runs.len(), 2);
        assert!(pts.iter().all(|p| p.comm_saved_ms() > 0.0 && p.bound_ratio() > 0.0));
        assert_eq!(pts[1].runs[0].host_dim, 4);
    }
}

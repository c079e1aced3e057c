//! Evaluation reports: JSON on disk plus a one-line summary.
//!
//! Floats are written in shortest round-trip form, so a report read back
//! compares equal to the one written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protoshot_core::stats;
use protoshot_core::Diagnostics;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report has no completed tasks")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedTask {
    pub task: usize,
    pub error: String,
}

/// Seconds per pipeline phase, summed over episodes, plus elapsed run time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub total_secs: f64,
    pub phase_secs: BTreeMap<String, f64>,
}

/// Trained prototypes against class-mean prototypes on the same tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyDelta {
    pub trained_accuracy: f64,
    pub trained_ci95: f64,
    pub mean_accuracy: f64,
    pub mean_ci95: f64,
    /// `trained - mean`, in percentage points.
    pub delta_pp: f64,
}

impl StrategyDelta {
    pub fn new(trained: &[f64], mean: &[f64]) -> Result<Self, ReportError> {
        let t = stats::summarize(trained).map_err(|_| ReportError::Empty)?;
        let m = stats::summarize(mean).map_err(|_| ReportError::Empty)?;
        Ok(Self {
            trained_accuracy: t.mean,
            trained_ci95: t.ci95,
            mean_accuracy: m.mean,
            mean_ci95: m.ci95,
            delta_pp: 100.0 * (t.mean - m.mean),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    /// Accuracy of each completed task, in task order.
    pub per_task_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub aborted: Vec<AbortedTask>,
    pub diagnostics: Diagnostics,
    pub strategy_delta: Option<StrategyDelta>,
    pub wall_time: WallTime,
}

impl EvalReport {
    pub fn new(
        config: RunConfig,
        per_task_accuracy: Vec<f64>,
        aborted: Vec<AbortedTask>,
        diagnostics: Diagnostics,
    ) -> Result<Self, ReportError> {
        let s = stats::summarize(&per_task_accuracy).map_err(|_| ReportError::Empty)?;
        Ok(Self {
            config,
            per_task_accuracy,
            mean_accuracy: s.mean,
            ci95: s.ci95,
            aborted,
            diagnostics,
            strategy_delta: None,
            wall_time: WallTime::default(),
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.per_task_accuracy.len()
    }

    /// `"73.94% ± 0.63% (1000 tasks)"`.
    pub fn summary_line(&self) -> String {
        format_summary(self.mean_accuracy, self.ci95, self.n_tasks())
    }

    /// The report with timing zeroed, for comparing runs.
    pub fn without_wall_time(&self) -> Self {
        Self {
            wall_time: WallTime::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        if self.per_task_accuracy.is_empty() {
            return Err(ReportError::Empty);
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn format_summary(mean: f64, ci95: f64, n_tasks: usize) -> String {
    format!(
        "{:.2}% ± {:.2}% ({} tasks)",
        100.0 * mean,
        100.0 * ci95,
        n_tasks
    )
}

/// Writes `report` to `path` and returns its summary line.
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<String, ReportError> {
    let mut json = report.to_json()?;
    json.push('\n');
    fs::write(path, json).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(report.summary_line())
}

pub fn read_report(path: &Path) -> Result<EvalReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EvalReport::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_format() {
        assert_eq!(
            format_summary(0.7394, 0.0063, 1000),
            "73.94% ± 0.63% (1000 tasks)"
        );
        assert_eq!(format_summary(1.0, 0.0, 200), "100.00% ± 0.00% (200 tasks)");
    }

    #[test]
    fn three_task_statistics() {
        let r = EvalReport::new(
            RunConfig::default(),
            vec![0.8, 1.0, 0.9],
            vec![],
            Diagnostics::default(),
        )
        .unwrap();
        assert!((r.mean_accuracy - 0.9).abs() < 1e-12);
        let oracle = 1.96 * (0.02f64 / 3.0).sqrt() / 3f64.sqrt();
        assert!((r.ci95 - oracle).abs() < 1e-12);
    }

    #[test]
    fn empty_report_refused() {
        assert!(matches!(
            EvalReport::new(RunConfig::default(), vec![], vec![], Diagnostics::default()),
            Err(ReportError::Empty)
        ));
        let mut r = EvalReport::new(
            RunConfig::default(),
            vec![1.0],
            vec![],
            Diagnostics::default(),
        )
        .unwrap();
        r.per_task_accuracy.clear();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        assert!(matches!(emit_report(&r, &path), Err(ReportError::Empty)));
        assert!(!path.exists());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut r = EvalReport::new(
            RunConfig::default(),
            vec![0.1 + 0.2, 1.0 / 3.0, 0.7394, 1e-17],
            vec![AbortedTask {
                task: 4,
                error: "diverged".into(),
            }],
            Diagnostics {
                zero_queries: 2,
                ..Diagnostics::default()
            },
        )
        .unwrap();
        r.strategy_delta = Some(StrategyDelta::new(&[0.5, 0.6], &[0.55, 0.4]).unwrap());
        r.wall_time.phase_secs.insert("graph".into(), 0.123456789);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let summary = emit_report(&r, &path).unwrap();
        assert_eq!(summary, r.summary_line());
        assert_eq!(read_report(&path).unwrap(), r);
    }

    #[test]
    fn delta_is_signed_percentage_points() {
        let d = StrategyDelta::new(&[0.50, 0.52], &[0.53, 0.53]).unwrap();
        assert!((d.delta_pp - -2.0).abs() < 1e-9);
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::{io_err, PipelineError};

/// One evaluated point of a sweep (or the single point of a plain run).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub sweep_var: String,
    pub value: String,
    pub correct: usize,
    pub total: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Only filled when the config asks for timing.
    pub wall_ms: Option<u128>,
    /// PCA dimension actually used.
    pub pca_k: usize,
    /// Per-class (correct, total) on the test set.
    pub per_class: BTreeMap<String, (usize, usize)>,
}

impl Record {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: RunConfig,
    pub records: Vec<Record>,
}

pub const CSV_HEADER: &str = "sweep_var,value,accuracy,correct,total,train_size,test_size,wall_ms";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let wall = r.wall_ms.map(|w| w.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{:.4},{},{},{},{},{}",
                r.sweep_var,
                r.value,
                r.accuracy(),
                r.correct,
                r.total,
                r.train_size,
                r.test_size,
                wall
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config: &'a RunConfig,
            records: &'a [Record],
        }
        serde_json::to_string_pretty(&Sidecar {
            config: &self.config,
            records: &self.records,
        })
        .expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`. Both are written to
    /// temporary names first and renamed, so a failure leaves no partial report.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), PipelineError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        let csv_tmp = dir.join(format!(".{stem}.csv.tmp"));
        let json_tmp = dir.join(format!(".{stem}.json.tmp"));
        std::fs::write(&csv_tmp, self.to_csv()).map_err(io_err(&csv_tmp))?;
        std::fs::write(&json_tmp, self.to_json()).map_err(io_err(&json_tmp))?;
        std::fs::rename(&csv_tmp, &csv).map_err(io_err(&csv))?;
        std::fs::rename(&json_tmp, &json).map_err(io_err(&json))?;
        Ok((csv, json))
    }
}

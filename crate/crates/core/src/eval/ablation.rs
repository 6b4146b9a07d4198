//! Four-way ablation: each branch alone, the fixed averaging ensemble and
//! the learned fusion, all trained under the same seeds, folds and
//! augmentation.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{evaluate, MetricsReport};
use crate::config::RunConfig;
use crate::data::{Loader, Manifest, Sample};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::tensor::Scalar;
use crate::train::{train, TrainJob};

pub const REPORT_HEADER: &str = "variant,pc,mae,rmse,n,config_hash";
pub const ORDER_HEADER: &str = "variant,data_order_hash";

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean over folds.
    pub report: MetricsReport,
    pub folds: Vec<MetricsReport>,
    pub config_hash: String,
    pub data_order_hash: String,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let m = &r.report;
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant, m.pc, m.mae, m.rmse, m.n, r.config_hash
            )
            .expect("string write");
        }
        s
    }

    pub fn order_csv(&self) -> String {
        let mut s = format!("{ORDER_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{},{}", r.variant, r.data_order_hash).expect("string write");
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>8} {:>8} {:>8} {:>6}\n", "variant", "PC", "MAE", "RMSE", "n");
        for r in &self.rows {
            let m = &r.report;
            writeln!(
                s,
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>6}",
                r.variant.name(),
                m.pc,
                m.mae,
                m.rmse,
                m.n
            )
            .expect("string write");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("ablation.csv", self.to_csv()), ("data_order.csv", self.order_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Trains and evaluates every variant over every fold.
pub fn ablate<F: Scalar>(
    config: &RunConfig,
    manifest: &Manifest,
    loader: &Loader,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let config_hash = config.hash("");
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut folds = Vec::with_capacity(manifest.folds);
        let mut order = Sha256::new();
        for k in 1..=manifest.folds {
            let (train_set, test_set) = manifest.fold_split(k)?;
            let dir = out_dir.map(|d| d.join(variant.name()).join(format!("fold{k}")));
            let job = TrainJob {
                config,
                variant,
                train: &train_set,
                val: &[],
                test_fold: Some(k),
                out_dir: dir.as_deref(),
                resume: None,
            };
            let outcome = train::<F>(&job, loader)?;
            order.update(outcome.data_order_hash.as_bytes());
            let test: Vec<Sample<F>> = loader.load_eval(&test_set)?;
            let report = evaluate(&outcome.model, variant, &test)?;
            log::info!(
                "{variant} fold {k}: pc {:.4} mae {:.4} rmse {:.4}",
                report.pc,
                report.mae,
                report.rmse
            );
            folds.push(report);
        }
        rows.push(AblationRow {
            variant,
            report: MetricsReport::mean_of(&folds),
            folds,
            config_hash: config_hash.clone(),
            data_order_hash: hex::encode(&order.finalize()[..8]),
        });
    }
    let report = AblationReport { rows };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

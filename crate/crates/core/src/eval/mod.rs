//! Metrics, evaluation, the four-way ablation and token saliency.

pub mod ablation;
pub mod metrics;
pub mod saliency;

pub use ablation::{ablate, AblationReport, AblationRow};
pub use metrics::{mae, pearson, rmse, MetricsReport};
pub use saliency::{saliency, Branch, SaliencyMap};

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{Variant, VmBeautyNet};
use crate::tensor::Scalar;

/// Scores every sample with `predict` (in parallel, results in order) and
/// compares against the stored targets.
pub fn evaluate_with<F: Scalar>(
    samples: &[Sample<F>],
    predict: impl Fn(&Sample<F>) -> Result<f64> + Sync,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pred: Vec<f64> = samples.par_iter().map(&predict).collect::<Result<_>>()?;
    let target: Vec<f64> = samples.iter().map(|s| s.score).collect();
    MetricsReport::compute(&pred, &target)
}

/// Evaluates one variant's readout on preloaded evaluation samples.
pub fn evaluate<F: Scalar>(model: &VmBeautyNet<F>, variant: Variant, samples: &[Sample<F>]) -> Result<MetricsReport> {
    evaluate_with(samples, |s| Ok(variant.readout(&model.predict(&s.pixels)?).as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn samples(scores: &[f64]) -> Vec<Sample<f64>> {
        scores
            .iter()
            .map(|&score| Sample {
                pixels: Tensor::zeros([1]),
                score,
            })
            .collect()
    }

    #[test]
    fn perfect_stub() {
        let r = evaluate_with(&samples(&[1.0, 2.5, 4.0]), |s| Ok(s.score)).unwrap();
        assert_eq!((r.pc, r.mae, r.rmse, r.n), (1.0, 0.0, 0.0, 3));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            evaluate_with(&samples(&[]), |s| Ok(s.score)),
            Err(Error::EmptyTestSet)
        ));
    }
}

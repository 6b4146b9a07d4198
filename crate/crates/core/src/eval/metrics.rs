//! Pearson correlation, MAE and RMSE, computed in f64.

use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population-form Pearson correlation.
pub fn pearson(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two samples".into()));
    }
    let (mp, mt) = (mean(pred), mean(target));
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 {
        return Err(Error::ZeroVariance("prediction"));
    }
    if vt == 0.0 {
        return Err(Error::ZeroVariance("target"));
    }
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let ms = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(ms.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// NaN when either side has zero variance.
    pub pc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    /// `ŷ − y` per sample.
    pub residuals: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(pred: &[f64], target: &[f64]) -> Result<Self> {
        let pc = match pearson(pred, target) {
            Ok(pc) => pc,
            Err(Error::ZeroVariance(_) | Error::InvalidArgument(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Self {
            pc,
            mae: mae(pred, target)?,
            rmse: rmse(pred, target)?,
            n: pred.len(),
            residuals: pred.iter().zip(target).map(|(p, t)| p - t).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.pc.is_finite() && self.mae.is_finite() && self.rmse.is_finite()
    }

    /// Field-wise bit equality, treating NaN as equal to NaN.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        same(self.pc, other.pc)
            && same(self.mae, other.mae)
            && same(self.rmse, other.rmse)
            && self.n == other.n
            && self.residuals.len() == other.residuals.len()
            && self.residuals.iter().zip(&other.residuals).all(|(a, b)| same(*a, *b))
    }

    /// Arithmetic mean of several reports; residuals are concatenated.
    pub fn mean_of(reports: &[MetricsReport]) -> Self {
        let k = reports.len() as f64;
        Self {
            pc: reports.iter().map(|r| r.pc).sum::<f64>() / k,
            mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
            n: reports.iter().map(|r| r.n).sum(),
            residuals: reports.iter().flat_map(|r| r.residuals.iter().copied()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-10);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-10);
        // deviation products sum to 3, squared deviations to 5 on each side
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-10);
    }

    #[test]
    fn pearson_rejects_constant_input() {
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::ZeroVariance("prediction"))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::ZeroVariance("target"))
        ));
    }

    #[test]
    fn mae_rmse_hand_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae(&[2.0, 4.0], &[1.0, 2.0]).unwrap() - 1.5).abs() < 1e-10);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn report_residuals_consistent() {
        let r = MetricsReport::compute(&[1.0, 2.5, 2.0], &[1.5, 2.0, 3.0]).unwrap();
        assert_eq!(r.residuals, vec![-0.5, 0.5, -1.0]);
        let m = r.residuals.iter().map(|v| v.abs()).sum::<f64>() / 3.0;
        assert!((r.mae - m).abs() < 1e-12);
    }
}

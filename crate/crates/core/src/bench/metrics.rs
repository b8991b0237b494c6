use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Number of positions the means were taken over.
    pub count: usize,
}

/// Running sums for metrics over many batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSums {
    pub sq: f64,
    pub abs: f64,
    pub count: usize,
}

impl MetricSums {
    pub fn add(&mut self, pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::shape(
                "metrics",
                format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
            ));
        }
        if let Some(m) = mask {
            if m.shape() != pred.shape() {
                return Err(Error::shape("metrics", format!("mask {:?} vs {:?}", m.shape(), pred.shape())));
            }
        }
        for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
            if mask.is_some_and(|m| m.data()[i] != 1.0) {
                continue;
            }
            let d = p - t;
            self.sq += d * d;
            self.abs += d.abs();
            self.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("metrics over zero positions".into()));
        }
        Ok(Metrics {
            mse: self.sq / self.count as f64,
            mae: self.abs / self.count as f64,
            count: self.count,
        })
    }
}

/// MSE and MAE over all positions, or over `mask == 1` when a mask is given.
pub fn metrics(pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<Metrics> {
    let mut s = MetricSums::default();
    s.add(pred, target, mask)?;
    s.finish()
}

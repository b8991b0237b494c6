//! Additive seasonal/trend split: `x = seasonal + trend`, with the trend a
//! centered moving average.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor, Var};

pub const DEFAULT_MA_WINDOW: usize = 25;

#[derive(Clone, Debug)]
pub struct DecomposedSeries {
    pub seasonal: Tensor,
    pub trend: Tensor,
    pub ma_window: usize,
}

/// Split `x` (`[C, L]` or `[B, C, L]`) into seasonal and trend parts.
///
/// `trend[t]` is the mean of `x[t-w ..= t+w]` with out-of-range indices
/// clamped to the first/last sample, where `w = (ma_window - 1) / 2`.
pub fn decompose(x: &Tensor, ma_window: usize) -> Result<DecomposedSeries> {
    let trend = kernels::moving_average(x, ma_window)?;
    let seasonal = x.zip_map(&trend, |a, b| a - b)?;
    Ok(DecomposedSeries {
        seasonal,
        trend,
        ma_window,
    })
}

pub fn recompose(d: &DecomposedSeries) -> Result<Tensor> {
    d.seasonal.zip_map(&d.trend, |s, t| s + t).map_err(|_| {
        Error::shape(
            "recompose",
            format!("seasonal {:?} vs trend {:?}", d.seasonal.shape(), d.trend.shape()),
        )
    })
}

/// Differentiable split used inside the model; returns `(seasonal, trend)`.
pub fn decompose_var<'t>(x: Var<'t>, ma_window: usize) -> Result<(Var<'t>, Var<'t>)> {
    let trend = x.moving_average(ma_window)?;
    let seasonal = x.sub(trend)?;
    Ok((seasonal, trend))
}

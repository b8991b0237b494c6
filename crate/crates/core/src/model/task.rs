use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_binary(mask: &Tensor) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("mask must be binary, found {v}")));
    }
    Ok(())
}

/// Zero-fill the unobserved positions (`mask == 0`) of an already normalized
/// batch.
pub fn adapt_imputation(x_observed: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if x_observed.shape() != mask.shape() {
        return Err(Error::shape(
            "adapt_imputation",
            format!("input {:?} vs mask {:?}", x_observed.shape(), mask.shape()),
        ));
    }
    check_binary(mask)?;
    x_observed.zip_map(mask, |x, m| x * m)
}

/// Loss mask selecting the hidden positions. `None` when nothing is hidden,
/// in which case the loss falls back to the full sequence.
pub fn imputation_loss_mask(mask: &Tensor) -> Result<Option<Tensor>> {
    check_binary(mask)?;
    let hidden = mask.map(|m| 1.0 - m);
    Ok((hidden.sum() > 0.0).then_some(hidden))
}

/// Zero-order hold: repeat every sample `r` times along the last axis.
pub fn adapt_superres(x_low: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidArgument("upsampling ratio must be positive".into()));
    }
    let shape = x_low.shape();
    let l = shape[shape.len() - 1];
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = l * r;
    let data = x_low
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, r))
        .collect();
    Tensor::new(out_shape, data)
}

//! Learnable lifting-scheme wavelet blocks.
//!
//! One forward level splits its input into even and odd samples, predicts the
//! odd samples from the even ones and keeps the residual as detail
//! coefficients, then updates the even samples with a filtered version of
//! those details:
//!
//! ```text
//! c  = o - tanh(W_p * e + b_p)
//! e' = e + tanh(W_u * c + b_u)
//! ```
//!
//! Convolutions are depthwise with a length-preserving zero padding. Odd
//! lengths are right-padded by repeating the last sample; the flag is kept so
//! the inverse can crop it again.
//!
//! Two inverses exist. The tied inverse undoes the two steps exactly with the
//! same kernels. The learned inverse has its own transposed-convolution
//! kernels and is trained end to end; at zero initialization it reduces to
//! plain interleaving.

use crate::error::{Error, Result};
use crate::params::{Binder, Parameterized};
use crate::tensor::{Padding, Tape, Tensor, Var};
use std::fmt;
use std::str::FromStr;

/// Minimum approximation length left after the last level.
pub const MIN_APPROX_LEN: usize = 4;

const PADDING: Padding = Padding::SameAsymmetric;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseMode {
    /// Exact algebraic inverse with the forward kernels.
    Tied,
    /// Independent transposed-convolution kernels.
    Learned,
}

impl fmt::Display for InverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InverseMode::Tied => "tied",
            InverseMode::Learned => "learned",
        })
    }
}

impl FromStr for InverseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tied" => Ok(InverseMode::Tied),
            "learned" => Ok(InverseMode::Learned),
            other => Err(Error::Config(format!("unknown inverse mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InverseKernels {
    pub update_w: Tensor,
    pub update_b: Tensor,
    pub predict_w: Tensor,
    pub predict_b: Tensor,
}

/// Parameters of one lifting level. Kernels are `[C, 1, K]`, biases `[C]`.
#[derive(Clone, Debug)]
pub struct LiftingLevel {
    pub predict_w: Tensor,
    pub predict_b: Tensor,
    pub update_w: Tensor,
    pub update_b: Tensor,
    /// `None` in tied mode: the inverse reuses the forward kernels.
    pub inverse: Option<InverseKernels>,
}

impl LiftingLevel {
    /// All kernels and biases zero, which makes the level a pure polyphase split.
    pub fn zeros(channels: usize, kernel_size: usize, mode: InverseMode) -> Self {
        let w = || Tensor::zeros(&[channels, 1, kernel_size]);
        let b = || Tensor::zeros(&[channels]);
        LiftingLevel {
            predict_w: w(),
            predict_b: b(),
            update_w: w(),
            update_b: b(),
            inverse: (mode == InverseMode::Learned).then(|| InverseKernels {
                update_w: w(),
                update_b: b(),
                predict_w: w(),
                predict_b: b(),
            }),
        }
    }

    pub fn channels(&self) -> usize {
        self.predict_w.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.predict_w.shape()[2]
    }

    pub fn mode(&self) -> InverseMode {
        if self.inverse.is_some() {
            InverseMode::Learned
        } else {
            InverseMode::Tied
        }
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>, prefix: &str) -> LevelVars<'t> {
        let mut p = |n: &str, t: &Tensor| binder.param(&format!("{prefix}.{n}"), t);
        let predict_w = p("predict_w", &self.predict_w);
        let predict_b = p("predict_b", &self.predict_b);
        let update_w = p("update_w", &self.update_w);
        let update_b = p("update_b", &self.update_b);
        let inverse = self.inverse.as_ref().map(|inv| InverseVars {
            update_w: p("inv_update_w", &inv.update_w),
            update_b: p("inv_update_b", &inv.update_b),
            predict_w: p("inv_predict_w", &inv.predict_w),
            predict_b: p("inv_predict_b", &inv.predict_b),
        });
        LevelVars {
            predict_w,
            predict_b,
            update_w,
            update_b,
            inverse,
        }
    }

    /// Same layout through plain constants, for evaluation outside a training step.
    fn constants<'t>(&self, tape: &'t Tape) -> LevelVars<'t> {
        let c = |t: &Tensor| tape.constant(t.clone());
        LevelVars {
            predict_w: c(&self.predict_w),
            predict_b: c(&self.predict_b),
            update_w: c(&self.update_w),
            update_b: c(&self.update_b),
            inverse: self.inverse.as_ref().map(|inv| InverseVars {
                update_w: c(&inv.update_w),
                update_b: c(&inv.update_b),
                predict_w: c(&inv.predict_w),
                predict_b: c(&inv.predict_b),
            }),
        }
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&format!("{prefix}.predict_w"), &self.predict_w);
        f(&format!("{prefix}.predict_b"), &self.predict_b);
        f(&format!("{prefix}.update_w"), &self.update_w);
        f(&format!("{prefix}.update_b"), &self.update_b);
        if let Some(inv) = &self.inverse {
            f(&format!("{prefix}.inv_update_w"), &inv.update_w);
            f(&format!("{prefix}.inv_update_b"), &inv.update_b);
            f(&format!("{prefix}.inv_predict_w"), &inv.predict_w);
            f(&format!("{prefix}.inv_predict_b"), &inv.predict_b);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.predict_w"), &mut self.predict_w);
        f(&format!("{prefix}.predict_b"), &mut self.predict_b);
        f(&format!("{prefix}.update_w"), &mut self.update_w);
        f(&format!("{prefix}.update_b"), &mut self.update_b);
        if let Some(inv) = &mut self.inverse {
            f(&format!("{prefix}.inv_update_w"), &mut inv.update_w);
            f(&format!("{prefix}.inv_update_b"), &mut inv.update_b);
            f(&format!("{prefix}.inv_predict_w"), &mut inv.predict_w);
            f(&format!("{prefix}.inv_predict_b"), &mut inv.predict_b);
        }
    }
}

pub struct InverseVars<'t> {
    pub update_w: Var<'t>,
    pub update_b: Var<'t>,
    pub predict_w: Var<'t>,
    pub predict_b: Var<'t>,
}

/// A [`LiftingLevel`] placed on a tape.
pub struct LevelVars<'t> {
    pub predict_w: Var<'t>,
    pub predict_b: Var<'t>,
    pub update_w: Var<'t>,
    pub update_b: Var<'t>,
    pub inverse: Option<InverseVars<'t>>,
}

fn channels_of(v: &Var<'_>) -> usize {
    let s = v.shape();
    s[s.len() - 2]
}

/// `tanh(W * x + b)` with a depthwise kernel.
fn filter<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    x.conv1d(w, Some(b), channels_of(&x), PADDING)?.tanh()
}

/// `tanh(W^T * x + b)` with a depthwise transposed kernel.
fn filter_t<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    x.conv_transpose1d(w, Some(b), channels_of(&x), PADDING)?.tanh()
}

/// `(x[.., 0::2], x[.., 1::2])`; the length must be even.
pub fn split_var<'t>(x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let len = *x.shape().last().unwrap();
    if len % 2 != 0 {
        return Err(Error::shape("split", format!("length {len} is odd")));
    }
    Ok((x.stride_last(0, 2)?, x.stride_last(1, 2)?))
}

/// One analysis level. Returns `(approx, detail, padded)`.
pub fn lift_forward_var<'t>(x: Var<'t>, level: &LevelVars<'t>) -> Result<(Var<'t>, Var<'t>, bool)> {
    let len = *x.shape().last().unwrap();
    let padded = len % 2 == 1;
    let x = if padded { x.pad_right_replicate(1)? } else { x };
    let (even, odd) = split_var(x)?;
    let detail = odd.sub(filter(even, level.predict_w, level.predict_b)?)?;
    let approx = even.add(filter(detail, level.update_w, level.update_b)?)?;
    Ok((approx, detail, padded))
}

fn merge<'t>(even: Var<'t>, odd: Var<'t>, padded: bool) -> Result<Var<'t>> {
    let x = even.interleave(odd)?;
    if padded {
        let len = *x.shape().last().unwrap();
        x.narrow_last(0, len - 1)
    } else {
        Ok(x)
    }
}

/// Exact inverse of [`lift_forward_var`] with the forward kernels.
pub fn lift_inverse_tied_var<'t>(
    approx: Var<'t>,
    detail: Var<'t>,
    padded: bool,
    level: &LevelVars<'t>,
) -> Result<Var<'t>> {
    let even = approx.sub(filter(detail, level.update_w, level.update_b)?)?;
    let odd = detail.add(filter(even, level.predict_w, level.predict_b)?)?;
    merge(even, odd, padded)
}

/// Learned inverse with transposed-convolution kernels. When
/// `subtract_detail_first` is set, the detail coefficients are first
/// subtracted from the approximation before the inverse update.
pub fn lift_inverse_learned_var<'t>(
    approx_hat: Var<'t>,
    detail: Var<'t>,
    padded: bool,
    level: &LevelVars<'t>,
    subtract_detail_first: bool,
) -> Result<Var<'t>> {
    let inv = level
        .inverse
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("learned inverse needs inverse kernels".into()))?;
    let e_hat = if subtract_detail_first {
        approx_hat.sub(detail)?
    } else {
        approx_hat
    };
    let even = e_hat.sub(filter_t(detail, inv.update_w, inv.update_b)?)?;
    let odd = detail.add(filter_t(even, inv.predict_w, inv.predict_b)?)?;
    merge(even, odd, padded)
}

/// Output of the analysis stack on a tape.
pub struct PyramidVars<'t> {
    pub approx: Var<'t>,
    /// `details[l]` belongs to level `l + 1`.
    pub details: Vec<Var<'t>>,
    pub padded: Vec<bool>,
}

/// Approximation lengths after each level for an input of length `len`.
pub fn level_lengths(len: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels);
    let mut l = len;
    for _ in 0..levels {
        l = l.div_ceil(2);
        out.push(l);
    }
    out
}

pub fn check_levels(len: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Config("at least one lifting level is required".into()));
    }
    let last = *level_lengths(len, levels).last().unwrap();
    if last < MIN_APPROX_LEN {
        return Err(Error::Config(format!(
            "{levels} lifting levels leave {last} samples of a length-{len} window; need at least {MIN_APPROX_LEN}"
        )));
    }
    Ok(())
}

pub fn analyze_var<'t>(x: Var<'t>, levels: &[LevelVars<'t>]) -> Result<PyramidVars<'t>> {
    check_levels(*x.shape().last().unwrap(), levels.len())?;
    let mut approx = x;
    let mut details = Vec::with_capacity(levels.len());
    let mut padded = Vec::with_capacity(levels.len());
    for level in levels {
        let (a, d, p) = lift_forward_var(approx, level)?;
        approx = a;
        details.push(d);
        padded.push(p);
    }
    Ok(PyramidVars {
        approx,
        details,
        padded,
    })
}

/// Rebuild a signal from `approx` (possibly replaced by a prediction) and the
/// stored details, from the coarsest level down.
pub fn synthesize_var<'t>(
    approx: Var<'t>,
    details: &[Var<'t>],
    padded: &[bool],
    levels: &[LevelVars<'t>],
    mode: InverseMode,
    subtract_detail_first: bool,
) -> Result<Var<'t>> {
    if details.len() != levels.len() || padded.len() != levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels but {} detail bands and {} pad flags",
            levels.len(),
            details.len(),
            padded.len()
        )));
    }
    let mut x = approx;
    for l in (0..levels.len()).rev() {
        x = match mode {
            InverseMode::Tied => lift_inverse_tied_var(x, details[l], padded[l], &levels[l])?,
            InverseMode::Learned => {
                lift_inverse_learned_var(x, details[l], padded[l], &levels[l], subtract_detail_first)?
            }
        };
    }
    Ok(x)
}

// ---------------------------------------------------------------- tensor-level API

/// Approximation and detail bands of a multi-level analysis.
#[derive(Clone, Debug)]
pub struct WaveletPyramid {
    pub approx: Tensor,
    pub details: Vec<Tensor>,
    pub padded: Vec<bool>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Number of stored coefficients minus the replicated padding samples;
    /// equals the element count of the analysed signal.
    pub fn effective_len(&self) -> usize {
        let per_row = |t: &Tensor| t.numel() / t.shape()[t.rank() - 1];
        let rows = per_row(&self.approx);
        let stored: usize = self.approx.numel() + self.details.iter().map(Tensor::numel).sum::<usize>();
        stored - rows * self.padded.iter().filter(|&&p| p).count()
    }
}

/// A stack of lifting levels with its inverse configuration.
#[derive(Clone, Debug)]
pub struct LiftingStack {
    pub levels: Vec<LiftingLevel>,
    pub mode: InverseMode,
    pub subtract_detail_first: bool,
}

impl LiftingStack {
    pub fn zeros(levels: usize, channels: usize, kernel_size: usize, mode: InverseMode) -> Self {
        LiftingStack {
            levels: (0..levels)
                .map(|_| LiftingLevel::zeros(channels, kernel_size, mode))
                .collect(),
            mode,
            subtract_detail_first: false,
        }
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>) -> Vec<LevelVars<'t>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| l.bind(binder, &format!("lifting.{i}")))
            .collect()
    }

    pub fn analyze(&self, x: &Tensor) -> Result<WaveletPyramid> {
        let tape = Tape::inference();
        let levels: Vec<_> = self.levels.iter().map(|l| l.constants(&tape)).collect();
        let p = analyze_var(tape.constant(x.clone()), &levels)?;
        Ok(WaveletPyramid {
            approx: (*p.approx.value()).clone(),
            details: p.details.iter().map(|d| (*d.value()).clone()).collect(),
            padded: p.padded,
        })
    }

    pub fn synthesize(&self, pyramid: &WaveletPyramid) -> Result<Tensor> {
        if pyramid.levels() != self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "pyramid has {} levels, stack has {}",
                pyramid.levels(),
                self.levels.len()
            )));
        }
        let tape = Tape::inference();
        let levels: Vec<_> = self.levels.iter().map(|l| l.constants(&tape)).collect();
        let details: Vec<_> = pyramid.details.iter().map(|d| tape.constant(d.clone())).collect();
        let out = synthesize_var(
            tape.constant(pyramid.approx.clone()),
            &details,
            &pyramid.padded,
            &levels,
            self.mode,
            self.subtract_detail_first,
        )?;
        Ok((*out.value()).clone())
    }
}

impl Parameterized for LiftingStack {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (i, l) in self.levels.iter().enumerate() {
            l.visit(&format!("lifting.{i}"), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.visit_mut(&format!("lifting.{i}"), f);
        }
    }
}

/// Single-level helpers on plain tensors.
pub fn split(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let tape = Tape::inference();
    let (e, o) = split_var(tape.constant(x.clone()))?;
    Ok(((*e.value()).clone(), (*o.value()).clone()))
}

pub fn interleave(even: &Tensor, odd: &Tensor) -> Result<Tensor> {
    crate::tensor::kernels::interleave_last(even, odd)
}

/// Returns `(approx, detail, padded)`.
pub fn lift_forward(x: &Tensor, level: &LiftingLevel) -> Result<(Tensor, Tensor, bool)> {
    let tape = Tape::inference();
    let lv = level.constants(&tape);
    let (a, d, p) = lift_forward_var(tape.constant(x.clone()), &lv)?;
    Ok(((*a.value()).clone(), (*d.value()).clone(), p))
}

pub fn lift_inverse_tied(approx: &Tensor, detail: &Tensor, padded: bool, level: &LiftingLevel) -> Result<Tensor> {
    let tape = Tape::inference();
    let lv = level.constants(&tape);
    let out = lift_inverse_tied_var(tape.constant(approx.clone()), tape.constant(detail.clone()), padded, &lv)?;
    Ok((*out.value()).clone())
}

pub fn lift_inverse_learned(approx_hat: &Tensor, detail: &Tensor, padded: bool, level: &LiftingLevel) -> Result<Tensor> {
    let tape = Tape::inference();
    let lv = level.constants(&tape);
    let out = lift_inverse_learned_var(
        tape.constant(approx_hat.clone()),
        tape.constant(detail.clone()),
        padded,
        &lv,
        false,
    )?;
    Ok((*out.value()).clone())
}

//! Dataset ingestion, chronological splits, windowing, masking and
//! decimation.

use crate::error::{Error, Result};
use crate::model::Task;
use crate::tensor::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

/// Leading columns with these names are treated as timestamps and skipped.
const TIME_COLUMNS: [&str; 4] = ["date", "time", "timestamp", "datetime"];

/// Row counts of the standard ETT-hourly split (12/4/4 months).
pub const ETT_HOURLY_ROWS: (usize, usize, usize) = (12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// Train/val/test fractions of the total length; test takes the rest.
    Fractions(f64, f64, f64),
    /// Absolute row counts.
    Rows(usize, usize, usize),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions(0.7, 0.1, 0.2)
    }
}

impl SplitSpec {
    pub fn ranges(&self, total: usize) -> Result<[Range<usize>; 3]> {
        let (a, b) = match *self {
            SplitSpec::Fractions(tr, va, te) => {
                if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || tr + va + te > 1.0 + 1e-9 {
                    return Err(Error::Config(format!("invalid split fractions ({tr}, {va}, {te})")));
                }
                let a = (total as f64 * tr).round() as usize;
                let b = a + (total as f64 * va).round() as usize;
                (a, b.min(total))
            }
            SplitSpec::Rows(tr, va, te) => {
                if tr + va + te > total {
                    return Err(Error::Data(format!(
                        "split needs {} rows, file has {total}",
                        tr + va + te
                    )));
                }
                (tr, tr + va)
            }
        };
        let end = match *self {
            SplitSpec::Rows(tr, va, te) => tr + va + te,
            SplitSpec::Fractions(..) => total,
        };
        Ok([0..a, a..b, b..end])
    }
}

/// Per-channel z-normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics of `values[C, T]` over `range`. Constant channels
    /// get `std = 1`.
    pub fn fit(values: &Tensor, range: Range<usize>, names: &[String]) -> Result<Self> {
        let [c, t] = *values.shape() else {
            return Err(Error::shape("NormStats::fit", format!("expected [C, T], got {:?}", values.shape())));
        };
        if range.is_empty() || range.end > t {
            return Err(Error::Data(format!("cannot fit statistics on rows {range:?} of {t}")));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for (ch, row) in values.data().chunks(t).enumerate() {
            let seg = &row[range.clone()];
            let m = seg.iter().sum::<f64>() / n;
            let s = (seg.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            if s > 1e-12 {
                std.push(s);
            } else {
                let name = names.get(ch).map(String::as_str).unwrap_or("?");
                log::warn!("channel `{name}` is constant on the training split; using std = 1");
                std.push(1.0);
            }
        }
        Ok(NormStats { mean, std })
    }

    fn channel_of(&self, shape: &[usize], i: usize) -> usize {
        let l = shape[shape.len() - 1];
        (i / l) % self.mean.len()
    }

    /// Apply to any tensor whose second-to-last axis is the channel axis.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        let shape = x.shape().to_vec();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = self.channel_of(&shape, i);
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        let shape = x.shape().to_vec();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = self.channel_of(&shape, i);
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let r = x.rank();
        if r < 2 || x.shape()[r - 2] != self.mean.len() {
            return Err(Error::shape(
                "normalize",
                format!("{} channels vs shape {:?}", self.mean.len(), x.shape()),
            ));
        }
        Ok(())
    }
}

/// A multichannel series with chronological splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub channels: Vec<String>,
    /// Raw values `[C, T]`.
    pub values: Tensor,
    /// Normalized values used for model inputs.
    pub normalized: Tensor,
    /// Normalized clean reference (synthetic data) that replaces the
    /// observed values as the target of test windows.
    pub reference: Option<Tensor>,
    pub splits: [Range<usize>; 3],
    pub stats: NormStats,
}

impl Dataset {
    pub fn from_values(channels: Vec<String>, values: Tensor, split: SplitSpec) -> Result<Self> {
        Self::with_reference(channels, values, None, split)
    }

    /// Like [`Dataset::from_values`] but test windows draw their targets from
    /// `reference` (same shape, normalized with the statistics of `values`).
    pub fn with_reference(
        channels: Vec<String>,
        values: Tensor,
        reference: Option<Tensor>,
        split: SplitSpec,
    ) -> Result<Self> {
        let [c, t] = *values.shape() else {
            return Err(Error::Data(format!("expected [C, T] values, got {:?}", values.shape())));
        };
        if channels.len() != c {
            return Err(Error::Data(format!("{} channel names for {c} channels", channels.len())));
        }
        if let Some(r) = &reference {
            if r.shape() != values.shape() {
                return Err(Error::Data("reference must match the shape of values".into()));
            }
        }
        let splits = split.ranges(t)?;
        let stats = NormStats::fit(&values, splits[0].clone(), &channels)?;
        let normalized = stats.normalize(&values)?;
        let reference = reference.map(|r| stats.normalize(&r)).transpose()?;
        Ok(Dataset {
            channels,
            values,
            normalized,
            reference,
            splits,
            stats,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        self.splits[split as usize].clone()
    }

    /// Window layout for `split`. Forecasting targets follow their input;
    /// the other tasks reconstruct the input window itself. With
    /// `reach_back`, inputs may start up to `input_len` rows before the split
    /// so that the first target begins at the split's first row.
    pub fn windows(&self, split: Split, input_len: usize, horizon: usize, task: Task, reach_back: bool) -> Result<Windows> {
        let r = self.range(split);
        let (target_offset, target_len) = match task {
            Task::Forecast => (input_len, horizon),
            Task::Impute | Task::SuperRes => (0, input_len),
        };
        let span = target_offset + target_len;
        let lo = if reach_back { r.start.saturating_sub(target_offset) } else { r.start };
        if r.end < lo + span {
            return Err(Error::Data(format!(
                "{split:?} split (rows {r:?}) is too short for windows of {span} rows"
            )));
        }
        Ok(Windows {
            split,
            starts: (lo..=r.end - span).collect(),
            input_len,
            target_offset,
            target_len,
        })
    }

    /// Stack windows `ids` into `([B, C, L], [B, C, L_p])` on the normalized
    /// scale. Test targets come from the clean reference when there is one.
    pub fn batch(&self, windows: &Windows, ids: &[usize]) -> Result<(Tensor, Tensor)> {
        let target_source = match (&self.reference, windows.split) {
            (Some(r), Split::Test) => r,
            _ => &self.normalized,
        };
        let inputs: Vec<Tensor> = ids
            .iter()
            .map(|&i| self.normalized.columns(windows.starts[i], windows.input_len))
            .collect::<Result<_>>()?;
        let targets: Vec<Tensor> = ids
            .iter()
            .map(|&i| target_source.columns(windows.starts[i] + windows.target_offset, windows.target_len))
            .collect::<Result<_>>()?;
        Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
    }
}

/// Start rows of the windows of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub split: Split,
    pub starts: Vec<usize>,
    pub input_len: usize,
    pub target_offset: usize,
    pub target_len: usize,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Last row (exclusive) covered by window `i`'s target.
    pub fn target_end(&self, i: usize) -> usize {
        self.starts[i] + self.target_offset + self.target_len
    }
}

/// Read a CSV whose header names the channels. A leading timestamp column is
/// skipped.
pub fn load_csv(path: &Path, split: SplitSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let skip = usize::from(
        headers
            .first()
            .is_some_and(|h| TIME_COLUMNS.contains(&h.to_ascii_lowercase().as_str())),
    );
    let channels: Vec<String> = headers[skip..].to_vec();
    if channels.is_empty() {
        return Err(Error::Data(format!("{}: no data columns", path.display())));
    }
    let mut columns = vec![Vec::new(); channels.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().skip(skip).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: non-numeric value `{cell}` at row {}, column `{}`",
                    path.display(),
                    row + 2,
                    channels[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: non-finite value at row {}", path.display(), row + 2)));
            }
            columns[col].push(v);
        }
    }
    let t = columns[0].len();
    if t == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let values = Tensor::new(vec![channels.len(), t], columns.concat())?;
    Dataset::from_values(channels, values, split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Independent positions per channel.
    Random,
    /// One contiguous block shared by all channels.
    Extended,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Random => "random",
            MaskMode::Extended => "extended",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskMode::Random),
            "extended" => Ok(MaskMode::Extended),
            other => Err(Error::Config(format!("unknown mask mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub mode: MaskMode,
    /// Fraction of hidden positions, in `(0, 1)`.
    pub ratio: f64,
    pub seed: u64,
}

impl MaskSpec {
    /// Number of hidden positions in a length-`len` row.
    pub fn hidden_count(&self, len: usize) -> Result<usize> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio must lie in (0, 1), got {}", self.ratio)));
        }
        let n = (self.ratio * len as f64).round() as usize;
        debug_assert!((n as f64 / len as f64 - self.ratio).abs() <= 1.0 / len as f64);
        Ok(n)
    }

    /// Binary mask `[C, L]` (1 = observed) for window number `window`. Each
    /// window has its own random stream, so masks do not depend on the order
    /// in which windows are visited.
    pub fn make(&self, channels: usize, len: usize, window: u64) -> Result<Tensor> {
        let n = self.hidden_count(len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(window);
        let mut mask = Tensor::ones(&[channels, len]);
        let data = mask.data_mut();
        match self.mode {
            MaskMode::Random => {
                for row in data.chunks_mut(len) {
                    for i in index::sample(&mut rng, len, n) {
                        row[i] = 0.0;
                    }
                }
            }
            MaskMode::Extended => {
                let offset = rng.random_range(0..=len - n);
                for row in data.chunks_mut(len) {
                    row[offset..offset + n].fill(0.0);
                }
            }
        }
        Ok(mask)
    }

    /// Masks for a batch of windows, stacked to `[B, C, L]`.
    pub fn make_batch(&self, channels: usize, len: usize, windows: &[usize]) -> Result<Tensor> {
        let masks: Vec<Tensor> = windows
            .iter()
            .map(|&w| self.make(channels, len, w as u64))
            .collect::<Result<_>>()?;
        Tensor::stack(&masks)
    }
}

/// Keep every `r`-th sample along the last axis, starting at index 0.
pub fn downsample(x: &Tensor, r: usize) -> Result<Tensor> {
    let shape = x.shape();
    let l = shape[shape.len() - 1];
    if r == 0 || l % r != 0 {
        return Err(Error::InvalidArgument(format!("length {l} is not divisible by ratio {r}")));
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = l / r;
    let data = x.data().chunks(l).flat_map(|row| row.iter().step_by(r).copied()).collect();
    Tensor::new(out_shape, data)
}

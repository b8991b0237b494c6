//! Synthetic non-stationary signals with optional variance shifts and step
//! changes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Low-frequency sine, decaying high-frequency burst, linear trend.
    Simple,
    /// Daily and weekly cycles with a trend.
    Traffic,
    /// Seasonal and daily cycles with a trend.
    Electricity,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Simple => "simple",
            Family::Traffic => "traffic",
            Family::Electricity => "electricity",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Family::Simple),
            "traffic" => Ok(Family::Traffic),
            "electricity" => Ok(Family::Electricity),
            other => Err(Error::Config(format!("unknown synthetic family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub family: Family,
    pub f1: f64,
    pub f2: f64,
    pub alpha: f64,
    pub t0: f64,
    pub beta: f64,
    pub noise_std: f64,
    /// Noise amplitude is multiplied by `1 + variance_shift` from the onset.
    pub variance_shift: f64,
    /// Constant added from the onset.
    pub step: f64,
    /// First affected sample; defaults to the middle of the series.
    pub onset: Option<usize>,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            family: Family::Simple,
            f1: 5.0,
            f2: 50.0,
            alpha: 50.0,
            t0: 0.5,
            beta: 1.0,
            noise_std: 0.1,
            variance_shift: 0.0,
            step: 0.0,
            onset: None,
            n_points: 1024,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn family(family: Family) -> Self {
        SynthSpec {
            family,
            ..Self::default()
        }
    }

    pub fn onset_index(&self) -> usize {
        self.onset.unwrap_or(self.n_points / 2)
    }

    /// Noise-free value at time `t`.
    pub fn clean_value(&self, t: f64) -> f64 {
        match self.family {
            Family::Simple => {
                (2.0 * PI * self.f1 * t).sin()
                    + (2.0 * PI * self.f2 * t).sin() * (-self.alpha * (t - self.t0).powi(2)).exp()
                    + self.beta * t
            }
            Family::Traffic => {
                (2.0 * PI * 24.0 * t).sin() + 0.5 * (4.0 * PI * 24.0 * t).sin() + (2.0 * PI * 7.0 * t).sin() + 0.5 * t
            }
            Family::Electricity => {
                5.0 * (2.0 * PI * t).sin() + 2.0 * (4.0 * PI * t).sin() + 3.0 * (2.0 * PI * 365.0 * t).sin() + 2.0 * t
            }
        }
    }

    /// Uniform grid on `[0, 1]`.
    pub fn time_grid(&self) -> Vec<f64> {
        let d = (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| i as f64 / d).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::Config("a synthetic signal needs at least 2 points".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("invalid noise std {}", self.noise_std)));
        }
        Ok(())
    }

    /// Noisy signal `[1, n_points]` with shifts applied from the onset.
    pub fn generate(&self) -> Result<Tensor> {
        self.validate()?;
        let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let onset = self.onset_index();
        let data = self
            .time_grid()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let eps = self.noise_std * normal.sample(&mut rng);
                let clean = self.clean_value(t);
                if i >= onset {
                    clean + eps * (1.0 + self.variance_shift) + self.step
                } else {
                    clean + eps
                }
            })
            .collect();
        Tensor::new(vec![1, self.n_points], data)
    }

    /// The same signal without noise or shifts.
    pub fn denoised_target(&self) -> Result<Tensor> {
        self.validate()?;
        let data = self.time_grid().into_iter().map(|t| self.clean_value(t)).collect();
        Tensor::new(vec![1, self.n_points], data)
    }
}

use crate::attention::{DEFAULT_D_MODEL, DEFAULT_HEADS};
use crate::decomposition::DEFAULT_MA_WINDOW;
use crate::error::{Error, Result};
use crate::lifting::{self, InverseMode};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Forecast,
    Impute,
    SuperRes,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Forecast => "forecast",
            Task::Impute => "impute",
            Task::SuperRes => "superres",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Task::Forecast),
            "impute" => Ok(Task::Impute),
            "superres" => Ok(Task::SuperRes),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// How the trend heads start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrendInit {
    /// Each output is the window mean.
    Average,
    /// Output equals input (needs `horizon == input_len`).
    Identity,
}

impl fmt::Display for TrendInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrendInit::Average => "average",
            TrendInit::Identity => "identity",
        })
    }
}

impl FromStr for TrendInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(TrendInit::Average),
            "identity" => Ok(TrendInit::Identity),
            other => Err(Error::Config(format!("unknown trend init `{other}`"))),
        }
    }
}

/// Every architectural hyperparameter of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub levels: usize,
    pub kernel_size: usize,
    pub n_clusters: usize,
    pub ma_window: usize,
    pub d_model: usize,
    pub heads: usize,
    pub revin: bool,
    pub inverse: InverseMode,
    /// Subtract detail coefficients from the predicted approximation before
    /// the learned inverse update (experimental variant).
    pub subtract_detail_first: bool,
    pub channel_attention: bool,
    pub grouped_linear: bool,
    pub trend_init: TrendInit,
    pub task: Task,
    pub sr_ratio: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a task; RevIN is on for forecasting only.
    pub fn new(task: Task, channels: usize, input_len: usize) -> Self {
        ModelConfig {
            channels,
            input_len,
            horizon: input_len,
            levels: 4,
            kernel_size: 7,
            n_clusters: 1,
            ma_window: DEFAULT_MA_WINDOW,
            d_model: DEFAULT_D_MODEL,
            heads: DEFAULT_HEADS,
            revin: task == Task::Forecast,
            inverse: InverseMode::Learned,
            subtract_detail_first: false,
            channel_attention: true,
            grouped_linear: true,
            trend_init: TrendInit::Average,
            task,
            sr_ratio: 1,
            seed: 0,
        }
    }

    /// Approximation length at the coarsest level.
    pub fn approx_len(&self) -> usize {
        *lifting::level_lengths(self.input_len, self.levels).last().unwrap_or(&self.input_len)
    }

    /// Number of distinct trend heads actually instantiated.
    pub fn trend_heads(&self) -> usize {
        if self.grouped_linear {
            self.n_clusters
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.input_len == 0 {
            return fail("channels and input_len must be positive".into());
        }
        lifting::check_levels(self.input_len, self.levels)?;
        if self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.ma_window % 2 == 0 {
            return fail(format!("ma_window must be odd, got {}", self.ma_window));
        }
        if self.horizon != self.input_len {
            return fail(format!(
                "horizon ({}) must equal input_len ({}): the seasonal path reuses the input's detail coefficients",
                self.horizon, self.input_len
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.channels {
            return fail(format!(
                "n_clusters {} must be between 1 and channels {}",
                self.n_clusters, self.channels
            ));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.sr_ratio == 0 || self.input_len % self.sr_ratio != 0 {
            return fail(format!(
                "input_len {} must be divisible by sr_ratio {}",
                self.input_len, self.sr_ratio
            ));
        }
        if self.trend_init == TrendInit::Identity && self.horizon != self.input_len {
            return fail("identity trend init needs horizon == input_len".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("channels", self.channels.to_string()),
            kv("input_len", self.input_len.to_string()),
            kv("horizon", self.horizon.to_string()),
            kv("levels", self.levels.to_string()),
            kv("kernel_size", self.kernel_size.to_string()),
            kv("n_clusters", self.n_clusters.to_string()),
            kv("ma_window", self.ma_window.to_string()),
            kv("d_model", self.d_model.to_string()),
            kv("heads", self.heads.to_string()),
            kv("revin", self.revin.to_string()),
            kv("inverse", self.inverse.to_string()),
            kv("subtract_detail_first", self.subtract_detail_first.to_string()),
            kv("channel_attention", self.channel_attention.to_string()),
            kv("grouped_linear", self.grouped_linear.to_string()),
            kv("trend_init", self.trend_init.to_string()),
            kv("task", self.task.to_string()),
            kv("sr_ratio", self.sr_ratio.to_string()),
            kv("seed", self.seed.to_string()),
        ]
    }

    /// Read model keys from `kv`, removing the ones it understands. Missing
    /// keys keep their task defaults.
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self> {
        let task: Task = kv.take_or("task", Task::Forecast)?;
        let channels = kv.take_or("channels", 1usize)?;
        let input_len = kv.take_or("input_len", 96usize)?;
        let mut c = ModelConfig::new(task, channels, input_len);
        c.horizon = kv.take_or("horizon", c.horizon)?;
        c.levels = kv.take_or("levels", c.levels)?;
        c.kernel_size = kv.take_or("kernel_size", c.kernel_size)?;
        c.n_clusters = kv.take_or("n_clusters", c.n_clusters)?;
        c.ma_window = kv.take_or("ma_window", c.ma_window)?;
        c.d_model = kv.take_or("d_model", c.d_model)?;
        c.heads = kv.take_or("heads", c.heads)?;
        c.revin = kv.take_or("revin", c.revin)?;
        c.inverse = kv.take_or("inverse", c.inverse)?;
        c.subtract_detail_first = kv.take_or("subtract_detail_first", c.subtract_detail_first)?;
        c.channel_attention = kv.take_or("channel_attention", c.channel_attention)?;
        c.grouped_linear = kv.take_or("grouped_linear", c.grouped_linear)?;
        c.trend_init = kv.take_or("trend_init", c.trend_init)?;
        c.sr_ratio = kv.take_or("sr_ratio", c.sr_ratio)?;
        c.seed = kv.take_or("seed", c.seed)?;
        Ok(c)
    }
}

/// `key=value` lines; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        KvConfig {
            entries: pairs.into_iter().collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn take_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    /// Error on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config keys: {}",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            )))
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

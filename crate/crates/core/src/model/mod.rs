//! The assembled network: optional RevIN, seasonal/trend split, lifting
//! analysis, channel attention on the coarsest approximation, inverse lifting,
//! grouped-linear trend heads, and their sum.

mod checkpoint;
mod config;
mod revin;
mod task;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{KvConfig, ModelConfig, Task, TrendInit};
pub use revin::RevinState;
pub use task::{adapt_imputation, adapt_superres, imputation_loss_mask};

use crate::attention::{AttentionHead, AttentionVars};
use crate::data::NormStats;
use crate::decomposition::decompose_var;
use crate::error::{Error, Result};
use crate::grouped_linear::{self, ChannelClustering, GroupedLinear, GroupedVars};
use crate::lifting::{analyze_var, synthesize_var, LevelVars, LiftingStack};
use crate::params::{Binder, NamedGrads, Parameterized};
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Maps the coarsest approximation to its prediction.
#[derive(Clone, Debug)]
pub enum SeasonalHead {
    Attention(AttentionHead),
    /// Shared per-channel linear map, used when channel attention is ablated.
    Linear { weight: Tensor, bias: Tensor },
}

enum SeasonalVars<'t> {
    Attention(AttentionVars<'t>),
    Linear { weight: Var<'t>, bias: Var<'t> },
}

impl SeasonalVars<'_> {
    fn project<'t>(&self, x: Var<'t>) -> Result<Var<'t>>
    where
        Self: 't,
    {
        match self {
            SeasonalVars::Attention(a) => Ok(a.project(x)?.output),
            SeasonalVars::Linear { weight, bias } => x.linear(*weight, Some(*bias)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RevinAffine {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct AdaWaveNet {
    pub config: ModelConfig,
    pub revin: Option<RevinAffine>,
    pub lifting: LiftingStack,
    pub seasonal: SeasonalHead,
    pub trend: GroupedLinear,
}

/// All parameters of an [`AdaWaveNet`] placed on one tape.
pub struct ModelVars<'t> {
    config: ModelConfig,
    revin: Option<(Var<'t>, Var<'t>)>,
    levels: Vec<LevelVars<'t>>,
    seasonal: SeasonalVars<'t>,
    trend: GroupedVars<'t>,
}

impl AdaWaveNet {
    /// Zero lifting kernels, random attention, trend heads per
    /// `config.trend_init`. Clustering starts unfitted unless only one trend
    /// head exists.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ln = config.approx_len();
        let seasonal = if config.channel_attention {
            SeasonalHead::Attention(AttentionHead::random(ln, ln, config.d_model, config.heads, &mut rng)?)
        } else {
            SeasonalHead::Linear {
                weight: Tensor::eye(ln),
                bias: Tensor::zeros(&[ln]),
            }
        };
        let k = config.trend_heads();
        let trend = match config.trend_init {
            TrendInit::Average => GroupedLinear::averaging(k, config.input_len, config.horizon),
            TrendInit::Identity => GroupedLinear::identity(k, config.input_len),
        };
        Self::assemble(config, seasonal, trend)
    }

    /// Every stage initialized to an exact identity: zero lifting kernels,
    /// attention reduced to embed/target identity with zeroed Q/K/V/output,
    /// identity trend heads. The forward pass then returns its input.
    pub fn pass_through(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ln = config.approx_len();
        let seasonal = if config.channel_attention {
            SeasonalHead::Attention(AttentionHead::pass_through(ln, config.d_model, config.heads)?)
        } else {
            SeasonalHead::Linear {
                weight: Tensor::eye(ln),
                bias: Tensor::zeros(&[ln]),
            }
        };
        let trend = GroupedLinear::identity(config.trend_heads(), config.input_len);
        Self::assemble(config, seasonal, trend)
    }

    fn assemble(config: ModelConfig, seasonal: SeasonalHead, mut trend: GroupedLinear) -> Result<Self> {
        if trend.k() == 1 {
            trend = trend.with_clustering(ChannelClustering::single(config.channels, config.input_len))?;
        }
        let mut lifting = LiftingStack::zeros(config.levels, config.channels, config.kernel_size, config.inverse);
        lifting.subtract_detail_first = config.subtract_detail_first;
        let revin = config.revin.then(|| RevinAffine {
            weight: Tensor::ones(&[config.channels]),
            bias: Tensor::zeros(&[config.channels]),
        });
        Ok(AdaWaveNet {
            config,
            revin,
            lifting,
            seasonal,
            trend,
        })
    }

    pub fn is_clustered(&self) -> bool {
        self.trend.clustering.is_some()
    }

    /// Fit the channel clustering of the trend heads on `[S, C, L]` training
    /// windows (the trend is extracted here).
    pub fn fit_clustering(&mut self, windows: &Tensor) -> Result<()> {
        let k = self.config.trend_heads();
        let clustering = if k == 1 {
            ChannelClustering::single(self.config.channels, self.config.input_len)
        } else {
            let d = crate::decomposition::decompose(windows, self.config.ma_window)?;
            grouped_linear::fit_clustering(&d.trend, k, self.config.seed)?
        };
        self.trend.clustering = None;
        self.trend = self.trend.clone().with_clustering(clustering)?;
        Ok(())
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>) -> Result<ModelVars<'t>> {
        let c = self.config.channels;
        let revin = match &self.revin {
            Some(r) => Some((
                binder.param("revin.weight", &r.weight).reshape(&[1, c, 1])?,
                binder.param("revin.bias", &r.bias).reshape(&[1, c, 1])?,
            )),
            None => None,
        };
        let levels = self.lifting.bind(binder);
        let seasonal = match &self.seasonal {
            SeasonalHead::Attention(a) => SeasonalVars::Attention(a.bind(binder, "attention")),
            SeasonalHead::Linear { weight, bias } => SeasonalVars::Linear {
                weight: binder.param("seasonal_linear.weight", weight),
                bias: binder.param("seasonal_linear.bias", bias),
            },
        };
        let trend = self.trend.bind(binder, "grouped_linear")?;
        Ok(ModelVars {
            config: self.config.clone(),
            revin,
            levels,
            seasonal,
            trend,
        })
    }

    /// Inference on `[B, C, L]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let mut binder = Binder::new(&tape);
        let vars = self.bind(&mut binder)?;
        let y = vars.forward(tape.constant(x.clone()))?;
        Ok((*y.value()).clone())
    }

    /// MSE of the prediction for `x` against `target` (restricted to
    /// `mask == 1` when given) and the gradient of every parameter.
    pub fn loss_and_grads(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<(f64, NamedGrads)> {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape);
        let vars = self.bind(&mut binder)?;
        let y = vars.forward(tape.constant(x.clone()))?;
        let loss = y.mse(tape.constant(target.clone()), mask)?;
        let value = loss.value().item();
        let mut grads = tape.backward(loss)?;
        Ok((value, binder.collect(&mut grads)))
    }

    pub fn loss(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
        let tape = Tape::inference();
        let mut binder = Binder::new(&tape);
        let vars = self.bind(&mut binder)?;
        let y = vars.forward(tape.constant(x.clone()))?;
        Ok(y.mse(tape.constant(target.clone()), mask)?.value().item())
    }

    /// Serialize parameters, clustering and optional data statistics.
    pub fn to_checkpoint(&self, norm: Option<&NormStats>) -> Checkpoint {
        let mut kv = KvConfig::from_pairs(self.config.to_kv());
        let mut arrays = self.named_params();
        if let Some(cl) = &self.trend.clustering {
            kv.set("clustering.feature", &cl.feature);
            let a = cl.assignments.iter().map(|&a| a as f64).collect();
            arrays.push(("clustering.assignments".into(), Tensor::from_vec(a)));
            arrays.push(("clustering.centroids".into(), cl.centroids.clone()));
        }
        if let Some(n) = norm {
            arrays.push(("norm.mean".into(), Tensor::from_vec(n.mean.clone())));
            arrays.push(("norm.std".into(), Tensor::from_vec(n.std.clone())));
        }
        Checkpoint {
            config: kv.to_text(),
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<NormStats>)> {
        let mut kv = KvConfig::parse(&ck.config)?;
        let feature: Option<String> = kv.take_opt("clustering.feature")?;
        let config = ModelConfig::from_kv(&mut kv)?;
        kv.finish()?;
        let mut model = AdaWaveNet::new(config)?;
        let mut missing = Vec::new();
        model.visit_params_mut(&mut |name, t| match ck.get(name) {
            Some(v) if v.shape() == t.shape() => *t = v.clone(),
            Some(v) => missing.push(format!("{name} (shape {:?}, expected {:?})", v.shape(), t.shape())),
            None => missing.push(name.to_string()),
        });
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!("missing or mismatched arrays: {}", missing.join(", "))));
        }
        if let (Some(a), Some(c)) = (ck.get("clustering.assignments"), ck.get("clustering.centroids")) {
            let k = model.trend.k();
            let assignments: Vec<usize> = a.data().iter().map(|&v| v as usize).collect();
            if assignments.len() != model.config.channels || assignments.iter().any(|&a| a >= k) {
                return Err(Error::Checkpoint("invalid cluster assignments".into()));
            }
            model.trend.clustering = Some(ChannelClustering {
                k,
                assignments,
                centroids: c.clone(),
                feature: feature.unwrap_or_default(),
            });
        }
        let norm = match (ck.get("norm.mean"), ck.get("norm.std")) {
            (Some(m), Some(s)) => Some(NormStats {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            }),
            _ => None,
        };
        Ok((model, norm))
    }
}

impl<'t> ModelVars<'t> {
    /// `[B, C, L] -> [B, C, L_p]`.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let cfg = &self.config;
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != cfg.channels || shape[2] != cfg.input_len {
            return Err(Error::shape(
                "model",
                format!("expected [B, {}, {}], got {shape:?}", cfg.channels, cfg.input_len),
            ));
        }
        let state = match self.revin {
            Some(_) => Some(RevinState::from_batch(&x.value())?),
            None => None,
        };
        let x = match (&state, self.revin) {
            (Some(s), Some((w, b))) => s.normalize(x, w, b)?,
            _ => x,
        };
        let (seasonal, trend) = decompose_var(x, cfg.ma_window)?;
        let pyramid = analyze_var(seasonal, &self.levels)?;
        let approx_hat = self.seasonal.project(pyramid.approx)?;
        let seasonal_hat = synthesize_var(
            approx_hat,
            &pyramid.details,
            &pyramid.padded,
            &self.levels,
            cfg.inverse,
            cfg.subtract_detail_first,
        )?;
        let trend_hat = self.trend.project(trend)?;
        let y = seasonal_hat.add(trend_hat)?;
        match (&state, self.revin) {
            (Some(s), Some((w, b))) => s.denormalize(y, w, b),
            _ => Ok(y),
        }
    }
}

impl Parameterized for AdaWaveNet {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        if let Some(r) = &self.revin {
            f("revin.weight", &r.weight);
            f("revin.bias", &r.bias);
        }
        self.lifting.visit_params(f);
        match &self.seasonal {
            SeasonalHead::Attention(a) => a.visit("attention", f),
            SeasonalHead::Linear { weight, bias } => {
                f("seasonal_linear.weight", weight);
                f("seasonal_linear.bias", bias);
            }
        }
        self.trend.visit("grouped_linear", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(r) = &mut self.revin {
            f("revin.weight", &mut r.weight);
            f("revin.bias", &mut r.bias);
        }
        self.lifting.visit_params_mut(f);
        match &mut self.seasonal {
            SeasonalHead::Attention(a) => a.visit_mut("attention", f),
            SeasonalHead::Linear { weight, bias } => {
                f("seasonal_linear.weight", weight);
                f("seasonal_linear.bias", bias);
            }
        }
        self.trend.visit_mut("grouped_linear", f);
    }
}

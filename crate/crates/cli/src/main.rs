use adawave::bench::plot::{line_chart, Series};
use adawave::bench::{
    manifest_dir, parse_split, render_markdown, results_csv, run_benchmark, synth_from_kv, synthetic_dataset,
    Manifest,
};
use adawave::data::{load_csv, Dataset, MaskMode, MaskSpec, NormStats, Split};
use adawave::decomposition::decompose;
use adawave::lifting::{InverseMode, LiftingStack};
use adawave::model::{adapt_imputation, adapt_superres, AdaWaveNet, Checkpoint, KvConfig, ModelConfig, Task};
use adawave::synth::SynthSpec;
use adawave::train::{evaluate, prepare_batch, split_windows, train, write_log_csv, TrainConfig, Trainable};
use adawave::{Error, Result, Tensor};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adawave", version, about = "Adaptive wavelet network for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value settings applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for model initialization, shuffling and masks
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, training log, metrics and a plot
    Train {
        /// CSV file or `synthetic:<family>`
        #[arg(long)]
        data: String,
        /// Checkpoint path (default: <out>/model.awn)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Learned inverse subtracts the detail coefficients from the
        /// predicted approximation first (same as `subtract_detail_first=true`)
        #[arg(long)]
        eq9_literal: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Report validation and test metrics of a checkpoint
    Eval {
        #[arg(long)]
        data: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast the rows that follow the end of the data
    Forecast {
        #[arg(long)]
        data: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Hide part of the last window and reconstruct it
    Impute {
        #[arg(long)]
        data: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Upsample the last rows of the data, read as a low-resolution signal
    Superres {
        #[arg(long)]
        data: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic signal
    Synth {
        /// simple, traffic or electricity
        #[arg(default_value = "simple")]
        family: String,
        #[command(flatten)]
        common: Common,
    },
    /// Split a series into trend and seasonal parts
    Decompose {
        #[arg(long)]
        data: String,
        /// Also write the lifting coefficients of the seasonal part
        #[arg(long)]
        wavelet: bool,
        /// Lifting kernels to use with --wavelet (default: lazy wavelet)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark manifest
    Bench {
        /// TOML manifest with [[cell]] tables
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_data_error() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train {
            data,
            checkpoint,
            eq9_literal,
            common,
        } => cmd_train(&data, checkpoint, eq9_literal, &common),
        Command::Eval { data, checkpoint, common } => cmd_eval(&data, &checkpoint, &common),
        Command::Forecast { data, checkpoint, common } => cmd_forecast(&data, &checkpoint, &common),
        Command::Impute { data, checkpoint, common } => cmd_impute(&data, &checkpoint, &common),
        Command::Superres { data, checkpoint, common } => cmd_superres(&data, &checkpoint, &common),
        Command::Synth { family, common } => cmd_synth(&family, &common),
        Command::Decompose {
            data,
            wavelet,
            checkpoint,
            common,
        } => cmd_decompose(&data, wavelet, checkpoint.as_deref(), &common),
        Command::Bench { manifest, common } => cmd_bench(&manifest, &common),
    }
}

fn load_kv(common: &Common) -> Result<KvConfig> {
    let mut kv = match &common.config {
        Some(p) => KvConfig::parse(&fs::read_to_string(p)?)?,
        None => KvConfig::default(),
    };
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
        kv.set("train_seed", seed);
    }
    Ok(kv)
}

/// Load `--data`, consuming the `split` and `synth_*` keys.
fn load_data(source: &str, kv: &mut KvConfig) -> Result<Dataset> {
    let split: Option<String> = kv.take_opt("split")?;
    match source.strip_prefix("synthetic:") {
        Some(family) => {
            if split.is_some() {
                log::warn!("`split` is ignored for synthetic data");
            }
            synthetic_dataset(&synth_from_kv(family.parse()?, kv)?)
        }
        None => load_csv(Path::new(source), parse_split(split.as_deref())?),
    }
}

/// Drop model keys from `kv`; the checkpoint's configuration wins.
fn reconcile(kv: &mut KvConfig, config: &ModelConfig) -> Result<()> {
    for (k, v) in config.to_kv() {
        if let Some(given) = kv.take_opt::<String>(&k)? {
            if given != v {
                log::warn!("config `{k}={given}` ignored, checkpoint has `{k}={v}`");
            }
        }
    }
    Ok(())
}

fn load_model(path: &Path, kv: &mut KvConfig) -> Result<(AdaWaveNet, Option<NormStats>)> {
    let (model, norm) = AdaWaveNet::from_checkpoint(&Checkpoint::load(path)?)?;
    reconcile(kv, &model.config)?;
    Ok((model, norm))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn row(t: &Tensor, c: usize) -> &[f64] {
    let n = t.shape()[t.rank() - 1];
    &t.data()[c * n..(c + 1) * n]
}

/// CSV with one column per channel and a leading `step` column.
fn series_csv(channels: &[String], values: &Tensor, first_step: usize) -> String {
    let n = values.shape()[values.rank() - 1];
    let mut s = String::from("step");
    for c in channels {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for i in 0..n {
        let _ = write!(s, "{}", first_step + i);
        for c in 0..channels.len() {
            let _ = write!(s, ",{}", row(values, c)[i]);
        }
        s.push('\n');
    }
    s
}

/// `[C, L]` slice of the normalized data ending at row `end`, as `[1, C, L]`.
fn tail_window(data: &Dataset, end: usize, len: usize) -> Result<Tensor> {
    if end < len {
        return Err(Error::Data(format!("need at least {len} rows, data has {}", data.len())));
    }
    let w = data.normalized.columns(end - len, len)?;
    w.reshape(&[1, data.num_channels(), len])
}

fn check_channels(model: &AdaWaveNet, data: &Dataset) -> Result<()> {
    if model.config.channels != data.num_channels() {
        return Err(Error::Data(format!(
            "checkpoint expects {} channels, data has {}",
            model.config.channels,
            data.num_channels()
        )));
    }
    Ok(())
}

fn stats_for(data: &Dataset, norm: Option<NormStats>) -> NormStats {
    norm.unwrap_or_else(|| data.stats.clone())
}

fn cmd_train(source: &str, checkpoint: Option<PathBuf>, eq9_literal: bool, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    if eq9_literal {
        kv.set("subtract_detail_first", true);
    }
    let data = load_data(source, &mut kv)?;
    if kv.get("channels").is_none() {
        kv.set("channels", data.num_channels());
    }
    let model_cfg = ModelConfig::from_kv(&mut kv)?;
    let train_cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;

    let mut model = AdaWaveNet::new(model_cfg)?;
    let report = train(&mut model, &data, &train_cfg)?;
    let val = evaluate(&model, &data, Split::Val, &train_cfg)?;
    let test = evaluate(&model, &data, Split::Test, &train_cfg)?;
    println!(
        "best epoch {} val mse {:.6} | test mse {:.6} mae {:.6}",
        report.best_epoch, val.mse, test.mse, test.mae
    );

    fs::create_dir_all(&common.out)?;
    let ck_path = checkpoint.unwrap_or_else(|| common.out.join("model.awn"));
    model.to_checkpoint(Some(&data.stats)).save(&ck_path)?;
    log::info!("wrote {}", ck_path.display());
    write_log_csv(&common.out.join("train_log.csv"), &report.history)?;
    let mut metrics = String::from("split,mse,mae,count\n");
    for (name, m) in [("val", &val), ("test", &test)] {
        let _ = writeln!(metrics, "{name},{},{},{}", m.mse, m.mae, m.count);
    }
    write(&common.out.join("metrics.csv"), &metrics)?;
    write(&common.out.join("train_config.txt"), &train_config_text(&model.config, &train_cfg))?;
    write(&common.out.join("test_example.svg"), &test_example_plot(&model, &data, &train_cfg)?)?;
    Ok(0)
}

fn train_config_text(model: &ModelConfig, train: &TrainConfig) -> String {
    model
        .to_kv()
        .into_iter()
        .chain(train.to_kv())
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

/// First channel of the first test window: input, target and prediction.
fn test_example_plot(model: &AdaWaveNet, data: &Dataset, cfg: &TrainConfig) -> Result<String> {
    let config = &model.config;
    let windows = split_windows(config, data, Split::Test, cfg.reach_back)?;
    let b = prepare_batch(config, data, &windows, &[0], cfg.mask.as_ref())?;
    let pred = model.predict(&b.input)?;
    let l = config.input_len;
    let t0 = windows.target_offset;
    let mut shaded = Vec::new();
    if let Some(mask) = &b.loss_mask {
        for (i, &m) in row(mask, 0).iter().enumerate() {
            if m > 0.0 {
                shaded.push((i as f64 - 0.5, i as f64 + 0.5));
            }
        }
    }
    let input: Vec<f64> = row(&b.input, 0).iter().copied().take(l).collect();
    let series = [
        Series::from_values("input", 0, &input),
        Series::from_values("target", t0, row(&b.target, 0)),
        Series::from_values("prediction", t0, row(&pred, 0)),
    ];
    Ok(line_chart(
        &format!("{} / {} (normalized)", config.task, data.channels[0]),
        &series,
        &shaded,
    ))
}

fn cmd_eval(source: &str, checkpoint: &Path, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let data = load_data(source, &mut kv)?;
    let (model, _) = load_model(checkpoint, &mut kv)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    check_channels(&model, &data)?;
    let mut out = String::from("split,mse,mae,count\n");
    for (name, split) in [("val", Split::Val), ("test", Split::Test)] {
        let m = evaluate(&model, &data, split, &cfg)?;
        println!("{name}: mse {:.6} mae {:.6} ({} values)", m.mse, m.mae, m.count);
        let _ = writeln!(out, "{name},{},{},{}", m.mse, m.mae, m.count);
    }
    write(&common.out.join("eval_metrics.csv"), &out)?;
    Ok(0)
}

fn require_task(model: &AdaWaveNet, task: Task) -> Result<()> {
    if model.config.task != task {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}, not {task}",
            model.config.task
        )));
    }
    Ok(())
}

fn cmd_forecast(source: &str, checkpoint: &Path, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let data = load_data(source, &mut kv)?;
    let (model, norm) = load_model(checkpoint, &mut kv)?;
    kv.finish()?;
    require_task(&model, Task::Forecast)?;
    check_channels(&model, &data)?;
    let stats = stats_for(&data, norm);
    let (l, lp) = (model.config.input_len, model.config.horizon);
    let t = data.len();
    let x = tail_window(&data, t, l)?;
    let pred = stats.denormalize(&model.forward(&x)?.reshape(&[data.num_channels(), lp])?)?;
    write(&common.out.join("forecast.csv"), &series_csv(&data.channels, &pred, t))?;
    let history = data.values.columns(t - l, l)?;
    let plot = line_chart(
        &format!("forecast / {}", data.channels[0]),
        &[
            Series::from_values("history", t - l, row(&history, 0)),
            Series::from_values("forecast", t, row(&pred, 0)),
        ],
        &[],
    );
    write(&common.out.join("forecast.svg"), &plot)?;
    Ok(0)
}

fn cmd_impute(source: &str, checkpoint: &Path, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let data = load_data(source, &mut kv)?;
    let (model, norm) = load_model(checkpoint, &mut kv)?;
    let mask_spec = MaskSpec {
        mode: kv.take_or("mask_mode", MaskMode::Random)?,
        ratio: kv.take_or("mask_ratio", 0.25)?,
        seed: kv.take_or("train_seed", 0u64)?,
    };
    kv.finish()?;
    require_task(&model, Task::Impute)?;
    check_channels(&model, &data)?;
    let stats = stats_for(&data, norm);
    let (c, l) = (data.num_channels(), model.config.input_len);
    let t = data.len();
    let x = tail_window(&data, t, l)?;
    let observed = mask_spec.make(c, l, (t - l) as u64)?.reshape(&[1, c, l])?;
    let pred = model.forward(&adapt_imputation(&x, &observed)?)?;
    let hidden = observed.map(|m| 1.0 - m);
    let m = adawave::bench::metrics::metrics(&pred, &x, Some(&hidden))?;
    println!("hidden positions: mse {:.6} mae {:.6} ({} values, normalized)", m.mse, m.mae, m.count);

    let truth = stats.denormalize(&x.reshape(&[c, l])?)?;
    let filled = stats.denormalize(&pred.reshape(&[c, l])?)?;
    let mut csv = String::from("step,channel,value,observed,imputed\n");
    for ch in 0..c {
        for i in 0..l {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                t - l + i,
                data.channels[ch],
                row(&truth, ch)[i],
                row(&observed, ch)[i] as u8,
                row(&filled, ch)[i]
            );
        }
    }
    write(&common.out.join("imputed.csv"), &csv)?;
    let shaded: Vec<(f64, f64)> = row(&observed, 0)
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0.0)
        .map(|(i, _)| ((t - l + i) as f64 - 0.5, (t - l + i) as f64 + 0.5))
        .collect();
    let plot = line_chart(
        &format!("imputation / {}", data.channels[0]),
        &[
            Series::from_values("truth", t - l, row(&truth, 0)),
            Series::from_values("imputed", t - l, row(&filled, 0)),
        ],
        &shaded,
    );
    write(&common.out.join("imputed.svg"), &plot)?;
    Ok(0)
}

fn cmd_superres(source: &str, checkpoint: &Path, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let data = load_data(source, &mut kv)?;
    let (model, norm) = load_model(checkpoint, &mut kv)?;
    kv.finish()?;
    require_task(&model, Task::SuperRes)?;
    check_channels(&model, &data)?;
    let stats = stats_for(&data, norm);
    let (c, l, r) = (data.num_channels(), model.config.input_len, model.config.sr_ratio);
    let low_len = l / r;
    let low = tail_window(&data, data.len(), low_len)?;
    let pred = model.forward(&adapt_superres(&low, r)?)?;
    let high = stats.denormalize(&pred.reshape(&[c, l])?)?;
    write(&common.out.join("superres.csv"), &series_csv(&data.channels, &high, 0))?;
    let low_raw = stats.denormalize(&low.reshape(&[c, low_len])?)?;
    let low_points = row(&low_raw, 0)
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i * r) as f64, v))
        .collect();
    let plot = line_chart(
        &format!("super-resolution x{r} / {}", data.channels[0]),
        &[
            Series {
                label: "low resolution",
                points: low_points,
            },
            Series::from_values("reconstruction", 0, row(&high, 0)),
        ],
        &[],
    );
    write(&common.out.join("superres.svg"), &plot)?;
    Ok(0)
}

fn cmd_synth(family: &str, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let mut spec: SynthSpec = synth_from_kv(family.parse()?, &mut kv)?;
    if let Some(seed) = common.seed {
        kv.take_opt::<u64>("seed")?;
        kv.take_opt::<u64>("train_seed")?;
        spec.seed = seed;
    }
    kv.finish()?;
    let values = spec.generate()?;
    let clean = spec.denoised_target()?;
    let grid = spec.time_grid();
    let mut csv = String::from("t,value,denoised\n");
    for (i, t) in grid.iter().enumerate() {
        let _ = writeln!(csv, "{t},{},{}", values.data()[i], clean.data()[i]);
    }
    write(&common.out.join(format!("synthetic_{}.csv", spec.family)), &csv)?;
    let plot = line_chart(
        &format!("synthetic {}", spec.family),
        &[
            Series::from_values("observed", 0, values.data()),
            Series::from_values("denoised", 0, clean.data()),
        ],
        &[],
    );
    write(&common.out.join(format!("synthetic_{}.svg", spec.family)), &plot)?;
    Ok(0)
}

fn cmd_decompose(source: &str, wavelet: bool, checkpoint: Option<&Path>, common: &Common) -> Result<u8> {
    let mut kv = load_kv(common)?;
    let data = load_data(source, &mut kv)?;
    let stack = match checkpoint {
        Some(p) => {
            let (model, _) = load_model(p, &mut kv)?;
            check_channels(&model, &data)?;
            Some((model.config.ma_window, model.lifting))
        }
        None => None,
    };
    let (ma_window, stack) = match stack {
        Some((w, s)) => (w, s),
        None => {
            let w = kv.take_or("ma_window", 25usize)?;
            let levels = kv.take_or("levels", 4usize)?;
            let k = kv.take_or("kernel_size", 7usize)?;
            (w, LiftingStack::zeros(levels, data.num_channels(), k, InverseMode::Tied))
        }
    };
    kv.finish()?;
    let d = decompose(&data.values, ma_window)?;
    let mut csv = String::from("step,channel,value,trend,seasonal\n");
    for c in 0..data.num_channels() {
        for i in 0..data.len() {
            let _ = writeln!(
                csv,
                "{i},{},{},{},{}",
                data.channels[c],
                row(&data.values, c)[i],
                row(&d.trend, c)[i],
                row(&d.seasonal, c)[i]
            );
        }
    }
    write(&common.out.join("decomposition.csv"), &csv)?;
    let plot = line_chart(
        &format!("decomposition / {}", data.channels[0]),
        &[
            Series::from_values("value", 0, row(&data.values, 0)),
            Series::from_values("trend", 0, row(&d.trend, 0)),
            Series::from_values("seasonal", 0, row(&d.seasonal, 0)),
        ],
        &[],
    );
    write(&common.out.join("decomposition.svg"), &plot)?;

    if wavelet {
        let x = d.seasonal.reshape(&[1, data.num_channels(), data.len()])?;
        let pyramid = stack.analyze(&x)?;
        let mut csv = String::from("band,level,channel,index,value\n");
        let mut emit = |band: &str, level: usize, t: &Tensor| {
            for c in 0..data.num_channels() {
                for (i, v) in row(t, c).iter().enumerate() {
                    let _ = writeln!(csv, "{band},{level},{},{i},{v}", data.channels[c]);
                }
            }
        };
        for (i, detail) in pyramid.details.iter().enumerate() {
            emit("detail", i + 1, detail);
        }
        emit("approx", pyramid.levels(), &pyramid.approx);
        write(&common.out.join("wavelet.csv"), &csv)?;
        let rebuilt = stack.synthesize(&pyramid)?;
        log::info!("reconstruction error {:.3e}", rebuilt.max_abs_diff(&x));
    }
    Ok(0)
}

fn cmd_bench(manifest_path: &Path, common: &Common) -> Result<u8> {
    if common.config.is_some() || !common.set.is_empty() || common.seed.is_some() {
        return Err(Error::Config(
            "bench takes its settings from the manifest; --config, --set and --seed are not accepted".into(),
        ));
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest = Manifest::parse(&text)?;
    let outcome = run_benchmark(&manifest, &manifest_dir(manifest_path))?;
    write(&common.out.join("results.csv"), &results_csv(&outcome.results))?;
    let mut report = render_markdown(&outcome.results);
    if outcome.is_partial() {
        report.push_str("\nSkipped:\n\n");
        for s in &outcome.skipped {
            let _ = writeln!(report, "- {s}");
            eprintln!("skipped: {s}");
        }
    }
    write(&common.out.join("report.md"), &report)?;
    print!("{}", render_markdown(&outcome.results));
    Ok(if outcome.is_partial() { 2 } else { 0 })
}

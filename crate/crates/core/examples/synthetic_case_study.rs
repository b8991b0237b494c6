//! Train AdaWaveNet and the two reference baselines on a synthetic signal and
//! compare test MSE against the denoised target.
//!
//! ```text
//! cargo run --release -p adawave --example synthetic_case_study -- [family] [key=value ...]
//! ```

use adawave::bench::{run_model, synth_from_kv, synthetic_dataset, ModelKind};
use adawave::model::{KvConfig, ModelConfig, Task};
use adawave::train::TrainConfig;
use std::time::Instant;

fn main() -> adawave::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let family = args.next().unwrap_or_else(|| "simple".into());
    let mut kv = KvConfig::parse(&args.collect::<Vec<_>>().join("\n"))?;
    let spec = synth_from_kv(family.parse()?, &mut kv)?;
    let data = synthetic_dataset(&spec)?;
    kv.set("task", Task::Forecast);
    kv.set("channels", 1);
    for (k, v) in [("input_len", "96"), ("horizon", "96"), ("levels", "3"), ("n_clusters", "1")] {
        if kv.get(k).is_none() {
            kv.set(k, v);
        }
    }
    let model = ModelConfig::from_kv(&mut kv)?;
    let train = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    for kind in [ModelKind::Persistence, ModelKind::Linear, ModelKind::AdaWaveNet] {
        let start = Instant::now();
        let m = run_model(kind, &model, &train, &data)?;
        println!(
            "{kind:<12} mse {:.4} mae {:.4} ({:.1}s)",
            m.mse,
            m.mae,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

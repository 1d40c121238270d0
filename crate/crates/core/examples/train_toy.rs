//! Trains the tagger on the synthetic language and prints test scores.
//!
//! `cargo run --release --example train_toy -- [train_size] [epochs] [seed]`

use mulco::tagger::{evaluate, train_with_validation, HeadLayout, TrainConfig};
use mulco::toy;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let size = args.get(1).map_or(Ok(2000), |s| s.parse())?;
    let epochs = args.get(2).map_or(Ok(30), |s| s.parse())?;
    let seed = args.get(3).map_or(Ok(42), |s| s.parse())?;
    let recurrent = args.get(4).is_none_or(|s| s != "flat");
    let train = toy::generate(size, seed);
    let valid = toy::generate(200, seed + 1000);
    let test = toy::generate(200, seed + 2000);
    let config = TrainConfig {
        epochs,
        seed,
        use_recurrent_encoder: recurrent,
        ..TrainConfig::default()
    };
    let (params, report) = train_with_validation::<f32>(&train, &valid, &config, HeadLayout::Scopes, None)?;
    let eval = evaluate(&params, &test, None)?;
    println!(
        "best epoch {} of {}, test P {:.4} R {:.4} F1 {:.4}, {:.1}s",
        report.best_epoch,
        epochs,
        eval.micro.precision,
        eval.micro.recall,
        eval.micro.f1,
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

//! Train the two-stream model on the toy dataset and compare next-frame
//! error with the copy-last-frame baseline.
//!
//! cargo run --release --example train_next_frame -- [data.smv] [iterations]

use std::path::PathBuf;
use std::time::Instant;

use twostream::model::{evaluate_next_frame, ModelConfig, TrainConfig, Trainer};
use twostream::synth::{gen_dataset, ClipSpec, Dataset};

fn main() -> twostream::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "/tmp/toy.smv".into()));
    let iterations: usize = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(2000);
    if !path.exists() {
        gen_dataset(4, 50, 7, &ClipSpec::default(), &path)?;
    }
    let data = Dataset::load(&path)?;
    let cfg = TrainConfig {
        iterations,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(ModelConfig::default(), cfg)?;
    let train = data.train();
    let start = Instant::now();
    trainer.run(&train, |r| {
        if r.iter % 100 == 0 {
            println!(
                "{:5} {:?} total {:.2} recon {:.5} video {:.5} elapsed {:.0?}",
                r.iter,
                r.phase,
                r.total,
                r.recon,
                r.video_recon,
                start.elapsed()
            );
        }
    })?;
    let report = evaluate_next_frame(trainer.bundle(), &data.test())?;
    println!(
        "test next-frame l2 {:.5}, copy-last {:.5}, ratio {:.3}",
        report.model_l2, report.baseline_l2, report.ratio
    );
    Ok(())
}

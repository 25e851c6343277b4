//! Sample clips from a model and score them with the evaluation classifier.
//!
//! With checkpoint paths the saved model and classifier are used; otherwise
//! both are trained briefly on a small generated dataset.
//!
//!     cargo run --release --example rollout_metrics -- [model.tsvc classifier.tsvc]

use twostream::metrics::evaluate_with_classifier;
use twostream::model::{
    load_classifier, load_model, rollout, Classifier, ClassifierConfig, ModelConfig, RolloutOptions, TrainConfig,
    Trainer,
};
use twostream::rng::{split_seed, SeededRng};
use twostream::synth::{gen_dataset, ClipSpec, Dataset};

fn main() -> twostream::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (model, classifier, real) = if let [m, c] = &args[..] {
        (load_model(m.as_ref())?, load_classifier(c.as_ref())?, None)
    } else {
        let path = std::env::temp_dir().join("rollout_metrics.smv");
        gen_dataset(4, 12, 3, &ClipSpec::default(), &path)?;
        let data = Dataset::load(&path)?;
        let mut trainer = Trainer::new(
            ModelConfig::default(),
            TrainConfig {
                iterations: 100,
                ..TrainConfig::default()
            },
        )?;
        trainer.run(&data.train(), |_| {})?;
        let mut c = Classifier::new(ClassifierConfig {
            iterations: 150,
            ..ClassifierConfig::default()
        })?;
        c.train(&data.train())?;
        println!("classifier held-out accuracy {:.3}", c.accuracy(&data.test())?);
        let test: Vec<_> = data.test().into_iter().cloned().collect();
        (trainer.into_bundle(), c, Some(test))
    };

    if let Some(test) = real {
        let r = evaluate_with_classifier(&test, &classifier)?;
        println!(
            "real clips:      IS {:.3}  H(y) {:.3}  H(y|v) {:.3}",
            r.inception_score, r.inter_entropy, r.mean_intra_entropy
        );
    }

    let opts = RolloutOptions::default();
    let k = model.config().classes;
    let clips = (0..40)
        .map(|i| rollout(&model, i % k, &mut SeededRng::new(split_seed(11, i as u64)), &opts))
        .collect::<twostream::Result<Vec<_>>>()?;
    let r = evaluate_with_classifier(&clips, &classifier)?;
    println!(
        "generated clips: IS {:.3}  H(y) {:.3}  H(y|v) {:.3}",
        r.inception_score, r.inter_entropy, r.mean_intra_entropy
    );
    let motion: f64 = clips
        .iter()
        .map(|c| {
            let (a, b) = (c.frame(0).unwrap(), c.frame(c.num_frames() - 1).unwrap());
            a.sub(&b).unwrap().data().iter().map(|v| (v * v) as f64).sum::<f64>() / a.len() as f64
        })
        .sum::<f64>()
        / clips.len() as f64;
    println!("mean squared first/last frame change {motion:.5}");
    Ok(())
}

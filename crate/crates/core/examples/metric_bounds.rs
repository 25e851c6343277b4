//! Entropy metrics at their bounds: a balanced set of confident predictions
//! reaches IS = K, uniform predictions give IS = 1.
//!
//!     cargo run --example metric_bounds

use twostream::metrics::{inception_score, inception_score_kl, ClassDistribution, MetricsReport};

fn main() -> twostream::Result<()> {
    for k in [90, 6, 20] {
        let dists = (0..k)
            .map(|i| ClassDistribution::one_hot(i, k))
            .collect::<twostream::Result<Vec<_>>>()?;
        let r = MetricsReport::from_distributions(&dists)?;
        println!(
            "K={k:2} one-hot: H(y) {:.2}  H(y|v) {:.2}  IS {:.2}",
            r.inter_entropy, r.mean_intra_entropy, r.inception_score
        );
    }

    let uniform = vec![ClassDistribution::uniform(6)?; 10];
    println!("K= 6 uniform: IS {:.2}", inception_score(&uniform)?);

    // Mildly confident, slightly unbalanced predictions sit in between.
    let soft: Vec<_> = (0..30)
        .map(|i| {
            let mut logits = vec![0.0; 6];
            logits[i % 5] = 3.0;
            ClassDistribution::from_logits(&logits)
        })
        .collect::<twostream::Result<_>>()?;
    println!(
        "K= 6 soft: IS {:.3} (KL form {:.3})",
        inception_score(&soft)?,
        inception_score_kl(&soft)?
    );
    println!("{}", MetricsReport::from_distributions(&soft)?.to_json()?);
    Ok(())
}

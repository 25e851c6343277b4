//! Closed-form values of the training losses.
//!
//!     cargo run --example loss_values

use twostream::losses::{
    aux_class_loss, gan_discriminator_loss, gan_generator_loss, kl_to_standard_normal, l2_loss, GaussianParams,
    LossWeights,
};
use twostream::Tensor;

fn main() -> twostream::Result<()> {
    let q = GaussianParams::<f64>::new(Tensor::from_f64(&[1, 1], &[1.0])?, Tensor::from_f64(&[1, 1], &[0.0])?)?;
    println!("KL(N(1,1) || N(0,1)) = {}", kl_to_standard_normal(&q));

    let half = Tensor::<f64>::full(&[4], 0.5)?;
    println!(
        "discriminator loss at D = 1/2: {:.12} (3 ln 2 = {:.12})",
        gan_discriminator_loss(&half, &half, &half)?,
        3.0 * 2f64.ln()
    );
    println!(
        "generator loss at D = 1/2:     {:.12}",
        gan_generator_loss(&half, &half)?
    );

    let logits = Tensor::<f64>::zeros(&[2, 4])?;
    println!(
        "cross-entropy at uniform logits, K=4: {:.12} (ln 4 = {:.12})",
        aux_class_loss(&logits, &[0, 3])?,
        4f64.ln()
    );

    let a = Tensor::<f64>::from_f64(&[2, 2], &[0.0, 1.0, 2.0, 3.0])?;
    let b = Tensor::from_f64(&[2, 2], &[1.0, 1.0, 1.0, 1.0])?;
    println!("l2 = {}", l2_loss(&a, &b)?);

    let w = LossWeights::default();
    println!("default weights: {w:?}");
    for iter in [0, 1000, 2000] {
        println!("motion KL weight at {iter}/2000: {}", w.motion_kl.at(iter, 2000));
    }
    Ok(())
}

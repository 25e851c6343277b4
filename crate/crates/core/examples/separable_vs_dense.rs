//! Kernel parameter budgets of dense and separable fields, and a check that
//! the separable path agrees with its dense expansion.
//!
//!     cargo run --example separable_vs_dense

use twostream::fusion::{adaptive_conv, kernel_param_count, KernelField, KernelMode, SeparableKernelField};
use twostream::rng::{randn, SeededRng};

fn main() -> twostream::Result<()> {
    for (n, mode) in [
        (17, KernelMode::Dense),
        (5, KernelMode::Separable),
        (5, KernelMode::Dense),
    ] {
        println!("n={n:2} {mode:9}: {} values per pixel", mode.per_pixel(n));
    }

    let dense = kernel_param_count(17, &[64], KernelMode::Dense);
    let sep = kernel_param_count(5, &[8, 16, 32, 64], KernelMode::Separable);
    println!("dense n=17 at 64x64:           {:>9} values", dense.total);
    println!(
        "separable n=5 at 8/16/32/64:   {:>9} values {:?}",
        sep.total, sep.per_scale
    );
    println!("ratio {:.2}%", 100.0 * sep.total as f64 / dense.total as f64);

    let mut rng = SeededRng::new(5);
    let (d, l, n) = (4, 16, 5);
    let content = randn::<f64>(&mut rng, &[d, l, l])?;
    let field = SeparableKernelField::new(randn(&mut rng, &[n, l, l])?, randn(&mut rng, &[n, l, l])?)?;
    let a = adaptive_conv(&content, &KernelField::Separable(field.clone()))?;
    let b = adaptive_conv(&content, &KernelField::Dense(field.to_dense()))?;
    let diff = a.sub(&b)?.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("max |separable - dense| = {diff:.3e}");
    Ok(())
}

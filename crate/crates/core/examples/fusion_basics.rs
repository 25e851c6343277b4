//! One fusion scale on a small feature map: a zero mask and identity kernels
//! both leave the content untouched, a shift kernel moves it by one pixel.
//!
//!     cargo run --example fusion_basics

use twostream::fusion::{fuse_scale, KernelField, MaskField, SeparableKernelField};
use twostream::rng::{randn, SeededRng};
use twostream::Tensor;

fn main() -> twostream::Result<()> {
    let (d, l, n) = (2, 6, 3);
    let mut rng = SeededRng::new(1);
    let content: Tensor<f64> = randn(&mut rng, &[d, l, l])?;

    let random = KernelField::Separable(SeparableKernelField::new(
        randn(&mut rng, &[n, l, l])?,
        randn(&mut rng, &[n, l, l])?,
    )?);
    let (out, _) = fuse_scale(&content, &random, &MaskField::constant(l, l, 0.0)?)?;
    println!("zero mask, random kernels: output == input is {}", out == content);

    let identity = KernelField::Separable(SeparableKernelField::identity(n, l, l)?);
    let (out, _) = fuse_scale(&content, &identity, &MaskField::constant(l, l, 1.0)?)?;
    println!("full mask, identity kernels: output == input is {}", out == content);

    // Horizontal tap on the left neighbour: each pixel takes the value to its
    // left, so the map moves one column right (edges replicate).
    let mut v = Tensor::<f64>::zeros(&[n, l, l])?;
    let mut h = Tensor::<f64>::zeros(&[n, l, l])?;
    v.data_mut()[l * l..2 * l * l].fill(1.0);
    h.data_mut()[..l * l].fill(1.0);
    let shift = KernelField::Separable(SeparableKernelField::new(v, h)?);
    let (out, _) = fuse_scale(&content, &shift, &MaskField::constant(l, l, 1.0)?)?;
    let row = |t: &Tensor<f64>| t.data()[..l].iter().map(|x| format!("{x:6.2}")).collect::<String>();
    println!("row 0 before: {}", row(&content));
    println!("row 0 after:  {}", row(&out));

    let half = MaskField::constant(l, l, 0.5)?;
    let (blend, tilde) = fuse_scale(&content, &shift, &half)?;
    let mid = 0.5 * content.data()[3] + 0.5 * tilde.data()[3];
    println!("half mask blends: {:.4} == {:.4}", blend.data()[3], mid);
    Ok(())
}

//! Write the standard toy dataset (4 classes, 50 clips each, 32x32, seed 7)
//! and print a few statistics.
//!
//!     cargo run --example generate_dataset -- /tmp/toy.smv

use std::path::PathBuf;

use twostream::synth::{difference_map, gen_dataset, ClipSpec, Dataset};

fn main() -> twostream::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("toy.smv"));
    let spec = ClipSpec::default();
    let manifest = gen_dataset(4, 50, 7, &spec, &path)?;
    println!("wrote {} clips to {}", manifest.clips.len(), path.display());
    println!("classes: {}", manifest.classes.join(", "));
    println!(
        "train/test: {}/{}",
        manifest.split.train.len(),
        manifest.split.test.len()
    );

    let ds = Dataset::load(&path)?;
    for (k, name) in ds.manifest.classes.iter().enumerate() {
        let clips: Vec<_> = ds.test().into_iter().filter(|c| c.action == k).collect();
        let mut energy = 0.0;
        let mut count = 0;
        for clip in &clips {
            for t in 1..clip.num_frames() {
                let d = difference_map(clip, t)?;
                energy += d.data().iter().map(|v| (v * v) as f64).sum::<f64>() / d.len() as f64;
                count += 1;
            }
        }
        println!("{name:>22}: mean squared frame difference {:.5}", energy / count as f64);
    }
    Ok(())
}

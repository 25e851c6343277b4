//! Save and reload a model checkpoint, then export a sampled clip as PGM
//! frames.
//!
//!     cargo run --example checkpoint_and_export -- [out_dir]

use std::path::PathBuf;

use twostream::model::{export_frames, load_model, rollout, save_model, ModelBundle, ModelConfig, RolloutOptions};
use twostream::SeededRng;

fn main() -> twostream::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("twostream_export"));
    std::fs::create_dir_all(&dir)?;

    let model = ModelBundle::<f32>::new(ModelConfig::default(), 42)?;
    let ckpt = dir.join("model.tsvc");
    save_model(&ckpt, &model)?;
    let loaded = load_model(&ckpt)?;
    println!(
        "{} parameters, {} bytes on disk, reload identical: {}",
        model.num_params(),
        std::fs::metadata(&ckpt)?.len(),
        loaded == model
    );

    let clip = rollout(&loaded, 0, &mut SeededRng::new(1), &RolloutOptions::default())?;
    let paths = export_frames(&clip, &dir.join("frames"), "sample")?;
    println!("wrote {} frames, first {}", paths.len(), paths[0].display());
    Ok(())
}

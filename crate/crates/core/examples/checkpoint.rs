//! Trains a few steps, saves a checkpoint with optimizer state, reloads it
//! and compares forward outputs bit for bit.
//!
//! ```sh
//! cargo run --example checkpoint -- [path]
//! ```

use rga::data::synthetic::vessel_image;
use rga::loss::LossKind;
use rga::nn::checkpoint::{load_checkpoint, save_checkpoint};
use rga::nn::{ModelConfig, RgaNet};
use rga::train::Trainer;

fn main() -> rga::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.ckpt".into());
    let (image, mask) = vessel_image(32, 1);
    let mut trainer = Trainer::new(RgaNet::new(ModelConfig::default(), 1)?, 1e-3, 5, LossKind::DiceBce);
    for _ in 0..5 {
        trainer.step(&image, &mask)?;
    }
    save_checkpoint(&trainer.net, Some(&trainer.adam), &path)?;

    let ckpt = load_checkpoint(&path)?;
    println!("{path}: {} tensors, fingerprint {}", ckpt.tensors.len(), ckpt.fingerprint);
    let restored: RgaNet = RgaNet::from_checkpoint(&ckpt)?;
    let (a, b) = (trainer.net.predict(&image)?, restored.predict(&image)?);
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("forward output bit-identical after reload: {same}");
    Ok(())
}

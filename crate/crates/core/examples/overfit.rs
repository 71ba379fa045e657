//! Overfits the default network to one synthetic 64x64 vessel image.
//!
//! ```sh
//! cargo run --release --example overfit -- [steps] [seed]
//! ```

use rga::data::synthetic::vessel_image;
use rga::loss::LossKind;
use rga::metrics::{binarize, confusion, metrics};
use rga::nn::{ModelConfig, RgaNet};
use rga::train::Trainer;

fn main() -> rga::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (image, mask) = vessel_image(64, seed);
    let net = RgaNet::new(ModelConfig::default(), seed)?;
    let mut trainer = Trainer::new(net, 1e-3, 5, LossKind::DiceBce);
    let start = std::time::Instant::now();
    for step in 1..=steps {
        let loss = trainer.step(&image, &mask)?;
        if step % 25 == 0 || step == steps {
            let pred = trainer.net.predict(&image)?;
            let dice = metrics(&confusion(&binarize(&pred, 0.5), &mask)?)?.f1;
            println!("step {step:4}  loss {loss:.4}  dice {dice:.4}  {:.1?}", start.elapsed());
        }
    }
    Ok(())
}

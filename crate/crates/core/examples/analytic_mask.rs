//! Briefly trains on one synthetic image, then writes the prediction and its
//! TP/FN/FP/TN overlay and prints the metrics.
//!
//! ```sh
//! cargo run --example analytic_mask -- [out-dir] [steps]
//! ```

use std::path::PathBuf;

use rga::data::io::{save_gray, save_rgb};
use rga::data::synthetic::vessel_image;
use rga::loss::LossKind;
use rga::metrics::{binarize, confusion, error_map, metrics};
use rga::nn::{ModelConfig, RgaNet};
use rga::train::Trainer;

fn main() -> rga::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "analysis".into()));
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    std::fs::create_dir_all(&out).map_err(|e| rga::Error::Io {
        path: out.clone(),
        source: e,
    })?;

    let (image, mask) = vessel_image(64, 7);
    let mut trainer = Trainer::new(RgaNet::new(ModelConfig::default(), 0)?, 1e-3, 5, LossKind::DiceBce);
    for _ in 0..steps {
        trainer.step(&image, &mask)?;
    }
    let pred = binarize(&trainer.net.predict(&image)?, 0.5);
    save_rgb(&image, out.join("image.png"))?;
    save_gray(&pred, out.join("pred.png"))?;
    save_rgb(&error_map(&pred, &mask)?, out.join("analysis.png"))?;

    let c = confusion(&pred, &mask)?;
    let m = metrics(&c)?;
    println!("tp={} fn={} fp={} tn={}", c.tp, c.fn_, c.fp, c.tn);
    println!(
        "se={:.4} sp={:.4} acc={:.4} precision={:.4} f1={:.4} jaccard={:.4}",
        m.sensitivity, m.specificity, m.accuracy, m.precision, m.f1, m.jaccard
    );
    println!("wrote image.png, pred.png and analysis.png to {}", out.display());
    Ok(())
}

//! Forward pass shape chain at a chosen input size.
//!
//! ```sh
//! cargo run --example shapes -- [size]
//! ```

use rga::nn::{Mode, ModelConfig, RgaNet};
use rga::Tensor;

fn main() -> rga::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let net: RgaNet = RgaNet::new(ModelConfig::default(), 0)?;
    let x = Tensor::from_fn(&[1, 3, size, size], |i| (i % 255) as f32 / 255.0);
    let a = net.activations(&x, Mode::Eval)?;
    let mut rows = vec![
        ("S1", &a.s1),
        ("p1", &a.p1),
        ("S2", &a.s2),
        ("p2", &a.p2),
        ("S3", &a.s3),
        ("p3", &a.p3),
        ("b", &a.b),
        ("dec1", &a.dec1),
        ("dec2", &a.dec2),
        ("dec3", &a.dec3),
    ];
    for (name, t) in [("dec_par", &a.dec_par), ("Pred1", &a.pred1), ("Pred2", &a.pred2)] {
        if let Some(t) = t {
            rows.push((name, t));
        }
    }
    rows.push(("Pred_final", &a.pred_final));
    rows.push(("Mask", &a.mask));
    for (name, t) in rows {
        println!("{name:<10} {:?}", t.shape());
    }
    let (lo, hi) = a
        .mask
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("mask range [{lo:.4}, {hi:.4}]");
    Ok(())
}

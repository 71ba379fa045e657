//! Finite-difference check of every parameter group of the default network.
//!
//! ```sh
//! cargo run --release --example gradcheck -- [f32|f64] [samples-per-group|all] [step]
//! ```

use rga::gradcheck::{run_gradcheck, GradCheckConfig, Precision};

fn main() -> rga::Result<()> {
    let mut args = std::env::args().skip(1);
    let precision = match args.next().as_deref() {
        Some("f32") => Precision::F32,
        _ => Precision::F64,
    };
    let mut cfg = GradCheckConfig::new(precision);
    match args.next().as_deref() {
        Some("all") => cfg.samples_per_group = None,
        Some(n) => cfg.samples_per_group = n.parse().ok(),
        None => {}
    }
    if let Some(h) = args.next().and_then(|h| h.parse().ok()) {
        cfg.step = h;
    }
    let start = std::time::Instant::now();
    let report = run_gradcheck(&cfg)?;
    println!("{report}");
    println!("loss {:.6}, {:.1?}", report.loss, start.elapsed());
    if !report.passed() {
        std::process::exit(4);
    }
    Ok(())
}

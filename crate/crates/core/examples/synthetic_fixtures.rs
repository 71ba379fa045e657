//! Writes a synthetic fundus-like dataset in the layout `rga train` expects.
//!
//! ```sh
//! cargo run --example synthetic_fixtures -- <root> [train] [test] [size] [seed]
//! ```

use rga::data::synthetic::write_dataset;

fn main() -> rga::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = args.first().map(String::as_str).unwrap_or("synthetic-data");
    let num = |i: usize, default: usize| args.get(i).and_then(|v| v.parse().ok()).unwrap_or(default);
    let (train, test, size) = (num(1, 2), num(2, 2), num(3, 64));
    let seed = num(4, 0) as u64;
    write_dataset(root, train, test, size, seed)?;
    println!("wrote {train} train and {test} test pairs of {size}x{size} under {root}");
    Ok(())
}

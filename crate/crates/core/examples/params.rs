//! Parameter budget per block for the default network and its variants.
//!
//! ```sh
//! cargo run --example params -- [f1,f2,f3,f4]
//! ```

use std::collections::BTreeMap;

use rga::nn::config::{parse_filters, ConvKind};
use rga::nn::{ModelConfig, RgaNet};

fn main() -> rga::Result<()> {
    let filters = match std::env::args().nth(1) {
        Some(f) => parse_filters(&f)?,
        None => [8, 16, 24, 32],
    };
    let base = ModelConfig::with_filters(filters);
    let variants = [
        ("default", base.clone()),
        (
            "plain encoder-decoder",
            ModelConfig {
                attention: false,
                partial_decoder: false,
                ..base.clone()
            },
        ),
        (
            "separable decoders",
            ModelConfig {
                decoder_conv: ConvKind::Separable,
                ..base.clone()
            },
        ),
    ];
    for (name, cfg) in variants {
        let net: RgaNet = RgaNet::build(cfg)?;
        let mut blocks: BTreeMap<String, usize> = BTreeMap::new();
        for (param, _, numel) in net.param_table() {
            let block = param.split('.').next().unwrap_or_default().to_string();
            *blocks.entry(block).or_default() += numel;
        }
        println!("{name}: {} parameters", net.param_count());
        for (block, n) in blocks {
            println!("  {block:<12} {n:>6}");
        }
    }
    Ok(())
}

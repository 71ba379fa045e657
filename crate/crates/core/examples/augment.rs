//! Manifest expansion per dataset layout, plus a few augmented views of one
//! synthetic image.
//!
//! ```sh
//! cargo run --example augment -- [out-dir]
//! ```

use std::path::PathBuf;

use rga::data::io::{save_gray, save_rgb};
use rga::data::synthetic::{vessel_image, write_dataset};
use rga::data::{build_manifest, Augment, Flip, Layout, Split};

fn main() -> rga::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "augmented".into()));
    let root = out.join("dataset");
    write_dataset(&root, 20, 0, 16, 0)?;
    for layout in [Layout::Drive, Layout::Stare, Layout::Plain] {
        let m = build_manifest(&root, layout, 0)?;
        println!("{layout:<6} {} train records from 20 pairs", m.count(Split::Train));
    }
    let text = build_manifest(&root, Layout::Drive, 0)?.to_text();
    for line in text.lines().take(7) {
        println!("  {line}");
    }

    let (image, mask) = vessel_image(96, 2);
    for aug in [
        Augment::Identity,
        Augment::Flip(Flip::Horizontal),
        Augment::Rotate(30),
        Augment::Rotate(90),
        Augment::RotateFlip(200, Flip::Vertical),
    ] {
        let (img, m) = aug.apply(&image, &mask)?;
        let name = aug.to_string().replace('+', "_");
        save_rgb(&img, out.join(format!("{name}.png")))?;
        save_gray(&m, out.join(format!("{name}_mask.png")))?;
    }
    println!("wrote augmented views to {}", out.display());
    Ok(())
}

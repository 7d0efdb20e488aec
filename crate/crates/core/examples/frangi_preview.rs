//! Multiscale structure response of a synthetic blob, written as a 16-bit PNG.
//!
//! `cargo run -p cbir-core --example frangi_preview [OUT.png]`

use cbir_core::frangi::{frangi_filter, FrangiParams};
use cbir_core::imagecore::save_png16;
use cbir_core::phantom::{blob, ridge};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cbir_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "frangi_preview.png".into());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = FrangiParams::default();
    println!("{} scales from {} to {}", params.scales.len(), params.scales[0], params.scales.last().unwrap());

    for (name, image) in [("blob", blob(&mut rng)), ("ridge", ridge(&mut rng))] {
        let map = frangi_filter(&image, &params)?;
        let (at, peak) = map.max();
        let mean = map.values.iter().sum::<f64>() / map.values.len() as f64;
        println!(
            "{name:>5}: peak {peak:.4} at ({}, {}) sigma {:.1}, mean {mean:.4}",
            at % map.width,
            at / map.width,
            map.argmax_scale[at]
        );
        if name == "blob" {
            save_png16(&map.to_image().normalized(), &out)?;
            println!("wrote {out}");
        }
    }
    Ok(())
}

//! Bit-exact container round trips: save/load/save produces byte-identical
//! files for every storage dtype, including bf16, because narrow-then-widen
//! is the identity on representable values.
//!
//! ```bash
//! cargo run --release --example checkpoint_roundtrip
//! ```

use weightgauge::checkpoint::{
    generate_toy_checkpoint, load_adapter, load_checkpoint, save_adapter, save_checkpoint,
    LoraAdapter, ModelConfig, Site,
};
use weightgauge::container::Dtype;
use weightgauge::error::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("weightgauge-roundtrip-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let config = ModelConfig::toy_default();

    for dtype in [Dtype::Bf16, Dtype::F16, Dtype::F32, Dtype::F64] {
        let view = generate_toy_checkpoint(&config, 42, dtype)?;
        let first = dir.join(format!("toy-{}.safetensors", dtype.name()));
        let second = dir.join(format!("toy-{}-resaved.safetensors", dtype.name()));
        save_checkpoint(&view, &first)?;
        let loaded = load_checkpoint(&first, &config)?;
        save_checkpoint(&loaded, &second)?;
        let identical = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();
        let bytes = std::fs::metadata(&first).unwrap().len();
        println!(
            "{:>4} checkpoint: {bytes:>7} bytes, save/load/save byte-identical: {identical}",
            dtype.name()
        );
    }

    let adapter = LoraAdapter::seeded_random(&config, 4, 8.0, &Site::ALL, 3, Dtype::Bf16)?;
    let first = dir.join("adapter.safetensors");
    let second = dir.join("adapter-resaved.safetensors");
    save_adapter(&adapter, &first)?;
    let loaded = load_adapter(&first)?;
    save_adapter(&loaded, &second)?;
    println!(
        "bf16 adapter ({} targets, rank {}, alpha {}): byte-identical: {}",
        loaded.targets.len(),
        loaded.rank,
        loaded.alpha,
        std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap()
    );

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

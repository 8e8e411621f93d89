//! The adapter transformation identities: an adapter installed on gauged
//! weights is equivalent to its pullback installed on the original
//! weights, and pushforward inverts pullback exactly.
//!
//! This is the mechanism that breaks weight-space auditors: the auditor's
//! adapter, trained against the original weights, lands on gauged weights
//! as if it had been hit by the inverse transform.
//!
//! ```bash
//! cargo run --release --example adapter_pullback
//! ```

use weightgauge::checkpoint::{generate_toy_checkpoint, LoraAdapter, ModelConfig, Site};
use weightgauge::container::Dtype;
use weightgauge::error::Result;
use weightgauge::gauge::{apply_gauge, build_gauge_spec, pullback_adapter, pushforward_adapter, SiteSet};
use weightgauge::transformer::max_divergence;

fn main() -> Result<()> {
    let config = ModelConfig::toy_default();
    let view = generate_toy_checkpoint(&config, 42, Dtype::F64)?;
    let spec = build_gauge_spec(&config, 7, SiteSet::all())?;
    let gauged = apply_gauge(&view, &spec)?;

    let adapter = LoraAdapter::seeded_random(&config, 4, 8.0, &Site::ALL, 99, Dtype::F64)?;
    println!(
        "rank-{} adapter targeting {} (layer, site) pairs, alpha {}",
        adapter.rank,
        adapter.targets.len(),
        adapter.alpha
    );

    // Install the adapter on the gauged weights, pull it back to the
    // original frame, and compare the two models' forward outputs.
    let pulled = pullback_adapter(&adapter, &spec)?;
    let divergence = max_divergence(&gauged, &view, Some(&adapter), Some(&pulled), 50, 1, &config)?;
    println!("forward(gauged + C)  vs forward(original + pullback(C)):  {divergence:.3e}");

    let pushed = pushforward_adapter(&adapter, &spec)?;
    let divergence = max_divergence(&view, &gauged, Some(&adapter), Some(&pushed), 50, 2, &config)?;
    println!("forward(original + C) vs forward(gauged + pushforward(C)): {divergence:.3e}");

    let roundtrip = pushforward_adapter(&pulled, &spec)?;
    let mut worst = 0.0f64;
    for (key, pair) in &adapter.targets {
        let got = &roundtrip.targets[key];
        worst = worst
            .max(pair.a.max_abs_diff(&got.a))
            .max(pair.b.max_abs_diff(&got.b));
    }
    println!("pushforward(pullback(C)) vs C, entrywise:                  {worst:.3e}");

    // Installing the auditor's adapter on the gauged weights WITHOUT
    // transforming it lands it in the wrong coordinates.
    let divergence = max_divergence(&gauged, &view, Some(&adapter), Some(&adapter), 50, 3, &config)?;
    println!("\nuntransformed adapter on gauged vs original weights:       {divergence:.3e}");
    println!("(the adapter only works in the frame it was trained for)");
    Ok(())
}

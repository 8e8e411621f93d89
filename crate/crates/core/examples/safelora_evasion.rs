//! Defeating projection-based residual auditing: choose the gauge
//! `G = (W + s) W~^-1` so the shipped weights' residual against the base
//! model equals `s`, a vector the auditor considers safe.
//!
//! ```bash
//! cargo run --release --example safelora_evasion
//! ```

use weightgauge::error::Result;
use weightgauge::linalg::{matmul, stream_rng, Matrix};
use weightgauge::safelora::{construct_evasion_gauge, project_residual, SafeSubspace};

fn main() -> Result<()> {
    let dim = 16;
    let mut rng = stream_rng(42, 0, "evasion-example");

    // base weights, a malicious fine-tune drift, and the auditor's 3-dim
    // "safe" subspace
    let w_base = Matrix::gaussian(dim, dim, 1.0 / (dim as f64).sqrt(), &mut rng)
        .add(&Matrix::identity(dim).scale(2.0))?;
    let drift = Matrix::gaussian(dim, dim, 0.05, &mut rng);
    let w_tuned = w_base.add(&drift)?;
    let basis: Vec<Matrix> = (0..3)
        .map(|_| Matrix::gaussian(dim, dim, 1.0, &mut rng))
        .collect();
    let subspace = SafeSubspace::new(basis)?;

    // what the auditor sees WITHOUT the evasion
    let naive_residual = w_tuned.sub(&w_base)?;
    let naive_safe = project_residual(&naive_residual, &subspace)?;
    let naive_fraction =
        naive_safe.frobenius_dot(&naive_safe).sqrt() / naive_residual.frobenius_dot(&naive_residual).sqrt();
    println!("unmodified fine-tune: residual max|.| = {:.4}, safe fraction = {naive_fraction:.4}",
        naive_residual.max_abs());

    // with the evasion gauge
    let result = construct_evasion_gauge(&w_base, &w_tuned, &subspace, &mut rng)?;
    let shipped = matmul(&result.gauge, &w_tuned)?;
    let residual = shipped.sub(&w_base)?;
    let safe_part = project_residual(&residual, &subspace)?;
    let off_subspace = residual.sub(&safe_part)?.max_abs();
    let fraction =
        safe_part.frobenius_dot(&safe_part).sqrt() / residual.frobenius_dot(&residual).sqrt();

    println!("\nevasion gauge applied (shipping G * W_tuned):");
    println!("  |(G W~ - W) - s| max      = {:.3e}", result.residual_check);
    println!("  off-subspace component    = {off_subspace:.3e}");
    println!("  safe fraction of residual = {fraction:.6}");
    println!("\nthe auditor's projection sees a residual entirely inside its safe space");
    Ok(())
}

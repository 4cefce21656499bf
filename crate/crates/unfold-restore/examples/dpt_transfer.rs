//! Degradation prior transfer in isolation: attention statistics, the blend
//! weight sweep, and the single-patch degenerate case.
//!
//! ```bash
//! cargo run --release --example dpt_transfer
//! ```

use unfold_restore::degrade::{simulate, synthetic_clean, DegradationKind, SimParams};
use unfold_restore::dpt::{attention_matrix, extract_features, transfer, DptConfig};
use unfold_restore::init::estimate_initial;
use unfold_restore::raster::Image;

fn main() -> unfold_restore::Result<()> {
    let target_clean = synthetic_clean(96, 96, 31);
    let reference_clean = synthetic_clean(96, 96, 32);
    let params = SimParams::new(DegradationKind::Haze, 17);
    let (target, target_m) = simulate(&target_clean, &params)?;
    let (_, reference_m) = simulate(&reference_clean, &params)?;

    let cfg = DptConfig::default();
    let f_tgt = extract_features(&target, cfg.patch)?;
    let f_ref = extract_features(&reference_clean, cfg.patch)?;
    println!(
        "feature grids: target {}x{}, reference {}x{} (patch {})",
        f_tgt.rows, f_tgt.cols, f_ref.rows, f_ref.cols, cfg.patch
    );

    let attention = attention_matrix(&f_tgt, &f_ref, cfg.tau);
    let mut max_w: f64 = 0.0;
    let mut min_row_sum = f64::INFINITY;
    for row in &attention {
        min_row_sum = min_row_sum.min(row.iter().sum());
        max_w = max_w.max(row.iter().copied().fold(0.0, f64::max));
    }
    println!("attention: rows sum to >= {min_row_sum:.15}, peak weight {max_w:.3}\n");

    // Blend sweep: rho 0 keeps the previous matrices, rho 1 is pure
    // transfer of the reference-fitted matrices.
    let t_prev = estimate_initial(&target, DegradationKind::Haze).t;
    let d_prev = Image::zeros(96, 96);
    println!(
        "{:>5} {:>22} {:>22}",
        "rho", "mean |T - T_prev|", "mean |T - T_true|"
    );
    for rho in [0.0, 0.5, 1.0] {
        let cfg = DptConfig { rho, ..cfg };
        let (t_k, _) = transfer(
            &reference_m.t,
            &reference_m.d,
            &target,
            &reference_clean,
            &t_prev,
            &d_prev,
            &cfg,
        )?;
        let drift = t_k
            .data()
            .iter()
            .zip(t_prev.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / t_k.data().len() as f64;
        let err = t_k
            .data()
            .iter()
            .zip(target_m.t.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / t_k.data().len() as f64;
        println!("{rho:>5.1} {drift:>22.4} {err:>22.4}");
    }

    // Single-patch case: one attention weight, plain blend arithmetic.
    let small = synthetic_clean(8, 8, 33);
    let (t_k, _) = transfer(
        &Image::constant(8, 8, 0.5),
        &Image::zeros(8, 8),
        &small,
        &small,
        &Image::constant(8, 8, 0.3),
        &Image::zeros(8, 8),
        &DptConfig::default(),
    )?;
    println!(
        "\nsingle-patch blend: previous 0.3, transferred 0.5, rho 0.5 -> {:.12}",
        t_k.get(0, 0, 0)
    );
    Ok(())
}

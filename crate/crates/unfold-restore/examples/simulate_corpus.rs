//! Generates a small corpus of degraded/clean image pairs with ground-truth
//! degradation matrices and prints their statistics.
//!
//! ```bash
//! cargo run --release --example simulate_corpus
//! ```

use std::path::PathBuf;

use unfold_restore::degrade::{
    simulate, synthetic_clean, write_matrices, DegradationKind, SimParams,
};
use unfold_restore::metrics::psnr;
use unfold_restore::raster::save_image;

fn main() -> unfold_restore::Result<()> {
    let out = PathBuf::from("target/example-output/simulate-corpus");
    std::fs::create_dir_all(&out).expect("create output dir");

    println!(
        "{:<22} {:>9} {:>13} {:>13}",
        "image", "psnr(dB)", "T range", "D nonzero"
    );
    for kind in DegradationKind::ALL {
        for seed in 0..3u64 {
            let clean = synthetic_clean(96, 96, 40 + seed);
            let params = SimParams::new(kind, seed);
            let (degraded, matrices) = simulate(&clean, &params)?;

            let stem = format!("{kind}_{seed}");
            save_image(&degraded, out.join(format!("{stem}.png")))?;
            save_image(&clean, out.join(format!("{stem}.clean.png")))?;
            write_matrices(out.join(format!("{stem}.td")), &matrices)?;

            let t_lo = matrices
                .t
                .data()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let t_hi = matrices.t.data().iter().copied().fold(0.0f64, f64::max);
            let nonzero = matrices.d.data().iter().filter(|&&v| v != 0.0).count();
            let frac = nonzero as f64 / matrices.d.data().len() as f64;
            println!(
                "{stem:<22} {:>9.2} [{t_lo:.3}, {t_hi:.3}] {:>12.1}%",
                psnr(&degraded, &clean)?,
                100.0 * frac
            );
        }
    }
    println!("\nwrote corpus to {}", out.display());
    Ok(())
}

//! The proximal operators up close: what each one does to a noisy input and
//! how the prox objective behaves.
//!
//! ```bash
//! cargo run --release --example proximal_priors
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unfold_restore::priors::{prox_objective, PriorOperator};
use unfold_restore::raster::Image;

fn main() -> unfold_restore::Result<()> {
    // Piecewise-constant image with sparse impulses: the classic TV case.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut z = Image::constant(24, 24, 0.35);
    for y in 12..24 {
        for x in 0..24 {
            for c in 0..3 {
                z.set(y, x, c, 0.65);
            }
        }
    }
    for _ in 0..20 {
        let (y, x) = (rng.gen_range(0..24), rng.gen_range(0..24));
        for c in 0..3 {
            z.set(y, x, c, rng.gen_range(0.0..1.0));
        }
    }

    let gamma = 1.0;
    let ops = [
        ("identity", PriorOperator::Identity),
        (
            "box clamp [0,1]",
            PriorOperator::BoxClamp { lo: 0.0, hi: 1.0 },
        ),
        (
            "soft threshold 0.05",
            PriorOperator::SoftThreshold { lambda: 0.05 },
        ),
        ("tikhonov 0.3", PriorOperator::tikhonov(0.3)),
        ("tv 0.08", PriorOperator::tv(0.08)),
    ];
    println!(
        "{:<22} {:>12} {:>12} {:>10} {:>8}",
        "operator", "obj(input)", "obj(output)", "moved L2", "exact"
    );
    for (name, op) in ops {
        let out = op.prox(&z, gamma)?;
        let moved: f64 = z
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        println!(
            "{name:<22} {:>12.5} {:>12.5} {:>10.4} {:>8}",
            prox_objective(&op, &z, &z, gamma),
            prox_objective(&op, &z, &out, gamma),
            moved,
            op.is_exact()
        );
    }

    // The smoothing prox solves its linear system to solver precision.
    let noisy = Image::new(
        8,
        8,
        (0..8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let op = PriorOperator::tikhonov(0.5);
    let solved = op.prox(&noisy, 0.7)?;
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        let plane: Vec<f64> = (0..64).map(|i| noisy.get(i / 8, i % 8, c)).collect();
        let dense = unfold_restore::oracle::dense_tikhonov_solve(8, 8, &plane, 0.7, 0.5);
        for (i, dv) in dense.iter().enumerate() {
            worst = worst.max((solved.get(i / 8, i % 8, c) - dv).abs());
        }
    }
    println!("\nconjugate gradient vs dense solve on 8x8: max |difference| = {worst:.2e}");
    Ok(())
}

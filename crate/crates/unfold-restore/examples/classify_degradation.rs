//! Runs the heuristic degradation classifier over a seeded corpus and
//! prints the confusion matrix and the features it thresholds.
//!
//! ```bash
//! cargo run --release --example classify_degradation
//! ```

use unfold_restore::degrade::{simulate, synthetic_clean, DegradationKind, SimParams};
use unfold_restore::init::{classify, directional_energy_ratio};

fn main() -> unfold_restore::Result<()> {
    let per_kind = 40u64;
    let mut confusion = [[0usize; 3]; 3];

    for kind in DegradationKind::ALL {
        for seed in 0..per_kind {
            let clean = synthetic_clean(64, 64, 1000 + seed);
            let (degraded, _) = simulate(&clean, &SimParams::new(kind, seed))?;
            confusion[kind as usize][classify(&degraded) as usize] += 1;
        }
    }

    println!("confusion matrix ({per_kind} images per kind):");
    println!(
        "{:<12} {:>6} {:>6} {:>9}",
        "true \\ pred", "rain", "haze", "lowlight"
    );
    for kind in DegradationKind::ALL {
        let row = confusion[kind as usize];
        println!(
            "{:<12} {:>6} {:>6} {:>9}",
            kind.as_str(),
            row[0],
            row[1],
            row[2]
        );
    }
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    println!(
        "accuracy: {correct}/{} = {:.1}%\n",
        3 * per_kind,
        100.0 * correct as f64 / (3.0 * per_kind as f64)
    );

    // The features behind the decisions, on one example of each kind.
    println!(
        "{:<10} {:>14} {:>18}",
        "kind", "mean luminance", "direction ratio"
    );
    for kind in DegradationKind::ALL {
        let clean = synthetic_clean(64, 64, 1234);
        let (degraded, _) = simulate(&clean, &SimParams::new(kind, 0))?;
        println!(
            "{:<10} {:>14.3} {:>18.3}",
            kind.as_str(),
            degraded.mean_luminance(),
            directional_energy_ratio(&degraded)
        );
    }
    println!("\nrule: lowlight if luminance < 0.18, rain if ratio > 1.5, haze otherwise");
    Ok(())
}

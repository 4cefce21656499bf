//! Quality metrics and loss functions: PSNR/SSIM behavior, the step-weight
//! schedules, and the losses evaluated on a real restoration trace.
//!
//! ```bash
//! cargo run --release --example evaluate_metrics
//! ```

use unfold_restore::degrade::{simulate, synthetic_clean, DegradationKind, SimParams};
use unfold_restore::init::estimate_initial;
use unfold_restore::metrics::{l_deg, l_res, l_sup, psnr, ssim, step_weights, WeightSchedule};
use unfold_restore::solver::{run, SolverConfig};

fn main() -> unfold_restore::Result<()> {
    let x = synthetic_clean(64, 64, 61);
    println!(
        "identical pair: psnr {:.1} dB, ssim {:.6}",
        psnr(&x, &x)?,
        ssim(&x, &x)?
    );
    let y = x.map(|v| (v * 0.8) + 0.1);
    println!(
        "contrast-compressed pair: psnr {:.2} dB, ssim {:.4}, l_sup {:.4}\n",
        psnr(&x, &y)?,
        ssim(&x, &y)?,
        l_sup(&y, &x, 1e-3)?
    );

    println!("step-weight schedules (S = 6):");
    for schedule in [
        WeightSchedule::Log,
        WeightSchedule::Linear,
        WeightSchedule::Exp,
    ] {
        let w = step_weights(schedule, 6)?;
        let cells: Vec<String> = w.weights.iter().map(|v| format!("{v:.4}")).collect();
        println!("  {schedule:?}: [{}]", cells.join(", "));
    }

    // Losses over an actual run: later steps dominate the restoration loss.
    let clean = synthetic_clean(64, 64, 62);
    let reference_clean = synthetic_clean(64, 64, 63);
    let params = SimParams::new(DegradationKind::LowLight, 3);
    let (degraded, _) = simulate(&clean, &params)?;
    let (ref_degraded, _) = simulate(&reference_clean, &params)?;
    let cfg = SolverConfig::default_for(DegradationKind::LowLight);
    let m0 = estimate_initial(&degraded, DegradationKind::LowLight);
    let result = run(
        &degraded,
        &ref_degraded,
        &reference_clean,
        &m0,
        &cfg,
        Some(DegradationKind::LowLight),
        vec![],
    )?;

    let weights = step_weights(WeightSchedule::Exp, cfg.steps)?;
    let res_loss = l_res(&result.trace_b, &clean, &weights, 1e-3)?;
    let deg_loss = l_deg(
        &result.trace_td_hat,
        (&ref_degraded, &reference_clean),
        &weights,
        1e-3,
    )?;
    println!("\nlow-light run losses with exponential weights:");
    println!("  restoration loss {res_loss:.4}");
    println!("  modeling loss    {deg_loss:.4}");
    println!("  total            {:.4}", res_loss + deg_loss);
    println!("  (floor at perfect reconstruction is the Charbonnier xi = 1e-3)");
    Ok(())
}

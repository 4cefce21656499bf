//! Quality metrics and the training-style loss functions.
//!
//! PSNR and SSIM are the evaluation metrics; the losses combine an SSIM term
//! with a Charbonnier term and weight the per-step outputs with growing
//! schedules, exponential by default.

use serde::{Deserialize, Serialize};

use crate::degrade::DegradationKind;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_shape, Image};
use crate::util::kahan_sum;

/// PSNR cap used as the zero-MSE sentinel.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over all channels, unit dynamic range.
/// Identical images report the 100 dB sentinel.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    ensure_same_shape(x, y)?;
    let n = x.data().len() as f64;
    let mse = kahan_sum(
        x.data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b)),
    ) / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1; computed per channel over fully interior
/// windows, then averaged across channels.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    ensure_same_shape(x, y)?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim requires min dimension >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut channel_means = [0.0f64; 3];
    for (c, channel_mean) in channel_means.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let mut mu_x = 0.0;
                let mut mu_y = 0.0;
                let mut xx = 0.0;
                let mut yy = 0.0;
                let mut xy = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let weight = window[ky * SSIM_WINDOW + kx];
                        let a = x.get(wy + ky, wx + kx, c);
                        let b = y.get(wy + ky, wx + kx, c);
                        mu_x += weight * a;
                        mu_y += weight * b;
                        xx += weight * a * a;
                        yy += weight * b * b;
                        xy += weight * a * b;
                    }
                }
                let var_x = xx - mu_x * mu_x;
                let var_y = yy - mu_y * mu_y;
                let cov = xy - mu_x * mu_y;
                let value = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                    / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
                acc += value;
                count += 1;
            }
        }
        *channel_mean = acc / count as f64;
    }
    Ok((channel_means[0] + channel_means[1] + channel_means[2]) / 3.0)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut window = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -r..=r {
        for x in -r..=r {
            window.push((-((x * x + y * y) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = window.iter().sum();
    for v in &mut window {
        *v /= total;
    }
    window
}

/// Supervision loss: `(1 - SSIM(yhat, y)) + mean sqrt((yhat - y)^2 + xi^2)`.
/// The Charbonnier term is mean-reduced so the loss is
/// resolution-independent; its floor at zero error is exactly `xi`.
pub fn l_sup(yhat: &Image, y: &Image, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument("xi must be > 0".into()));
    }
    let s = ssim(yhat, y)?;
    let n = y.data().len() as f64;
    let charbonnier = kahan_sum(
        yhat.data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| ((a - b) * (a - b) + xi * xi).sqrt()),
    ) / n;
    Ok((1.0 - s) + charbonnier)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSchedule {
    Log,
    Linear,
    Exp,
}

/// Normalized per-step loss weights, strictly increasing in the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub schedule: WeightSchedule,
    pub steps: usize,
    pub weights: Vec<f64>,
}

/// Weight schedules over steps `k = 1..=steps`:
/// exponential `2^k / sum 2^i`, linear `k / sum i`, logarithmic
/// `log2(k+1) / sum log2(i+1)`.
pub fn step_weights(schedule: WeightSchedule, steps: usize) -> Result<LossWeights> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let raw: Vec<f64> = (1..=steps)
        .map(|k| match schedule {
            WeightSchedule::Exp => (k as f64).exp2(),
            WeightSchedule::Linear => k as f64,
            WeightSchedule::Log => ((k + 1) as f64).log2(),
        })
        .collect();
    let total = kahan_sum(raw.iter().copied());
    Ok(LossWeights {
        schedule,
        steps,
        weights: raw.iter().map(|r| r / total).collect(),
    })
}

/// Weighted restoration loss over the full per-step trace.
pub fn l_res(trace_b: &[Image], b_gt: &Image, weights: &LossWeights, xi: f64) -> Result<f64> {
    if trace_b.len() != weights.weights.len() {
        return Err(Error::InvalidArgument(format!(
            "trace length {} does not match {} weights",
            trace_b.len(),
            weights.weights.len()
        )));
    }
    let mut terms = Vec::with_capacity(trace_b.len());
    for (b_k, w) in trace_b.iter().zip(&weights.weights) {
        terms.push(w * l_sup(b_k, b_gt, xi)?);
    }
    Ok(kahan_sum(terms.into_iter()))
}

/// Weighted modeling loss over the pre-transfer matrix trace; term `k`
/// compares `That_k ∘ B_ref + Dhat_k` with the degraded reference. The trace
/// has `steps - 1` entries and the weights are renormalized over them; a
/// single-step run has no matrix updates and reports zero.
pub fn l_deg(
    trace_td_hat: &[(Image, Image)],
    reference: (&Image, &Image),
    weights: &LossWeights,
    xi: f64,
) -> Result<f64> {
    let (o_ref, b_ref) = reference;
    let expected = weights.weights.len().saturating_sub(1);
    if trace_td_hat.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "matrix trace length {} does not match steps - 1 = {expected}",
            trace_td_hat.len()
        )));
    }
    if expected == 0 {
        return Ok(0.0);
    }
    let partial = kahan_sum(weights.weights[..expected].iter().copied());
    let mut terms = Vec::with_capacity(expected);
    for ((t_hat, d_hat), w) in trace_td_hat.iter().zip(&weights.weights) {
        ensure_same_shape(t_hat, o_ref)?;
        let mut pred = b_ref.clone();
        let (t, d) = (t_hat.data(), d_hat.data());
        for (i, v) in pred.data_mut().iter_mut().enumerate() {
            *v = t[i] * *v + d[i];
        }
        terms.push((w / partial) * l_sup(&pred, o_ref, xi)?);
    }
    Ok(kahan_sum(terms.into_iter()))
}

pub fn l_total(
    trace_b: &[Image],
    b_gt: &Image,
    trace_td_hat: &[(Image, Image)],
    reference: (&Image, &Image),
    weights: &LossWeights,
    xi: f64,
) -> Result<f64> {
    Ok(l_res(trace_b, b_gt, weights, xi)? + l_deg(trace_td_hat, reference, weights, xi)?)
}

/// One evaluated image: per-step quality traces plus identification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub kind: Option<DegradationKind>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::synthetic_clean;

    #[test]
    fn psnr_uniform_offset_is_twenty_db() {
        let x = synthetic_clean(16, 16, 1).map(|v| 0.8 * v);
        let y = x.map(|v| v + 0.1);
        let p = psnr(&x, &y).unwrap();
        assert!((p - 20.0).abs() <= 1e-9, "psnr {p}");
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let x = synthetic_clean(16, 16, 2);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_is_symmetric_and_matches_reimplementation() {
        let x = synthetic_clean(24, 24, 3);
        let y = synthetic_clean(24, 24, 4);
        let p1 = psnr(&x, &y).unwrap();
        let p2 = psnr(&y, &x).unwrap();
        assert!((p1 - p2).abs() <= 1e-12);
        // Independent straightforward reimplementation.
        let mut acc = 0.0;
        for (a, b) in x.data().iter().zip(y.data()) {
            acc += (a - b) * (a - b);
        }
        let mse = acc / x.data().len() as f64;
        let reference = 10.0 * (1.0 / mse).log10();
        assert!((p1 - reference).abs() <= 1e-10);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let x = synthetic_clean(32, 32, 5);
        let y = synthetic_clean(32, 32, 6);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn ssim_constant_pair_luminance_term() {
        let x = Image::constant(16, 16, 0.5);
        let y = Image::constant(16, 16, 0.7);
        // Contrast and structure terms are 1 for constants; the luminance
        // term is (2 * 0.5 * 0.7 + C1) / (0.25 + 0.49 + C1).
        let expected = (2.0 * 0.5 * 0.7 + 1e-4) / (0.25 + 0.49 + 1e-4);
        assert!((ssim(&x, &y).unwrap() - expected).abs() <= 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = Image::constant(8, 32, 0.5);
        assert!(matches!(ssim(&x, &x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn l_sup_floor_is_xi() {
        let x = synthetic_clean(16, 16, 7);
        let v = l_sup(&x, &x, 1e-3).unwrap();
        assert_eq!(v, 1e-3);
    }

    #[test]
    fn l_sup_uniform_error_formula() {
        let y = synthetic_clean(16, 16, 8).map(|v| 0.8 * v);
        let yhat = y.map(|v| v + 0.1);
        let s = ssim(&yhat, &y).unwrap();
        let expected = (1.0 - s) + (0.01f64 + 1e-6).sqrt();
        assert!((l_sup(&yhat, &y, 1e-3).unwrap() - expected).abs() <= 1e-12);
        assert!(l_sup(&yhat, &y, 1e-3).unwrap() >= 1e-3);
    }

    #[test]
    fn exp_weights_match_table() {
        let w = step_weights(WeightSchedule::Exp, 6).unwrap();
        let expected: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|v| v / 126.0)
            .collect();
        for (a, b) in w.weights.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((w.weights[5] - 32.0 / 63.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_weights_match_table() {
        let w = step_weights(WeightSchedule::Linear, 6).unwrap();
        for (k, v) in w.weights.iter().enumerate() {
            assert!((v - (k + 1) as f64 / 21.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn weights_normalized_and_increasing() {
        for schedule in [
            WeightSchedule::Log,
            WeightSchedule::Linear,
            WeightSchedule::Exp,
        ] {
            for steps in [1usize, 2, 3, 6, 9] {
                let w = step_weights(schedule, steps).unwrap();
                let sum = kahan_sum(w.weights.iter().copied());
                assert!((sum - 1.0).abs() <= 1e-12);
                for pair in w.weights.windows(2) {
                    assert!(pair[1] > pair[0]);
                }
            }
        }
    }

    #[test]
    fn perfect_restoration_trace_hits_loss_floor() {
        let b_gt = synthetic_clean(16, 16, 9);
        let trace: Vec<Image> = (0..6).map(|_| b_gt.clone()).collect();
        let w = step_weights(WeightSchedule::Exp, 6).unwrap();
        let loss = l_res(&trace, &b_gt, &w, 1e-3).unwrap();
        assert!((loss - 1e-3).abs() < 1e-16, "loss {loss:.20}");
    }

    #[test]
    fn exact_matrices_hit_degradation_loss_floor() {
        let b_ref = synthetic_clean(16, 16, 10).map(|v| 0.2 + 0.5 * v);
        let t = Image::constant(16, 16, 0.6);
        let d = Image::constant(16, 16, 0.2);
        // Compose the reference observation with the same elementwise
        // expression the loss uses; nothing clamps because values stay in
        // range.
        let mut o_ref = b_ref.clone();
        for (i, v) in o_ref.data_mut().iter_mut().enumerate() {
            *v = t.data()[i] * *v + d.data()[i];
        }
        let trace: Vec<(Image, Image)> = (0..5).map(|_| (t.clone(), d.clone())).collect();
        let w = step_weights(WeightSchedule::Exp, 6).unwrap();
        let loss = l_deg(&trace, (&o_ref, &b_ref), &w, 1e-3).unwrap();
        assert!((loss - 1e-3).abs() < 1e-16, "loss {loss:.20}");
    }

    #[test]
    fn single_step_run_has_zero_matrix_loss() {
        let b_ref = synthetic_clean(16, 16, 11);
        let w = step_weights(WeightSchedule::Exp, 1).unwrap();
        let loss = l_deg(&[], (&b_ref, &b_ref), &w, 1e-3).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn trace_length_mismatch_rejected() {
        let b_gt = synthetic_clean(16, 16, 12);
        let w = step_weights(WeightSchedule::Exp, 6).unwrap();
        assert!(l_res(std::slice::from_ref(&b_gt), &b_gt, &w, 1e-3).is_err());
        assert!(l_deg(&[], (&b_gt, &b_gt), &w, 1e-3).is_err());
    }
}

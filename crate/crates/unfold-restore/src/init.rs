//! Degradation-type classification and initial matrix estimation.
//!
//! Both replace pretrained networks with the classical closed-form
//! estimators for the three supported degradation models: a median high-pass
//! residual for rain streaks, the dark-channel prior for haze transmission,
//! and a blurred max-RGB illumination map for low light. Thresholds live in
//! [`ClassifierThresholds`] and are covered by the classifier accuracy
//! criterion.

use crate::degrade::{DegradationKind, DegradationMatrices, EPS_T};
use crate::raster::Image;

#[derive(Debug, Clone, Copy)]
pub struct ClassifierThresholds {
    /// Mean luminance below this is low light.
    pub luminance: f64,
    /// Directional high-frequency energy ratio above this is rain.
    pub energy_ratio: f64,
    /// Dark-channel mean above this confirms haze (the fallback is haze
    /// either way).
    pub dark_channel: f64,
    /// Dark-channel window.
    pub patch: usize,
    /// Haze transmission weight.
    pub omega: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self {
            luminance: 0.18,
            energy_ratio: 1.5,
            dark_channel: 0.4,
            patch: 15,
            omega: 0.95,
        }
    }
}

/// Heuristic degradation classifier.
///
/// Low light when the scene is globally dark; rain when one gradient
/// orientation dominates the high-frequency energy; haze otherwise.
pub fn classify(o: &Image) -> DegradationKind {
    classify_with(o, &ClassifierThresholds::default())
}

pub fn classify_with(o: &Image, th: &ClassifierThresholds) -> DegradationKind {
    if o.mean_luminance() < th.luminance {
        return DegradationKind::LowLight;
    }
    if directional_energy_ratio(o) > th.energy_ratio {
        return DegradationKind::Rain;
    }
    // Both branches resolve to haze; the dark-channel test only informs the
    // decision path.
    let dc = dark_channel(o, th.patch);
    let dc_mean = dc.iter().sum::<f64>() / dc.len() as f64;
    let _ = dc_mean > th.dark_channel;
    DegradationKind::Haze
}

/// Max over four orientations of oriented-gradient energy, divided by their
/// mean. Diagonal differences are normalized by the squared step length.
/// Returns 1 (isotropic) for images with no high-frequency content.
pub fn directional_energy_ratio(o: &Image) -> f64 {
    let (h, w) = (o.height(), o.width());
    let mut luma = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            luma[y * w + x] = o.luminance(y, x);
        }
    }
    // Orientations: 0 deg, 45 deg, 90 deg, 135 deg as (dx, dy) steps.
    let steps = [(1i64, 0i64), (1, 1), (0, 1), (-1, 1)];
    let mut energies = [0.0f64; 4];
    for (ei, &(dx, dy)) in steps.iter().enumerate() {
        let mut acc = 0.0;
        let mut count = 0usize;
        let norm = (dx * dx + dy * dy) as f64;
        for y in 0..h {
            let y2 = y as i64 + dy;
            if y2 < 0 || y2 >= h as i64 {
                continue;
            }
            for x in 0..w {
                let x2 = x as i64 + dx;
                if x2 < 0 || x2 >= w as i64 {
                    continue;
                }
                let diff = luma[y2 as usize * w + x2 as usize] - luma[y * w + x];
                acc += diff * diff / norm;
                count += 1;
            }
        }
        energies[ei] = if count > 0 { acc / count as f64 } else { 0.0 };
    }
    let mean = energies.iter().sum::<f64>() / 4.0;
    if mean < 1e-15 {
        return 1.0;
    }
    energies.iter().copied().fold(0.0, f64::max) / mean
}

/// Per-kind initial estimate of the degradation matrices.
pub fn estimate_initial(o: &Image, kind: DegradationKind) -> DegradationMatrices {
    estimate_initial_with(o, kind, &ClassifierThresholds::default())
}

pub fn estimate_initial_with(
    o: &Image,
    kind: DegradationKind,
    th: &ClassifierThresholds,
) -> DegradationMatrices {
    let (h, w) = (o.height(), o.width());
    match kind {
        DegradationKind::Rain => {
            let median = median_filter(o, 2);
            let d = o
                .zip_map(&median, |a, b| (a - b).clamp(0.0, 1.0))
                .expect("same shape");
            DegradationMatrices {
                t: Image::constant(h, w, 1.0),
                d,
            }
        }
        DegradationKind::Haze => {
            let dc = dark_channel(o, th.patch);
            let a = atmospheric_light(o, &dc);
            // Dark channel of O / A, then the transmission estimate.
            let normalized = {
                let mut img = o.clone();
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..3 {
                            img.set(y, x, c, o.get(y, x, c) / a[c]);
                        }
                    }
                }
                img
            };
            let dc_norm = dark_channel(&normalized, th.patch);
            let mut t = Image::zeros(h, w);
            let mut d = Image::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let tv = (1.0 - th.omega * dc_norm[y * w + x]).clamp(EPS_T, 1.0);
                    for c in 0..3 {
                        t.set(y, x, c, tv);
                        d.set(y, x, c, ((1.0 - tv) * a[c]).clamp(-1.0, 1.0));
                    }
                }
            }
            DegradationMatrices { t, d }
        }
        DegradationKind::LowLight => {
            let max_rgb: Vec<f64> = (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    o.get(y, x, 0).max(o.get(y, x, 1)).max(o.get(y, x, 2))
                })
                .collect();
            let sigma = h as f64 / 16.0;
            let blurred = gaussian_blur_plane(&max_rgb, h, w, sigma);
            let mut t = Image::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let tv = blurred[y * w + x].clamp(EPS_T, 1.0);
                    for c in 0..3 {
                        t.set(y, x, c, tv);
                    }
                }
            }
            DegradationMatrices {
                t,
                d: Image::zeros(h, w),
            }
        }
    }
}

/// Per-channel mean of the brightest 0.1% dark-channel pixels, with a
/// deterministic tie order.
fn atmospheric_light(o: &Image, dark: &[f64]) -> [f64; 3] {
    let n = dark.len();
    let take = ((n as f64 * 0.001).round() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dark[j].partial_cmp(&dark[i]).unwrap().then(i.cmp(&j)));
    let mut a = [0.0f64; 3];
    let w = o.width();
    for &i in order.iter().take(take) {
        let (y, x) = (i / w, i % w);
        for (c, ac) in a.iter_mut().enumerate() {
            *ac += o.get(y, x, c);
        }
    }
    for ac in &mut a {
        *ac = (*ac / take as f64).max(1e-6);
    }
    a
}

/// Min over channels followed by a windowed min; the window is truncated at
/// the image border.
pub fn dark_channel(o: &Image, patch: usize) -> Vec<f64> {
    let (h, w) = (o.height(), o.width());
    let r = patch / 2;
    let mut chan_min = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            chan_min[y * w + x] = o.get(y, x, 0).min(o.get(y, x, 1)).min(o.get(y, x, 2));
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            let mut m = f64::INFINITY;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    m = m.min(chan_min[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Per-channel windowed median with border-truncated windows; `radius` 2
/// gives the 5x5 filter.
fn median_filter(o: &Image, radius: usize) -> Image {
    let (h, w) = (o.height(), o.width());
    let mut out = Image::zeros(h, w);
    let mut window = Vec::with_capacity((2 * radius + 1) * (2 * radius + 1));
    for c in 0..3 {
        for y in 0..h {
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(w - 1);
                window.clear();
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        window.push(o.get(yy, xx, c));
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.set(y, x, c, window[window.len() / 2]);
            }
        }
    }
    out
}

/// Separable Gaussian blur with mirrored boundary, kernel radius `3 sigma`.
fn gaussian_blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let mirror = |i: i64, n: i64| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let xx = mirror(x as i64 + ki as i64 - radius, w as i64);
                acc += k * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let yy = mirror(y as i64 + ki as i64 - radius, h as i64);
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

//! Degradation prior transmitter: maps reference-oriented degradation
//! matrices onto the target image by deterministic patch-similarity
//! attention.
//!
//! Matrices fitted against a reference pair describe the reference instance.
//! To make them target-relevant, both images are reduced to coarse pooled
//! patch features, every target patch attends over all reference patches
//! (softmax of negative squared feature distance), and the attended
//! patch-level matrices are bilinearly upsampled and blended with the
//! previous iterate. Working at a coarse 16x pooling keeps the features
//! closer to instance-independent statistics than fine-grained ones.

use serde::{Deserialize, Serialize};

use crate::degrade::EPS_T;
use crate::error::{Error, Result};
use crate::raster::{downsample_avg, ensure_same_shape, FeatureGrid, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DptConfig {
    /// Pooling patch size for feature extraction and matrix transfer.
    pub patch: usize,
    /// Softmax temperature on squared feature distances.
    pub tau: f64,
    /// Blend weight: 0 keeps the previous matrices, 1 takes the pure
    /// transfer.
    pub rho: f64,
}

impl Default for DptConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            tau: 0.1,
            rho: 0.5,
        }
    }
}

impl DptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::InvalidArgument("dpt.patch must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("dpt.tau must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument("dpt.rho must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Pooled patch features of an image (per-channel patch means).
pub fn extract_features(img: &Image, patch: usize) -> Result<FeatureGrid> {
    downsample_avg(img, patch)
}

/// Row-stochastic attention matrix between two feature grids.
///
/// `a[i][j] = softmax_j(-||f_tgt[i] - f_ref[j]||^2 / tau)`; every row sums
/// to 1 and all weights are nonnegative.
pub fn attention_matrix(f_tgt: &FeatureGrid, f_ref: &FeatureGrid, tau: f64) -> Vec<Vec<f64>> {
    let n_tgt = f_tgt.cells();
    let n_ref = f_ref.cells();
    let mut rows = Vec::with_capacity(n_tgt);
    for i in 0..n_tgt {
        let fi = f_tgt.cell(i / f_tgt.cols, i % f_tgt.cols);
        let mut logits = Vec::with_capacity(n_ref);
        for j in 0..n_ref {
            let fj = f_ref.cell(j / f_ref.cols, j % f_ref.cols);
            let dist2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            logits.push(-dist2 / tau);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = row.iter().sum();
        for v in &mut row {
            *v /= total;
        }
        rows.push(row);
    }
    rows
}

/// Transfers `(that, dhat)` from the reference onto the target and blends
/// with the previous matrices:
///
/// 1. pooled features of `b_k` and `b_ref` at `cfg.patch`,
/// 2. attention of target patches over reference patches,
/// 3. attended patch-level matrices, bilinearly upsampled to full size,
/// 4. `t_k = clamp((1-rho) t_prev + rho t_transfer, EPS_T, 1)` and the
///    analogous `d_k` clamped to `[-1, 1]`.
pub fn transfer(
    that: &Image,
    dhat: &Image,
    b_k: &Image,
    b_ref: &Image,
    t_prev: &Image,
    d_prev: &Image,
    cfg: &DptConfig,
) -> Result<(Image, Image)> {
    let (t, d, _) = transfer_with_attention(that, dhat, b_k, b_ref, t_prev, d_prev, cfg)?;
    Ok((t, d))
}

/// As [`transfer`], also returning the attention matrix for inspection.
pub fn transfer_with_attention(
    that: &Image,
    dhat: &Image,
    b_k: &Image,
    b_ref: &Image,
    t_prev: &Image,
    d_prev: &Image,
    cfg: &DptConfig,
) -> Result<(Image, Image, Vec<Vec<f64>>)> {
    cfg.validate()?;
    for img in [dhat, b_k, b_ref, t_prev, d_prev] {
        ensure_same_shape(that, img)?;
    }
    let f_tgt = extract_features(b_k, cfg.patch)?;
    let f_ref = extract_features(b_ref, cfg.patch)?;
    let attention = attention_matrix(&f_tgt, &f_ref, cfg.tau);

    let that_pooled = downsample_avg(that, cfg.patch)?;
    let dhat_pooled = downsample_avg(dhat, cfg.patch)?;
    let t_grid = attend(&attention, &f_tgt, &that_pooled);
    let d_grid = attend(&attention, &f_tgt, &dhat_pooled);

    let t_tr = bilinear_upsample(&t_grid, that.height(), that.width(), cfg.patch);
    let d_tr = bilinear_upsample(&d_grid, that.height(), that.width(), cfg.patch);

    let rho = cfg.rho;
    let t_k = t_prev
        .zip_map(&t_tr, |prev, tr| (1.0 - rho) * prev + rho * tr)?
        .clamped(EPS_T, 1.0);
    let d_k = d_prev
        .zip_map(&d_tr, |prev, tr| (1.0 - rho) * prev + rho * tr)?
        .clamped(-1.0, 1.0);
    Ok((t_k, d_k, attention))
}

/// Attention-weighted combination of pooled payload cells, one output cell
/// per target patch.
fn attend(attention: &[Vec<f64>], f_tgt: &FeatureGrid, payload: &FeatureGrid) -> FeatureGrid {
    let mut out = FeatureGrid::new(f_tgt.rows, f_tgt.cols, 3);
    for (i, row) in attention.iter().enumerate() {
        for c in 0..3 {
            let mut acc = 0.0;
            for (j, &weight) in row.iter().enumerate() {
                acc += weight * payload.get(j / payload.cols, j % payload.cols, c);
            }
            out.set(i / out.cols, i % out.cols, c, acc);
        }
    }
    out
}

/// Bilinear upsampling of a patch grid back to pixel resolution. Pixel
/// centers map onto patch centers; coordinates are clamped at the grid
/// border.
fn bilinear_upsample(grid: &FeatureGrid, height: usize, width: usize, patch: usize) -> Image {
    let mut out = Image::zeros(height, width);
    let p = patch as f64;
    for y in 0..height {
        let gy = ((y as f64 + 0.5) / p - 0.5).clamp(0.0, (grid.rows - 1) as f64);
        let y0 = gy.floor() as usize;
        let y1 = (y0 + 1).min(grid.rows - 1);
        let wy = gy - y0 as f64;
        for x in 0..width {
            let gx = ((x as f64 + 0.5) / p - 0.5).clamp(0.0, (grid.cols - 1) as f64);
            let x0 = gx.floor() as usize;
            let x1 = (x0 + 1).min(grid.cols - 1);
            let wx = gx - x0 as f64;
            for c in 0..3 {
                let top = grid.get(y0, x0, c) * (1.0 - wx) + grid.get(y0, x1, c) * wx;
                let bot = grid.get(y1, x0, c) * (1.0 - wx) + grid.get(y1, x1, c) * wx;
                out.set(y, x, c, top * (1.0 - wy) + bot * wy);
            }
        }
    }
    out
}

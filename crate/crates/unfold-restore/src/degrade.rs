//! Forward degradation models and seeded synthetic simulators.
//!
//! Every supported corruption is an instance of one generalized process:
//! `O = T ∘ B + D` with a multiplicative transmission map `T` and an additive
//! degradation map `D` (all products elementwise). The task-specific forms
//! reduce to:
//!
//! * rain:      `O = B + R`        → `T = 1`,          `D = R`
//! * haze:      `O = TB + (1-T)A`  → `D = (1 - T) ∘ A`
//! * low light: `O = IB`           → `T = I`,          `D = 0`
//!
//! The simulators return `(O, T, D)` triples with known ground truth so that
//! restoration quality can be measured without external datasets.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{ensure_same_shape, Image};

/// Lower clamp for transmission maps; keeps the model inversion bounded.
pub const EPS_T: f64 = 1e-3;

/// Division guard used when inverting the degradation model.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Rain,
    Haze,
    #[serde(rename = "lowlight")]
    LowLight,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 3] = [
        DegradationKind::Rain,
        DegradationKind::Haze,
        DegradationKind::LowLight,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DegradationKind::Rain => "rain",
            DegradationKind::Haze => "haze",
            DegradationKind::LowLight => "lowlight",
        }
    }
}

impl std::str::FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rain" => Ok(DegradationKind::Rain),
            "haze" => Ok(DegradationKind::Haze),
            "lowlight" => Ok(DegradationKind::LowLight),
            other => Err(Error::InvalidArgument(format!(
                "unknown degradation kind '{other}' (expected rain|haze|lowlight)"
            ))),
        }
    }
}

impl std::fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Paired transmission map `T` and degradation map `D`.
///
/// Invariants: `T` elementwise in `[EPS_T, 1]`, `D` in `[-1, 1]`, equal
/// shapes. The solver's auxiliary variables share the shape constraints but
/// are not range-clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationMatrices {
    pub t: Image,
    pub d: Image,
}

impl DegradationMatrices {
    pub fn new(t: Image, d: Image) -> Result<Self> {
        ensure_same_shape(&t, &d)?;
        Ok(Self { t, d })
    }

    /// Identity degradation: `T = 1`, `D = 0`.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            t: Image::constant(height, width, 1.0),
            d: Image::zeros(height, width),
        }
    }

    /// Re-applies the range invariants.
    pub fn clamp_ranges(&mut self) {
        self.t.clamp_in_place(EPS_T, 1.0);
        self.d.clamp_in_place(-1.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RainParams {
    pub streak_count: usize,
    pub angle_deg: f64,
    pub length_px: f64,
    pub intensity: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        // Tuned for 64x64 test images: nonzero fraction of D stays below 10%.
        Self {
            streak_count: 10,
            angle_deg: 75.0,
            length_px: 10.0,
            intensity: 0.55,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HazeParams {
    /// Atmospheric light in `[0.7, 1]`.
    pub atmospheric_light: f64,
    pub depth_scale: f64,
}

impl Default for HazeParams {
    fn default() -> Self {
        Self {
            atmospheric_light: 0.9,
            depth_scale: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LowLightParams {
    /// Gamma exponent in `[2, 5]` applied to the illumination field.
    pub gamma_exponent: f64,
    /// Larger values give a smoother (lower-frequency) illumination field.
    pub spatial_smoothness: f64,
}

impl Default for LowLightParams {
    fn default() -> Self {
        Self {
            gamma_exponent: 2.5,
            spatial_smoothness: 1.0,
        }
    }
}

/// Full simulator parameterization; `seed` determines the output completely.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub kind: DegradationKind,
    pub seed: u64,
    #[serde(default)]
    pub rain: RainParams,
    #[serde(default)]
    pub haze: HazeParams,
    #[serde(default)]
    pub lowlight: LowLightParams,
}

impl SimParams {
    pub fn new(kind: DegradationKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            rain: RainParams::default(),
            haze: HazeParams::default(),
            lowlight: LowLightParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(msg.to_string()))
            }
        };
        check(self.rain.streak_count > 0, "rain.streak_count must be > 0")?;
        check(
            self.rain.length_px > 0.0 && self.rain.length_px.is_finite(),
            "rain.length_px must be positive",
        )?;
        check(
            self.rain.intensity > 0.0 && self.rain.intensity <= 1.0,
            "rain.intensity must be in (0, 1]",
        )?;
        check(
            self.rain.angle_deg.is_finite(),
            "rain.angle_deg must be finite",
        )?;
        check(
            (0.7..=1.0).contains(&self.haze.atmospheric_light),
            "haze.atmospheric_light must be in [0.7, 1]",
        )?;
        check(
            self.haze.depth_scale > 0.0 && self.haze.depth_scale.is_finite(),
            "haze.depth_scale must be positive",
        )?;
        check(
            (2.0..=5.0).contains(&self.lowlight.gamma_exponent),
            "lowlight.gamma_exponent must be in [2, 5]",
        )?;
        check(
            self.lowlight.spatial_smoothness > 0.0 && self.lowlight.spatial_smoothness.is_finite(),
            "lowlight.spatial_smoothness must be positive",
        )
    }
}

/// Composes the generalized degradation: `O = clamp(T ∘ B + D, 0, 1)`.
pub fn apply_model(b: &Image, m: &DegradationMatrices) -> Result<Image> {
    ensure_same_shape(b, &m.t)?;
    ensure_same_shape(b, &m.d)?;
    let mut out = b.clone();
    let (t, d) = (m.t.data(), m.d.data());
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (t[i] * *v + d[i]).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Inverts the degradation model: `I = clamp((O - D) / (T + eps), 0, 1)`.
///
/// `eps` keeps the division bounded where `T` is small; restoration error
/// from the guard is at most `eps / T` relative.
pub fn invert_model(o: &Image, m: &DegradationMatrices, eps: f64) -> Result<Image> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    ensure_same_shape(o, &m.t)?;
    ensure_same_shape(o, &m.d)?;
    let mut out = o.clone();
    let (t, d) = (m.t.data(), m.d.data());
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = ((*v - d[i]) / (t[i] + eps)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Degrades a clean image with the selected simulator.
///
/// Returns the composed observation together with the ground-truth matrices;
/// `O` is exactly `apply_model(B, M)`. Identical `(B, params)` produce
/// bitwise-identical outputs.
pub fn simulate(b: &Image, params: &SimParams) -> Result<(Image, DegradationMatrices)> {
    params.validate()?;
    let (h, w) = (b.height(), b.width());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let m = match params.kind {
        DegradationKind::Rain => {
            let d = rain_streak_map(h, w, &params.rain, &mut rng);
            DegradationMatrices {
                t: Image::constant(h, w, 1.0),
                d,
            }
        }
        DegradationKind::Haze => {
            let depth = lowfreq_field(h, w, 3, 0.4, 1.4, &mut rng);
            let a = params.haze.atmospheric_light;
            let mut t = Image::zeros(h, w);
            let mut d = Image::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let tv = (-params.haze.depth_scale * depth[y * w + x])
                        .exp()
                        .clamp(EPS_T, 1.0);
                    for c in 0..3 {
                        t.set(y, x, c, tv);
                        d.set(y, x, c, (1.0 - tv) * a);
                    }
                }
            }
            DegradationMatrices { t, d }
        }
        DegradationKind::LowLight => {
            let lp = params.lowlight;
            let max_freq = 0.2 + 1.0 / lp.spatial_smoothness;
            let field = lowfreq_field(h, w, 3, 0.2, max_freq, &mut rng);
            let mut t = Image::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let tv = 0.05 + 0.45 * field[y * w + x].powf(lp.gamma_exponent);
                    for c in 0..3 {
                        t.set(y, x, c, tv.clamp(EPS_T, 1.0));
                    }
                }
            }
            DegradationMatrices {
                t,
                d: Image::zeros(h, w),
            }
        }
    };
    let o = apply_model(b, &m)?;
    Ok((o, m))
}

/// Sparse anti-aliased rain streaks with a Gaussian cross-section.
fn rain_streak_map(h: usize, w: usize, p: &RainParams, rng: &mut ChaCha8Rng) -> Image {
    const SIGMA: f64 = 0.5;
    const CUTOFF: f64 = 1.5;
    let mut acc = vec![0.0f64; h * w];
    for _ in 0..p.streak_count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let angle = (p.angle_deg + rng.gen_range(-5.0..5.0)).to_radians();
        let half = 0.5 * p.length_px * rng.gen_range(0.8..1.2);
        let gain = p.intensity * rng.gen_range(0.7..1.3);
        let (dx, dy) = (angle.cos(), angle.sin());
        let (x0, y0) = (cx - half * dx, cy - half * dy);
        let (x1, y1) = (cx + half * dx, cy + half * dy);
        let lo_x = (x0.min(x1) - CUTOFF).floor().max(0.0) as usize;
        let hi_x = (x0.max(x1) + CUTOFF).ceil().min(w as f64 - 1.0) as usize;
        let lo_y = (y0.min(y1) - CUTOFF).floor().max(0.0) as usize;
        let hi_y = (y0.max(y1) + CUTOFF).ceil().min(h as f64 - 1.0) as usize;
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let d = point_segment_distance(x as f64, y as f64, x0, y0, x1, y1);
                if d <= CUTOFF {
                    acc[y * w + x] += gain * (-d * d / (2.0 * SIGMA * SIGMA)).exp();
                }
            }
        }
    }
    let mut d = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let v = acc[y * w + x].clamp(0.0, 1.0);
            for c in 0..3 {
                d.set(y, x, c, v);
            }
        }
    }
    d
}

fn point_segment_distance(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (vx, vy) = (x1 - x0, y1 - y0);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((px - x0) * vx + (py - y0) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (x0 + t * vx - px, y0 + t * vy - py);
    (ex * ex + ey * ey).sqrt()
}

/// Sum of `waves` random cosine plane waves, min-max normalized to `[0, 1]`.
/// Frequencies are in cycles per image dimension.
fn lowfreq_field(
    h: usize,
    w: usize,
    waves: usize,
    min_freq: f64,
    max_freq: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut field = vec![0.0f64; h * w];
    for _ in 0..waves {
        let fx = rng.gen_range(min_freq..max_freq) * f64::from(rng.gen_range(0..2i32) * 2 - 1);
        let fy = rng.gen_range(min_freq..max_freq) * f64::from(rng.gen_range(0..2i32) * 2 - 1);
        let phase = rng.gen_range(0.0..tau);
        let amp = rng.gen_range(0.5..1.0);
        for y in 0..h {
            let wy = fy * y as f64 / h as f64;
            for x in 0..w {
                let wx = fx * x as f64 / w as f64;
                field[y * w + x] += amp * (tau * (wx + wy) + phase).cos();
            }
        }
    }
    let min = field.iter().copied().fold(f64::INFINITY, f64::min);
    let max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range > 0.0 {
        for v in &mut field {
            *v = (*v - min) / range;
        }
    } else {
        field.fill(0.5);
    }
    field
}

/// Seeded synthetic clean image: a corner-blended background with saturated
/// rotated rectangles and ellipses on top. Shape edges are feathered over
/// ~1.5 px and orientations are uniform, so the clean content stays
/// directionally isotropic and its dark-channel statistics behave like
/// natural scenes.
pub fn synthetic_clean(height: usize, width: usize, seed: u64) -> Image {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let corners: Vec<[f64; 3]> = (0..4).map(|_| random_color(&mut rng)).collect();
    let mut img = Image::zeros(height, width);
    for y in 0..height {
        let fy = y as f64 / (height - 1).max(1) as f64;
        for x in 0..width {
            let fx = x as f64 / (width - 1).max(1) as f64;
            for c in 0..3 {
                let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
                let bot = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
                img.set(y, x, c, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    const FEATHER: f64 = 1.5;
    let shapes = 6 + (height * width) / 1024;
    for s in 0..shapes {
        let color = random_color(&mut rng);
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let ru = rng.gen_range(0.08..0.28) * width as f64;
        let rv = rng.gen_range(0.08..0.28) * height as f64;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let (sin_t, cos_t) = theta.sin_cos();
        let ellipse = s % 2 == 0;
        let reach = ru.max(rv) + FEATHER;
        let lo_y = (cy - reach).floor().max(0.0) as usize;
        let hi_y = (cy + reach).ceil().min(height as f64 - 1.0) as usize;
        let lo_x = (cx - reach).floor().max(0.0) as usize;
        let hi_x = (cx + reach).ceil().min(width as f64 - 1.0) as usize;
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = cos_t * dx + sin_t * dy;
                let v = -sin_t * dx + cos_t * dy;
                // Signed distance-ish to the shape border, positive inside.
                let inside = if ellipse {
                    let r = ((u / ru) * (u / ru) + (v / rv) * (v / rv)).sqrt();
                    (1.0 - r) * ru.min(rv)
                } else {
                    (ru - u.abs()).min(rv - v.abs())
                };
                let alpha = (inside / FEATHER).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    for c in 0..3 {
                        let bg = img.get(y, x, c);
                        img.set(y, x, c, alpha * color[c] + (1.0 - alpha) * bg);
                    }
                }
            }
        }
    }
    img
}

/// Sidecar magic for ground-truth matrix files.
pub const SIDECAR_MAGIC: &[u8; 6] = b"DRMTD1";

/// Writes the matrices as a binary sidecar: magic `DRMTD1`, `H` and `W` as
/// little-endian u32, then `T` and `D` as little-endian f64 (row-major,
/// channel-interleaved).
pub fn write_matrices(path: impl AsRef<std::path::Path>, m: &DegradationMatrices) -> Result<()> {
    let (h, w) = (m.t.height(), m.t.width());
    let mut bytes = Vec::with_capacity(6 + 8 + (m.t.data().len() + m.d.data().len()) * 8);
    bytes.extend_from_slice(SIDECAR_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for plane in [m.t.data(), m.d.data()] {
        for v in plane {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::raster::write_atomic(path.as_ref(), &bytes)
}

pub fn read_matrices(path: impl AsRef<std::path::Path>) -> Result<DegradationMatrices> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 14 || &bytes[..6] != SIDECAR_MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "{}: not a DRMTD1 sidecar",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let plane = h * w * 3;
    if bytes.len() != 14 + plane * 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: sidecar length {} does not match {}x{}",
            path.display(),
            bytes.len(),
            h,
            w
        )));
    }
    let read_plane = |offset: usize| -> Vec<f64> {
        (0..plane)
            .map(|i| {
                let at = offset + i * 8;
                f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
            })
            .collect()
    };
    let t = Image::new(h, w, read_plane(14))?;
    let d = Image::new(h, w, read_plane(14 + plane * 8))?;
    DegradationMatrices::new(t, d)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let h = rng.gen_range(0.0..6.0);
    let s = rng.gen_range(0.55..0.95);
    let v = rng.gen_range(0.6..0.95);
    hsv_to_rgb(h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_matrices(h: usize, w: usize, t: f64, d: f64) -> DegradationMatrices {
        DegradationMatrices {
            t: Image::constant(h, w, t),
            d: Image::constant(h, w, d),
        }
    }

    #[test]
    fn apply_model_scalar_cases() {
        let b = Image::constant(2, 2, 0.8);
        let o = apply_model(&b, &scalar_matrices(2, 2, 0.5, 0.5)).unwrap();
        assert!((o.get(0, 0, 0) - 0.9).abs() < 1e-15);

        // Identity degradation reproduces B bitwise.
        let o = apply_model(&b, &DegradationMatrices::identity(2, 2)).unwrap();
        assert_eq!(o, b);

        // Low-light instance: T = 0.25, D = 0.
        let o = apply_model(&b, &scalar_matrices(2, 2, 0.25, 0.0)).unwrap();
        assert!((o.get(1, 1, 2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn apply_model_shape_mismatch() {
        let b = Image::constant(2, 2, 0.8);
        let m = scalar_matrices(3, 2, 0.5, 0.0);
        assert!(matches!(
            apply_model(&b, &m),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn invert_model_scalar_case() {
        let o = Image::constant(1, 1, 0.2);
        let m = scalar_matrices(1, 1, 0.25, 0.0);
        let i = invert_model(&o, &m, DEFAULT_EPS).unwrap();
        assert!((i.get(0, 0, 0) - 0.2 / 0.25001).abs() < 1e-12);
    }

    #[test]
    fn invert_model_zero_numerator() {
        let m = scalar_matrices(2, 2, EPS_T, 0.3);
        let o = m.d.clone();
        let i = invert_model(&o, &m, DEFAULT_EPS).unwrap();
        assert!(i.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invert_recovers_clean_when_t_not_small() {
        let b = synthetic_clean(16, 16, 3).map(|v| 0.2 + 0.6 * v);
        let m = scalar_matrices(16, 16, 0.4, 0.1);
        let o = apply_model(&b, &m).unwrap();
        let i = invert_model(&o, &m, DEFAULT_EPS).unwrap();
        assert!(i.max_abs_diff(&b).unwrap() <= 1e-3);
    }

    #[test]
    fn rain_has_unit_transmission_and_sparse_streaks() {
        let b = synthetic_clean(64, 64, 11);
        for seed in 0..10 {
            let (_, m) = simulate(&b, &SimParams::new(DegradationKind::Rain, seed)).unwrap();
            assert!(m.t.data().iter().all(|&v| v == 1.0));
            let nonzero = m.d.data().iter().filter(|&&v| v != 0.0).count();
            let frac = nonzero as f64 / m.d.data().len() as f64;
            assert!(frac <= 0.10, "seed {seed}: rain density {frac}");
        }
    }

    #[test]
    fn lowlight_has_zero_additive_term() {
        let b = synthetic_clean(32, 32, 5);
        let (_, m) = simulate(&b, &SimParams::new(DegradationKind::LowLight, 9)).unwrap();
        assert!(m.d.data().iter().all(|&v| v == 0.0));
        assert!(m.t.data().iter().all(|&v| (0.05..=0.5).contains(&v)));
    }

    #[test]
    fn haze_additive_term_is_scaled_complement() {
        let b = synthetic_clean(32, 32, 6);
        let params = SimParams::new(DegradationKind::Haze, 4);
        let (_, m) = simulate(&b, &params).unwrap();
        let a = params.haze.atmospheric_light;
        for (t, d) in m.t.data().iter().zip(m.d.data()) {
            assert_eq!(*d, (1.0 - t) * a);
        }
    }

    #[test]
    fn simulate_output_matches_apply_model_bitwise() {
        let b = synthetic_clean(24, 24, 7);
        for kind in DegradationKind::ALL {
            let (o, m) = simulate(&b, &SimParams::new(kind, 2)).unwrap();
            assert_eq!(o, apply_model(&b, &m).unwrap());
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let b = synthetic_clean(24, 24, 8);
        let params = SimParams::new(DegradationKind::Haze, 42);
        let (o1, m1) = simulate(&b, &params).unwrap();
        let (o2, m2) = simulate(&b, &params).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SimParams::new(DegradationKind::Haze, 0);
        p.haze.atmospheric_light = 0.5;
        assert!(matches!(p.validate(), Err(Error::InvalidArgument(_))));
        let mut p = SimParams::new(DegradationKind::LowLight, 0);
        p.lowlight.gamma_exponent = 9.0;
        assert!(p.validate().is_err());
        let mut p = SimParams::new(DegradationKind::Rain, 0);
        p.rain.streak_count = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn sidecar_round_trip_is_exact_and_rerun_identical() {
        let dir = tempfile::tempdir().unwrap();
        let b = synthetic_clean(16, 16, 1);
        let (_, m) = simulate(&b, &SimParams::new(DegradationKind::Haze, 3)).unwrap();
        let p1 = dir.path().join("a.td");
        let p2 = dir.path().join("b.td");
        write_matrices(&p1, &m).unwrap();
        write_matrices(&p2, &m).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = read_matrices(&p1).unwrap();
        assert_eq!(back.t, m.t);
        assert_eq!(back.d, m.d);
    }

    #[test]
    fn sidecar_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.td");
        std::fs::write(&path, b"NOTTD0rest").unwrap();
        assert!(matches!(
            read_matrices(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn synthetic_clean_is_mid_brightness() {
        for seed in 0..20 {
            let img = synthetic_clean(64, 64, seed);
            let lum = img.mean_luminance();
            assert!((0.25..=0.75).contains(&lum), "seed {seed}: luminance {lum}");
        }
    }
}

//! Global-statistics SSIM, NMSE, the four SSIM constraint functions and
//! their gradients, and `Lp` distortion norms.
//!
//! Statistics are taken over the whole image plane (one mean, variance and
//! covariance per channel), with population normalization. Multi-channel
//! values are the average of the per-channel values.
//!
//! The constraints bound the two SSIM factors separately. Writing the
//! candidate image as `y` and the original as `x`:
//!
//! ```text
//! S1 = 1 - NMSE(mu_x, mu_y, C1)
//! S2 = 1 - NMSE(x - mu_x, y - mu_y, C2)        (inner products averaged per pixel)
//!
//! g1 = zeta1 - S1                 <= 0
//! g2 = zeta2 - S2                 <= 0
//! g3 = -2 mu_x mu_y - C1          <= 0
//! g4 = -2 cov(x, y) - C2          <= 0
//! ```
//!
//! `g3` and `g4` keep the candidate inside the half-spaces where `-S1` and
//! `-S2` are quasi-convex.

use crate::error::{check_len, Error, Result};
use crate::image::{Image, Shape};

/// Stabilizing constants for SSIM. The exponents of the luminance, contrast
/// and structure terms are all fixed to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    range: f64,
    c1: f64,
    c2: f64,
}

impl SsimParams {
    /// Constants for pixel values spanning `range`: `C1 = (0.01 range)^2`,
    /// `C2 = (0.03 range)^2`.
    pub fn new(range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::config(format!("SSIM dynamic range must be positive, got {range}")));
        }
        Ok(Self { range, c1: (0.01 * range).powi(2), c2: (0.03 * range).powi(2) })
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }
}

impl Default for SsimParams {
    /// Unit range, for images in `[0, 1]`.
    fn default() -> Self {
        Self { range: 1.0, c1: 1e-4, c2: 9e-4 }
    }
}

/// Lower bounds on the luminance factor (`zeta1`) and the
/// contrast-structure factor (`zeta2`) of SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintThresholds {
    zeta1: f64,
    zeta2: f64,
}

impl ConstraintThresholds {
    pub fn new(zeta1: f64, zeta2: f64) -> Result<Self> {
        for (name, z) in [("zeta1", zeta1), ("zeta2", zeta2)] {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {z}")));
            }
        }
        Ok(Self { zeta1, zeta2 })
    }

    pub fn zeta1(&self) -> f64 {
        self.zeta1
    }

    pub fn zeta2(&self) -> f64 {
        self.zeta2
    }
}

impl Default for ConstraintThresholds {
    fn default() -> Self {
        Self { zeta1: 0.9, zeta2: 0.9 }
    }
}

/// Mean and population variance of one channel, plus the covariance with a
/// second channel when one was supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageStats {
    pub mean: f64,
    pub variance: f64,
    pub covariance: Option<f64>,
}

pub fn image_stats(x: &[f64], y: Option<&[f64]>) -> Result<ImageStats> {
    if x.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(y) = y {
        check_len(x.len(), y.len())?;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let variance = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let covariance = y.map(|y| {
        let mean_y = y.iter().sum::<f64>() / n;
        x.iter().zip(y).map(|(a, b)| (a - mean) * (b - mean_y)).sum::<f64>() / n
    });
    Ok(ImageStats { mean, variance, covariance })
}

/// The two SSIM factors of a single channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimFactors {
    /// Luminance factor `S1`.
    pub luminance: f64,
    /// Combined contrast-structure factor `S2`.
    pub structure: f64,
}

impl SsimFactors {
    pub fn ssim(&self) -> f64 {
        self.luminance * self.structure
    }
}

/// Per-channel SSIM factors.
pub fn ssim_factors(x: &Image, y: &Image, p: &SsimParams) -> Result<Vec<SsimFactors>> {
    check_shapes(x.shape(), y.shape())?;
    (0..x.shape().channels)
        .map(|c| {
            let (xc, yc) = (x.channel(c), y.channel(c));
            let sx = image_stats(xc, Some(yc))?;
            let sy = image_stats(yc, None)?;
            let cov = sx.covariance.unwrap_or_default();
            Ok(SsimFactors {
                luminance: (2.0 * sx.mean * sy.mean + p.c1) / (sx.mean.powi(2) + sy.mean.powi(2) + p.c1),
                structure: (2.0 * cov + p.c2) / (sx.variance + sy.variance + p.c2),
            })
        })
        .collect()
}

/// Global SSIM, averaged over channels.
pub fn ssim(x: &Image, y: &Image, p: &SsimParams) -> Result<f64> {
    let factors = ssim_factors(x, y, p)?;
    Ok(factors.iter().map(SsimFactors::ssim).sum::<f64>() / factors.len() as f64)
}

/// `SSIM` on raw planar buffers of the given shape.
pub(crate) fn ssim_raw(shape: Shape, x: &[f64], y: &[f64], p: &SsimParams) -> f64 {
    let plane = shape.plane();
    let mut total = 0.0;
    for c in 0..shape.channels {
        let (xc, yc) = (&x[c * plane..(c + 1) * plane], &y[c * plane..(c + 1) * plane]);
        let m = ChannelMoments::new(xc, yc);
        let s1 = (2.0 * m.mean_x * m.mean_y + p.c1) / (m.mean_x.powi(2) + m.mean_y.powi(2) + p.c1);
        let s2 = (2.0 * m.cov + p.c2) / (m.var_x + m.var_y + p.c2);
        total += s1 * s2;
    }
    total / shape.channels as f64
}

/// Normalized mean squared error `|u - v|^2 / (|u|^2 + |v|^2 + c)`.
pub fn nmse(u: &[f64], v: &[f64], c: f64) -> Result<f64> {
    check_len(u.len(), v.len())?;
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
    let energy: f64 = u.iter().chain(v).map(|a| a * a).sum();
    if diff == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / (energy + c))
}

/// Values of `g1..g4` for candidate `y` against original `x`, each averaged
/// over channels.
pub fn constraints(
    y: &Image,
    x: &Image,
    p: &SsimParams,
    t: &ConstraintThresholds,
) -> Result<[f64; 4]> {
    check_shapes(x.shape(), y.shape())?;
    Ok(constraints_raw(x.shape(), y.as_slice(), x.as_slice(), p, t))
}

pub(crate) fn constraints_raw(
    shape: Shape,
    y: &[f64],
    x: &[f64],
    p: &SsimParams,
    t: &ConstraintThresholds,
) -> [f64; 4] {
    let plane = shape.plane();
    let mut g = [0.0; 4];
    for c in 0..shape.channels {
        let range = c * plane..(c + 1) * plane;
        let m = ChannelMoments::new(&x[range.clone()], &y[range]);
        let lum = (m.mean_x - m.mean_y).powi(2) / (m.mean_x.powi(2) + m.mean_y.powi(2) + p.c1);
        let st = m.centered_diff / (m.var_x + m.var_y + p.c2);
        g[0] += t.zeta1 - (1.0 - lum);
        g[1] += t.zeta2 - (1.0 - st);
        g[2] += -2.0 * m.mean_x * m.mean_y - p.c1;
        g[3] += -2.0 * m.cov - p.c2;
    }
    let k = shape.channels as f64;
    g.map(|v| v / k)
}

/// Gradients of `g1..g4` with respect to the candidate image `y`.
pub fn constraint_gradients(
    y: &Image,
    x: &Image,
    p: &SsimParams,
    _t: &ConstraintThresholds,
) -> Result<[Vec<f64>; 4]> {
    check_shapes(x.shape(), y.shape())?;
    let mut grads: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; x.len()]);
    accumulate_constraint_gradients(x.shape(), y.as_slice(), x.as_slice(), p, |i, j, v| {
        grads[i][j] = v
    });
    Ok(grads)
}

/// Writes `sum_i weights[i] * dg_i/dy` into `out`, adding to what is there.
pub(crate) fn add_weighted_constraint_gradient(
    shape: Shape,
    y: &[f64],
    x: &[f64],
    p: &SsimParams,
    weights: &[f64; 4],
    out: &mut [f64],
) {
    if weights.iter().all(|w| *w == 0.0) {
        return;
    }
    accumulate_constraint_gradients(shape, y, x, p, |i, j, v| out[j] += weights[i] * v);
}

fn accumulate_constraint_gradients(
    shape: Shape,
    y: &[f64],
    x: &[f64],
    p: &SsimParams,
    mut emit: impl FnMut(usize, usize, f64),
) {
    let plane = shape.plane();
    let n = plane as f64;
    // Constraints are channel averages.
    let k = shape.channels as f64;
    for c in 0..shape.channels {
        let off = c * plane;
        let (xc, yc) = (&x[off..off + plane], &y[off..off + plane]);
        let m = ChannelMoments::new(xc, yc);

        let a = (m.mean_x - m.mean_y).powi(2);
        let b = m.mean_x.powi(2) + m.mean_y.powi(2) + p.c1;
        let d_g1 = (-2.0 * (m.mean_x - m.mean_y) * b - a * 2.0 * m.mean_y) / (b * b) / n / k;
        let d_g3 = -2.0 * m.mean_x / n / k;

        let num = m.centered_diff;
        let den = m.var_x + m.var_y + p.c2;
        for j in 0..plane {
            let xt = xc[j] - m.mean_x;
            let yt = yc[j] - m.mean_y;
            let d_num = -2.0 * (xt - yt) / n;
            let d_den = 2.0 * yt / n;
            let d_g2 = (d_num * den - num * d_den) / (den * den) / k;
            let d_g4 = -2.0 * xt / n / k;
            emit(0, off + j, d_g1);
            emit(1, off + j, d_g2);
            emit(2, off + j, d_g3);
            emit(3, off + j, d_g4);
        }
    }
}

/// Which `Lp` norm to measure a perturbation with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

pub fn lp_distortion(delta: &[f64], p: Norm) -> f64 {
    match p {
        Norm::L1 => delta.iter().map(|d| d.abs()).sum(),
        Norm::L2 => delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
        Norm::LInf => delta.iter().fold(0.0, |m, d| m.max(d.abs())),
    }
}

fn check_shapes(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

/// Population first and second moments of a channel pair.
struct ChannelMoments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    /// `|(x - mu_x) - (y - mu_y)|^2 / n`
    centered_diff: f64,
}

impl ChannelMoments {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov, mut diff) = (0.0, 0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (xt, yt) = (a - mean_x, b - mean_y);
            var_x += xt * xt;
            var_y += yt * yt;
            cov += xt * yt;
            diff += (xt - yt).powi(2);
        }
        let stats = Self { mean_x, mean_y, var_x: var_x / n, var_y: var_y / n, cov: cov / n, centered_diff: diff / n };
        debug_assert!(stats.cov.abs() <= (stats.var_x * stats.var_y).sqrt() + 1e-9);
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gray(data: &[f64]) -> Image {
        Image::new(Shape::new(1, 1, data.len()), data.to_vec()).unwrap()
    }

    #[test]
    fn stats_of_two_pixels() {
        let s = image_stats(&[0.0, 1.0], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.variance, 0.25);
        assert_eq!(s.covariance, Some(-0.25));
        assert_eq!(image_stats(&[0.0, 1.0], None).unwrap().covariance, None);
    }

    #[test]
    fn self_covariance_is_variance() {
        let x = [0.1, 0.7, 0.3, 0.9, 0.2];
        let s = image_stats(&x, Some(&x)).unwrap();
        assert_relative_eq!(s.covariance.unwrap(), s.variance, epsilon = 1e-15);
    }

    #[test]
    fn stats_errors() {
        assert!(matches!(image_stats(&[], None), Err(Error::Empty)));
        assert!(matches!(image_stats(&[0.0], Some(&[0.0, 1.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn params_derive_constants_from_range() {
        let p = SsimParams::new(1.0).unwrap();
        assert_relative_eq!(p.c1(), 1e-4, epsilon = 1e-18);
        assert_relative_eq!(p.c2(), 9e-4, epsilon = 1e-18);
        let p = SsimParams::new(255.0).unwrap();
        assert_relative_eq!(p.c1(), 6.5025, epsilon = 1e-12);
        assert!(SsimParams::new(0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_worked_values() {
        let p = SsimParams::default();
        let x = gray(&[0.2, 0.4, 0.9]);
        assert_eq!(ssim(&x, &x, &p).unwrap(), 1.0);

        // All-zeros against all-ones: S1 = C1 / (1 + C1), S2 = C2 / C2.
        let zeros = gray(&[0.0; 4]);
        let ones = gray(&[1.0; 4]);
        assert_relative_eq!(ssim(&zeros, &ones, &p).unwrap(), 1e-4 / 1.0001, max_relative = 1e-12);

        // Swapped two-pixel image: S1 = 1, S2 = (-0.5 + C2) / (0.5 + C2).
        let v = ssim(&gray(&[0.0, 1.0]), &gray(&[1.0, 0.0]), &p).unwrap();
        assert_relative_eq!(v, -0.4991 / 0.5009, max_relative = 1e-12);
        assert!((v + 0.9964).abs() < 1e-4);
    }

    #[test]
    fn ssim_shape_errors() {
        let p = SsimParams::default();
        assert!(ssim(&gray(&[0.0, 1.0]), &gray(&[0.0]), &p).is_err());
    }

    #[test]
    fn rgb_ssim_is_channel_average() {
        let p = SsimParams::default();
        let x = Image::new(Shape::new(3, 1, 2), vec![0.0, 1.0, 0.3, 0.3, 0.5, 0.6]).unwrap();
        let y = Image::new(Shape::new(3, 1, 2), vec![1.0, 0.0, 0.3, 0.3, 0.1, 0.9]).unwrap();
        let per: Vec<f64> = (0..3)
            .map(|c| ssim(&gray(x.channel(c)), &gray(y.channel(c)), &p).unwrap())
            .collect();
        assert_relative_eq!(ssim(&x, &y, &p).unwrap(), per.iter().sum::<f64>() / 3.0, epsilon = 1e-15);
        assert_relative_eq!(ssim_raw(x.shape(), x.as_slice(), y.as_slice(), &p), ssim(&x, &y, &p).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn nmse_worked_values() {
        assert_eq!(nmse(&[0.3, 0.4], &[0.3, 0.4], 1.0).unwrap(), 0.0);
        assert_eq!(nmse(&[0.0], &[0.0], 0.0).unwrap(), 0.0);
        assert_eq!(nmse(&[1.0], &[-1.0], 0.0).unwrap(), 2.0);
        assert_eq!(nmse(&[0.0], &[1.0], 1.0).unwrap(), 0.5);
        assert!(nmse(&[0.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn constraints_worked_values() {
        let p = SsimParams::default();
        let t = ConstraintThresholds::new(0.7, 0.8).unwrap();
        let x = gray(&[0.1, 0.9, 0.5, 0.5]);
        let g = constraints(&x, &x, &p, &t).unwrap();
        assert_relative_eq!(g[0], 0.7 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.8 - 1.0, epsilon = 1e-15);
        // mu_x = mu_y = 0.5: g3 = -2 * 0.25 - 1e-4.
        assert_relative_eq!(g[2], -0.5001, epsilon = 1e-15);
    }

    #[test]
    fn constraints_match_ssim_factors() {
        let p = SsimParams::default();
        let t = ConstraintThresholds::new(0.0, 0.0).unwrap();
        let x = gray(&[0.1, 0.9, 0.5, 0.2, 0.0]);
        let y = gray(&[0.3, 0.6, 0.5, 0.4, 0.1]);
        let f = ssim_factors(&x, &y, &p).unwrap()[0];
        let g = constraints(&y, &x, &p, &t).unwrap();
        assert_relative_eq!(-g[0], f.luminance, epsilon = 1e-14);
        assert_relative_eq!(-g[1], f.structure, epsilon = 1e-14);
    }

    #[test]
    fn g3_gradient_is_constant() {
        let p = SsimParams::default();
        let t = ConstraintThresholds::default();
        let x = gray(&[0.1, 0.9, 0.5, 0.3]);
        let y = gray(&[0.2, 0.8, 0.4, 0.6]);
        let grads = constraint_gradients(&y, &x, &p, &t).unwrap();
        for v in &grads[2] {
            assert_relative_eq!(*v, -2.0 * 0.45 / 4.0, epsilon = 1e-15);
        }
        let same = constraint_gradients(&x, &x, &p, &t).unwrap();
        assert!(same[0].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn lp_norms() {
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            assert_eq!(lp_distortion(&[0.0; 5], p), 0.0);
        }
        let d = [0.3, -0.4];
        assert_relative_eq!(lp_distortion(&d, Norm::L1), 0.7, epsilon = 1e-15);
        assert_relative_eq!(lp_distortion(&d, Norm::L2), 0.5, epsilon = 1e-15);
        assert_relative_eq!(lp_distortion(&d, Norm::LInf), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn thresholds_validated() {
        assert!(ConstraintThresholds::new(1.5, 0.5).is_err());
        assert!(ConstraintThresholds::new(0.5, -0.1).is_err());
        assert!(ConstraintThresholds::new(0.0, 1.0).is_ok());
    }

    fn pair(max_side: usize) -> impl Strategy<Value = (Image, Image)> {
        (1usize..=3, 1usize..=max_side, 1usize..=max_side).prop_flat_map(|(c, h, w)| {
            let shape = Shape::new(if c == 2 { 3 } else { c }, h, w);
            let n = shape.len();
            (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(0.0f64..=1.0, n))
                .prop_map(move |(a, b)| (Image::new(shape, a).unwrap(), Image::new(shape, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded((x, y) in pair(8)) {
            let p = SsimParams::default();
            let a = ssim(&x, &y, &p).unwrap();
            let b = ssim(&y, &x, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a > -1.0 && a <= 1.0);
        }

        #[test]
        fn g3_nonpositive_on_unit_box((x, y) in pair(8)) {
            let g = constraints(&y, &x, &SsimParams::default(), &ConstraintThresholds::default()).unwrap();
            prop_assert!(g[2] <= 0.0);
        }

        #[test]
        fn satisfied_constraints_bound_ssim(
            (x, y) in pair(6).prop_filter("gray", |(x, _)| x.shape().channels == 1),
            z1 in 0.0f64..=1.0,
            z2 in 0.0f64..=1.0,
        ) {
            let p = SsimParams::default();
            let t = ConstraintThresholds::new(z1, z2).unwrap();
            let g = constraints(&y, &x, &p, &t).unwrap();
            if g[0] <= 0.0 && g[1] <= 0.0 {
                let f = ssim_factors(&x, &y, &p).unwrap()[0];
                prop_assert!(f.luminance >= z1 - 1e-12);
                prop_assert!(f.structure >= z2 - 1e-12);
                prop_assert!(f.ssim() >= z1 * z2 - 1e-12);
            }
        }
    }
}

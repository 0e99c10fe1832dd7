//! Edge-preserving smoothing and edge enhancement, applied per slice.
//!
//! Both filters are strictly 2D: slice z of the output depends only on
//! slice z of the input. The bilateral filter is the exact direct sum
//! (no grid or separable approximation); the sharpening step adds an
//! 8-neighbor Laplacian response to the image in a single pass.
//!
//! Arithmetic contract, chosen so independent implementations produce
//! bit-identical rasters: the bilateral accumulation runs in 64-bit
//! floats, the final value is rounded half away from zero and clamped to
//! `[0, 255]`; the Laplacian runs in signed integers throughout.

use rayon::prelude::*;
use thiserror::Error;

use crate::volume::{SliceView, Volume};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter parameter: {0}")]
    BadParam(String),
}

/// Bilateral kernel widths and window size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    sigma_s: f64,
    sigma_r: f64,
    radius: usize,
}

impl BilateralParams {
    pub fn new(sigma_s: f64, sigma_r: f64, radius: usize) -> Result<Self, FilterError> {
        if sigma_s <= 0.0 || !sigma_s.is_finite() {
            return Err(FilterError::BadParam(format!(
                "sigma_s must be finite and > 0, got {sigma_s}"
            )));
        }
        if sigma_r <= 0.0 || !sigma_r.is_finite() {
            return Err(FilterError::BadParam(format!(
                "sigma_r must be finite and > 0, got {sigma_r}"
            )));
        }
        if radius == 0 {
            return Err(FilterError::BadParam("radius must be >= 1".into()));
        }
        Ok(Self {
            sigma_s,
            sigma_r,
            radius,
        })
    }

    /// Window half-width `ceil(3 * sigma_s)`, capturing >99% of the spatial
    /// Gaussian mass.
    pub fn with_default_radius(sigma_s: f64, sigma_r: f64) -> Result<Self, FilterError> {
        let radius = (3.0 * sigma_s).ceil().max(1.0) as usize;
        Self::new(sigma_s, sigma_r, radius)
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    pub fn radius(&self) -> usize {
        self.radius
    }
}

/// One filtered z plane, same dimensions as its source slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSlice {
    z: usize,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl FilteredSlice {
    pub fn from_pixels(z: usize, width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "plane buffer length mismatch");
        Self {
            z,
            width,
            height,
            pixels,
        }
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.view().get(x, y)
    }

    pub fn view(&self) -> SliceView<'_> {
        SliceView::from_raw(&self.pixels, self.width, self.height, self.z)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Smooths one slice while preserving edges: each output pixel is the
/// normalized sum of its square window, every neighbor weighted by a
/// spatial Gaussian in distance and a range Gaussian in intensity
/// difference. The window is clipped at image borders; the normalization
/// absorbs the smaller support. The center pixel always contributes weight
/// one, so the normalizer never vanishes.
pub fn bilateral_filter_slice(src: SliceView<'_>, p: &BilateralParams) -> FilteredSlice {
    let (w, h) = (src.width(), src.height());
    let r = p.radius as isize;

    // Spatial weights over the window and range weights over all 256
    // possible absolute intensity differences, tabulated once per slice.
    let inv_2ss = 1.0 / (2.0 * p.sigma_s * p.sigma_s);
    let inv_2sr = 1.0 / (2.0 * p.sigma_r * p.sigma_r);
    let side = 2 * p.radius + 1;
    let mut spatial = vec![0.0f64; side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial[(dy + r) as usize * side + (dx + r) as usize] = (-d2 * inv_2ss).exp();
        }
    }
    let range: Vec<f64> = (0..256)
        .map(|delta| {
            let d = delta as f64;
            (-d * d * inv_2sr).exp()
        })
        .collect();

    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let center = src.get(x, y) as i32;
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            let y_lo = y.saturating_sub(p.radius);
            let y_hi = (y + p.radius).min(h - 1);
            let x_lo = x.saturating_sub(p.radius);
            let x_hi = (x + p.radius).min(w - 1);
            for qy in y_lo..=y_hi {
                let row = (qy as isize - y as isize + r) as usize * side;
                for qx in x_lo..=x_hi {
                    let value = src.get(qx, qy) as i32;
                    let weight = spatial[row + (qx as isize - x as isize + r) as usize]
                        * range[(center - value).unsigned_abs() as usize];
                    num += weight * value as f64;
                    den += weight;
                }
            }
            pixels[y * w + x] = ((num / den).round()).clamp(0.0, 255.0) as u8;
        }
    }
    FilteredSlice::from_pixels(src.z(), w, h, pixels)
}

/// Adds the 8-neighbor Laplacian response to the slice: center weight +8,
/// all eight neighbors -1, replicate-edge padding, signed integer
/// arithmetic, result clamped to `[0, 255]`. Regions brighter than their
/// surround brighten, darker regions darken, constant regions are
/// unchanged.
pub fn laplacian_sharpen_slice(src: SliceView<'_>) -> FilteredSlice {
    let (w, h) = (src.width(), src.height());
    let clamp_coord = |v: isize, max: usize| v.clamp(0, max as isize - 1) as usize;
    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let center = src.get(x, y) as i32;
            let mut neighbor_sum = 0i32;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let qx = clamp_coord(x as isize + dx, w);
                    let qy = clamp_coord(y as isize + dy, h);
                    neighbor_sum += src.get(qx, qy) as i32;
                }
            }
            let lap = 8 * center - neighbor_sum;
            pixels[y * w + x] = (center + lap).clamp(0, 255) as u8;
        }
    }
    FilteredSlice::from_pixels(src.z(), w, h, pixels)
}

/// Runs the bilateral filter over every slice; when `with_sharpen` is set,
/// additionally sharpens each bilaterally filtered slice. Sharpening always
/// consumes the bilateral output, never the raw input. Slices are processed
/// in parallel; results are assembled in z order, so the output does not
/// depend on scheduling.
pub fn filter_volume(
    volume: &Volume,
    p: &BilateralParams,
    with_sharpen: bool,
) -> (Volume, Option<Volume>) {
    let filtered: Vec<(FilteredSlice, Option<FilteredSlice>)> = (0..volume.depth())
        .into_par_iter()
        .map(|z| {
            let bilateral = bilateral_filter_slice(volume.slice(z), p);
            let sharpened = with_sharpen.then(|| laplacian_sharpen_slice(bilateral.view()));
            (bilateral, sharpened)
        })
        .collect();

    let assemble = |planes: Vec<&FilteredSlice>| {
        let mut voxels = Vec::with_capacity(volume.width() * volume.height() * volume.depth());
        for plane in planes {
            voxels.extend_from_slice(plane.pixels());
        }
        Volume::from_voxels(
            volume.width(),
            volume.height(),
            volume.depth(),
            voxels,
            volume.resolution_nm(),
        )
        .expect("filtered volume keeps source geometry")
    };

    let bilateral = assemble(filtered.iter().map(|(b, _)| b).collect());
    let sharpened =
        with_sharpen.then(|| assemble(filtered.iter().map(|(_, s)| s.as_ref().unwrap()).collect()));
    (bilateral, sharpened)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Brute-force direct-sum reference, written independently of the
    /// production path: no lookup tables, one fused exponent per neighbor.
    fn bilateral_oracle(src: SliceView<'_>, sigma_s: f64, sigma_r: f64, radius: usize) -> Vec<u8> {
        let (w, h) = (src.width(), src.height());
        let mut out = vec![0u8; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let ip = src.get(x as usize, y as usize) as f64;
                let mut num = 0.0;
                let mut den = 0.0;
                for qy in y - radius as isize..=y + radius as isize {
                    for qx in x - radius as isize..=x + radius as isize {
                        if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                            continue;
                        }
                        let iq = src.get(qx as usize, qy as usize) as f64;
                        let d2 = ((qx - x) * (qx - x) + (qy - y) * (qy - y)) as f64;
                        let weight = (-d2 / (2.0 * sigma_s * sigma_s)
                            - (ip - iq) * (ip - iq) / (2.0 * sigma_r * sigma_r))
                            .exp();
                        num += weight * iq;
                        den += weight;
                    }
                }
                out[y as usize * w + x as usize] = (num / den).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    /// Plain Gaussian blur with the same clipped-window normalization.
    fn gaussian_blur_oracle(src: SliceView<'_>, sigma_s: f64, radius: usize) -> Vec<u8> {
        let (w, h) = (src.width(), src.height());
        let mut out = vec![0u8; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut num = 0.0;
                let mut den = 0.0;
                for qy in y - radius as isize..=y + radius as isize {
                    for qx in x - radius as isize..=x + radius as isize {
                        if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                            continue;
                        }
                        let d2 = ((qx - x) * (qx - x) + (qy - y) * (qy - y)) as f64;
                        let weight = (-d2 / (2.0 * sigma_s * sigma_s)).exp();
                        num += weight * src.get(qx as usize, qy as usize) as f64;
                        den += weight;
                    }
                }
                out[y as usize * w + x as usize] = (num / den).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    /// Independent convolution reference for the sharpening pass: builds the
    /// replicate-padded plane explicitly, then convolves with the 3x3 kernel.
    fn laplacian_sharpen_oracle(src: SliceView<'_>) -> Vec<u8> {
        let (w, h) = (src.width(), src.height());
        let padded_w = w + 2;
        let mut padded = vec![0i32; padded_w * (h + 2)];
        for py in 0..h + 2 {
            for px in 0..w + 2 {
                let sx = px.saturating_sub(1).min(w - 1);
                let sy = py.saturating_sub(1).min(h - 1);
                padded[py * padded_w + px] = src.get(sx, sy) as i32;
            }
        }
        let kernel: [[i32; 3]; 3] = [[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]];
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut lap = 0i32;
                for (ky, row) in kernel.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        lap += k * padded[(y + ky) * padded_w + (x + kx)];
                    }
                }
                out[y * w + x] = (src.get(x, y) as i32 + lap).clamp(0, 255) as u8;
            }
        }
        out
    }

    fn slice_of(pixels: Vec<u8>, w: usize, h: usize) -> FilteredSlice {
        FilteredSlice::from_pixels(0, w, h, pixels)
    }

    fn random_slice(rng: &mut SplitMix64, w: usize, h: usize) -> FilteredSlice {
        slice_of(
            (0..w * h).map(|_| (rng.next_u64() & 0xFF) as u8).collect(),
            w,
            h,
        )
    }

    fn max_abs_diff(a: &[u8], b: &[u8]) -> u32 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs())
            .max()
            .unwrap()
    }

    #[test]
    fn constant_slice_is_fixed_point() {
        let s = slice_of(vec![128; 49], 7, 7);
        let p = BilateralParams::new(2.0, 25.0, 3).unwrap();
        assert_eq!(bilateral_filter_slice(s.view(), &p).pixels(), s.pixels());
        assert_eq!(laplacian_sharpen_slice(s.view()).pixels(), s.pixels());
    }

    #[test]
    fn dark_center_on_bright_background_is_preserved() {
        // Intensity gap of 255 with sigma_r 10 makes cross-edge weights
        // ~exp(-325); the center stays 0 and the background stays 255.
        let mut px = vec![255u8; 25];
        px[2 * 5 + 2] = 0;
        let s = slice_of(px, 5, 5);
        let p = BilateralParams::new(1.0, 10.0, 3).unwrap();
        let out = bilateral_filter_slice(s.view(), &p);
        assert_eq!(out.get(2, 2), 0);
        assert_eq!(out.get(0, 0), 255);
        assert_eq!(out.get(4, 4), 255);
        assert_eq!(
            max_abs_diff(out.pixels(), &bilateral_oracle(s.view(), 1.0, 10.0, 3)),
            0
        );
    }

    #[test]
    fn huge_sigma_r_degenerates_to_gaussian_blur() {
        let mut rng = SplitMix64::new(41);
        for _ in 0..20 {
            let s = random_slice(&mut rng, 3, 3);
            let p = BilateralParams::new(1.2, 1e6, 2).unwrap();
            let out = bilateral_filter_slice(s.view(), &p);
            let blur = gaussian_blur_oracle(s.view(), 1.2, 2);
            assert!(max_abs_diff(out.pixels(), &blur) <= 1);
        }
    }

    #[test]
    fn bilateral_matches_direct_sum_oracle() {
        let mut rng = SplitMix64::new(0xB11A);
        for case in 0..25 {
            let w = 1 + (rng.next_u64() % 24) as usize;
            let h = 1 + (rng.next_u64() % 24) as usize;
            let s = random_slice(&mut rng, w, h);
            let sigma_s = 0.5 + 2.5 * rng.next_f64();
            let sigma_r = 5.0 + 45.0 * rng.next_f64();
            let radius = 1 + (rng.next_u64() % 5) as usize;
            let p = BilateralParams::new(sigma_s, sigma_r, radius).unwrap();
            let out = bilateral_filter_slice(s.view(), &p);
            let oracle = bilateral_oracle(s.view(), sigma_s, sigma_r, radius);
            assert!(
                max_abs_diff(out.pixels(), &oracle) <= 1,
                "case {case}: {w}x{h} sigma_s={sigma_s} sigma_r={sigma_r} r={radius}"
            );
        }
    }

    #[test]
    fn bilateral_preserves_intensity_bounds() {
        let mut rng = SplitMix64::new(0xB0B);
        for _ in 0..10 {
            let s = random_slice(&mut rng, 16, 16);
            let lo = *s.pixels().iter().min().unwrap();
            let hi = *s.pixels().iter().max().unwrap();
            let p = BilateralParams::new(1.5, 30.0, 4).unwrap();
            let out = bilateral_filter_slice(s.view(), &p);
            for &v in out.pixels() {
                assert!(lo <= v && v <= hi);
            }
        }
    }

    #[test]
    fn laplacian_hand_evaluated_case() {
        // Center 100 on a 200 surround: the center's response is
        // 8*100 - 8*200 = -800, clamping 100 - 800 to 0. Every other pixel
        // sees the 100 exactly once in its replicated neighborhood, so it
        // gains +100 and clamps to 255.
        let mut px = vec![200u8; 9];
        px[4] = 100;
        let s = slice_of(px, 3, 3);
        let out = laplacian_sharpen_slice(s.view());
        assert_eq!(out.pixels(), &[255, 255, 255, 255, 0, 255, 255, 255, 255]);
    }

    #[test]
    fn laplacian_matches_convolution_oracle_exactly() {
        let mut rng = SplitMix64::new(0x1AB);
        for case in 0..25 {
            let w = 1 + (rng.next_u64() % 24) as usize;
            let h = 1 + (rng.next_u64() % 24) as usize;
            let s = random_slice(&mut rng, w, h);
            let out = laplacian_sharpen_slice(s.view());
            assert_eq!(
                out.pixels(),
                &laplacian_sharpen_oracle(s.view())[..],
                "case {case}: {w}x{h}"
            );
        }
    }

    #[test]
    fn filter_volume_is_per_slice() {
        let mut rng = SplitMix64::new(7);
        let voxels: Vec<u8> = (0..6 * 5 * 3)
            .map(|_| (rng.next_u64() & 0xFF) as u8)
            .collect();
        let v = Volume::from_voxels(6, 5, 3, voxels, None).unwrap();
        let p = BilateralParams::new(1.0, 20.0, 2).unwrap();
        let (bilateral, sharpened) = filter_volume(&v, &p, true);
        let sharpened = sharpened.unwrap();
        for z in 0..3 {
            let b = bilateral_filter_slice(v.slice(z), &p);
            assert_eq!(bilateral.slice(z).data(), b.pixels());
            assert_eq!(
                sharpened.slice(z).data(),
                laplacian_sharpen_slice(b.view()).pixels()
            );
        }
    }

    #[test]
    fn constant_volume_passes_through() {
        let v = Volume::filled(4, 4, 2, 99).unwrap();
        let p = BilateralParams::new(2.0, 25.0, 6).unwrap();
        let (bilateral, sharpened) = filter_volume(&v, &p, true);
        assert_eq!(bilateral, v);
        assert_eq!(sharpened.unwrap(), v);
    }

    #[test]
    fn sharpen_flag_off_skips_second_output() {
        let v = Volume::filled(4, 4, 2, 99).unwrap();
        let p = BilateralParams::new(2.0, 25.0, 6).unwrap();
        let (_, sharpened) = filter_volume(&v, &p, false);
        assert!(sharpened.is_none());
    }

    #[test]
    fn default_radius_covers_three_sigma() {
        let p = BilateralParams::with_default_radius(2.0, 25.0).unwrap();
        assert_eq!(p.radius(), 6);
        let p = BilateralParams::with_default_radius(0.4, 25.0).unwrap();
        assert_eq!(p.radius(), 2);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BilateralParams::new(0.0, 25.0, 3).is_err());
        assert!(BilateralParams::new(2.0, -1.0, 3).is_err());
        assert!(BilateralParams::new(2.0, 25.0, 0).is_err());
    }
}

use crate::diffcore::Tensor;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Maps a `[-1, 1]` image to `[0, 1]` in 64-bit.
pub fn to_unit(image: &Tensor<f32>) -> Tensor<f64> {
    let data = image
        .data()
        .iter()
        .map(|&v| (v as f64 + 1.0) / 2.0)
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn planes(t: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape("image", t.shape(), &[3, 0, 0])),
    }
}

/// Valid-mode separable filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps
                .iter()
                .zip(&plane[y * w + x..y * w + x + k])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * wo + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity of two `[0, 1]` images shaped `(C, H, W)` or
/// `(H, W)`, over every window position that fits entirely inside the image,
/// averaged across channels.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (c, h, w) = planes(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim window",
            a.shape(),
            &[SSIM_WINDOW, SSIM_WINDOW],
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * n..(ch + 1) * n];
        let pb = &b.data()[ch * n..(ch + 1) * n];
        let prod =
            |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let e_aa = filter_valid(&prod(pa, pa), h, w, &taps);
        let e_bb = filter_valid(&prod(pb, pb), h, w, &taps);
        let e_ab = filter_valid(&prod(pa, pb), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// [`ssim`] for two `[-1, 1]` network images.
pub fn ssim_images(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    ssim(&to_unit(a), &to_unit(b))
}

/// Mean squared difference over all pixels and channels.
pub fn pixel_mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("pixel_mse", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

/// [`pixel_mse`] for two `[-1, 1]` network images, measured in `[0, 1]`.
pub fn pixel_mse_images(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    pixel_mse(&to_unit(a), &to_unit(b))
}

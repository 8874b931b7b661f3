//! PSNR and SSIM against direct loop implementations written from the
//! textbook definitions (unseparated 2-D window, two-pass variances).

use hcd_core::imaging::{psnr, quality_y, ssim, ColorSpace, Image, PSNR_CAP_DB};
use hcd_core::{Rng, Tensor};

const PAIRS: usize = 20;
const TOL: f64 = 1e-9;

fn oracle_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn oracle_ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    ma += win[i][j] / total * a[k];
                    mb += win[i][j] / total * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    let wt = win[i][j] / total;
                    va += wt * (a[k] - ma) * (a[k] - ma);
                    vb += wt * (b[k] - mb) * (b[k] - mb);
                    cov += wt * (a[k] - ma) * (b[k] - mb);
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn oracle_luma(rgb: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| (65.481 * rgb[i] + 128.553 * rgb[n + i] + 24.966 * rgb[2 * n + i] + 16.0) / 255.0).collect()
}

fn random_pair(rng: &mut Rng) -> (Image, Image) {
    let (w, h) = (11 + rng.below(20), 11 + rng.below(20));
    let a: Vec<f64> = (0..w * h).map(|_| rng.uniform()).collect();
    // correlated second image so SSIM is far from both 0 and 1
    let noise = 0.05 + 0.3 * rng.uniform();
    let b: Vec<f64> = a.iter().map(|v| (v + noise * (rng.uniform() - 0.5)).clamp(0.0, 1.0)).collect();
    (Image::new(w, h, ColorSpace::Gray, a).unwrap(), Image::new(w, h, ColorSpace::Gray, b).unwrap())
}

#[test]
fn psnr_matches_oracle() {
    let mut rng = Rng::new(0x5E);
    for _ in 0..PAIRS {
        let (a, b) = random_pair(&mut rng);
        let got = psnr(&a, &b).unwrap();
        let want = oracle_psnr(a.pixels(), b.pixels());
        assert!((got - want).abs() <= TOL, "{got} vs {want}");
    }
}

#[test]
fn ssim_matches_oracle() {
    let mut rng = Rng::new(0x55);
    for _ in 0..PAIRS {
        let (a, b) = random_pair(&mut rng);
        let got = ssim(&a, &b).unwrap();
        let want = oracle_ssim_plane(a.pixels(), b.pixels(), a.width(), a.height());
        assert!((got - want).abs() <= TOL, "{got} vs {want}");
    }
}

#[test]
fn quality_y_matches_oracle_on_rgb() {
    let mut rng = Rng::new(0x59);
    for _ in 0..PAIRS {
        let (h, w) = (11 + rng.below(12), 11 + rng.below(12));
        let y = Tensor::random_uniform(&mut rng, [1, 3, h, w], 0.0, 1.0).unwrap();
        // out-of-range reconstruction values are saturated before scoring
        let r = Tensor::random_uniform(&mut rng, [1, 3, h, w], -0.1, 1.1).unwrap();
        let q = quality_y(&r, &y, 0).unwrap();
        let rc: Vec<f64> = r.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (ly, lr) = (oracle_luma(y.data(), h * w), oracle_luma(&rc, h * w));
        assert!((q.psnr_y - oracle_psnr(&lr, &ly)).abs() <= TOL);
        assert!((q.ssim_y - oracle_ssim_plane(&lr, &ly, w, h)).abs() <= TOL);
    }
}

#[test]
fn identical_images_hit_cap_and_unit_ssim() {
    let mut rng = Rng::new(1);
    for _ in 0..5 {
        let (a, _) = random_pair(&mut rng);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn uniform_shift_follows_luma_gain() {
    let (w, h) = (16, 16);
    let base: Vec<f64> = (0..3 * w * h).map(|i| 0.2 + 0.5 * ((i * 37 % 101) as f64 / 101.0)).collect();
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.1).collect();
    let a = Tensor::new([1, 3, h, w], base).unwrap();
    let b = Tensor::new([1, 3, h, w], shifted).unwrap();
    let q = quality_y(&b, &a, 0).unwrap();
    let dy: f64 = 0.1 * (65.481 + 128.553 + 24.966) / 255.0;
    assert!((q.psnr_y - (-20.0 * dy.log10())).abs() < 1e-9);
}

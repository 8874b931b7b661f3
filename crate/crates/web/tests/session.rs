use hcd_core::diffpipe::model_to_json;
use hcd_core::Tensor;
use hcd_web::{magnitude_map, rgba_to_tensor, tensor_to_rgba, Session};

fn test_image(w: usize, h: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            let edge = x > w / 3 && x < 2 * w / 3 && y > h / 4;
            let base = if edge { 200 } else { 60 };
            out.extend_from_slice(&[base as u8, ((base + 3 * x) / 2) as u8, ((40 + 5 * y) % 256) as u8, 255]);
        }
    }
    out
}

#[test]
fn rgba_round_trip_is_lossless() {
    let rgba = test_image(9, 7);
    let t = rgba_to_tensor(&rgba, 9, 7).unwrap();
    assert_eq!(t.shape(), [1, 3, 7, 9]);
    assert_eq!(tensor_to_rgba(&t), rgba);
}

#[test]
fn rgba_length_is_checked() {
    assert!(rgba_to_tensor(&[0; 15], 2, 2).is_err());
    assert!(rgba_to_tensor(&[], 0, 0).is_err());
}

#[test]
fn magnitude_map_normalizes_and_handles_zero() {
    let d = Tensor::new([1, 3, 1, 2], vec![0.1, -0.2, 0.1, 0.0, -0.1, 0.0]).unwrap();
    let m = magnitude_map(&d);
    assert_eq!(m.shape(), [1, 1, 1, 2]);
    assert!((m.data()[0] - 1.0).abs() < 1e-12);
    assert!((m.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    assert!(magnitude_map(&Tensor::zeros([1, 3, 2, 2])).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rescale_crops_odd_sizes_and_reports_metrics() {
    let s = Session::new().unwrap();
    let out = s.rescale(&test_image(33, 25), 33, 25, "hierarchical", 3, 0.05, 0.3).unwrap();
    assert_eq!((out.width(), out.height(), out.lr_width(), out.lr_height()), (32, 24, 16, 12));
    assert_eq!(out.lr_rgba().len(), 16 * 12 * 4);
    assert_eq!(out.recon_rgba().len(), 32 * 24 * 4);
    assert_eq!(out.delta_rgba().len(), 16 * 12 * 4);
    assert!(out.psnr() > 15.0 && out.ssim() > 0.0 && out.max_delta() > 0.0);
}

#[test]
fn baseline_leaves_lr_untouched() {
    let s = Session::new().unwrap();
    let out = s.rescale(&test_image(24, 24), 24, 24, "baseline", 15, 0.05, 0.3).unwrap();
    assert_eq!(out.max_delta(), 0.0);
    assert!(out.delta_rgba().chunks(4).all(|p| p == [0, 0, 0, 255]));
}

#[test]
fn collaborative_scheme_beats_baseline_on_same_chain() {
    let s = Session::new().unwrap();
    let img = test_image(32, 32);
    let base = s.rescale(&img, 32, 32, "baseline", 10, 0.05, 0.3).unwrap();
    let collab = s.rescale(&img, 32, 32, "lr_only", 10, 0.05, 0.3).unwrap();
    assert!(collab.psnr() > base.psnr(), "{} vs {}", collab.psnr(), base.psnr());
}

#[test]
fn unknown_scheme_and_bad_model_are_errors() {
    let mut s = Session::new().unwrap();
    assert!(s.rescale(&test_image(24, 24), 24, 24, "sideways", 1, 0.05, 0.3).is_err());
    assert!(s.load_model("{}").is_err());
}

#[test]
fn short_training_improves_on_bicubic_and_models_load() {
    let mut s = Session::new().unwrap();
    let gain = s.train(20, 1).unwrap();
    assert!(gain.is_finite() && gain > 0.0, "gain {gain}");
    let json = model_to_json(&s.chain).unwrap();
    let mut other = Session::new().unwrap();
    other.load_model(&json).unwrap();
    let img = test_image(24, 24);
    let a = s.rescale(&img, 24, 24, "baseline", 0, 0.05, 0.3).unwrap();
    let b = other.rescale(&img, 24, 24, "baseline", 0, 0.05, 0.3).unwrap();
    assert_eq!(a.recon_rgba(), b.recon_rgba());
}

//! The differentiable rescaling chain: a fixed (or learned) downscaler `g`
//! and a conv upscaler `f`, with reverse-mode gradients with respect to the
//! LR input, the HR input and the parameters.

mod bicubic;
mod chain;
mod conv;
mod loss;
mod network;
mod serialize;

pub use bicubic::{weight_rows, BicubicOp, WeightRow, BICUBIC_A};
pub use chain::{ActivationTape, ChainGrads, Downscaler, ModelChain};
pub use conv::{ConvLayer, LayerGrad};
pub use loss::{loss, loss_and_grad, LossKind, CHARBONNIER_EPS};
pub use network::{
    grads_flat, pixel_shuffle, pixel_unshuffle, ConvStack, LearnedDownscaler, Upscaler, DEFAULT_HIDDEN,
};
pub use serialize::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT, MODEL_VERSION};

#[cfg(test)]
mod tests {
    use super::conv::tests::naive_conv;
    use super::*;
    use crate::tensor::{Rng, Tensor};

    fn random_chain(arch: &str, seed: u64) -> ModelChain {
        let mut rng = Rng::new(seed);
        let mut up = Upscaler::from_architecture(arch).unwrap();
        up.stack.init(&mut rng);
        for l in &mut up.stack.layers {
            l.bias.iter_mut().for_each(|b| *b = 0.05 * rng.normal());
        }
        ModelChain::with_bicubic(up).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let up = Upscaler::from_architecture("conv5:3>8 relu conv3:8>12 shuffle2").unwrap();
        let chain = ModelChain::with_bicubic(up).unwrap();
        let x = Tensor::random_uniform(&mut Rng::new(1), [1, 3, 6, 6], 0.0, 1.0).unwrap();
        let (y, _) = chain.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 3, 12, 12]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_with_skip_give_bicubic() {
        let up = Upscaler::from_architecture(&Upscaler::default_architecture(3, 2)).unwrap();
        assert!(up.has_skip());
        assert_eq!(Upscaler::from_architecture(&up.architecture()).unwrap(), up);
        let chain = ModelChain::with_bicubic(up).unwrap();
        let x = Tensor::random_uniform(&mut Rng::new(1), [1, 3, 6, 6], 0.0, 1.0).unwrap();
        assert_eq!(chain.upscale(&x).unwrap(), BicubicOp::new(2).unwrap().up(&x).unwrap());
        assert!(Upscaler::from_architecture("conv3:3>8 shuffle2 +bicubic").is_err());
    }

    #[test]
    fn skip_adds_bicubic_adjoint_to_input_gradient() {
        let plain = random_chain("conv3:3>6 relu conv3:6>12 shuffle2", 11);
        let mut up = Upscaler::from_architecture("conv3:3>6 relu conv3:6>12 shuffle2 +bicubic").unwrap();
        up.stack = plain.up.stack.clone();
        let skip = ModelChain::with_bicubic(up).unwrap();
        let x = Tensor::random_uniform(&mut Rng::new(12), [1, 3, 5, 5], 0.0, 1.0).unwrap();
        let y = Tensor::random_uniform(&mut Rng::new(13), [1, 3, 10, 10], 0.0, 1.0).unwrap();
        // Same residual in both chains, so the gradients differ by exactly up^T(dL/dy).
        let target = y.add(&BicubicOp::new(2).unwrap().up(&x).unwrap()).unwrap();
        let (_, g_plain) = plain.grad_input(&x, &y, LossKind::Mse).unwrap();
        let (_, g_skip) = skip.grad_input(&x, &target, LossKind::Mse).unwrap();
        let r = plain.upscale(&x).unwrap().sub(&y).unwrap().scale(2.0 / y.len() as f64).unwrap();
        let extra = BicubicOp::new(2).unwrap().up_adjoint(&r).unwrap();
        for ((a, b), e) in g_skip.data().iter().zip(g_plain.data()).zip(extra.data()) {
            assert!((a - b - e).abs() < 1e-14);
        }
    }

    #[test]
    fn bias_only_gives_constant_blocks() {
        let mut up = Upscaler::from_architecture("conv1:3>12 shuffle2").unwrap();
        for (i, b) in up.stack.layers[0].bias.iter_mut().enumerate() {
            *b = 0.1 * (i / 4) as f64 + 0.05;
        }
        let chain = ModelChain::with_bicubic(up).unwrap();
        let x = Tensor::random_uniform(&mut Rng::new(2), [1, 3, 3, 3], 0.0, 1.0).unwrap();
        let y = chain.upscale(&x).unwrap();
        for c in 0..3 {
            for yy in 0..6 {
                for xx in 0..6 {
                    assert!((y.at(0, c, yy, xx) - (0.1 * c as f64 + 0.05)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn forward_matches_naive_pipeline() {
        let chain = random_chain("conv3:3>5 relu conv3:5>12 shuffle2", 9);
        let x = Tensor::random_uniform(&mut Rng::new(3), [1, 3, 4, 4], 0.0, 1.0).unwrap();
        let (y, _) = chain.forward(&x).unwrap();
        let l = &chain.up.stack.layers;
        let h1: Vec<f64> = naive_conv(&l[0], x.data(), 4, 4).iter().map(|v| v.max(0.0)).collect();
        let h2 = naive_conv(&l[1], &h1, 4, 4);
        // depth-to-space by hand
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    for yy in 0..4 {
                        for xx in 0..4 {
                            let want = h2[((c * 4 + i * 2 + j) * 4 + yy) * 4 + xx];
                            assert!((y.at(0, c, 2 * yy + i, 2 * xx + j) - want).abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn batch_equivariance() {
        let chain = random_chain("conv3:3>6 relu conv3:6>12 shuffle2", 4);
        let x = Tensor::random_uniform(&mut Rng::new(5), [3, 3, 5, 5], 0.0, 1.0).unwrap();
        let batched = chain.upscale(&x).unwrap();
        for i in 0..3 {
            assert_eq!(chain.upscale(&x.item(i)).unwrap(), batched.item(i));
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let chain = random_chain("conv3:3>6 relu conv3:6>12 shuffle2", 6);
        let x = Tensor::random_uniform(&mut Rng::new(6), [1, 3, 4, 4], 0.0, 1.0).unwrap();
        let y = chain.upscale(&x).unwrap();
        let (l, g) = chain.grad_input(&x, &y, LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (_, pg) = chain.grad_params(&x, &y, LossKind::Mse).unwrap();
        assert!(grads_flat(&pg).iter().all(|&v| v == 0.0));
        let y_hr = Tensor::random_uniform(&mut Rng::new(7), [1, 3, 8, 8], 0.0, 1.0).unwrap();
        let target = chain.upscale(&chain.downscale(&y_hr).unwrap()).unwrap();
        let (_, gy) = chain.grad_input_full(&y_hr, &target, LossKind::Mse).unwrap();
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_gradient_linear_in_residual() {
        // For fixed x, dL/dx = J^T (2 r / n): doubling r doubles it.
        let chain = random_chain("conv3:3>6 relu conv3:6>12 shuffle2", 8);
        let x = Tensor::random_uniform(&mut Rng::new(8), [1, 3, 4, 4], 0.0, 1.0).unwrap();
        let y = chain.upscale(&x).unwrap();
        let r = Tensor::random_uniform(&mut Rng::new(9), y.shape(), -0.1, 0.1).unwrap();
        let (_, g1) = chain.grad_input(&x, &y.sub(&r).unwrap(), LossKind::Mse).unwrap();
        let (_, g2) = chain.grad_input(&x, &y.add_scaled(&r, -2.0).unwrap(), LossKind::Mse).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_dims_match_hr() {
        let chain = random_chain(&Upscaler::default_architecture(3, 2), 1);
        let y = Tensor::random_uniform(&mut Rng::new(1), [1, 3, 12, 16], 0.0, 1.0).unwrap();
        let out = chain.upscale(&chain.downscale(&y).unwrap()).unwrap();
        assert_eq!(out.shape(), y.shape());
    }

    #[test]
    fn dimension_errors() {
        let chain = random_chain("conv3:3>12 shuffle2", 1);
        let x = Tensor::zeros([1, 3, 4, 4]);
        assert!(chain.grad_input(&x, &Tensor::zeros([1, 3, 6, 6]), LossKind::Mse).is_err());
        assert!(chain.forward(&Tensor::zeros([1, 1, 4, 4])).is_err());
        assert!(chain.grad_input_full(&Tensor::zeros([1, 3, 7, 8]), &Tensor::zeros([1, 3, 7, 8]), LossKind::Mse).is_err());
    }

    #[test]
    fn scale_mismatch_rejected() {
        let up = Upscaler::from_architecture("conv3:3>12 shuffle2").unwrap();
        assert!(ModelChain::new(Downscaler::Bicubic(BicubicOp::new(4).unwrap()), up).is_err());
    }
}

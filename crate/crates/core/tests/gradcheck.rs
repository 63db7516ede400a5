//! Finite-difference verification of reverse-mode gradients for both
//! network architectures. Differences are taken through the
//! double-precision reference forward, so the comparison isolates the
//! backward pass instead of measuring f32 forward noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use resip_core::numerics::{mse_loss_grad, Activation, Mlp, Net, ResMlp, Scratch};
use resip_core::rng::named_rng;

const FD_STEP: f32 = 1e-4;
const REL_ERR_MAX: f64 = 1e-4;

/// Norm-wise relative error between the analytic gradient and a full
/// finite-difference gradient of the f64 reference MSE loss.
fn gradcheck<N: Net + Clone>(net: &N, b: usize, rng: &mut ChaCha8Rng) -> f64 {
    let x32: Vec<f32> = (0..b * net.in_dim()).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    let t32: Vec<f32> = (0..b * net.out_dim()).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();

    let mut grad = vec![0.0f32; net.param_count()];
    mse_loss_grad(net, &x32, b, &t32, &mut grad, &mut Scratch::new());

    let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
    let t64: Vec<f64> = t32.iter().map(|&v| v as f64).collect();
    let loss = |n: &N| -> f64 {
        let y = n.forward_batch_f64(&x64, b);
        y.iter().zip(&t64).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / y.len() as f64
    };

    let mut work = net.clone();
    let mut err_sq = 0.0f64;
    let mut norm_sq = 0.0f64;
    for idx in 0..net.param_count() {
        let orig = work.params()[idx];
        work.params_mut()[idx] = orig + FD_STEP;
        // The f32 store may round the step; measure what was actually taken.
        let hp = (work.params()[idx] as f64) - (orig as f64);
        let lp = loss(&work);
        work.params_mut()[idx] = orig - FD_STEP;
        let hm = (orig as f64) - (work.params()[idx] as f64);
        let lm = loss(&work);
        work.params_mut()[idx] = orig;
        let fd = (lp - lm) / (hp + hm);
        let d = fd - grad[idx] as f64;
        err_sq += d * d;
        norm_sq += fd * fd;
    }
    (err_sq / norm_sq.max(1e-30)).sqrt()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = named_rng(401, "gradcheck-mlp");
    for draw in 0..10 {
        let net = Mlp::new(&[7, 24, 16, 5], Activation::Mish, Activation::Linear, &mut rng)
            .unwrap();
        let rel = gradcheck(&net, 6, &mut rng);
        assert!(rel <= REL_ERR_MAX, "draw {draw}: rel err {rel:.3e}");
    }
}

#[test]
fn mlp_gradients_match_with_relu_and_tanh_head() {
    // Relu kinks sit at z = 0; random inputs put pre-activations away from
    // them, so central differences stay valid.
    let mut rng = named_rng(402, "gradcheck-mlp2");
    for draw in 0..10 {
        let net =
            Mlp::new(&[5, 20, 20, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let rel = gradcheck(&net, 6, &mut rng);
        assert!(rel <= REL_ERR_MAX, "draw {draw}: rel err {rel:.3e}");
    }
}

#[test]
fn resmlp_gradients_match_finite_differences() {
    let mut rng = named_rng(403, "gradcheck-resmlp");
    for draw in 0..10 {
        let net =
            ResMlp::new(9, 20, 2, 6, Activation::Mish, Activation::Linear, &mut rng).unwrap();
        let rel = gradcheck(&net, 6, &mut rng);
        assert!(rel <= REL_ERR_MAX, "draw {draw}: rel err {rel:.3e}");
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    // dx from backward_batch feeds the actor's action-gradient path.
    let mut rng = named_rng(404, "gradcheck-dx");
    let net = Mlp::new(&[6, 18, 4], Activation::Mish, Activation::Linear, &mut rng).unwrap();
    let b = 3;
    let x32: Vec<f32> = (0..b * 6).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    let t32: Vec<f32> = (0..b * 4).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();

    // Upstream gradient of the MSE loss at the output.
    let mut y = Vec::new();
    net.forward_batch(&x32, b, &mut y, &mut Scratch::new());
    let scale = 2.0 / (b * 4) as f32;
    let dy: Vec<f32> = y.iter().zip(&t32).map(|(a, t)| (a - t) * scale).collect();

    let mut grad = vec![0.0f32; net.param_count()];
    let mut dx = Vec::new();
    net.backward_batch(&x32, b, &dy, &mut grad, Some(&mut dx), &mut Scratch::new());

    let t64: Vec<f64> = t32.iter().map(|&v| v as f64).collect();
    let loss_at = |x: &[f64]| -> f64 {
        let y = net.forward_batch_f64(x, b);
        y.iter().zip(&t64).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / y.len() as f64
    };
    let mut x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
    let mut err_sq = 0.0;
    let mut norm_sq = 0.0;
    for i in 0..x64.len() {
        let orig = x64[i];
        let h = FD_STEP as f64;
        x64[i] = orig + h;
        let lp = loss_at(&x64);
        x64[i] = orig - h;
        let lm = loss_at(&x64);
        x64[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let d = fd - dx[i] as f64;
        err_sq += d * d;
        norm_sq += fd * fd;
    }
    let rel = (err_sq / norm_sq.max(1e-30)).sqrt();
    assert!(rel <= REL_ERR_MAX, "input gradient rel err {rel:.3e}");
}

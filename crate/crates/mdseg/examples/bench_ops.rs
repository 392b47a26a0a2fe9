//! Per-op timing at desk-scale shapes (internal tuning aid).

use std::time::Instant;

use mdseg::dsbn::{DsbnLayer, Mode};
use mdseg::tensor::ops::{conv2d, maxpool2d, relu, softmax_channels, transposed_conv2d};
use mdseg::tensor::{backward, ops::sum_all, Padding, Tensor};

fn timed<R>(label: &str, reps: usize, mut f: impl FnMut() -> R) {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    let per = start.elapsed().as_secs_f64() / reps as f64 * 1e3;
    println!("{label}: {per:.2} ms");
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = mdseg::seeding::rng_for(seed, &[1]);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    // stage-1 shapes: batch 16, 8 channels, 64x64
    let x = randn(&[16, 8, 64, 64], 1);
    let k = randn(&[8, 8, 3, 3], 2);
    let b = Tensor::zeros(&[8]);
    timed("conv fwd 16x8x64x64 (8->8)", 20, || {
        conv2d(&x, &k, &b, Padding::Same).unwrap()
    });

    let xg = randn(&[16, 8, 64, 64], 1).requires_grad();
    let kg = randn(&[8, 8, 3, 3], 2).requires_grad();
    let bg = Tensor::zeros(&[8]).requires_grad();
    timed("conv fwd+bwd", 20, || {
        let y = conv2d(&xg, &kg, &bg, Padding::Same).unwrap();
        let loss = sum_all(&y);
        backward(&loss).unwrap();
    });

    // bottleneck shape: batch 16, 64->128 at 4x4
    let xb = randn(&[16, 64, 4, 4], 3).requires_grad();
    let kb = randn(&[128, 64, 3, 3], 4).requires_grad();
    let bb = Tensor::zeros(&[128]).requires_grad();
    timed("conv bottleneck fwd+bwd", 20, || {
        let y = conv2d(&xb, &kb, &bb, Padding::Same).unwrap();
        backward(&sum_all(&y)).unwrap();
    });

    let mut bn = DsbnLayer::new(2, 8);
    timed("dsbn fwd 16x8x64x64", 20, || {
        bn.forward(&x, 0, Mode::Train).unwrap()
    });
    let mut bn2 = DsbnLayer::new(2, 8);
    timed("dsbn fwd+bwd", 20, || {
        let y = bn2.forward(&xg, 0, Mode::Train).unwrap();
        backward(&sum_all(&y)).unwrap();
    });

    timed("relu fwd+bwd", 20, || {
        backward(&sum_all(&relu(&xg))).unwrap()
    });
    timed("maxpool fwd+bwd", 20, || {
        backward(&sum_all(&maxpool2d(&xg).unwrap())).unwrap()
    });
    let xs = randn(&[16, 4, 64, 64], 5).requires_grad();
    timed("softmax fwd+bwd", 20, || {
        backward(&sum_all(&softmax_channels(&xs).unwrap())).unwrap()
    });
    let xt = randn(&[16, 128, 4, 4], 6).requires_grad();
    let kt = randn(&[128, 64, 2, 2], 7).requires_grad();
    timed("tconv fwd+bwd 128->64 @4x4", 20, || {
        backward(&sum_all(&transposed_conv2d(&xt, &kt).unwrap())).unwrap()
    });
}

//! Forward+backward throughput of the solver's Z-network shape.
use std::time::Instant;

use bsvie::nn::{tanh_in_place, Batch, ForwardCache, Gradients, Mlp};

fn main() {
    let net = Mlp::init(&[4, 11, 11, 11, 1], 1).unwrap();
    let chunk = 1024;
    let mut cache = ForwardCache::default();
    {
        let input = cache.input_mut(4, chunk);
        for f in 0..4 {
            for (r, v) in input.feature_mut(f).iter_mut().enumerate() {
                *v = ((r * 7 + f) as f64 * 0.001).sin();
            }
        }
    }
    let mut grads = Gradients::zeros_like(&net);
    let seed = Batch::zeros(1, chunk);
    let reps = 5_000;
    let rows = (reps * chunk) as f64;

    let start = Instant::now();
    for _ in 0..reps {
        net.forward_cached(&mut cache);
    }
    println!("forward: {:.1} ns/row", start.elapsed().as_secs_f64() / rows * 1e9);

    let start = Instant::now();
    for _ in 0..reps {
        net.forward_cached(&mut cache);
        net.backward_cached(&mut cache, &seed, &mut grads);
    }
    println!("forward+backward: {:.1} ns/row", start.elapsed().as_secs_f64() / rows * 1e9);

    let mut xs: Vec<f64> = (0..33 * chunk).map(|i| (i as f64 * 1e-3).sin()).collect();
    let start = Instant::now();
    for _ in 0..reps {
        tanh_in_place(&mut xs);
        xs.iter_mut().for_each(|x| *x *= 1.5);
    }
    println!("33 tanh: {:.1} ns/row", start.elapsed().as_secs_f64() / rows * 1e9);
}

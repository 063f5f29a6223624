//! Finite-difference checks of the hand-written backward passes (64-bit).

use gapchain::data::{sample_latents, ImageBatch};
use gapchain::models::*;
use gapchain::nn::{Feature, ParamSet};
use gapchain::seed;
use ndarray::{Array1, Array2, Array4};
use rand::Rng as _;

const TOL: f64 = 1e-4;

fn noise_images(n: usize, s: u64) -> ImageBatch<f64> {
    let mut r = seed::rng(s);
    ImageBatch::new(Array4::from_shape_simple_fn((n, 28, 28, 1), || {
        r.gen_range(-1.0..1.0)
    }))
    .unwrap()
}

/// A few coordinates from every tensor.
fn sample_coords<P: ParamSet<f64>>(p: &P, per_tensor: usize, s: u64) -> Vec<usize> {
    let mut r = seed::rng(s);
    let mut out = Vec::new();
    let mut offset = 0;
    for t in p.params() {
        for _ in 0..per_tensor.min(t.len()) {
            out.push(offset + r.gen_range(0..t.len()));
        }
        offset += t.len();
    }
    out
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = relative_error(*a, *n, 1e-6);
        assert!(
            err <= TOL,
            "{what} coord {i}: analytic {a} numeric {n} rel {err}"
        );
    }
}

#[test]
fn generator_backward_matches_finite_differences() {
    let g = GeneratorParams::<f64>::init(
        2,
        GeneratorConfig {
            width: Multiplier::new(1, 32).unwrap(),
        },
    );
    let z = sample_latents::<f64>(3, 4).unwrap().vectors;
    let mut r = seed::rng(11);
    let w = Array2::from_shape_simple_fn((4 * 784, 1), || r.gen_range(-1.0..1.0));
    let loss = |p: &GeneratorParams<f64>| {
        let (out, _) = p.forward_cached(&z, true).unwrap();
        (&out.data * &w).sum()
    };
    let (_, cache) = g.forward_cached(&z, true).unwrap();
    let mut grads = g.zeros_like();
    g.backward(&cache, &w, &mut grads);
    let coords = sample_coords(&g, 6, 5);
    let numeric = finite_difference_gradient(loss, &g, 1e-6, &coords).unwrap();
    let flat = grads.flat_params();
    let analytic: Vec<f64> = coords.iter().map(|&i| flat[i]).collect();
    assert_close(&analytic, &numeric, "generator");
}

fn check_detector<D: Detector<f64> + Clone>(d: &D, name: &str) {
    let x = noise_images(3, 8).to_feature();
    let mut r = seed::rng(12);
    let w = Array1::from_shape_simple_fn(3, || r.gen_range(-1.0..1.0));
    let (_, cache) = d.forward_logits(&x);
    let mut grads = d.zeros_like();
    let dx = d.backward_logits(&cache, &w, Some(&mut grads));

    let loss = |p: &D| (&p.forward_logits(&x).0 * &w).sum();
    let coords = sample_coords(d, 6, 6);
    let numeric = finite_difference_gradient(loss, d, 1e-6, &coords).unwrap();
    let flat = grads.flat_params();
    let analytic: Vec<f64> = coords.iter().map(|&i| flat[i]).collect();
    assert_close(&analytic, &numeric, name);

    // input gradient
    let pixels: Vec<f64> = x.data.iter().copied().collect();
    let picks: Vec<usize> = (0..12).map(|_| r.gen_range(0..pixels.len())).collect();
    let in_loss = |v: &Vec<f64>| {
        let f = Feature::new(
            Array2::from_shape_vec((v.len(), 1), v.clone()).unwrap(),
            3,
            28,
            28,
        );
        (&d.forward_logits(&f).0 * &w).sum()
    };
    let numeric = finite_difference_gradient(in_loss, &pixels, 1e-6, &picks).unwrap();
    let analytic: Vec<f64> = picks.iter().map(|&i| dx[[i, 0]]).collect();
    assert_close(&analytic, &numeric, &format!("{name} input"));
}

#[test]
fn discriminator_backward_matches_finite_differences() {
    let d = DiscriminatorParams::<f64>::init(
        4,
        DiscriminatorConfig {
            width: Multiplier::new(1, 8).unwrap(),
        },
    );
    check_detector(&d, "discriminator");
}

#[test]
fn classifier_backward_matches_finite_differences() {
    let c = ClassifierParams::<f64>::init(4, CapacityTier::parse("1/8").unwrap());
    check_detector(&c, "classifier");
}

#[test]
fn embedder_backward_matches_finite_differences() {
    let e = DigitEmbedderParams::<f64>::init(6, CapacityTier::parse("1/8").unwrap());
    let x = noise_images(3, 9);
    let labels = [1u8, 7, 3];
    let loss = |p: &DigitEmbedderParams<f64>| softmax_cross_entropy(&p.forward(&x).0, &labels).0;
    let (logits, cache) = e.forward(&x);
    let (_, dl) = softmax_cross_entropy(&logits, &labels);
    let mut grads = e.zeros_like();
    e.backward(&cache, &dl, &mut grads);
    let coords = sample_coords(&e, 6, 7);
    let numeric = finite_difference_gradient(loss, &e, 1e-6, &coords).unwrap();
    let flat = grads.flat_params();
    let analytic: Vec<f64> = coords.iter().map(|&i| flat[i]).collect();
    assert_close(&analytic, &numeric, "embedder");
}

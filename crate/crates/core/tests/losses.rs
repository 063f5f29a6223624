use gapchain::losses::*;
use gapchain::models::relative_error;
use proptest::prelude::*;

const EPS: f64 = 1e-7;

fn prob() -> impl Strategy<Value = f64> {
    EPS..(1.0 - EPS)
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prob(), n)
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..6, 1usize..4).prop_flat_map(|(n, k)| (probs(n), prop::collection::vec(probs(n), k)))
}

fn refs(cs: &[Vec<f64>]) -> Vec<&[f64]> {
    cs.iter().map(|c| c.as_slice()).collect()
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let h = 1e-6 * x[i].max(1e-3);
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn configs(k: usize, phi: f64) -> Vec<(LossConfig, usize)> {
    vec![
        (LossConfig::standard(), 0),
        (LossConfig::new(LossVariant::FoolAll, phi).unwrap(), k),
        (LossConfig::new(LossVariant::Memoryless, phi).unwrap(), 1),
        (LossConfig::new(LossVariant::Normalized, phi).unwrap(), 1),
        (LossConfig::multi(phi, k).unwrap(), 1),
    ]
}

fn n_classifiers(cfg: &LossConfig, k: usize) -> usize {
    match cfg.variant {
        LossVariant::Standard => 0,
        LossVariant::Memoryless | LossVariant::Normalized => 1,
        _ => k,
    }
}

proptest! {
    #[test]
    fn phi_zero_collapses_to_standard((d, cs) in batch()) {
        let s = gen_loss_standard(&d);
        prop_assert_eq!(gen_loss_fool_all(&d, &refs(&cs), 0.0), s);
        prop_assert_eq!(gen_loss_memoryless(&d, &cs[0], 0.0), s);
        prop_assert_eq!(gen_loss_normalized(&d, &cs[0], 0.0), s);
        prop_assert_eq!(gen_loss_multi(&d, &refs(&cs), 0.0), s);
    }

    #[test]
    fn one_classifier_forms_coincide((d, cs) in batch(), phi in 0.0f64..1e4) {
        let c = &cs[0];
        let m = gen_loss_memoryless(&d, c, phi);
        prop_assert_eq!(gen_loss_fool_all(&d, &[c.as_slice()], phi), m);
        prop_assert_eq!(gen_loss_multi(&d, &[c.as_slice()], phi), m);
    }

    #[test]
    fn normalized_is_scaled_memoryless((d, cs) in batch(), phi in 0.0f64..1e4) {
        let a = gen_loss_normalized(&d, &cs[0], phi) * (1.0 + phi);
        let b = gen_loss_memoryless(&d, &cs[0], phi);
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn losses_are_non_negative((d, cs) in batch(), phi in 0.0f64..1e4, y in prop::collection::vec(0u8..2, 1..6)) {
        prop_assert!(gen_loss_standard(&d) >= 0.0);
        prop_assert!(gen_loss_fool_all(&d, &refs(&cs), phi) >= 0.0);
        prop_assert!(gen_loss_normalized(&d, &cs[0], phi) >= 0.0);
        prop_assert!(disc_loss(&d, &cs[0]) >= 0.0);
        let n = y.len().min(d.len());
        let labels: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
        prop_assert!(classifier_bce(&d[..n], &labels) >= 0.0);
    }

    #[test]
    fn generator_losses_fall_as_probabilities_rise((d, cs) in batch(), phi in 0.0f64..1e3, i in 0usize..6, bump in 1e-4f64..0.5) {
        let i = i % d.len();
        let mut d2 = d.clone();
        d2[i] = (d2[i] + bump).min(1.0 - EPS);
        let mut cs2 = cs.clone();
        cs2[0][i] = (cs2[0][i] + bump).min(1.0 - EPS);
        prop_assert!(gen_loss_standard(&d2) <= gen_loss_standard(&d));
        prop_assert!(gen_loss_fool_all(&d, &refs(&cs2), phi) <= gen_loss_fool_all(&d, &refs(&cs), phi));
        prop_assert!(gen_loss_normalized(&d2, &cs2[0], phi) <= gen_loss_normalized(&d, &cs[0], phi));
        prop_assert!(gen_loss_multi(&d2, &refs(&cs2), phi) <= gen_loss_multi(&d, &refs(&cs), phi));
    }

    #[test]
    fn fool_all_grows_with_phi((d, cs) in batch(), phi in 0.0f64..1e3, extra in 1e-3f64..10.0) {
        prop_assert!(gen_loss_fool_all(&d, &refs(&cs), phi + extra) >= gen_loss_fool_all(&d, &refs(&cs), phi));
    }

    #[test]
    fn generator_gradients_match_finite_differences((d, cs) in batch(), phi in 0.0f64..1e2) {
        let k = cs.len();
        for (cfg, it) in configs(k, phi) {
            let nc = n_classifiers(&cfg, k);
            let cs = &cs[..nc];
            let g = generator_loss(&cfg, it, &d, &refs(cs)).unwrap();
            let of_d = |x: &[f64]| generator_loss(&cfg, it, x, &refs(cs)).unwrap().loss;
            for i in 0..d.len() {
                let num = central(of_d, &d, i);
                prop_assert!(relative_error(g.d_grad[i], num, 1e-8) <= 1e-3, "{:?} d[{}]", cfg.variant, i);
            }
            for j in 0..nc {
                for i in 0..d.len() {
                    let f = |x: &[f64]| {
                        let mut cs2 = cs.to_vec();
                        cs2[j] = x.to_vec();
                        generator_loss(&cfg, it, &d, &refs(&cs2)).unwrap().loss
                    };
                    let num = central(f, &cs[j], i);
                    prop_assert!(relative_error(g.c_grads[j][i], num, 1e-8) <= 1e-3, "{:?} c{}[{}]", cfg.variant, j, i);
                }
            }
        }
    }

    #[test]
    fn disc_and_bce_gradients_match_finite_differences((a, bs) in batch(), y in prop::collection::vec(0u8..2, 6)) {
        let b = &bs[0];
        let (_, gr, gf) = disc_loss_grad(&a, b);
        for i in 0..a.len() {
            prop_assert!(relative_error(gr[i], central(|x| disc_loss(x, b), &a, i), 1e-8) <= 1e-3);
            prop_assert!(relative_error(gf[i], central(|x| disc_loss(&a, x), b, i), 1e-8) <= 1e-3);
        }
        let labels: Vec<f64> = y[..a.len()].iter().map(|&v| v as f64).collect();
        let (_, g) = classifier_bce_grad(&a, &labels);
        for i in 0..a.len() {
            prop_assert!(relative_error(g[i], central(|x| classifier_bce(x, &labels), &a, i), 1e-8) <= 1e-3);
        }
    }

    #[test]
    fn logit_chain_matches_finite_differences((d, _cs) in batch()) {
        // loss as a function of the logits through the sigmoid
        let logits: Vec<f64> = d.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let f = |z: &[f64]| gen_loss_standard(&z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect::<Vec<_>>());
        let g = generator_loss(&LossConfig::standard(), 0, &d, &[]).unwrap();
        let chained = prob_grad_to_logit(&d, &g.d_grad);
        for i in 0..d.len() {
            let h = 1e-6;
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            let num = (f(&up) - f(&dn)) / (2.0 * h);
            prop_assert!(relative_error(chained[i], num, 1e-8) <= 1e-3);
        }
    }
}

#[test]
fn loss_config_rejects_bad_settings() {
    assert!(LossConfig::new(LossVariant::FoolAll, -1.0).is_err());
    assert!(LossConfig::new(LossVariant::FoolAll, f64::NAN).is_err());
    assert!(LossConfig::multi(1.0, 0).is_err());
    let fa = LossConfig::new(LossVariant::FoolAll, 1.0).unwrap();
    assert!(generator_loss::<f64>(&fa, 0, &[0.5], &[]).is_err());
    assert!(generator_loss::<f64>(&fa, 2, &[0.5], &[&[0.5]]).is_err());
    assert!(generator_loss::<f64>(&fa, 1, &[0.5, 0.5], &[&[0.5]]).is_err());
    assert!(generator_loss::<f64>(&LossConfig::standard(), 0, &[], &[]).is_err());
}

#[test]
fn chance_level_values() {
    let half = [0.5f64; 4];
    let ln2 = std::f64::consts::LN_2;
    assert!((gen_loss_standard(&half) - ln2).abs() < 1e-15);
    assert!((disc_loss(&half, &half) - 2.0 * ln2).abs() < 1e-15);
    assert!((gen_loss_fool_all(&half, &[&half, &half], 2.0) - 5.0 * ln2).abs() < 1e-14);
    assert!((gen_loss_normalized(&half, &half, 3.0) - ln2).abs() < 1e-15);
}

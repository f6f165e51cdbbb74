use batkit::brnet::*;
use batkit::dsp::{Complex64, ErbFilterbank, Spectrogram};
use batkit::scene::ArrayGeometry;
use batkit::score::{extract_score_from_specs, ScoreFeature, ScoreParams};
use batkit::{Exec, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAME: usize = 32;
const BINS: usize = 17;

fn tiny() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        bands: 4,
        looks: 2,
        taps: 5,
        df_bins: 6,
    }
}

fn tiny_fb() -> ErbFilterbank {
    ErbFilterbank::new(4, BINS, 16_000).unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng, frames: usize, scale: f64) -> Spectrogram {
    let data = (0..frames * BINS)
        .map(|_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect();
    Spectrogram::from_data(data, frames, FRAME, FRAME / 2, 16_000).unwrap()
}

fn tiny_item(rng: &mut ChaCha8Rng, frames: usize) -> TrainItem {
    let geometry = ArrayGeometry::circular(3, 0.05).unwrap();
    let specs: Vec<_> = (0..3).map(|_| random_spec(rng, frames, 1.0)).collect();
    let params = ScoreParams {
        radius: 1,
        look_directions: 2,
    };
    let feature = extract_score_from_specs(&specs, &geometry, &tiny_fb(), &params, Exec::default()).unwrap();
    TrainItem {
        feature,
        reference: specs[0].clone(),
        clean: [random_spec(rng, frames, 1.0), random_spec(rng, frames, 1.0)],
        ambience: [random_spec(rng, frames, 0.5), random_spec(rng, frames, 0.5)],
    }
}

fn perturbed(params: &ModelParams) -> ModelParams {
    // move FiLM off zero so every branch carries gradient
    let mut p = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for name in ["film.gamma", "film.beta"] {
        let r = p.layout.tensors.iter().find(|t| t.0 == name).unwrap().2.clone();
        for v in &mut p.data[r] {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let item = tiny_item(&mut rng, 10);
    let fb = tiny_fb();
    let alpha = 0.7;
    let target = item.target(alpha).unwrap();
    let params = perturbed(&ModelParams::init(tiny(), 3).unwrap());
    let (_, grads) = loss_and_grad(&params, &item.feature, &item.reference, &target, &fb, alpha, 0.3).unwrap();
    let f = |p: &ModelParams| loss_and_grad(p, &item.feature, &item.reference, &target, &fb, alpha, 0.3).unwrap().0;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (name, _, range) in params.layout.tensors.clone() {
        let picks: Vec<usize> = if range.len() <= 20 {
            range.clone().collect()
        } else {
            (0..20).map(|_| rng.random_range(range.clone())).collect()
        };
        for i in picks {
            let mut p = params.clone();
            p.data[i] += h;
            let up = f(&p);
            p.data[i] -= 2.0 * h;
            let down = f(&p);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-7);
            assert!(rel <= 1e-4, "{name}[{i}]: analytic {} numeric {numeric} rel {rel}", grads[i]);
            worst = worst.max(rel);
        }
    }
    println!("worst relative error {worst:.2e}");
}

#[test]
fn film_gradient_vanishes_at_alpha_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let item = tiny_item(&mut rng, 6);
    let params = perturbed(&ModelParams::init(tiny(), 4).unwrap());
    let target = item.target(0.0).unwrap();
    let (_, g) = loss_and_grad(&params, &item.feature, &item.reference, &target, &tiny_fb(), 0.0, 0.3).unwrap();
    for name in ["film.gamma", "film.beta"] {
        let r = params.layout.tensors.iter().find(|t| t.0 == name).unwrap().2.clone();
        assert!(g[r].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn fresh_model_ignores_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let item = tiny_item(&mut rng, 8);
    let params = ModelParams::init(tiny(), 5).unwrap();
    let a = forward(&params, &item.feature, 0.0).unwrap();
    let b = forward(&params, &item.feature, 1.0).unwrap();
    assert_eq!(a, b);
    assert!(forward(&params, &item.feature, 1.5).unwrap_err().is_usage());
}

#[test]
fn default_output_shapes_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = 7;
    let score: Vec<f64> = (0..frames * 32 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ls = Matrix::from_fn(frames, 32, |_, _| rng.random_range(-3.0..3.0));
    let feat = ScoreFeature::new(score, ls, 12).unwrap();
    let mut params = ModelParams::init(ModelConfig::default(), 6).unwrap();
    for v in params.data.iter_mut() {
        *v *= 20.0;
    }
    let out = forward(&params, &feat, 0.4).unwrap();
    assert_eq!(out.gains.len(), frames * 2 * 32);
    assert_eq!(out.coeffs.len(), frames * 2 * 5 * 160);
    assert!(out.gains.iter().all(|g| (0.0..=2.0).contains(g)));
    assert!(out.coeffs.iter().all(|c| c.re.abs() <= 1.0 && c.im.abs() <= 1.0));
}

#[test]
fn identity_and_zero_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fb = ErbFilterbank::new(32, 257, 16_000).unwrap();
    let data = (0..9 * 257)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let x = Spectrogram::from_data(data, 9, 512, 256, 16_000).unwrap();
    let id = ModelOutput::identity(9, 32, 5, 160);
    let [l, r] = apply_output(&id, &x, &fb).unwrap();
    assert_eq!(l, x);
    assert_eq!(r, x);
    let mut zero = id.clone();
    zero.gains.iter_mut().for_each(|g| *g = 0.0);
    let [l, _] = apply_output(&zero, &x, &fb).unwrap();
    assert!(l.data().iter().all(|v| v.norm() == 0.0));
}

#[test]
fn deep_filter_matches_tap_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fb = ErbFilterbank::new(32, 257, 16_000).unwrap();
    let frames = 12;
    let data = (0..frames * 257)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let x = Spectrogram::from_data(data, frames, 512, 256, 16_000).unwrap();
    let mut out = ModelOutput::identity(frames, 32, 5, 160);
    out.gains.iter_mut().for_each(|g| *g = rng.random_range(0.0..2.0));
    out.coeffs
        .iter_mut()
        .for_each(|c| *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let est = apply_output(&out, &x, &fb).unwrap();
    let w = fb.weights();
    let mut worst: f64 = 0.0;
    for (ear, y) in est.iter().enumerate() {
        for l in 0..frames {
            for f in 0..257 {
                let gain = |l: usize| {
                    let num: f64 = (0..32).map(|b| w.get(b, f) * out.gain(l, ear, b)).sum();
                    let den: f64 = (0..32).map(|b| w.get(b, f)).sum();
                    num / den
                };
                let expect = if f < 160 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..5 {
                        if l >= i {
                            acc += out.coeff(l, ear, i, f) * gain(l - i) * x.get(l - i, f);
                        }
                    }
                    acc
                } else {
                    gain(l) * x.get(l, f)
                };
                worst = worst.max((y.get(l, f) - expect).norm());
            }
        }
    }
    assert!(worst <= 1e-10, "{worst}");
}

fn single(v: Complex64) -> Spectrogram {
    Spectrogram::from_data(vec![v, Complex64::new(0.0, 0.0)], 1, 2, 1, 16_000).unwrap()
}

#[test]
fn loss_cases() {
    let y = [single(Complex64::new(1.0, 0.0)), single(Complex64::new(0.0, 0.0))];
    let yh = [single(Complex64::new(-1.0, 0.0)), single(Complex64::new(0.0, 0.0))];
    assert!((loss(&y, &yh, 0.3).unwrap() - 4.0).abs() < 1e-12);
    assert_eq!(loss(&y, &y, 0.3).unwrap(), 0.0);
    assert!(loss(&y, &yh, 0.0).is_err());
}

#[test]
fn loss_ignores_bin_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = [random_spec(&mut rng, 6, 1.0), random_spec(&mut rng, 6, 1.0)];
    let yh = [random_spec(&mut rng, 6, 1.0), random_spec(&mut rng, 6, 1.0)];
    let base = loss(&y, &yh, 0.3).unwrap();
    assert!(base > 0.0);
    let n = 6 * BINS;
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffle = |s: &Spectrogram| {
        let data = perm.iter().map(|&k| s.data()[k]).collect();
        Spectrogram::from_data(data, 6, FRAME, FRAME / 2, 16_000).unwrap()
    };
    let y2 = [shuffle(&y[0]), shuffle(&y[1])];
    let yh2 = [shuffle(&yh[0]), shuffle(&yh[1])];
    assert!((loss(&y2, &yh2, 0.3).unwrap() - base).abs() <= 1e-12);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let item = tiny_item(&mut rng, 5);
    let params = ModelParams::init(tiny(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.brn");
    params.save(&path).unwrap();
    let back = ModelParams::load(&path).unwrap();
    assert_eq!(back, params);
    assert_eq!(
        forward(&back, &item.feature, 0.5).unwrap(),
        forward(&params, &item.feature, 0.5).unwrap()
    );
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(ModelParams::from_bytes(&bytes), Err(batkit::Error::Format(_))));
    assert!(matches!(ModelParams::from_bytes(b"nope"), Err(batkit::Error::Format(_))));
}

#[test]
fn clipping_caps_the_norm() {
    let mut g: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let (raw, clipped) = clip_global_norm(&mut g, 3.0);
    assert!(raw > 3.0 && clipped <= 3.0 + 1e-9);
    let mut small = vec![0.1, 0.2];
    assert_eq!(clip_global_norm(&mut small, 3.0).0, clip_global_norm(&mut small, 3.0).1);
}

#[test]
fn learning_rate_halves_after_three_stagnant_epochs() {
    let params = ModelParams::init(tiny(), 1).unwrap();
    let mut state = TrainState::new(params, 0.001);
    assert!(!state.record_validation(1.0, 3));
    assert!(!state.record_validation(1.0, 3));
    assert!(!state.record_validation(1.2, 3));
    assert!(state.record_validation(1.1, 3));
    assert_eq!(state.lr, 0.0005);
    assert!(!state.record_validation(0.9, 3));
    assert_eq!(state.best_val, 0.9);
}

fn tiny_run(epochs: usize, state_path: Option<&std::path::Path>, exec: Exec) -> TrainState {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let train_items: Vec<_> = (0..5).map(|_| tiny_item(&mut rng, 8)).collect();
    let val_items: Vec<_> = (0..2).map(|_| tiny_item(&mut rng, 8)).collect();
    let cfg = TrainConfig {
        epochs,
        batch_size: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    train(tiny(), &train_items, &val_items, &tiny_fb(), &cfg, state_path, exec, &mut |_| Ok(())).unwrap()
}

#[test]
fn training_is_deterministic_and_resumable() {
    let full = tiny_run(4, None, Exec::Parallel);
    assert_eq!(full.log.len(), 4);
    for e in &full.log {
        assert!(e.max_grad_norm <= 3.0 + 1e-9);
        assert!(e.alpha_counts.keys().all(|k| ["0", "0.3", "0.5", "0.7", "1"].contains(&k.as_str())));
        assert_eq!(e.alpha_counts.values().sum::<usize>(), 5);
    }
    let seq = tiny_run(4, None, Exec::Sequential);
    assert_eq!(seq, full);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.brs");
    let partial = tiny_run(2, Some(&path), Exec::default());
    assert_eq!(partial.log[..], full.log[..2]);
    let resumed = tiny_run(4, Some(&path), Exec::default());
    assert_eq!(resumed, full);
}

#[test]
fn duplicated_item_doubles_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let item = tiny_item(&mut rng, 6);
    let params = ModelParams::init(tiny(), 2).unwrap();
    let target = item.target(0.5).unwrap();
    let (_, g) = loss_and_grad(&params, &item.feature, &item.reference, &target, &tiny_fb(), 0.5, 0.3).unwrap();
    let (_, g2) = loss_and_grad(&params, &item.feature, &item.reference, &target, &tiny_fb(), 0.5, 0.3).unwrap();
    let sum: Vec<f64> = g.iter().zip(&g2).map(|(a, b)| a + b).collect();
    assert!(sum.iter().zip(&g).all(|(s, a)| *s == 2.0 * a));
}

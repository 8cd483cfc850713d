use asc::encoder::{build_audio_stem, build_visual_stem, ste_loss, EncoderConfig, ShortTermEncoder};
use asc::tensor::gradcheck::{check_gradients, worst_relative_error};
use asc::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> EncoderConfig {
    EncoderConfig {
        frames: 2,
        crop_height: 8,
        crop_width: 8,
        mel_bands: 8,
        mel_frames: 8,
        stage_widths: vec![2, 3],
        blocks_per_stage: 1,
        stem_kernel: 3,
        ..EncoderConfig::default()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).unwrap()
}

fn inputs(cfg: &EncoderConfig, n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    (
        random(rng, &[n, 3 * cfg.frames, cfg.crop_height, cfg.crop_width], 0.0, 1.0),
        random(rng, &[n, 1, cfg.mel_bands, cfg.mel_frames], -2.0, 2.0),
    )
}

#[test]
fn ste_loss_passes_finite_difference_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let enc = ShortTermEncoder::new(tiny(), &mut rng).unwrap();
    let (v, a) = inputs(&enc.cfg, 3, &mut rng);
    let labels = [1, 0, 1];
    let paths: Vec<String> = enc.params.paths().cloned().collect();
    let params: Vec<Tensor> = paths.iter().map(|p| enc.params.get(p).unwrap().detach()).collect();
    let reports = check_gradients(
        |xs| {
            let mut probe = enc.clone();
            for (p, x) in paths.iter().zip(xs) {
                probe.params.insert(p.clone(), x.clone());
            }
            let (out, _) = probe.forward(&v, &a, Mode::Train)?;
            ste_loss(&out, &labels)
        },
        &params,
        1e-4,
    )
    .unwrap();
    let worst = worst_relative_error(&reports);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn auxiliary_heads_see_only_their_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let enc = ShortTermEncoder::new(tiny(), &mut rng).unwrap();
    let (v, a) = inputs(&enc.cfg, 2, &mut rng);
    let (out, _) = enc.forward(&v, &a, Mode::Train).unwrap();
    out.logits_v.cross_entropy_with_logits(&[0, 1]).unwrap().backward().unwrap();
    for (path, t) in enc.params.iter() {
        if path.starts_with("ste.audio") {
            assert!(t.grad().is_none_or(|g| g.iter().all(|&x| x == 0.0)), "{path}");
        }
    }
    enc.params.zero_grad();
    let (out, _) = enc.forward(&v, &a, Mode::Train).unwrap();
    out.logits_a.cross_entropy_with_logits(&[0, 1]).unwrap().backward().unwrap();
    for (path, t) in enc.params.iter() {
        if path.starts_with("ste.visual") {
            assert!(t.grad().is_none_or(|g| g.iter().all(|&x| x == 0.0)), "{path}");
        }
    }
}

#[test]
fn replicated_stem_on_identical_frames_matches_single_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let k = 5;
    let base = random(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let frame = random(&mut rng, &[1, 3, 6, 6], 0.0, 1.0);
    let stacked = Tensor::concat(&vec![frame.clone(); k], 1).unwrap();
    let one = frame.conv2d(&base, 1, 1).unwrap();
    let many = stacked.conv2d(&build_visual_stem(&base, k, true).unwrap(), 1, 1).unwrap();
    for (x, y) in one.data().iter().zip(many.data()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn audio_stem_is_channel_mean_of_random_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let base = random(&mut rng, &[3, 3, 2, 2], -1.0, 1.0);
    let stem = build_audio_stem(&base).unwrap();
    let b = base.data();
    for co in 0..3 {
        for p in 0..4 {
            let want = (b[(co * 3) * 4 + p] + b[(co * 3 + 1) * 4 + p] + b[(co * 3 + 2) * 4 + p]) / 3.0;
            assert!((stem.data()[co * 4 + p] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let logits = random(&mut rng, &[4, 2], -3.0, 3.0);
    let labels = [0, 1, 1, 0];
    let got = logits.cross_entropy_with_logits(&labels).unwrap().item();
    let want: f64 = logits
        .data()
        .chunks(2)
        .zip(labels)
        .map(|(l, y)| -(l[y].exp() / (l[0].exp() + l[1].exp())).ln())
        .sum::<f64>()
        / 4.0;
    assert!((got - want).abs() < 1e-9);
}

#[test]
fn batch_norm_updates_move_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut enc = ShortTermEncoder::new(tiny(), &mut rng).unwrap();
    let (v, a) = inputs(&enc.cfg, 3, &mut rng);
    let (_, updates) = enc.forward(&v, &a, Mode::Train).unwrap();
    let path = "ste.visual.stem.bn.running_mean";
    let before = enc.params.buffer(path).unwrap().to_vec();
    let stats = updates.iter().find(|u| u.prefix == "ste.visual.stem.bn").unwrap().stats.clone();
    let momentum = enc.cfg.bn_momentum;
    asc::encoder::apply_bn_updates(&mut enc.params, &updates, momentum).unwrap();
    let after = enc.params.buffer(path).unwrap();
    for i in 0..before.len() {
        let want = momentum * before[i] + (1.0 - momentum) * stats.mean[i];
        assert!((after[i] - want).abs() < 1e-15);
    }
}

//! Built-in numerical checks: analytic gradients against finite
//! differences, the time/frequency covariance identity, and quick oracles
//! for the classical beamformers and the label round-trip.

use ebdoa::dcnn::{DeconvSpec, ModelConfig, batch_gradients, build_model, loss_with_param};
use ebdoa::ebdsp::{
    default_music_dimension, eb_music_spectrum, eb_mvdr_spectrum, freq_smoothed_cov, time_cov,
};
use ebdoa::eval::match_doas;
use ebdoa::nn::{
    Deconv2dParams, DenseParams, Tensor, deconv2d, deconv2d_backward, dense, dense_backward,
    gradient_check, sigmoid_bce,
};
use ebdoa::roomsim::{
    DoaSet, HoaFrame, RoomSpec, SourceKind, encode_hoa, enumerate_images, synth_source,
};
use ebdoa::sphharm::angular_distance;
use ebdoa::sps::{DEFAULT_PEAK_THRESHOLD, DEFAULT_SIGMA2, extract_peaks, gaussian_label, normalize_map};
use ebdoa::{Direction, Error, Grid, GridSpec, Result, build_grid};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> Result<()> {
    let checks: [(&str, fn() -> Result<String>); 8] = [
        ("time/frequency covariance identity", parseval),
        ("dense layer gradients", dense_gradients),
        ("deconv layer gradients", deconv_gradients),
        ("sigmoid-bce gradients", bce_gradients),
        ("assembled model gradients", model_gradients),
        ("anechoic eb-mvdr oracle", mvdr_oracle),
        ("two-source eb-music oracle", music_oracle),
        ("label peak round-trip", label_roundtrip),
    ];
    let mut failed = 0usize;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("{name}: ok ({detail})"),
            Err(e) => {
                failed += 1;
                println!("{name}: FAIL ({e})");
            }
        }
    }
    if failed == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(Error::Numerical(format!("selftest: {failed} check(s) failed")))
    }
}

fn ensure(cond: bool, msg: String) -> Result<()> {
    if cond { Ok(()) } else { Err(Error::Numerical(msg)) }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    let values = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, values).expect("shape and value count agree")
}

fn parseval() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let len = 2000;
    let mut frame = HoaFrame::zeros(4, 16_000.0, len)?;
    for c in 0..frame.channels() {
        for s in frame.channel_mut(c) {
            *s = rng.random_range(-1.0..1.0);
        }
    }
    let t = time_cov(&frame)?;
    let f = freq_smoothed_cov(&frame, (0, len / 2))?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for a in 0..t.dim() {
        for b in 0..t.dim() {
            let (tv, fv) = (t.matrix()[(a, b)], f.matrix()[(a, b)]);
            num += (tv - fv) * (tv - fv);
            den += tv * tv;
        }
    }
    let rel = (num / den).sqrt();
    ensure(rel < 1e-6, format!("relative error {rel:.3e} exceeds 1e-6"))?;
    Ok(format!("relative error {rel:.2e}"))
}

fn dense_gradients() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = DenseParams::he_init(8, 5, &mut rng)?;
    let x = random_tensor(&[3, 8], &mut rng);
    let y = dense(&params, &x)?;
    let (_, grads) = dense_backward(&params, &x, &y)?;
    let analytic = grads.weights.values().to_vec();
    let worst = gradient_check(&analytic, 1e-4, 40, 3, |i, delta| {
        let old = params.weights.values()[i];
        params.weights.values_mut()[i] = old + delta;
        let y = dense(&params, &x).expect("forward");
        params.weights.values_mut()[i] = old;
        0.5 * y.values().iter().map(|v| v * v).sum::<f64>()
    });
    ensure(worst < 1e-4, format!("max relative error {worst:.3e} exceeds 1e-4"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn deconv_gradients() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = Deconv2dParams::he_init(2, 3, (3, 3), (2, 2), (1, 1), (1, 1), &mut rng)?;
    let x = random_tensor(&[2, 2, 4, 5], &mut rng);
    let y = deconv2d(&params, &x)?;
    let (_, grads) = deconv2d_backward(&params, &x, &y)?;
    let analytic = grads.weights.values().to_vec();
    let worst = gradient_check(&analytic, 1e-4, 40, 5, |i, delta| {
        let old = params.weights.values()[i];
        params.weights.values_mut()[i] = old + delta;
        let y = deconv2d(&params, &x).expect("forward");
        params.weights.values_mut()[i] = old;
        0.5 * y.values().iter().map(|v| v * v).sum::<f64>()
    });
    ensure(worst < 1e-4, format!("max relative error {worst:.3e} exceeds 1e-4"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn bce_gradients() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut logits = random_tensor(&[2, 12], &mut rng);
    let targets = Tensor::new(
        &[2, 12],
        (0..24).map(|_| rng.random_range(0.0..1.0)).collect(),
    )?;
    let (_, grad) = sigmoid_bce(&logits, &targets)?;
    let analytic = grad.values().to_vec();
    let worst = gradient_check(&analytic, 1e-5, 24, 7, |i, delta| {
        let old = logits.values()[i];
        logits.values_mut()[i] = old + delta;
        let (loss, _) = sigmoid_bce(&logits, &targets).expect("loss");
        logits.values_mut()[i] = old;
        loss
    });
    ensure(worst < 1e-5, format!("max relative error {worst:.3e} exceeds 1e-5"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn model_gradients() -> Result<String> {
    let config = ModelConfig {
        order: 4,
        fc_widths: vec![625, 32, 400],
        reshape: (8, 5, 10),
        deconv: vec![DeconvSpec {
            in_channels: 8,
            out_channels: 1,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
            output_padding: (0, 0),
        }],
        grid: GridSpec::new(10, 20, 18.0)?,
        final_bias: -2.0,
    };
    let mut model = build_model(&config, 17)?;
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let features = random_tensor(&[2, 625], &mut rng);
    let labels = Tensor::new(
        &[2, 1, 10, 20],
        (0..400).map(|_| rng.random_range(0.0..1.0)).collect(),
    )?;
    let (_, analytic) = batch_gradients(&model, &features, &labels)?;
    let worst = gradient_check(&analytic, 1e-4, 120, 23, |i, delta| {
        loss_with_param(&mut model, &features, &labels, i, delta).expect("offset loss")
    });
    ensure(worst < 1e-3, format!("max relative error {worst:.3e} exceeds 1e-3"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

/// Direction of the strongest cell of the normalized map, plus that of the
/// strongest cell within `radius` degrees of `near` when given.
fn argmax_direction(values: &[f64], grid: &Grid, near: Option<(Direction, f64)>) -> Direction {
    let mut best = None::<(f64, usize)>;
    for (i, &v) in values.iter().enumerate() {
        if let Some((center, radius)) = near
            && angular_distance(grid.directions()[i], center) > radius
        {
            continue;
        }
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, i));
        }
    }
    grid.directions()[best.expect("grid is not empty").1]
}

fn mvdr_oracle() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let room = RoomSpec::new(8.0, 7.0, 3.5, 0.4)?;
    let mic = [4.0, 3.5, 1.75];
    let grid = build_grid(GridSpec::default());
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let az = rng.random_range(-180.0..180.0_f64);
        let el = rng.random_range(-50.0..50.0_f64);
        let truth = Direction::new(az, el)?;
        let (az_r, el_r) = (az.to_radians(), el.to_radians());
        let src = [
            mic[0] + 1.8 * el_r.cos() * az_r.cos(),
            mic[1] + 1.8 * el_r.cos() * az_r.sin(),
            mic[2] + 1.8 * el_r.sin(),
        ];
        let signal = synth_source(&SourceKind::White, 800, 16_000.0, 1000 + trial)?;
        let images = enumerate_images(&room, src, mic, 0)?;
        let frame = encode_hoa(&images, mic, &signal, 4, 16_000.0)?;
        let cov = time_cov(&frame)?;
        let sps = eb_mvdr_spectrum(&cov, &grid)?;
        let peak = argmax_direction(normalize_map(&sps).values(), &grid, None);
        worst = worst.max(angular_distance(peak, truth));
    }
    ensure(worst <= 3.0, format!("worst peak error {worst:.2} degrees exceeds 3"))?;
    Ok(format!("worst peak error {worst:.2} degrees over 5 geometries"))
}

fn music_oracle() -> Result<String> {
    let room = RoomSpec::new(8.0, 7.0, 3.5, 0.4)?;
    let mic = [4.0, 3.5, 1.75];
    let truths = [Direction::new(20.0, 5.0)?, Direction::new(115.0, -15.0)?];
    let mut mix: Option<HoaFrame> = None;
    for (i, t) in truths.iter().enumerate() {
        let (az_r, el_r) = (t.azimuth().to_radians(), t.elevation().to_radians());
        let src = [
            mic[0] + 1.6 * el_r.cos() * az_r.cos(),
            mic[1] + 1.6 * el_r.cos() * az_r.sin(),
            mic[2] + 1.6 * el_r.sin(),
        ];
        let signal = synth_source(&SourceKind::White, 800, 16_000.0, 2000 + i as u64)?;
        let images = enumerate_images(&room, src, mic, 0)?;
        let frame = encode_hoa(&images, mic, &signal, 4, 16_000.0)?;
        match &mut mix {
            Some(acc) => acc.add_assign(&frame)?,
            None => mix = Some(frame),
        }
    }
    let frame = mix.expect("two sources were encoded");
    let cov = time_cov(&frame)?;
    let grid = build_grid(GridSpec::default());
    let d = default_music_dimension(truths.len(), cov.dim());
    let sps = eb_music_spectrum(&cov, &grid, d)?;
    let normalized = normalize_map(&sps);
    let mut worst = 0.0f64;
    for t in truths {
        let peak = argmax_direction(normalized.values(), &grid, Some((t, 20.0)));
        worst = worst.max(angular_distance(peak, t));
    }
    ensure(worst <= 3.0, format!("worst peak error {worst:.2} degrees exceeds 3"))?;
    Ok(format!("worst peak error {worst:.2} degrees for two sources"))
}

fn label_roundtrip() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sets = 20usize;
    for _ in 0..sets {
        let mut dirs: Vec<Direction> = Vec::new();
        while dirs.len() < 3 {
            let d = Direction::new(
                rng.random_range(-180.0..180.0),
                rng.random_range(-70.0..70.0),
            )?;
            if dirs.iter().all(|&e| angular_distance(d, e) > 15.0) {
                dirs.push(d);
            }
        }
        let truth = DoaSet::from_directions(dirs);
        let label = gaussian_label(&truth, GridSpec::default(), DEFAULT_SIGMA2)?;
        let peaks = extract_peaks(&label, DEFAULT_PEAK_THRESHOLD);
        let matched = match_doas(&peaks, &truth, 3.0);
        ensure(
            matched.pairs.len() == truth.entries().len(),
            format!(
                "only {} of {} truths recovered within 3 degrees",
                matched.pairs.len(),
                truth.entries().len()
            ),
        )?;
    }
    Ok(format!("{sets} random truth sets recovered"))
}

use anclab_core::dsp::{
    convolve_direct, convolve_fft, convolve_samples, correlate_samples, istft, measured_snr_db, mix_at_snr, stft,
    FrameSpec, Waveform,
};
use anclab_core::fft::Fft;
use anclab_core::metrics::{noise_reduction, psd_welch, stoi};
use anclab_core::nn::{clip_global_norm, residual_noise_loss, speech_preserving_loss, Tensor};
use anclab_core::room::{PathLabel, Rir};
use anclab_core::scenario::{generate_source, synthesize_sample, NoiseKind, ReferenceMode, Task};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, seed: u64, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-amp..amp)).collect()
}

fn wave(len: usize, seed: u64) -> Waveform {
    Waveform::new(noise(len, seed, 1.0), 16000).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip_is_exact_in_the_interior(len in 640usize..6000, seed: u64) {
        let fs = FrameSpec::default();
        let x = wave(len, seed);
        let y = istft(&stft(&x, &fs).unwrap()).unwrap();
        let end = y.len().min(len).saturating_sub(fs.frame_len());
        prop_assume!(end > fs.frame_len());
        let r = rel_err(&y.samples()[fs.frame_len()..end], &x.samples()[fs.frame_len()..end]);
        prop_assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn stft_is_linear(len in 320usize..3000, s1: u64, s2: u64, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let fs = FrameSpec::default();
        let (x, y) = (wave(len, s1), wave(len, s2));
        let mix = x.scaled(a).add(&y.scaled(b)).unwrap();
        let (sx, sy, sm) = (stft(&x, &fs).unwrap(), stft(&y, &fs).unwrap(), stft(&mix, &fs).unwrap());
        for ((p, q), m) in sx.data().iter().zip(sy.data()).zip(sm.data()) {
            let expect = p * a + q * b;
            prop_assert!((expect - m).norm() <= 1e-9 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn fft_satisfies_parseval(n in 1usize..600, seed: u64) {
        let v = noise(2 * n, seed, 1.0);
        let mut buf: Vec<Complex64> = v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let time: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
        Fft::new(n).forward(&mut buf);
        let freq: f64 = buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((time - freq).abs() <= 1e-10 * time.max(1.0));
    }

    #[test]
    fn convolution_is_superposable_and_length_preserving(
        len in 1usize..400, taps in 1usize..80, s1: u64, s2: u64, s3: u64, a in -2.0f64..2.0,
    ) {
        let (x1, x2, h) = (noise(len, s1, 1.0), noise(len, s2, 1.0), noise(taps, s3, 1.0));
        let mixed: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + q).collect();
        let y = convolve_samples(&mixed, &h).unwrap();
        prop_assert_eq!(y.len(), len);
        let (y1, y2) = (convolve_samples(&x1, &h).unwrap(), convolve_samples(&x2, &h).unwrap());
        for n in 0..len {
            prop_assert!((y[n] - (a * y1[n] + y2[n])).abs() < 1e-9);
        }
        let direct = convolve_direct(&x1, &h).unwrap();
        let fast = convolve_fft(&x1, &h).unwrap();
        prop_assert!(direct.iter().zip(&fast).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn correlation_is_the_adjoint_of_convolution(len in 1usize..300, taps in 1usize..60, s1: u64, s2: u64, s3: u64) {
        let (x, g, h) = (noise(len, s1, 1.0), noise(len, s2, 1.0), noise(taps, s3, 1.0));
        let lhs: f64 = convolve_samples(&x, &h).unwrap().iter().zip(&g).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(correlate_samples(&g, &h).unwrap()).map(|(p, q)| p * q).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn mixing_hits_the_requested_snr(len in 100usize..4000, s1: u64, s2: u64, snr in -20.0f64..30.0) {
        let (n, s) = (wave(len, s1), wave(len, s2));
        let (mix, alpha) = mix_at_snr(&n, &s, snr).unwrap();
        let scaled = s.scaled(alpha);
        prop_assert!((measured_snr_db(scaled.samples(), n.samples()) - snr).abs() < 1e-6);
        let recon = n.add(&scaled).unwrap();
        prop_assert!(mix.samples().iter().zip(recon.samples()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn loss_forms_agree(len in 1usize..200, s1: u64, s2: u64, s3: u64) {
        let (dn, ds, a) = (noise(len, s1, 0.5), noise(len, s2, 0.5), noise(len, s3, 0.5));
        let e: Vec<f64> = (0..len).map(|n| dn[n] + ds[n] + a[n]).collect();
        let l1 = speech_preserving_loss(&e, &ds).unwrap();
        let l2 = residual_noise_loss(&dn, &a).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.max(l2));
    }

    #[test]
    fn noise_reduction_ignores_speech_and_scale(len in 10usize..500, s1: u64, s2: u64, s3: u64, c in 0.01f64..100.0) {
        let (dn, ds, r) = (noise(len, s1, 1.0), noise(len, s2, 1.0), noise(len, s3, 0.3));
        let e: Vec<f64> = (0..len).map(|n| r[n] + ds[n]).collect();
        let with = noise_reduction(&dn, &e, Some(&ds), 0).unwrap();
        let without = noise_reduction(&dn, &r, None, 0).unwrap();
        prop_assert!((with - without).abs() < 1e-9);
        let sdn: Vec<f64> = dn.iter().map(|v| v * c).collect();
        let sr: Vec<f64> = r.iter().map(|v| v * c).collect();
        prop_assert!((noise_reduction(&sdn, &sr, None, 0).unwrap() - without).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_the_global_norm(a in proptest::collection::vec(-100.0f64..100.0, 1..20), max in 0.1f64..10.0) {
        let mut t = Tensor::zeros("g", &[a.len()]);
        t.grad = Some(a.clone());
        let pre = clip_global_norm(&mut [&mut t], max);
        let post: f64 = t.grad.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(post <= max * (1.0 + 1e-12));
        if pre <= max {
            prop_assert_eq!(t.grad.unwrap(), a);
        }
    }

    #[test]
    fn psd_is_nonnegative_and_carries_the_power(seed: u64, amp in 0.01f64..10.0) {
        let x = Waveform::new(noise(8192, seed, amp), 16000).unwrap();
        let psd = psd_welch(&x, 512, 0.5).unwrap();
        prop_assert!(psd.density.iter().all(|&d| d >= 0.0));
        prop_assert_eq!(psd.freqs.len(), 257);
        let df = psd.freqs[1] - psd.freqs[0];
        let total: f64 = psd.density.iter().sum::<f64>() * df;
        prop_assert!((total / x.power() - 1.0).abs() < 0.15, "{} vs {}", total, x.power());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stoi_stays_in_the_unit_interval(s1: u64, s2: u64, gain in 0.0f64..4.0) {
        let clean = generate_source(NoiseKind::SpeechLike, 1.5, s1, 16000).unwrap();
        let n = wave(clean.len(), s2).scaled(gain * clean.rms());
        let noisy = clean.add(&n).unwrap();
        let score = stoi(&clean, &noisy).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert_eq!(score, stoi(&clean, &noisy).unwrap());
    }

    #[test]
    fn scenario_samples_respect_the_task_and_decompose(seed: u64, snr in 0.0f64..10.0, taps in 1usize..64) {
        let mut h = noise(taps, seed ^ 1, 0.5);
        h[0] = 1.0;
        let h = Rir::from_taps(h, 16000, PathLabel::Primary).unwrap();
        let n_src = generate_source(NoiseKind::Factory, 0.25, seed, 16000).unwrap();
        let s_src = generate_source(NoiseKind::SpeechLike, 0.25, seed ^ 2, 16000).unwrap();

        let p = synthesize_sample(&n_src, None, None, &h, Task::PureNoise, seed, "factory", ReferenceMode::Dry).unwrap();
        prop_assert!(p.d_speech.samples().iter().chain(p.target.samples()).all(|&v| v == 0.0));

        let s = synthesize_sample(&n_src, Some(&s_src), Some(snr), &h, Task::SpeechPreserve, seed, "factory", ReferenceMode::Dry).unwrap();
        prop_assert_eq!(&s.target, &s.d_speech);
        let d = convolve_samples(s.x.samples(), &h.taps).unwrap();
        let sum = s.disturbance();
        prop_assert!(d.iter().zip(sum.samples()).all(|(p, q)| (p - q).abs() < 1e-9));
        prop_assert_eq!(s.x.len(), s.d_noise.len());
    }
}

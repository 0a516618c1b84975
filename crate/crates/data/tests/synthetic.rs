use colors_core::frontend::{log_mel, MelConfig, MelSpectrogram};
use colors_core::Tensor;
use colors_data::augment::{spec_augment, AugmentConfig, Masks};
use colors_data::synth::{impact_burst, synth_generate, SynthClip, SynthConfig, SynthDataset, Template, BURST_S};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bits(ds: &SynthDataset) -> Vec<u64> {
    ds.clips
        .iter()
        .flat_map(|c| c.video.frames.data().iter().chain(&c.audio.samples).map(|v| v.to_bits()))
        .collect()
}

#[test]
fn fixed_seed_is_bit_identical() {
    let cfg = SynthConfig { n_clips: 16, ..SynthConfig::default() };
    assert_eq!(bits(&synth_generate(&cfg).unwrap()), bits(&synth_generate(&cfg).unwrap()));
    let other = SynthConfig { seed: 1, ..cfg };
    assert_ne!(bits(&synth_generate(&cfg).unwrap()), bits(&synth_generate(&other).unwrap()));
}

#[test]
fn half_of_violent_clips_are_ambiguous_at_n512() {
    let ds = synth_generate(&SynthConfig::default()).unwrap();
    let count = |t| ds.clips.iter().filter(|c| c.template == t).count();
    assert_eq!(count(Template::Nonviolent), 256);
    assert_eq!(count(Template::Ambiguous), 128);
    assert_eq!(count(Template::Unambiguous), 128);
    assert!(ds.clips.iter().filter(|c| c.template == Template::Ambiguous).all(|c| c.burst_onset.is_some()));
    assert!(ds.clips.iter().filter(|c| c.template == Template::Nonviolent).all(|c| c.burst_onset.is_none()));
}

#[test]
fn zero_cue_leaves_audio_as_noise() {
    let cfg = SynthConfig { n_clips: 64, cue_strength: 0.0, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap();
    assert!(impact_burst(cfg.sample_rate, 0.0).iter().all(|&v| v == 0.0));
    // Every clip's audio is unit-scaled noise with the configured spread.
    for c in &ds.clips {
        let sd = (c.audio.samples.iter().map(|v| v * v).sum::<f64>() / c.audio.samples.len() as f64).sqrt();
        assert!((sd - cfg.noise_std).abs() < 1e-9, "{}", c.clip_id);
    }
}

fn mean_energy(v: &Tensor) -> f64 {
    v.data().iter().map(|x| x * x).sum::<f64>() / v.numel() as f64
}

#[test]
fn unambiguous_template_is_visually_brighter() {
    let ds = synth_generate(&SynthConfig { n_clips: 64, ..SynthConfig::default() }).unwrap();
    let avg = |t: Template| {
        let e: Vec<f64> = ds.clips.iter().filter(|c| c.template == t).map(|c| mean_energy(&c.video.frames)).collect();
        e.iter().sum::<f64>() / e.len() as f64
    };
    assert!(avg(Template::Unambiguous) > 1.5 * avg(Template::Nonviolent));
    let ratio = avg(Template::Ambiguous) / avg(Template::Nonviolent);
    assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
}

/// Peak energy over sliding windows one burst long.
fn burst_energy(c: &SynthClip) -> f64 {
    let win = (BURST_S * f64::from(c.audio.sample_rate) / 2.0) as usize;
    let sq: Vec<f64> = c.audio.samples.iter().map(|v| v * v).collect();
    let mut acc: f64 = sq[..win].iter().sum();
    let mut best = acc;
    for i in win..sq.len() {
        acc += sq[i] - sq[i - win];
        best = best.max(acc);
    }
    best
}

/// Best accuracy of `energy > threshold` over every observed threshold.
fn best_threshold_accuracy(scored: &[(f64, bool)]) -> f64 {
    let mut best = 0.0f64;
    for &(t, _) in scored {
        let correct = scored.iter().filter(|&&(e, y)| (e >= t) == y).count();
        best = best.max(correct as f64 / scored.len() as f64);
    }
    best
}

#[test]
fn burst_energy_recovers_ambiguous_labels() {
    for (cue, noise) in [(0.8, 0.1), (0.9, 0.1), (1.0, 0.05)] {
        let cfg = SynthConfig { n_clips: 200, cue_strength: cue, noise_std: noise, seed: 11, ..SynthConfig::default() };
        let ds = synth_generate(&cfg).unwrap();
        let scored: Vec<(f64, bool)> = ds
            .clips
            .iter()
            .filter(|c| c.template != Template::Unambiguous)
            .map(|c| (burst_energy(c), c.template == Template::Ambiguous))
            .collect();
        let acc = best_threshold_accuracy(&scored);
        assert!(acc > 0.9, "cue {cue} noise {noise}: {acc}");
    }
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&SynthConfig { n_clips: 6, ..SynthConfig::default() }).unwrap();
    ds.save(dir.path()).unwrap();
    let back = SynthDataset::load(dir.path()).unwrap();
    assert_eq!(back.config, ds.config);
    for (a, b) in ds.clips.iter().zip(&back.clips) {
        assert_eq!(a.template, b.template);
        assert!(a.video.frames.max_abs_diff(&b.video.frames) < 1e-6);
        // 16-bit PCM clips at full scale.
        let audio_err = a
            .audio
            .samples
            .iter()
            .zip(&b.audio.samples)
            .map(|(x, y)| (x.clamp(-1.0, 1.0) - y).abs())
            .fold(0.0, f64::max);
        assert!(audio_err <= 2.0 / 32767.0, "{audio_err}");
    }
}

fn random_mel(seed: u64, n_mels: usize, frames: usize) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram {
        bins: Tensor::randn(vec![n_mels, frames], 1.0, &mut rng),
        config: MelConfig { n_mels, ..MelConfig::default() },
    }
}

#[test]
fn zero_width_masks_are_identity() {
    let mel = random_mel(0, 32, 64);
    let cfg = AugmentConfig { max_time_width: 0, max_freq_width: 0, ..AugmentConfig::default() };
    let out = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(out, mel);
}

#[test]
fn augmenting_a_real_spectrogram_keeps_its_shape() {
    let ds = synth_generate(&SynthConfig { n_clips: 2, ..SynthConfig::default() }).unwrap();
    let mel = log_mel(&ds.clips[0].audio, &MelConfig::default()).unwrap();
    let cfg = AugmentConfig { noise_std: 0.1, gain_db: 6.0, speed: true, ..AugmentConfig::default() };
    let out = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(out.bins.shape(), mel.bins.shape());
    assert!(out.bins.is_finite());
}

proptest! {
    #[test]
    fn masked_cells_are_bounded_and_reproducible(seed in 0u64..10_000, n_mels in 16usize..64, frames in 40usize..120) {
        let mel = random_mel(seed, n_mels, frames);
        let cfg = AugmentConfig::default();
        let a = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        let changed = a.bins.data().iter().zip(mel.bins.data()).filter(|(x, y)| x != y).count();
        prop_assert!(changed <= 2 * 20 * n_mels + 2 * 8 * frames);
        let masks = Masks::draw(&cfg, n_mels, frames, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(masks.time.iter().all(|&(_, w)| w <= 20));
        prop_assert!(masks.freq.iter().all(|&(_, w)| w <= 8));
    }
}

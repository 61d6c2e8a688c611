use hasr_core::audio::{read_wav, scan_dataset, write_wav, AudioClip};
use hasr_core::endpoint::{segment, EndpointConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_round_trip_is_lossless(pcm in prop::collection::vec(any::<i16>(), 0..2000)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        write_wav(&p, &pcm).unwrap();
        let clip = read_wav(&p).unwrap();
        prop_assert_eq!(clip.sample_rate, 16000);
        prop_assert_eq!(clip.to_i16(), pcm.clone());
        prop_assert_eq!(AudioClip::from_le_bytes(&clip.to_le_bytes(), 16000).to_i16(), pcm);
    }

    #[test]
    fn segments_are_ordered_disjoint_and_in_bounds(
        bursts in prop::collection::vec((200usize..8000, 0.05f32..0.8, 500usize..12000), 0..5),
        noise in 0.0005f32..0.003,
        seed in any::<u64>(),
    ) {
        let mut rng = hasr_core::rng::SplitMix64::new(seed);
        let mut samples: Vec<f32> = (0..4000).map(|_| noise * rng.gaussian() as f32).collect();
        for (len, amp, gap) in &bursts {
            samples.extend((0..*len).map(|i| amp * (i as f32 * 0.3).sin()));
            samples.extend((0..*gap).map(|_| noise * rng.gaussian() as f32));
        }
        let clip = AudioClip::new(samples, 16000);
        let segs = segment(&clip, &EndpointConfig::default()).unwrap();
        prop_assert!(segs.len() <= bursts.len());
        for s in &segs {
            prop_assert!(s.start_sample < s.end_sample && s.end_sample <= clip.len());
        }
        for w in segs.windows(2) {
            prop_assert!(w[0].end_sample < w[1].start_sample);
        }
    }

    #[test]
    fn uniform_gain_leaves_decisions_unchanged(
        amp in 0.05f32..0.4,
        gain_pow in -3i32..4,
        seed in any::<u64>(),
    ) {
        let mut rng = hasr_core::rng::SplitMix64::new(seed);
        let mut samples: Vec<f32> = (0..4800).map(|_| 0.001 * rng.gaussian() as f32).collect();
        samples.extend((0..6000).map(|i| amp * (i as f32 * 0.2).sin()));
        samples.extend((0..6400).map(|_| 0.001 * rng.gaussian() as f32));
        // Powers of two scale exactly.
        let gain = 2f32.powi(gain_pow);
        let scaled = AudioClip::new(samples.iter().map(|s| s * gain).collect(), 16000);
        let cfg = EndpointConfig::default();
        let bounds = |c: &AudioClip| -> Vec<(usize, usize)> {
            segment(c, &cfg).unwrap().iter().map(|s| (s.start_sample, s.end_sample)).collect()
        };
        prop_assert_eq!(bounds(&AudioClip::new(samples, 16000)), bounds(&scaled));
    }
}

#[test]
fn rescanning_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    for w in ["go", "stop"] {
        std::fs::create_dir(dir.path().join(w)).unwrap();
        for i in 0..10 {
            write_wav(dir.path().join(w).join(format!("{i}.wav")), &[0; 10]).unwrap();
        }
    }
    let words = vec!["go".to_string(), "stop".to_string()];
    let a = scan_dataset(dir.path(), &words).unwrap();
    let b = scan_dataset(dir.path(), &words).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

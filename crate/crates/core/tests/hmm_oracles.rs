mod common;

use common::*;
use hasr_core::hmm::*;
use hasr_core::rng::SplitMix64;
use hasr_core::vq::SymbolSequence;
use proptest::prelude::*;

/// Unscaled backward variable by suffix enumeration.
fn brute_force_beta(h: &Hmm, obs: &[usize], t: usize, i: usize) -> f64 {
    let rest = obs.len() - t - 1;
    if rest == 0 {
        return 1.0;
    }
    all_paths(h.n_states(), rest)
        .into_iter()
        .map(|suffix| {
            let mut p = 1.0;
            let mut prev = i;
            for (k, &s) in suffix.iter().enumerate() {
                p *= h.a[[prev, s]] * h.b[[s, obs[t + 1 + k]]];
                prev = s;
            }
            p
        })
        .sum()
}

#[test]
fn forward_matches_enumeration_n3_m4_t6() {
    let mut rng = SplitMix64::new(2024);
    for _ in 0..20 {
        let h = random_hmm(&mut rng, 3, 4);
        let o = random_obs(&mut rng, 4, 6);
        let f = forward_scaled(&h, &o).unwrap();
        let p = brute_force_likelihood(&h, &o).unwrap();
        assert!((f.log_likelihood.exp() - p).abs() <= 1e-10 * p);
        for row in f.alpha_hat.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let expected: f64 = f.scales.iter().map(|s| s.ln()).sum();
        assert_eq!(f.log_likelihood, expected);
    }
}

#[test]
fn backward_unscaled_matches_suffix_sums() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..10 {
        let h = random_hmm(&mut rng, 3, 4);
        let o = random_obs(&mut rng, 4, 6);
        let f = forward_scaled(&h, &o).unwrap();
        let beta_hat = backward_scaled(&h, &o, &f.scales).unwrap();
        for t in 0..6 {
            let suffix_scale: f64 = f.scales.iter().skip(t).product();
            for i in 0..3 {
                let beta = beta_hat[[t, i]] * suffix_scale;
                let want = brute_force_beta(&h, o.as_slice(), t, i);
                assert!((beta - want).abs() <= 1e-10 * want, "t={t} i={i}: {beta} vs {want}");
            }
        }
        let gamma = state_posteriors(&f, &beta_hat);
        for row in gamma.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn viterbi_matches_enumeration_n3_t5() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..30 {
        let h = random_hmm(&mut rng, 3, 4);
        let o = random_obs(&mut rng, 4, 5);
        let v = viterbi(&h, &o).unwrap();
        let (path, lp) = exhaustive_viterbi(&h, o.as_slice());
        assert_eq!(v.path, path);
        assert_eq!(v.log_prob, lp);
        assert!(v.log_prob <= log_likelihood(&h, &o).unwrap() + 1e-9);
    }
}

#[test]
fn viterbi_ties_match_enumeration() {
    // Symmetric models produce exact ties between paths.
    let h = Hmm::from_rows(
        &[0.5, 0.5],
        &[vec![0.5, 0.5], vec![0.5, 0.5]],
        &[vec![0.5, 0.5], vec![0.5, 0.5]],
    )
    .unwrap();
    let o = SymbolSequence(vec![0, 1, 0, 1]);
    assert_eq!(viterbi(&h, &o).unwrap().path, exhaustive_viterbi(&h, o.as_slice()).0);
    let h = Hmm::from_rows(
        &[0.25, 0.25, 0.5],
        &[vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]],
        &[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.25, 0.75]],
    )
    .unwrap();
    for obs in [vec![0, 0, 0], vec![1, 0, 1, 1], vec![0, 1]] {
        let o = SymbolSequence(obs);
        let v = viterbi(&h, &o).unwrap();
        let (p, lp) = exhaustive_viterbi(&h, o.as_slice());
        assert_eq!((v.path, v.log_prob), (p, lp));
    }
}

#[test]
fn long_sequence_does_not_underflow() {
    let mut rng = SplitMix64::new(9);
    let h = random_hmm(&mut rng, 5, 8);
    let o = sample(&h, 1000, 1);
    let ll = log_likelihood(&h, &o).unwrap();
    assert!(ll.is_finite() && ll < -1000.0);
    // Unscaled forward recursion underflows long before t = 1000.
    let mut alpha: Vec<f64> = (0..5).map(|j| h.pi[j] * h.b[[j, o.0[0]]]).collect();
    for &sym in &o.0[1..] {
        alpha = (0..5)
            .map(|j| (0..5).map(|i| alpha[i] * h.a[[i, j]]).sum::<f64>() * h.b[[j, sym]])
            .collect();
    }
    assert_eq!(alpha.iter().sum::<f64>(), 0.0);
}

#[test]
fn baum_welch_is_monotone_and_stays_stochastic() {
    let truth = left_right_truth();
    let seqs: Vec<_> = (0..20).map(|s| sample(&truth, 30, 1000 + s)).collect();
    let h0 = perturbed(&truth, &mut SplitMix64::new(3), 0.6);
    let mut checked = 0;
    let r = baum_welch_observed(&h0, &seqs, &BaumWelchConfig::default(), |_, m| {
        assert!(m.validate().is_empty(), "{:?}", m.validate());
        for ((i, j), &v) in m.a.indexed_iter() {
            assert_eq!(v == 0.0, h0.a[[i, j]] == 0.0);
        }
        checked += 1;
    })
    .unwrap();
    assert_eq!(checked, r.iterations);
    assert!(r.iterations >= 1);
    for w in r.history.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
    }
    assert!(r.history.last().unwrap() >= r.history.first().unwrap());
}

#[test]
fn baum_welch_stops_on_tolerance() {
    let truth = left_right_truth();
    let seqs: Vec<_> = (0..20).map(|s| sample(&truth, 30, s)).collect();
    let cfg = BaumWelchConfig { max_iters: 500, tol: 1e-3, ..Default::default() };
    let r = baum_welch(&Hmm::left_right(3, 4, 2), &seqs, &cfg).unwrap();
    assert!(r.iterations < 500);
    let n = r.history.len();
    assert!(r.history[n - 1] - r.history[n - 2] < 1e-3);
}

#[test]
fn baum_welch_is_deterministic() {
    let truth = left_right_truth();
    let seqs: Vec<_> = (0..20).map(|s| sample(&truth, 30, s)).collect();
    let a = baum_welch(&Hmm::left_right(3, 4, 2), &seqs, &Default::default()).unwrap();
    let b = baum_welch(&Hmm::left_right(3, 4, 2), &seqs, &Default::default()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn forward_agrees_with_brute_force(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=5, t in 1usize..=6) {
        let mut rng = SplitMix64::new(seed);
        let h = random_hmm(&mut rng, n, m);
        let o = random_obs(&mut rng, m, t);
        let f = forward_scaled(&h, &o).unwrap();
        let p = brute_force_likelihood(&h, &o).unwrap();
        prop_assert!((f.log_likelihood.exp() - p).abs() <= 1e-10 * p);
        let v = viterbi(&h, &o).unwrap();
        prop_assert!(v.log_prob <= f.log_likelihood + 1e-9);
    }
}

#![allow(dead_code)]

use hasr_core::hmm::Hmm;
use hasr_core::rng::SplitMix64;
use hasr_core::vq::SymbolSequence;
use ndarray::{Array1, Array2};

fn random_row(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.next_f64()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Dense random stochastic model.
pub fn random_hmm(rng: &mut SplitMix64, n: usize, m: usize) -> Hmm {
    let pi = Array1::from(random_row(rng, n));
    let a = Array2::from_shape_vec((n, n), (0..n).flat_map(|_| random_row(rng, n)).collect()).unwrap();
    let b = Array2::from_shape_vec((n, m), (0..n).flat_map(|_| random_row(rng, m)).collect()).unwrap();
    Hmm::new(pi, a, b).unwrap()
}

pub fn random_obs(rng: &mut SplitMix64, m: usize, t: usize) -> SymbolSequence {
    SymbolSequence((0..t).map(|_| rng.below(m)).collect())
}

/// Every state path of length `t` over `n` states, in lexicographic order.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

/// Log joint probability of a path, summed left to right.
pub fn path_log_prob(h: &Hmm, path: &[usize], obs: &[usize]) -> f64 {
    let mut lp = h.pi[path[0]].ln() + h.b[[path[0], obs[0]]].ln();
    for t in 1..obs.len() {
        lp = lp + h.a[[path[t - 1], path[t]]].ln() + h.b[[path[t], obs[t]]].ln();
    }
    lp
}

/// Exhaustive Viterbi: highest-scoring path, ties resolved toward the path
/// whose reversed state sequence is lexicographically smallest (lowest final
/// state, then lowest predecessor, ...).
pub fn exhaustive_viterbi(h: &Hmm, obs: &[usize]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(h.n_states(), obs.len()) {
        let lp = path_log_prob(h, &p, obs);
        let better = match &best {
            None => true,
            Some((bp, blp)) => {
                lp > *blp || (lp == *blp && p.iter().rev().lt(bp.iter().rev()))
            }
        };
        if better {
            best = Some((p, lp));
        }
    }
    best.unwrap()
}

/// Three-state left-right model with distinct emission profiles over 4 symbols.
pub fn left_right_truth() -> Hmm {
    Hmm::from_rows(
        &[1.0, 0.0, 0.0],
        &[vec![0.7, 0.25, 0.05], vec![0.0, 0.8, 0.2], vec![0.0, 0.0, 1.0]],
        &[
            vec![0.6, 0.2, 0.1, 0.1],
            vec![0.1, 0.6, 0.2, 0.1],
            vec![0.1, 0.1, 0.2, 0.6],
        ],
    )
    .unwrap()
}

pub fn perturbed(h: &Hmm, rng: &mut SplitMix64, amount: f64) -> Hmm {
    let mut out = h.clone();
    for m in [&mut out.a, &mut out.b] {
        for mut row in m.rows_mut() {
            for v in row.iter_mut() {
                if *v > 0.0 {
                    *v *= 1.0 + amount * (rng.next_f64() - 0.5);
                }
            }
            let s = row.sum();
            row /= s;
        }
    }
    out
}

pub const WORDS: [&str; 3] = ["go", "stop", "yes"];

/// Quick model over the synthetic words: 40 clips each, 32 codewords.
pub fn small_model() -> hasr_core::recognizer::WordModelSet {
    use hasr_core::recognizer::{train_from_clips, TrainConfig};
    let clips: Vec<_> = WORDS
        .iter()
        .flat_map(|w| (0..40).map(move |i| (w.to_string(), hasr_core::synth::synth_clip(w, i, 17))))
        .collect();
    let cfg = TrainConfig { codebook_k: 32, ..TrainConfig::with_words(&WORDS) };
    train_from_clips(&clips, &cfg).unwrap().0
}

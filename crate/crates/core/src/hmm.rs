//! Discrete-observation hidden Markov models.
//!
//! The forward pass normalizes every frame: `scales[t]` is the sum of the
//! unnormalized forward variables at `t`, `alpha_hat[t]` sums to one and
//! `ln P(O | model) = sum_t ln scales[t]`. The backward pass reuses the same
//! scales, so `alpha_hat[t][i] * beta_hat[t][i] * scales[t]` is the state
//! posterior at `t`.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::vq::SymbolSequence;

/// Tolerance for the sum-to-one checks in [`Hmm::validate`].
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Largest path count [`brute_force_likelihood`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("symbol {symbol} at t={t} is outside the alphabet of {n_symbols}")]
    SymbolOutOfRange { symbol: usize, t: usize, n_symbols: usize },
    #[error("sequence has zero probability under the model (prefix ending at t={t})")]
    ZeroProbabilitySequence { t: usize },
    #[error("no feasible state path at t={t}")]
    NoFeasiblePath { t: usize },
    #[error("{n_states}^{len} paths exceeds the enumeration limit")]
    TooLarge { n_states: usize, len: usize },
    #[error("scale vector has length {got}, sequence has length {expected}")]
    ScaleMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no training sequences")]
    NoSequences,
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Param {
    Pi,
    A,
    B,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::Pi => "pi",
            Param::A => "a",
            Param::B => "b",
        })
    }
}

/// One broken stochasticity constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// `row` is `None` for `pi`.
    BadSum { param: Param, row: Option<usize>, sum: f64 },
    BadEntry { param: Param, row: Option<usize>, col: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::BadSum { param, row: None, sum } => write!(f, "{param} sums to {sum}"),
            Violation::BadSum { param, row: Some(r), sum } => {
                write!(f, "{param} row {r} sums to {sum}")
            }
            Violation::BadEntry { param, row: None, col, value } => {
                write!(f, "{param}[{col}] = {value} is outside [0, 1]")
            }
            Violation::BadEntry { param, row: Some(r), col, value } => {
                write!(f, "{param}[{r}][{col}] = {value} is outside [0, 1]")
            }
        }
    }
}

/// `λ = (π, A, B)` with `a[[i, j]] = P(j at t+1 | i at t)` and
/// `b[[j, k]] = P(symbol k | state j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    pub pi: Array1<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl Hmm {
    /// Checks shapes only; see [`Hmm::validate`] for the probability constraints.
    pub fn new(pi: Array1<f64>, a: Array2<f64>, b: Array2<f64>) -> Result<Self, HmmError> {
        let n = pi.len();
        if n == 0 {
            return Err(HmmError::Shape("model needs at least one state".into()));
        }
        if a.dim() != (n, n) {
            return Err(HmmError::Shape(format!("a is {:?}, expected ({n}, {n})", a.dim())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(HmmError::Shape(format!("b is {:?}, expected ({n}, M>0)", b.dim())));
        }
        Ok(Self { pi, a, b })
    }

    /// Like [`Hmm::new`] but also rejects non-stochastic parameters.
    pub fn checked(pi: Array1<f64>, a: Array2<f64>, b: Array2<f64>) -> Result<Self, HmmError> {
        let h = Self::new(pi, a, b)?;
        let v = h.validate();
        if v.is_empty() {
            Ok(h)
        } else {
            Err(HmmError::Invalid(v))
        }
    }

    pub fn from_rows(pi: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self, HmmError> {
        let to_mat = |name: &str, rows: &[Vec<f64>]| {
            let cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != cols) {
                return Err(HmmError::Shape(format!("{name} rows have unequal lengths")));
            }
            Array2::from_shape_vec((rows.len(), cols), rows.concat())
                .map_err(|e| HmmError::Shape(e.to_string()))
        };
        Self::new(Array1::from(pi.to_vec()), to_mat("a", a)?, to_mat("b", b)?)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.b.ncols()
    }

    /// Uniform initial, transition and emission distributions.
    pub fn uniform(n_states: usize, n_symbols: usize) -> Self {
        Self {
            pi: Array1::from_elem(n_states, 1.0 / n_states as f64),
            a: Array2::from_elem((n_states, n_states), 1.0 / n_states as f64),
            b: Array2::from_elem((n_states, n_symbols), 1.0 / n_symbols as f64),
        }
    }

    /// Bakis topology: start in state 0, from state `i` move uniformly to
    /// any of `i..=min(i + skip, N - 1)`; the last state is absorbing.
    /// Emissions start uniform.
    pub fn left_right(n_states: usize, n_symbols: usize, skip: usize) -> Self {
        let mut pi = Array1::zeros(n_states);
        pi[0] = 1.0;
        let mut a = Array2::zeros((n_states, n_states));
        for i in 0..n_states {
            let hi = (i + skip).min(n_states - 1);
            let p = 1.0 / (hi - i + 1) as f64;
            for j in i..=hi {
                a[[i, j]] = p;
            }
        }
        let b = Array2::from_elem((n_states, n_symbols), 1.0 / n_symbols as f64);
        Self { pi, a, b }
    }

    /// Every violated stochasticity constraint, in pi, a, b order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let entry_ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let sum_ok = |s: f64| (s - 1.0).abs() <= STOCHASTIC_TOL;

        for (col, &value) in self.pi.iter().enumerate() {
            if !entry_ok(value) {
                out.push(Violation::BadEntry { param: Param::Pi, row: None, col, value });
            }
        }
        let sum = self.pi.sum();
        if !sum_ok(sum) {
            out.push(Violation::BadSum { param: Param::Pi, row: None, sum });
        }
        for (param, m) in [(Param::A, &self.a), (Param::B, &self.b)] {
            for (r, row) in m.outer_iter().enumerate() {
                for (col, &value) in row.iter().enumerate() {
                    if !entry_ok(value) {
                        out.push(Violation::BadEntry { param, row: Some(r), col, value });
                    }
                }
                let sum = row.sum();
                if !sum_ok(sum) {
                    out.push(Violation::BadSum { param, row: Some(r), sum });
                }
            }
        }
        out
    }

    fn check_obs(&self, obs: &[usize]) -> Result<(), HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptySequence);
        }
        let m = self.n_symbols();
        match obs.iter().position(|&o| o >= m) {
            Some(t) => Err(HmmError::SymbolOutOfRange { symbol: obs[t], t, n_symbols: m }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// T × N, each row sums to one.
    pub alpha_hat: Array2<f64>,
    pub scales: Array1<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    pub path: Vec<usize>,
    pub log_prob: f64,
}

pub fn forward_scaled(h: &Hmm, obs: &SymbolSequence) -> Result<ForwardResult, HmmError> {
    let obs = obs.as_slice();
    h.check_obs(obs)?;
    let (n, t_len) = (h.n_states(), obs.len());
    let mut alpha_hat = Array2::zeros((t_len, n));
    let mut scales = Array1::zeros(t_len);
    let mut raw = vec![0.0; n];

    for (t, &o) in obs.iter().enumerate() {
        for (j, r) in raw.iter_mut().enumerate() {
            let pred = if t == 0 {
                h.pi[j]
            } else {
                (0..n).map(|i| alpha_hat[[t - 1, i]] * h.a[[i, j]]).sum()
            };
            *r = pred * h.b[[j, o]];
        }
        let scale: f64 = raw.iter().sum();
        if !(scale > 0.0) {
            return Err(HmmError::ZeroProbabilitySequence { t });
        }
        scales[t] = scale;
        for (j, r) in raw.iter().enumerate() {
            alpha_hat[[t, j]] = r / scale;
        }
    }

    let log_likelihood = scales.iter().map(|s| s.ln()).sum();
    Ok(ForwardResult { alpha_hat, scales, log_likelihood })
}

pub fn log_likelihood(h: &Hmm, obs: &SymbolSequence) -> Result<f64, HmmError> {
    forward_scaled(h, obs).map(|f| f.log_likelihood)
}

/// Backward variables scaled by the forward pass's `scales`.
pub fn backward_scaled(
    h: &Hmm,
    obs: &SymbolSequence,
    scales: &Array1<f64>,
) -> Result<Array2<f64>, HmmError> {
    let obs = obs.as_slice();
    h.check_obs(obs)?;
    let (n, t_len) = (h.n_states(), obs.len());
    if scales.len() != t_len {
        return Err(HmmError::ScaleMismatch { expected: t_len, got: scales.len() });
    }
    if let Some(t) = scales.iter().position(|&s| !(s > 0.0)) {
        return Err(HmmError::ZeroProbabilitySequence { t });
    }
    let mut beta_hat = Array2::zeros((t_len, n));
    beta_hat.row_mut(t_len - 1).fill(1.0 / scales[t_len - 1]);
    for t in (0..t_len - 1).rev() {
        let o_next = obs[t + 1];
        for i in 0..n {
            let s: f64 = (0..n)
                .map(|j| h.a[[i, j]] * h.b[[j, o_next]] * beta_hat[[t + 1, j]])
                .sum();
            beta_hat[[t, i]] = s / scales[t];
        }
    }
    Ok(beta_hat)
}

/// State posteriors `gamma[t][i] = alpha_hat[t][i] * beta_hat[t][i] * scales[t]`.
pub fn state_posteriors(fwd: &ForwardResult, beta_hat: &Array2<f64>) -> Array2<f64> {
    let mut gamma = &fwd.alpha_hat * beta_hat;
    for (mut row, &c) in gamma.axis_iter_mut(Axis(0)).zip(fwd.scales.iter()) {
        row *= c;
    }
    gamma
}

/// Max-product decoding in log space. Ties go to the lowest state index,
/// both for back-pointers and for the final state.
pub fn viterbi(h: &Hmm, obs: &SymbolSequence) -> Result<ViterbiResult, HmmError> {
    let obs = obs.as_slice();
    h.check_obs(obs)?;
    let (n, t_len) = (h.n_states(), obs.len());
    let ln_a = h.a.mapv(f64::ln);
    let ln_b = h.b.mapv(f64::ln);

    let mut delta: Vec<f64> = (0..n).map(|j| h.pi[j].ln() + ln_b[[j, obs[0]]]).collect();
    if delta.iter().all(|d| *d == f64::NEG_INFINITY) {
        return Err(HmmError::NoFeasiblePath { t: 0 });
    }
    let mut back = Array2::<usize>::zeros((t_len, n));
    let mut next = vec![0.0; n];
    for t in 1..t_len {
        for j in 0..n {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, &d) in delta.iter().enumerate() {
                let v = d + ln_a[[i, j]];
                if v > best.1 {
                    best = (i, v);
                }
            }
            back[[t, j]] = best.0;
            next[j] = best.1 + ln_b[[j, obs[t]]];
        }
        std::mem::swap(&mut delta, &mut next);
        if delta.iter().all(|d| *d == f64::NEG_INFINITY) {
            return Err(HmmError::NoFeasiblePath { t });
        }
    }

    let (mut state, log_prob) = delta
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = state;
        state = back[[t, state]];
    }
    Ok(ViterbiResult { path, log_prob })
}

/// `P(O | model)` summed over every state path. Test oracle; refuses more
/// than [`BRUTE_FORCE_LIMIT`] paths.
pub fn brute_force_likelihood(h: &Hmm, obs: &SymbolSequence) -> Result<f64, HmmError> {
    let obs = obs.as_slice();
    h.check_obs(obs)?;
    let n = h.n_states();
    let paths = (n as u64).checked_pow(obs.len() as u32);
    if paths.map_or(true, |p| p > BRUTE_FORCE_LIMIT) {
        return Err(HmmError::TooLarge { n_states: n, len: obs.len() });
    }
    let mut total = 0.0;
    let mut path = vec![0usize; obs.len()];
    for _ in 0..paths.unwrap() {
        let mut p = h.pi[path[0]] * h.b[[path[0], obs[0]]];
        for t in 1..obs.len() {
            p *= h.a[[path[t - 1], path[t]]] * h.b[[path[t], obs[t]]];
        }
        total += p;
        // odometer increment, last position fastest
        for slot in path.iter_mut().rev() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    Ok(total)
}

/// Draws a state path and its emissions.
pub fn sample_with_states(h: &Hmm, t_len: usize, seed: u64) -> (Vec<usize>, SymbolSequence) {
    let mut rng = SplitMix64::new(seed);
    let mut states = Vec::with_capacity(t_len);
    let mut symbols = Vec::with_capacity(t_len);
    let mut state = rng.categorical(h.pi.iter().copied()).unwrap_or(0);
    for t in 0..t_len {
        if t > 0 {
            state = rng.categorical(h.a.row(state).iter().copied()).unwrap_or(state);
        }
        states.push(state);
        symbols.push(rng.categorical(h.b.row(state).iter().copied()).unwrap_or(0));
    }
    (states, SymbolSequence(symbols))
}

pub fn sample(h: &Hmm, t_len: usize, seed: u64) -> SymbolSequence {
    sample_with_states(h, t_len, seed).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    /// Lower bound applied to every structurally non-zero `a` and `b`
    /// entry after re-estimation.
    pub floor: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self { max_iters: 40, tol: 1e-4, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchResult {
    pub model: Hmm,
    /// Total log-likelihood of the training set under the model at the start
    /// of each pass; the last entry scores the returned model.
    pub history: Vec<f64>,
    /// Number of re-estimation steps applied.
    pub iterations: usize,
}

/// Expected counts from one sequence.
struct SequenceStats {
    gamma_first: Array1<f64>,
    /// Σ_t ξ_t(i, j), t = 0..T-2
    transitions: Array2<f64>,
    /// Σ_{t: o_t = k} γ_t(j)
    emissions: Array2<f64>,
    log_likelihood: f64,
}

fn sequence_stats(h: &Hmm, obs: &SymbolSequence) -> Result<SequenceStats, HmmError> {
    let fwd = forward_scaled(h, obs)?;
    let beta_hat = backward_scaled(h, obs, &fwd.scales)?;
    let gamma = state_posteriors(&fwd, &beta_hat);
    let o = obs.as_slice();
    let n = h.n_states();

    let mut transitions = Array2::zeros((n, n));
    for t in 0..o.len().saturating_sub(1) {
        for i in 0..n {
            let ai = fwd.alpha_hat[[t, i]];
            if ai == 0.0 {
                continue;
            }
            for j in 0..n {
                transitions[[i, j]] += ai * h.a[[i, j]] * h.b[[j, o[t + 1]]] * beta_hat[[t + 1, j]];
            }
        }
    }
    let mut emissions = Array2::zeros((n, h.n_symbols()));
    for (t, &sym) in o.iter().enumerate() {
        for j in 0..n {
            emissions[[j, sym]] += gamma[[t, j]];
        }
    }
    Ok(SequenceStats {
        gamma_first: gamma.row(0).to_owned(),
        transitions,
        emissions,
        log_likelihood: fwd.log_likelihood,
    })
}

/// E-step over all sequences. Per-sequence work runs in parallel; the sum
/// is taken in sequence order so results are bit-reproducible.
fn accumulate(h: &Hmm, seqs: &[SymbolSequence]) -> Result<SequenceStats, HmmError> {
    let per_seq: Vec<SequenceStats> = seqs
        .par_iter()
        .map(|s| sequence_stats(h, s))
        .collect::<Result<_, _>>()?;
    let n = h.n_states();
    let mut total = SequenceStats {
        gamma_first: Array1::zeros(n),
        transitions: Array2::zeros((n, n)),
        emissions: Array2::zeros((n, h.n_symbols())),
        log_likelihood: 0.0,
    };
    for s in &per_seq {
        total.gamma_first += &s.gamma_first;
        total.transitions += &s.transitions;
        total.emissions += &s.emissions;
        total.log_likelihood += s.log_likelihood;
    }
    Ok(total)
}

/// Normalizes each row of `counts`; rows with no mass keep `fallback`'s row.
fn normalize_rows(counts: &Array2<f64>, fallback: &Array2<f64>) -> Array2<f64> {
    let mut out = counts.clone();
    for (r, mut row) in out.outer_iter_mut().enumerate() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.assign(&fallback.row(r));
        }
    }
    out
}

/// Raises structurally non-zero entries (non-zero in `structure`) to at least
/// `floor`, pins structural zeros at zero, and renormalizes rows.
fn apply_floor(m: &mut Array2<f64>, structure: &Array2<f64>, floor: f64) {
    for (mut row, srow) in m.outer_iter_mut().zip(structure.outer_iter()) {
        for (v, &s) in row.iter_mut().zip(srow.iter()) {
            *v = if s == 0.0 { 0.0 } else { v.max(floor) };
        }
        let sum = row.sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
}

fn reestimate(current: &Hmm, stats: &SequenceStats, n_seqs: usize, structure: &Hmm, floor: f64) -> Hmm {
    let mut pi = &stats.gamma_first / n_seqs as f64;
    let total = pi.sum();
    if total > 0.0 {
        pi /= total;
    }
    let mut a = normalize_rows(&stats.transitions, &current.a);
    let mut b = normalize_rows(&stats.emissions, &current.b);
    apply_floor(&mut a, &structure.a, floor);
    apply_floor(&mut b, &structure.b, floor);
    Hmm { pi, a, b }
}

/// Multi-sequence Baum-Welch. `observe` is called after every re-estimation
/// with the pass number (from 1) and the updated model.
pub fn baum_welch_observed(
    h0: &Hmm,
    sequences: &[SymbolSequence],
    cfg: &BaumWelchConfig,
    mut observe: impl FnMut(usize, &Hmm),
) -> Result<BaumWelchResult, HmmError> {
    if sequences.is_empty() {
        return Err(HmmError::NoSequences);
    }
    if let Some(s) = sequences.iter().find(|s| s.is_empty()) {
        h0.check_obs(s.as_slice())?;
    }
    let mut model = h0.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let stats = accumulate(&model, sequences)?;
        let ll = stats.log_likelihood;
        let converged = history.last().is_some_and(|&prev: &f64| ll - prev < cfg.tol);
        history.push(ll);
        if converged || iterations >= cfg.max_iters {
            break;
        }
        model = reestimate(&model, &stats, sequences.len(), h0, cfg.floor);
        iterations += 1;
        observe(iterations, &model);
    }
    Ok(BaumWelchResult { model, history, iterations })
}

pub fn baum_welch(
    h0: &Hmm,
    sequences: &[SymbolSequence],
    cfg: &BaumWelchConfig,
) -> Result<BaumWelchResult, HmmError> {
    baum_welch_observed(h0, sequences, cfg, |_, _| {})
}

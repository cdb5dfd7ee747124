//! Seeded generative model over the transition kernel.
//!
//! The model answers i.i.d. next-state queries for any `(s, a)` and accounts
//! for every draw in a sample counter, which is the budget `N` the learners
//! are charged against. Draws are inverse-CDF on precomputed cumulative rows,
//! O(log S) each.
//!
//! Reproducibility contract: the stream for the `c`-th query on row `(s, a)`
//! is derived from `(seed, row, c)` alone, so identical (seed, query sequence)
//! pairs produce identical samples regardless of how unrelated rows are
//! interleaved.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::mdp::DiscountedMdp;

/// SplitMix64 step; used to derive per-(row, call) stream seeds.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, row: u64, call: u64) -> u64 {
    let mut state = seed;
    let a = splitmix64(&mut state);
    let mut state = a ^ row;
    let b = splitmix64(&mut state);
    let mut state = b ^ call;
    splitmix64(&mut state)
}

/// First index `i` with `cdf[i] > u`; `cdf` is nondecreasing with last entry 1.
#[inline]
fn locate(cdf: &[f64], u: f64) -> usize {
    let mut base = 0usize;
    let mut size = cdf.len();
    while size > 1 {
        let half = size / 2;
        let mid = base + half;
        if cdf[mid - 1] <= u {
            base = mid;
        }
        size -= half;
    }
    base
}

/// A seeded sampler over `P(.|s, a)` with an exact draw counter.
#[derive(Debug)]
pub struct GenerativeModel<'a> {
    mdp: &'a DiscountedMdp,
    seed: u64,
    samples_used: u64,
    /// Per-row query counters feeding the stream derivation.
    call_counts: Vec<u64>,
    /// `(S*A) x S` cumulative rows; each row ends at exactly 1.
    cdf: Vec<f64>,
}

impl<'a> GenerativeModel<'a> {
    pub fn new(mdp: &'a DiscountedMdp, seed: u64) -> Self {
        let s = mdp.n_states();
        let pairs = mdp.n_pairs();
        let mut cdf = vec![0.0; pairs * s];
        for row in 0..pairs {
            let p = mdp.transition_row_by_index(row);
            let out = &mut cdf[row * s..(row + 1) * s];
            let mut acc = 0.0;
            for (o, &x) in out.iter_mut().zip(p) {
                acc += x;
                *o = acc;
            }
            // Row sums are 1 within 1e-12 by construction; pin the last entry
            // so that every uniform draw in [0, 1) lands inside the row.
            out[s - 1] = 1.0;
        }
        Self {
            mdp,
            seed,
            samples_used: 0,
            call_counts: vec![0; pairs],
            cdf,
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total next-state draws since construction; monotone nondecreasing.
    #[inline]
    pub fn sample_count(&self) -> u64 {
        self.samples_used
    }

    fn row_index(&self, state: usize, action: usize) -> Result<usize> {
        if state >= self.mdp.n_states() || action >= self.mdp.n_actions() {
            return Err(CoreError::invalid(format!(
                "state-action ({state}, {action}) out of range for S = {}, A = {}",
                self.mdp.n_states(),
                self.mdp.n_actions()
            )));
        }
        Ok(state * self.mdp.n_actions() + action)
    }

    fn draw<F: FnMut(usize)>(&mut self, row: usize, n: u64, mut sink: F) {
        let s = self.mdp.n_states();
        let cdf_row = &self.cdf[row * s..(row + 1) * s];
        let call = self.call_counts[row];
        self.call_counts[row] += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, row as u64, call));
        for _ in 0..n {
            // 53-bit uniform in [0, 1).
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            sink(locate(cdf_row, u));
        }
        self.samples_used += n;
    }

    /// `n` i.i.d. next-state draws from `P(.|s, a)`.
    pub fn sample_next(&mut self, state: usize, action: usize, n: u64) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(CoreError::invalid("sample count must be at least 1"));
        }
        let row = self.row_index(state, action)?;
        let mut out = Vec::with_capacity(n as usize);
        self.draw(row, n, |x| out.push(x));
        Ok(out)
    }

    /// Draws `n` samples and bins them into `counts` (length S) instead of
    /// materializing the sequence. Produces exactly the draws `sample_next`
    /// would for the same query; the batch learners use this form.
    pub fn sample_histogram(
        &mut self,
        state: usize,
        action: usize,
        n: u64,
        counts: &mut [u64],
    ) -> Result<()> {
        if n == 0 {
            return Err(CoreError::invalid("sample count must be at least 1"));
        }
        if counts.len() != self.mdp.n_states() {
            return Err(CoreError::invalid(format!(
                "histogram buffer has length {}, expected S = {}",
                counts.len(),
                self.mdp.n_states()
            )));
        }
        let row = self.row_index(state, action)?;
        counts.fill(0);
        self.draw(row, n, |x| counts[x] += 1);
        Ok(())
    }
}

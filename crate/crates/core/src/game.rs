//! Generic coalition-game solvers.
//!
//! A game is a player count `n` plus a set function over coalitions. The
//! solvers here know nothing about cubes or measures; the attribution layers
//! adapt their set functions onto these primitives.
//!
//! Determinism contract: every sampling solver derives one RNG stream per
//! (player, sample) pair from the master seed by counter, so results are
//! bit-identical for a fixed seed regardless of thread count or schedule.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Hard cap for exact subset enumeration.
pub const EXACT_PLAYER_LIMIT: usize = 20;

/// Default number of sampled permutations per player.
pub const DEFAULT_PERMUTATION_SAMPLES: usize = 2000;

/// Cap on the kernel engine's default coalition sample.
pub const DEFAULT_KERNEL_SAMPLE_CAP: usize = 2048;

/// Coalition of players encoded as a bitset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Coalition {
    n: usize,
    blocks: Vec<u64>,
}

impl Coalition {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            blocks: vec![0; n.div_ceil(64).max(1)],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut c = Self::empty(n);
        for i in 0..n {
            c.insert(i);
        }
        c
    }

    pub fn insert(&mut self, player: usize) {
        debug_assert!(player < self.n);
        self.blocks[player / 64] |= 1 << (player % 64);
    }

    pub fn remove(&mut self, player: usize) {
        debug_assert!(player < self.n);
        self.blocks[player / 64] &= !(1 << (player % 64));
    }

    pub fn contains(&self, player: usize) -> bool {
        self.blocks[player / 64] >> (player % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn player_count(&self) -> usize {
        self.n
    }

    /// Raw blocks, usable as a memo key.
    pub fn key(&self) -> &[u64] {
        &self.blocks
    }

    fn from_mask(n: usize, mask: u64) -> Self {
        debug_assert!(n <= 64);
        let mut c = Self::empty(n);
        c.blocks[0] = mask;
        c
    }
}

/// Compensated (Kahan-Neumaier) accumulator. The exact solver adds up to
/// `n * 2^n` weighted marginals; plain summation would not hold the 1e-12
/// completeness budget on adversarial orderings.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Exact Shapley values by subset enumeration: for every player, the
/// marginal contribution to each coalition excluding it, weighted by
/// `1 / (n * C(n-1, |S|))`.
pub fn shapley_exact<F>(n: usize, mut sigma: F) -> Result<Vec<f64>>
where
    F: FnMut(&Coalition) -> Result<f64>,
{
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > EXACT_PLAYER_LIMIT {
        return Err(Error::TooManyPlayers {
            n,
            max: EXACT_PLAYER_LIMIT,
        });
    }

    let total = 1u64 << n;
    let mut table = vec![0.0; total as usize];
    for mask in 0..total {
        table[mask as usize] = sigma(&Coalition::from_mask(n, mask))?;
    }

    // weight[s] = 1 / (n * C(n-1, s)); binomials up to C(19, 9) are exact in
    // f64, so each weight is correct to one rounding.
    let weights: Vec<f64> = (0..n)
        .map(|s| 1.0 / (n as f64 * binomial(n - 1, s)))
        .collect();

    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let bit = 1u64 << i;
        let mut acc = KahanSum::default();
        for mask in 0..total {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let marginal = table[(mask | bit) as usize] - table[mask as usize];
            acc.add(weights[s] * marginal);
        }
        values.push(acc.value());
    }
    Ok(values)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Configuration for the sampling solvers.
#[derive(Clone, Copy, Debug)]
pub struct SampleConfig {
    pub samples: usize,
    pub seed: u64,
}

/// Permutation-sampled Shapley values.
///
/// For each player independently, `samples` random permutations are drawn and
/// the marginal contribution of the player to the coalition preceding it is
/// averaged. The estimator is unbiased; because the per-player estimates use
/// independent randomness, the completeness residual is stochastic and
/// shrinks as `1/sqrt(samples)`.
pub fn shapley_permutation<F>(n: usize, sigma: F, cfg: &SampleConfig) -> Result<Vec<f64>>
where
    F: Fn(&Coalition) -> Result<f64> + Sync,
{
    if n == 0 {
        return Ok(Vec::new());
    }
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig(
            "permutation sampling needs at least one sample".into(),
        ));
    }
    if n == 1 {
        // One player takes the whole difference; no sampling noise.
        return Ok(vec![
            sigma(&Coalition::full(1))? - sigma(&Coalition::empty(1))?,
        ]);
    }

    let k = cfg.samples;
    let marginals: Vec<f64> = (0..n * k)
        .into_par_iter()
        .map(|job| -> Result<f64> {
            let player = job / k;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(job as u64 + 1);

            // Prefix of a uniform permutation: uniform size, then a uniform
            // subset of the other players at that size.
            let size = rng.random_range(0..n);
            let mut others: Vec<usize> = (0..n).filter(|&p| p != player).collect();
            let (sampled, _) = others.partial_shuffle(&mut rng, size);
            let mut preceding = Coalition::empty(n);
            for &p in sampled.iter() {
                preceding.insert(p);
            }
            let before = sigma(&preceding)?;
            preceding.insert(player);
            let after = sigma(&preceding)?;
            Ok(after - before)
        })
        .collect::<Result<_>>()?;

    // Deterministic reduction in sample-index order.
    let mut values = Vec::with_capacity(n);
    for player in 0..n {
        let mut acc = KahanSum::default();
        for sample in 0..k {
            acc.add(marginals[player * k + sample]);
        }
        values.push(acc.value() / k as f64);
    }
    Ok(values)
}

/// Kernel-regression Shapley values: weighted least squares over coalitions
/// under the Shapley kernel weight `(n - 1) / (C(n, s) * s * (n - s))`.
///
/// When every proper non-empty coalition fits in the sample budget the
/// design is enumerated completely with explicit kernel weights and the
/// solution coincides with the exact Shapley value. Otherwise coalition
/// sizes are drawn proportionally to the total kernel mass at each size and
/// subsets uniformly within a size, which realises the same weighting with
/// unit row weights at far lower variance than weighting uniform draws.
///
/// The empty and full coalitions enter as hard constraints: the intercept is
/// pinned to `sigma(empty)` and one unknown is eliminated so that the values
/// sum to `sigma(full) - sigma(empty)` exactly.
pub fn shapley_kernel<F>(n: usize, sigma: F, samples: Option<usize>, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&Coalition) -> Result<f64> + Sync,
{
    if n == 0 {
        return Ok(Vec::new());
    }
    let base = sigma(&Coalition::empty(n))?;
    let delta = sigma(&Coalition::full(n))? - base;
    if n == 1 {
        return Ok(vec![delta]);
    }

    let all_proper = (1u64 << n).saturating_sub(2);
    let k = samples.unwrap_or_else(|| (all_proper as usize).min(DEFAULT_KERNEL_SAMPLE_CAP));
    if k == 0 {
        return Err(Error::InvalidConfig(
            "kernel sampling needs at least one coalition".into(),
        ));
    }

    let enumerate_all = n <= 60 && all_proper <= k as u64;
    let coalitions: Vec<Coalition> = if enumerate_all {
        (1..=all_proper)
            .map(|mask| Coalition::from_mask(n, mask))
            .collect()
    } else {
        if k < n + 2 {
            return Err(Error::InvalidConfig(format!(
                "kernel sampling needs at least n + 2 = {} coalitions, got {k}",
                n + 2
            )));
        }
        sample_coalitions(n, k, seed)
    };

    let sigma_values: Vec<f64> = coalitions.par_iter().map(&sigma).collect::<Result<_>>()?;

    solve_kernel_system(n, &coalitions, &sigma_values, base, delta, enumerate_all)
}

/// Draws coalition sizes proportionally to the total kernel weight carried by
/// each size, then uniform subsets within the size. Size masses are formed in
/// log space so large player counts cannot overflow.
fn sample_coalitions(n: usize, k: usize, seed: u64) -> Vec<Coalition> {
    let mut log_mass = Vec::with_capacity(n - 1);
    let mut log_choose = (n as f64).ln(); // ln C(n, 1)
    for s in 1..n {
        log_mass.push(log_choose - ((s * (n - s)) as f64).ln());
        log_choose += ((n - s) as f64 / (s + 1) as f64).ln();
    }
    let peak = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = log_mass.iter().map(|lm| (lm - peak).exp()).collect();
    let total: f64 = masses.iter().sum();

    let mut out = Vec::with_capacity(k);
    for sample in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sample as u64 + 1);
        let mut target = rng.random::<f64>() * total;
        let mut size = 1;
        for (s, mass) in masses.iter().enumerate() {
            size = s + 1;
            if target < *mass {
                break;
            }
            target -= *mass;
        }
        let mut players: Vec<usize> = (0..n).collect();
        let (sampled, _) = players.partial_shuffle(&mut rng, size);
        let mut c = Coalition::empty(n);
        for &p in sampled.iter() {
            c.insert(p);
        }
        out.push(c);
    }
    out
}

fn kernel_weight(n: usize, s: usize) -> f64 {
    (n - 1) as f64 / (binomial(n, s) * (s * (n - s)) as f64)
}

/// Weighted least squares with player `n-1` eliminated through the
/// completeness constraint. Rows carry explicit kernel weights when the
/// coalitions were enumerated; sampled rows already realise the weighting
/// through their draw distribution. Solved via the normal equations; a
/// failed Cholesky factorisation means the design does not span the player
/// space.
fn solve_kernel_system(
    n: usize,
    coalitions: &[Coalition],
    sigma_values: &[f64],
    base: f64,
    delta: f64,
    explicit_weights: bool,
) -> Result<Vec<f64>> {
    let unknowns = n - 1;
    let mut normal = nalgebra::DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut rhs = nalgebra::DVector::<f64>::zeros(unknowns);
    let mut design_row = vec![0.0; unknowns];

    for (c, &value) in coalitions.iter().zip(sigma_values) {
        let s = c.len();
        debug_assert!(s >= 1 && s < n);
        let w = if explicit_weights {
            kernel_weight(n, s)
        } else {
            1.0
        };
        let z_last = if c.contains(n - 1) { 1.0 } else { 0.0 };
        for (i, slot) in design_row.iter_mut().enumerate() {
            *slot = (if c.contains(i) { 1.0 } else { 0.0 }) - z_last;
        }
        let target = (value - base) - z_last * delta;
        for i in 0..unknowns {
            if design_row[i] == 0.0 {
                continue;
            }
            for j in 0..unknowns {
                normal[(i, j)] += w * design_row[i] * design_row[j];
            }
            rhs[i] += w * design_row[i] * target;
        }
    }

    let chol = normal.cholesky().ok_or(Error::SingularSystem)?;
    let solution = chol.solve(&rhs);

    let mut values: Vec<f64> = solution.iter().copied().collect();
    let partial: f64 = values.iter().sum();
    values.push(delta - partial);
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Two-player game with worths 1, 2 and 4; both orderings by hand give
    /// the values (1.5, 2.5).
    fn two_player_sigma(c: &Coalition) -> Result<f64> {
        Ok(match (c.contains(0), c.contains(1)) {
            (false, false) => 0.0,
            (true, false) => 1.0,
            (false, true) => 2.0,
            (true, true) => 4.0,
        })
    }

    #[test]
    fn exact_two_player_game() {
        let values = shapley_exact(2, two_player_sigma).unwrap();
        assert_eq!(values, vec![1.5, 2.5]);
    }

    #[test]
    fn exact_single_player_takes_everything() {
        let values = shapley_exact(1, |c| Ok(if c.contains(0) { 7.25 } else { 0.0 })).unwrap();
        assert_eq!(values, vec![7.25]);
    }

    #[test]
    fn exact_dummy_player_gets_zero() {
        // Player 1 never changes the worth.
        let values = shapley_exact(2, |c| Ok(if c.contains(0) { 3.0 } else { 0.0 })).unwrap();
        assert_eq!(values, vec![3.0, 0.0]);
    }

    #[test]
    fn exact_rejects_too_many_players() {
        let err = shapley_exact(21, |_| Ok(0.0)).unwrap_err();
        assert_eq!(
            err,
            Error::TooManyPlayers {
                n: 21,
                max: EXACT_PLAYER_LIMIT
            }
        );
    }

    #[test]
    fn permutation_single_player_is_exact() {
        let cfg = SampleConfig {
            samples: 3,
            seed: 1,
        };
        let values =
            shapley_permutation(1, |c| Ok(if c.contains(0) { 0.1 } else { 0.0 }), &cfg).unwrap();
        assert_eq!(values, vec![0.1]);
    }

    #[test]
    fn permutation_converges_to_exact() {
        let cfg = SampleConfig {
            samples: 20_000,
            seed: 42,
        };
        let values = shapley_permutation(2, two_player_sigma, &cfg).unwrap();
        assert_abs_diff_eq!(values[0], 1.5, epsilon = 0.02);
        assert_abs_diff_eq!(values[1], 2.5, epsilon = 0.02);
    }

    #[test]
    fn permutation_is_deterministic_per_seed() {
        let cfg = SampleConfig {
            samples: 50,
            seed: 7,
        };
        let a = shapley_permutation(3, |c| Ok(c.len() as f64 * c.len() as f64), &cfg).unwrap();
        let b = shapley_permutation(3, |c| Ok(c.len() as f64 * c.len() as f64), &cfg).unwrap();
        assert_eq!(a, b);
        let other = shapley_permutation(
            3,
            |c| Ok(c.len() as f64 * c.len() as f64),
            &SampleConfig {
                samples: 50,
                seed: 8,
            },
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn kernel_recovers_additive_game_exactly() {
        let a = [0.5, -1.25, 2.0, 0.125, 3.5];
        let sigma =
            |c: &Coalition| Ok((0..5).filter(|&i| c.contains(i)).map(|i| a[i]).sum::<f64>());
        let values = shapley_kernel(5, sigma, None, 42).unwrap();
        for (got, want) in values.iter().zip(a) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_with_exhaustive_coalitions_matches_exact() {
        let values = shapley_kernel(2, two_player_sigma, None, 0).unwrap();
        assert_abs_diff_eq!(values[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(values[1], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn kernel_single_player() {
        let values =
            shapley_kernel(1, |c| Ok(if c.contains(0) { 2.0 } else { 0.0 }), None, 0).unwrap();
        assert_eq!(values, vec![2.0]);
    }

    #[test]
    fn kernel_sampled_path_needs_enough_coalitions() {
        let err = shapley_kernel(12, |c| Ok(c.len() as f64), Some(5), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn kernel_sampled_close_to_exact() {
        // Non-additive 12-player game, forced through the sampled path. The
        // additive fit leaves residuals of order 30 here, so the sampled
        // estimate carries real regression noise; completeness still holds
        // exactly by construction.
        let sigma = |c: &Coalition| {
            let s = c.len() as f64;
            Ok(s * s + if c.contains(0) { 3.0 * s } else { 0.0 })
        };
        let sampled = shapley_kernel(12, sigma, Some(3000), 42).unwrap();
        let exact = shapley_exact(12, sigma).unwrap();
        for (got, want) in sampled.iter().zip(&exact) {
            assert_abs_diff_eq!(*got, *want, epsilon = 4.5);
        }
        let sum: f64 = sampled.iter().sum();
        let full: f64 = sigma(&Coalition::full(12)).unwrap();
        assert_abs_diff_eq!(sum, full, epsilon = 1e-9);
    }

    #[test]
    fn coalition_bitset_roundtrip() {
        let mut c = Coalition::empty(130);
        c.insert(0);
        c.insert(64);
        c.insert(129);
        assert!(c.contains(64));
        assert!(!c.contains(63));
        assert_eq!(c.len(), 3);
        c.remove(64);
        assert_eq!(c.len(), 2);
    }
}

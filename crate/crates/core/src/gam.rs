//! Attribution engines for generalized additive measures.
//!
//! When every sub-measure aggregates additively, the whole measure is a
//! function of the observation matrix's column sums, and the difference
//! between an explicand matrix and a reference matrix can be played as a
//! coalition game over the matrix cells: a coalition mask decides, cell by
//! cell, whether the explicand value or the reference value enters the
//! mix, and the set function is the measure of the mixed matrix relative to
//! the reference.
//!
//! Five engines solve that game with different trade-offs:
//!
//! * [`shapley_exact`] enumerates every coalition (up to 20 players),
//! * [`shapley_permutation`] samples player orderings (unbiased, seeded),
//! * [`shapley_kernel`] solves a weighted least-squares regression over
//!   sampled coalitions with completeness enforced exactly,
//! * [`attribute_aumann_riemann`] integrates the measure's gradient along the
//!   straight line from reference to explicand (right-endpoint rule),
//! * [`attribute_aumann_ratio`] is the closed form of that path integral for
//!   ratio measures, with series limits when the denominator does not move,
//! * [`attribute_linear`] is the trivial closed form for affine measures.
//!
//! [`attribute`] routes a request through one engine against either a single
//! baseline reference or the element-wise average over a reference sample
//! set.

use crate::error::{Error, Result};
use crate::expr::{MeasureClass, MeasureSpec};
use crate::game::{self, Coalition, KahanSum, SampleConfig, DEFAULT_PERMUTATION_SAMPLES};
use crate::model::{validate_pair, CoalitionMask, ContributionMatrix, ObservationMatrix};

/// Relative threshold below which the ratio closed form switches to its
/// series limits; protects against catastrophic cancellation when the
/// denominator column barely moves.
pub const RATIO_DEGENERACY_EPS: f64 = 1e-9;

/// Default number of integration steps for the path-integral engine.
pub const DEFAULT_RIEMANN_STEPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Exact,
    Permutation,
    Kernel,
    AumannRiemann,
    AumannRatio,
    Linear,
}

impl Engine {
    pub fn tag(&self) -> &'static str {
        match self {
            Engine::Exact => "shapley-exact",
            Engine::Permutation => "shapley-permutation",
            Engine::Kernel => "shapley-kernel",
            Engine::AumannRiemann => "aumann-riemann",
            Engine::AumannRatio => "aumann-ratio",
            Engine::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "permutation" => Ok(Engine::Permutation),
            "kernel" => Ok(Engine::Kernel),
            "riemann" | "aumann-riemann" => Ok(Engine::AumannRiemann),
            "ratio" | "aumann-ratio" => Ok(Engine::AumannRatio),
            "linear" => Ok(Engine::Linear),
            other => Err(Error::InvalidConfig(format!("unknown engine `{other}`"))),
        }
    }
}

/// What counts as one player in the coalition game: individual cells, whole
/// sub-cube rows, or whole sub-measure columns. The single-axis scopes keep
/// exact enumeration tractable when only one axis is of interest; the
/// per-player value is carried by the corresponding marginal of the result,
/// spread evenly over the cells it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlayerScope {
    #[default]
    Cells,
    Rows,
    Cols,
}

impl std::str::FromStr for PlayerScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cells" => Ok(PlayerScope::Cells),
            "rows" | "rows-only" => Ok(PlayerScope::Rows),
            "cols" | "cols-only" => Ok(PlayerScope::Cols),
            other => Err(Error::InvalidConfig(format!(
                "unknown player scope `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub engine: Engine,
    /// Sample count for the sampling engines; `None` picks the per-engine
    /// default (2000 permutations, `min(2^n - 2, 2048)` kernel coalitions).
    pub samples: Option<usize>,
    pub riemann_steps: usize,
    pub seed: u64,
    pub scope: PlayerScope,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Exact,
            samples: None,
            riemann_steps: DEFAULT_RIEMANN_STEPS,
            seed: 42,
            scope: PlayerScope::Cells,
        }
    }
}

/// Reference side of the comparison: one fixed baseline matrix, or a sample
/// set standing in for a reference distribution, in which case attributions
/// are averaged element-wise over the samples.
#[derive(Clone, Debug)]
pub enum ReferenceSpec {
    Baseline(ObservationMatrix),
    Expected(Vec<ObservationMatrix>),
}

impl ReferenceSpec {
    fn matrices(&self) -> &[ObservationMatrix] {
        match self {
            ReferenceSpec::Baseline(m) => std::slice::from_ref(m),
            ReferenceSpec::Expected(ms) => ms,
        }
    }
}

/// Coalition game between an aligned explicand/reference pair under a
/// measure specification.
#[derive(Clone, Debug)]
pub struct GamGame {
    spec: MeasureSpec,
    xt: ObservationMatrix,
    xr: ObservationMatrix,
    xt_sums: Vec<f64>,
    xr_sums: Vec<f64>,
}

impl GamGame {
    pub fn new(spec: &MeasureSpec, xt: &ObservationMatrix, xr: &ObservationMatrix) -> Result<Self> {
        if xt.cols() != spec.column_names() {
            return Err(Error::ColumnMismatch {
                left: spec.column_names().to_vec(),
                right: xt.cols().to_vec(),
            });
        }
        let (xt, xr) = validate_pair(xt, xr)?;
        let xt_sums = xt.column_sums();
        let xr_sums = xr.column_sums();
        Ok(Self {
            spec: spec.clone(),
            xt,
            xr,
            xt_sums,
            xr_sums,
        })
    }

    pub fn explicand(&self) -> &ObservationMatrix {
        &self.xt
    }

    pub fn reference(&self) -> &ObservationMatrix {
        &self.xr
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn p(&self) -> usize {
        self.xt.p()
    }

    pub fn q(&self) -> usize {
        self.xt.q()
    }

    /// Total change explained by the game.
    pub fn delta_y(&self) -> Result<f64> {
        Ok(self.spec.evaluate_at(&self.xt_sums)? - self.spec.evaluate_at(&self.xr_sums)?)
    }

    /// Worth of a coalition: the measure of the mixed matrix (explicand
    /// values where the mask is set, reference values elsewhere) minus the
    /// measure of the reference. The empty mask is worth exactly zero and the
    /// full mask is worth the total change.
    pub fn set_function(&self, mask: &CoalitionMask) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        if mask.p() != p || mask.q() != q {
            return Err(Error::ShapeMismatch(mask.p(), mask.q(), p, q));
        }
        let mut sums = vec![0.0; q];
        for u in 0..p {
            for (v, sum) in sums.iter_mut().enumerate() {
                *sum += if mask.get(u, v) {
                    self.xt.get(u, v)
                } else {
                    self.xr.get(u, v)
                };
            }
        }
        Ok(self.spec.evaluate_at(&sums)? - self.spec.evaluate_at(&self.xr_sums)?)
    }

    fn player_count(&self, scope: PlayerScope) -> usize {
        match scope {
            PlayerScope::Cells => self.p() * self.q(),
            PlayerScope::Rows => self.p(),
            PlayerScope::Cols => self.q(),
        }
    }

    fn mask_for(&self, scope: PlayerScope, coalition: &Coalition) -> CoalitionMask {
        let (p, q) = (self.p(), self.q());
        let mut mask = CoalitionMask::empty(p, q);
        match scope {
            PlayerScope::Cells => {
                for u in 0..p {
                    for v in 0..q {
                        if coalition.contains(u * q + v) {
                            mask.set(u, v, true);
                        }
                    }
                }
            }
            PlayerScope::Rows => {
                for u in 0..p {
                    if coalition.contains(u) {
                        for v in 0..q {
                            mask.set(u, v, true);
                        }
                    }
                }
            }
            PlayerScope::Cols => {
                for v in 0..q {
                    if coalition.contains(v) {
                        for u in 0..p {
                            mask.set(u, v, true);
                        }
                    }
                }
            }
        }
        mask
    }

    /// Distributes per-player values onto the cell grid: the value of a row
    /// or column player is split evenly over its cells so the corresponding
    /// marginal reproduces the player value.
    fn spread(&self, scope: PlayerScope, psi: &[f64]) -> Vec<f64> {
        let (p, q) = (self.p(), self.q());
        match scope {
            PlayerScope::Cells => psi.to_vec(),
            PlayerScope::Rows => {
                let mut values = vec![0.0; p * q];
                for u in 0..p {
                    for v in 0..q {
                        values[u * q + v] = psi[u] / q as f64;
                    }
                }
                values
            }
            PlayerScope::Cols => {
                let mut values = vec![0.0; p * q];
                for u in 0..p {
                    for v in 0..q {
                        values[u * q + v] = psi[v] / p as f64;
                    }
                }
                values
            }
        }
    }

    fn result(
        &self,
        values: Vec<f64>,
        method: &str,
        residual: Option<f64>,
    ) -> Result<ContributionMatrix> {
        let delta_y = self.delta_y()?;
        let residual = residual.unwrap_or_else(|| {
            let mut acc = KahanSum::default();
            for v in &values {
                acc.add(*v);
            }
            acc.value() - delta_y
        });
        ContributionMatrix::new(
            self.xt.rows().to_vec(),
            self.xt.cols().to_vec(),
            values,
            delta_y,
            residual,
            method,
        )
    }
}

/// Exact Shapley attribution by coalition enumeration. Limited to 20 players
/// under the configured scope.
pub fn shapley_exact(game: &GamGame, config: &EngineConfig) -> Result<ContributionMatrix> {
    let (values, _) = exact_values(game, config.scope)?;
    game.result(values, Engine::Exact.tag(), None)
}

fn exact_values(game: &GamGame, scope: PlayerScope) -> Result<(Vec<f64>, f64)> {
    let n = game.player_count(scope);
    let psi = game::shapley_exact(n, |c| game.set_function(&game.mask_for(scope, c)))?;
    Ok((game.spread(scope, &psi), game.delta_y()?))
}

/// Permutation-sampled Shapley attribution: unbiased, seeded, with the
/// completeness residual reported rather than enforced.
pub fn shapley_permutation(game: &GamGame, config: &EngineConfig) -> Result<ContributionMatrix> {
    let (values, _) = permutation_values(game, config, derive_seed(config.seed, 0))?;
    game.result(values, Engine::Permutation.tag(), None)
}

fn permutation_values(game: &GamGame, config: &EngineConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    let scope = config.scope;
    let n = game.player_count(scope);
    let cfg = SampleConfig {
        samples: config.samples.unwrap_or(DEFAULT_PERMUTATION_SAMPLES),
        seed,
    };
    let psi = game::shapley_permutation(n, |c| game.set_function(&game.mask_for(scope, c)), &cfg)?;
    Ok((game.spread(scope, &psi), game.delta_y()?))
}

/// Kernel-regression Shapley attribution. Completeness is enforced exactly by
/// construction, so the reported residual is zero.
pub fn shapley_kernel(game: &GamGame, config: &EngineConfig) -> Result<ContributionMatrix> {
    let (values, _) = kernel_values(game, config, derive_seed(config.seed, 0))?;
    game.result(values, Engine::Kernel.tag(), Some(0.0))
}

fn kernel_values(game: &GamGame, config: &EngineConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    let scope = config.scope;
    let n = game.player_count(scope);
    let psi = game::shapley_kernel(
        n,
        |c| game.set_function(&game.mask_for(scope, c)),
        config.samples,
        seed,
    )?;
    Ok((game.spread(scope, &psi), game.delta_y()?))
}

/// Closed-form attribution for affine measures: each cell contributes its
/// own change scaled by the sub-measure weight. Exact and instantaneous.
pub fn attribute_linear(
    xt: &ObservationMatrix,
    xr: &ObservationMatrix,
    intercept: f64,
    weights: &[f64],
) -> Result<ContributionMatrix> {
    let (xt, xr) = validate_pair(xt, xr)?;
    if weights.len() != xt.q() {
        return Err(Error::ShapeMismatch(1, weights.len(), 1, xt.q()));
    }
    let (values, delta_y) = linear_values(&xt, &xr, intercept, weights);
    let mut acc = KahanSum::default();
    for v in &values {
        acc.add(*v);
    }
    ContributionMatrix::new(
        xt.rows().to_vec(),
        xt.cols().to_vec(),
        values,
        delta_y,
        acc.value() - delta_y,
        Engine::Linear.tag(),
    )
}

fn linear_values(
    xt: &ObservationMatrix,
    xr: &ObservationMatrix,
    intercept: f64,
    weights: &[f64],
) -> (Vec<f64>, f64) {
    let (p, q) = (xt.p(), xt.q());
    let mut values = vec![0.0; p * q];
    for u in 0..p {
        for v in 0..q {
            values[u * q + v] = weights[v] * (xt.get(u, v) - xr.get(u, v));
        }
    }
    let g = |sums: &[f64]| intercept + sums.iter().zip(weights).map(|(m, w)| m * w).sum::<f64>();
    let delta_y = g(&xt.column_sums()) - g(&xr.column_sums());
    (values, delta_y)
}

/// Path-integral attribution for differentiable measures, approximated by a
/// right-endpoint Riemann sum with `steps` grid points along the straight
/// line from reference to explicand. The gradient of the measure with
/// respect to a cell equals the partial derivative with respect to its
/// column, evaluated at the mixed column sums, so each step costs one
/// gradient evaluation per column.
pub fn attribute_aumann_riemann(game: &GamGame, steps: usize) -> Result<ContributionMatrix> {
    let (values, _) = riemann_values(game, steps)?;
    game.result(values, Engine::AumannRiemann.tag(), None)
}

fn riemann_values(game: &GamGame, steps: usize) -> Result<(Vec<f64>, f64)> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "the path integral needs at least one step".into(),
        ));
    }
    if matches!(game.spec.class(), MeasureClass::Opaque) {
        return Err(Error::EngineMismatch {
            engine: Engine::AumannRiemann.tag().into(),
            class: game.spec.class().tag().into(),
        });
    }
    let (p, q) = (game.p(), game.q());
    let gradients = game.spec.gradient()?;
    let delta_sums: Vec<f64> = (0..q).map(|v| game.xt_sums[v] - game.xr_sums[v]).collect();

    let mut grad_acc = vec![KahanSum::default(); q];
    let mut point = vec![0.0; q];
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        for v in 0..q {
            point[v] = game.xr_sums[v] + alpha * delta_sums[v];
        }
        for (v, grad) in gradients.iter().enumerate() {
            let g = grad.evaluate(&point).map_err(|e| match e {
                Error::DivisionByZero => Error::PathSingularity { alpha },
                other => other,
            })?;
            grad_acc[v].add(g);
        }
    }

    let mut values = vec![0.0; p * q];
    for u in 0..p {
        for v in 0..q {
            let delta_cell = game.xt.get(u, v) - game.xr.get(u, v);
            values[u * q + v] = delta_cell * grad_acc[v].value() / steps as f64;
        }
    }
    Ok((values, game.delta_y()?))
}

/// Closed-form path-integral attribution for a ratio of two sub-measure
/// columns. Numerator cells scale with `ln(d_t/d_r) / (d_t - d_r)`;
/// denominator cells carry the remaining curvature term. When the
/// denominator column sum barely moves the expressions degenerate and the
/// well-defined limits take over.
pub fn attribute_aumann_ratio(
    xt: &ObservationMatrix,
    xr: &ObservationMatrix,
    numerator: usize,
    denominator: usize,
) -> Result<ContributionMatrix> {
    let (xt, xr) = validate_pair(xt, xr)?;
    let (p, q) = (xt.p(), xt.q());
    if numerator >= q || denominator >= q {
        return Err(Error::ShapeMismatch(1, numerator.max(denominator), 1, q));
    }
    let t_sums = xt.column_sums();
    let r_sums = xr.column_sums();
    let (num_t, num_r) = (t_sums[numerator], r_sums[numerator]);
    let (den_t, den_r) = (t_sums[denominator], r_sums[denominator]);
    if den_r == 0.0 {
        return Err(Error::UndefinedMeasure("reference"));
    }
    if den_t == 0.0 {
        return Err(Error::UndefinedMeasure("target"));
    }

    let delta_y = num_t / den_t - num_r / den_r;
    let (num_factor, den_factor) =
        if (den_t - den_r).abs() <= RATIO_DEGENERACY_EPS * den_t.abs().max(den_r.abs()) {
            // Series limits at den_t -> den_r: expanding the closed form in
            // (den_t - den_r) leaves the numerator path averaged at its
            // midpoint, so the denominator factor carries (num_r + num_t)/2.
            // Checked against the path-integral oracle in the tests.
            (
                2.0 / (den_r + den_t),
                -(num_r + num_t) / (2.0 * den_r * den_t),
            )
        } else {
            if den_t * den_r < 0.0 {
                // The straight-line path crosses a zero denominator.
                return Err(Error::PathSingularity {
                    alpha: den_r / (den_r - den_t),
                });
            }
            let log_ratio = (den_t / den_r).ln();
            let den_delta = den_t - den_r;
            let num_factor = log_ratio / den_delta;
            let den_factor = -num_r / (den_r * den_t)
                - (num_t - num_r) / (den_delta * den_delta) * (log_ratio + den_r / den_t - 1.0);
            (num_factor, den_factor)
        };

    let mut values = vec![0.0; p * q];
    for u in 0..p {
        values[u * q + numerator] = (xt.get(u, numerator) - xr.get(u, numerator)) * num_factor;
        // A measure of the form m/m has one column acting as both sides;
        // accumulate rather than overwrite so that case stays additive.
        values[u * q + denominator] +=
            (xt.get(u, denominator) - xr.get(u, denominator)) * den_factor;
    }
    let mut acc = KahanSum::default();
    for v in &values {
        acc.add(*v);
    }
    ContributionMatrix::new(
        xt.rows().to_vec(),
        xt.cols().to_vec(),
        values,
        delta_y,
        acc.value() - delta_y,
        Engine::AumannRatio.tag(),
    )
}

/// Attributes the explicand against a reference specification with the
/// configured engine.
///
/// Baseline mode runs the engine once. Expected mode runs it against every
/// reference sample and averages the contribution matrices element-wise;
/// the reported change is then the mean change over the samples. Sampling
/// engines derive an independent seed per reference from the master seed.
pub fn attribute(
    spec: &MeasureSpec,
    xt: &ObservationMatrix,
    reference: &ReferenceSpec,
    config: &EngineConfig,
) -> Result<ContributionMatrix> {
    check_engine_compat(config.engine, spec.class())?;
    let refs = reference.matrices();
    if refs.is_empty() {
        return Err(Error::InvalidConfig(
            "expected-mode attribution needs at least one reference sample".into(),
        ));
    }

    // Align everything onto a common row set before averaging.
    let mut aligned_xt = xt.clone();
    for r in refs {
        (aligned_xt, _) = validate_pair(&aligned_xt, r)?;
    }

    let mut value_acc: Option<Vec<KahanSum>> = None;
    let mut delta_acc = KahanSum::default();
    let mut rows_cols: Option<(Vec<String>, Vec<String>)> = None;
    for (i, xr) in refs.iter().enumerate() {
        let game = GamGame::new(spec, &aligned_xt, xr)?;
        let seed = derive_seed(config.seed, i as u64);
        let (values, delta_y) = match config.engine {
            Engine::Exact => exact_values(&game, config.scope)?,
            Engine::Permutation => permutation_values(&game, config, seed)?,
            Engine::Kernel => kernel_values(&game, config, seed)?,
            Engine::AumannRiemann => riemann_values(&game, config.riemann_steps)?,
            Engine::AumannRatio => {
                let MeasureClass::Ratio {
                    numerator,
                    denominator,
                } = spec.class()
                else {
                    unreachable!("compatibility checked above");
                };
                let c = attribute_aumann_ratio(&game.xt, &game.xr, *numerator, *denominator)?;
                (c.values().to_vec(), c.delta_y())
            }
            Engine::Linear => {
                let MeasureClass::Linear { intercept, weights } = spec.class() else {
                    unreachable!("compatibility checked above");
                };
                linear_values(&game.xt, &game.xr, *intercept, weights)
            }
        };
        let acc = value_acc.get_or_insert_with(|| vec![KahanSum::default(); values.len()]);
        if acc.len() != values.len() {
            return Err(Error::ShapeMismatch(acc.len(), 1, values.len(), 1));
        }
        for (slot, v) in acc.iter_mut().zip(&values) {
            slot.add(*v);
        }
        delta_acc.add(delta_y);
        if rows_cols.is_none() {
            rows_cols = Some((game.xt.rows().to_vec(), game.xt.cols().to_vec()));
        }
    }

    let count = refs.len() as f64;
    let values: Vec<f64> = value_acc
        .expect("at least one reference")
        .iter()
        .map(|acc| acc.value() / count)
        .collect();
    let delta_y = delta_acc.value() / count;
    let residual = if config.engine == Engine::Kernel {
        0.0
    } else {
        let mut acc = KahanSum::default();
        for v in &values {
            acc.add(*v);
        }
        acc.value() - delta_y
    };
    let (rows, cols) = rows_cols.expect("at least one reference");
    ContributionMatrix::new(rows, cols, values, delta_y, residual, config.engine.tag())
}

fn check_engine_compat(engine: Engine, class: &MeasureClass) -> Result<()> {
    let ok = match engine {
        Engine::Linear => matches!(class, MeasureClass::Linear { .. }),
        Engine::AumannRatio => matches!(class, MeasureClass::Ratio { .. }),
        Engine::AumannRiemann => !matches!(class, MeasureClass::Opaque),
        Engine::Exact | Engine::Permutation | Engine::Kernel => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::EngineMismatch {
            engine: engine.tag().into(),
            class: class.tag().into(),
        })
    }
}

/// Splitmix64 step: one independent stream per (seed, salt) pair.
pub(crate) fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master.wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::AggregatorKind;
    use approx::assert_abs_diff_eq;

    fn ratio_spec() -> MeasureSpec {
        MeasureSpec::parse(
            "succ_cnt / total_cnt",
            vec![
                ("succ_cnt".into(), AggregatorKind::Sum("is_success".into())),
                (
                    "total_cnt".into(),
                    AggregatorKind::Count("request_id".into()),
                ),
            ],
        )
        .unwrap()
    }

    fn obs(values: &[f64], t: &str) -> ObservationMatrix {
        ObservationMatrix::new(
            vec!["dc1".to_string(), "dc2".to_string()],
            vec!["succ_cnt".to_string(), "total_cnt".to_string()],
            values.to_vec(),
            t,
        )
        .unwrap()
    }

    /// The two-data-center success-rate example: reference column sums
    /// (50, 70), explicand column sums (100, 150), change -4.76%.
    fn success_rate_game() -> GamGame {
        let xr = obs(&[40.0, 50.0, 10.0, 20.0], "10:00");
        let xt = obs(&[45.0, 50.0, 55.0, 100.0], "10:01");
        GamGame::new(&ratio_spec(), &xt, &xr).unwrap()
    }

    #[test]
    fn set_function_full_mask_is_total_change() {
        let game = success_rate_game();
        let full = game.set_function(&CoalitionMask::full(2, 2)).unwrap();
        assert_abs_diff_eq!(full, 100.0 / 150.0 - 50.0 / 70.0, epsilon = 1e-15);
        assert_abs_diff_eq!(full, game.delta_y().unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn set_function_empty_mask_is_zero() {
        let game = success_rate_game();
        assert_eq!(game.set_function(&CoalitionMask::empty(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn set_function_single_cell() {
        // Selecting only dc2's request count: 50/150 - 50/70.
        let game = success_rate_game();
        let mut mask = CoalitionMask::empty(2, 2);
        mask.set(1, 1, true);
        let worth = game.set_function(&mask).unwrap();
        assert_abs_diff_eq!(worth, 50.0 / 150.0 - 50.0 / 70.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_zero_change_is_zero_matrix() {
        let x = obs(&[1.0, 2.0, 3.0, 4.0], "t");
        let c = attribute_linear(&x, &x, 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(c.values(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.delta_y(), 0.0);
        assert_eq!(c.residual(), 0.0);
    }

    #[test]
    fn linear_attributes_single_changed_cell() {
        let xr = obs(&[1.0, 2.0, 3.0, 4.0], "r");
        let xt = obs(&[4.0, 2.0, 3.0, 4.0], "t");
        let c = attribute_linear(&xt, &xr, 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(c.get(0, 0), 3.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.delta_y(), 3.0);
    }

    #[test]
    fn linear_applies_weights() {
        let xr = obs(&[0.0, 0.0, 0.0, 0.0], "r");
        let xt = obs(&[1.0, 1.0, 0.0, 0.0], "t");
        let c = attribute_linear(&xt, &xr, 5.0, &[2.0, -1.0]).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(0, 1), -1.0);
        assert_abs_diff_eq!(c.delta_y(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn riemann_zero_change_is_zero() {
        let game = GamGame::new(
            &ratio_spec(),
            &obs(&[40.0, 50.0, 10.0, 20.0], "t"),
            &obs(&[40.0, 50.0, 10.0, 20.0], "r"),
        )
        .unwrap();
        let c = attribute_aumann_riemann(&game, 100).unwrap();
        assert_eq!(c.values(), &[0.0; 4]);
    }

    #[test]
    fn riemann_matches_linear_for_affine_measures() {
        let spec = MeasureSpec::parse(
            "2*a + 3*b",
            vec![
                ("a".into(), AggregatorKind::Sum("a".into())),
                ("b".into(), AggregatorKind::Sum("b".into())),
            ],
        )
        .unwrap();
        let xr = ObservationMatrix::new(
            vec!["r1".to_string()],
            vec!["a".to_string(), "b".to_string()],
            vec![1.0, 2.0],
            "r",
        )
        .unwrap();
        let xt = xr.with_values(vec![4.0, 7.0], "t").unwrap();
        let game = GamGame::new(&spec, &xt, &xr).unwrap();
        let riemann = attribute_aumann_riemann(&game, 17).unwrap();
        let linear = attribute_linear(&xt, &xr, 0.0, &[2.0, 3.0]).unwrap();
        assert_eq!(riemann.values(), linear.values());
    }

    #[test]
    fn ratio_closed_form_matches_hand_computed_cells() {
        let game = success_rate_game();
        let c = attribute_aumann_ratio(game.explicand(), game.reference(), 0, 1).unwrap();
        // Hand-checked against the path-integral closed form.
        assert_abs_diff_eq!(c.get(0, 0), 0.047634, epsilon = 5e-6);
        assert_abs_diff_eq!(c.get(1, 0), 0.428704, epsilon = 5e-6);
        assert_abs_diff_eq!(c.get(0, 1), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.get(1, 1), -0.523957, epsilon = 5e-6);
        assert_abs_diff_eq!(
            c.values().iter().sum::<f64>(),
            100.0 / 150.0 - 50.0 / 70.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ratio_taylor_branch_when_denominator_is_static() {
        let xr = obs(&[10.0, 30.0, 20.0, 40.0], "r");
        let xt = obs(&[16.0, 30.0, 20.0, 40.0], "t");
        let c = attribute_aumann_ratio(&xt, &xr, 0, 1).unwrap();
        // Denominator sums are equal, so numerator cells divide by it.
        assert_abs_diff_eq!(c.get(0, 0), 6.0 / 70.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.get(1, 0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.residual(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ratio_taylor_branch_agrees_with_path_integral_when_numerator_moves() {
        // Denominator mass shifts between cells with the column sum fixed;
        // the numerator column grows. The denominator-side limit must average
        // the numerator over the path, not pin it at the endpoint.
        let spec = ratio_spec();
        let xr = obs(&[10.0, 30.0, 20.0, 40.0], "r");
        let xt = obs(&[16.0, 36.0, 26.0, 34.0], "t");
        let game = GamGame::new(&spec, &xt, &xr).unwrap();
        let closed = attribute_aumann_ratio(&xt, &xr, 0, 1).unwrap();
        let oracle = attribute_aumann_riemann(&game, 400_000).unwrap();
        for (a, b) in closed.values().iter().zip(oracle.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn ratio_rejects_zero_denominator() {
        let xr = obs(&[1.0, 0.0, 1.0, 0.0], "r");
        let xt = obs(&[1.0, 1.0, 1.0, 1.0], "t");
        assert_eq!(
            attribute_aumann_ratio(&xt, &xr, 0, 1).unwrap_err(),
            Error::UndefinedMeasure("reference")
        );
    }

    #[test]
    fn riemann_agrees_with_ratio_closed_form() {
        // The right-endpoint error scales with |dx| * |grad(1) - grad(0)| / 2m;
        // this instance needs about a million steps to get under 1e-6.
        let game = success_rate_game();
        let closed = attribute_aumann_ratio(game.explicand(), game.reference(), 0, 1).unwrap();
        let riemann = attribute_aumann_riemann(&game, 1_000_000).unwrap();
        for (a, b) in closed.values().iter().zip(riemann.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn exact_engine_dummy_cell_gets_zero() {
        let game = success_rate_game();
        // Cell (0, 1) is unchanged (50 -> 50): the dummy axiom forces zero.
        let c = shapley_exact(&game, &EngineConfig::default()).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_abs_diff_eq!(c.residual(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_engine_rows_scope_reports_row_marginals() {
        let game = success_rate_game();
        let config = EngineConfig {
            scope: PlayerScope::Rows,
            ..EngineConfig::default()
        };
        let c = shapley_exact(&game, &config).unwrap();
        let row_totals = c.row_totals();
        assert_abs_diff_eq!(row_totals[0] + row_totals[1], c.delta_y(), epsilon = 1e-12);
        // Two cells of one row share the row player's value evenly.
        assert_abs_diff_eq!(c.get(0, 0), c.get(0, 1), epsilon = 1e-15);
    }

    #[test]
    fn attribute_expected_singleton_equals_baseline() {
        let game = success_rate_game();
        let spec = ratio_spec();
        let config = EngineConfig {
            engine: Engine::Permutation,
            samples: Some(64),
            ..EngineConfig::default()
        };
        let baseline = attribute(
            &spec,
            game.explicand(),
            &ReferenceSpec::Baseline(game.reference().clone()),
            &config,
        )
        .unwrap();
        let expected = attribute(
            &spec,
            game.explicand(),
            &ReferenceSpec::Expected(vec![game.reference().clone()]),
            &config,
        )
        .unwrap();
        assert_eq!(baseline.values(), expected.values());
        assert_eq!(baseline.delta_y(), expected.delta_y());
    }

    #[test]
    fn attribute_expected_linear_averages_references() {
        let spec = MeasureSpec::parse(
            "a + b",
            vec![
                ("a".into(), AggregatorKind::Sum("a".into())),
                ("b".into(), AggregatorKind::Sum("b".into())),
            ],
        )
        .unwrap();
        let cols = vec!["a".to_string(), "b".to_string()];
        let rows = vec!["r1".to_string()];
        let xt = ObservationMatrix::new(rows.clone(), cols.clone(), vec![10.0, 10.0], "t").unwrap();
        let r1 = ObservationMatrix::new(rows.clone(), cols.clone(), vec![2.0, 4.0], "r1").unwrap();
        let r2 = ObservationMatrix::new(rows, cols, vec![4.0, 8.0], "r2").unwrap();
        let c = attribute(
            &spec,
            &xt,
            &ReferenceSpec::Expected(vec![r1, r2]),
            &EngineConfig {
                engine: Engine::Linear,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        // Mean reference is (3, 6), so contributions are (7, 4).
        assert_abs_diff_eq!(c.get(0, 0), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(0, 1), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.delta_y(), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn attribute_rejects_engine_class_mismatch() {
        let spec = ratio_spec();
        let game = success_rate_game();
        let err = attribute(
            &spec,
            game.explicand(),
            &ReferenceSpec::Baseline(game.reference().clone()),
            &EngineConfig {
                engine: Engine::Linear,
                ..EngineConfig::default()
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::EngineMismatch {
                engine: "linear".into(),
                class: "ratio".into()
            }
        );
    }

    #[test]
    fn opaque_measures_run_through_the_game_engines() {
        // A non-differentiable black box still gets a complete, fair split
        // from the enumeration engine.
        let spec = MeasureSpec::opaque(
            crate::expr::OpaqueMeasure::new(|vals| Ok(vals[0].max(2.0 * vals[1]))),
            vec![
                ("a".into(), AggregatorKind::Sum("a".into())),
                ("b".into(), AggregatorKind::Sum("b".into())),
            ],
        );
        let rows = vec!["r1".to_string(), "r2".to_string()];
        let cols = vec!["a".to_string(), "b".to_string()];
        let xr = ObservationMatrix::new(rows.clone(), cols.clone(), vec![5.0, 1.0, 4.0, 1.0], "r")
            .unwrap();
        let xt = xr.with_values(vec![2.0, 4.0, 1.0, 3.0], "t").unwrap();
        let game = GamGame::new(&spec, &xt, &xr).unwrap();
        let c = shapley_exact(&game, &EngineConfig::default()).unwrap();
        assert_abs_diff_eq!(c.values().iter().sum::<f64>(), c.delta_y(), epsilon = 1e-12);
        let err = attribute_aumann_riemann(&game, 10).unwrap_err();
        assert!(matches!(err, Error::EngineMismatch { .. }));
    }

    #[test]
    fn permutation_engine_is_seed_deterministic() {
        let game = success_rate_game();
        let config = EngineConfig {
            engine: Engine::Permutation,
            samples: Some(100),
            ..EngineConfig::default()
        };
        let a = shapley_permutation(&game, &config).unwrap();
        let b = shapley_permutation(&game, &config).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn engines_agree_exactly_on_linear_measures() {
        // A linear measure makes the coalition game additive, so exact
        // enumeration and the kernel regression both land on the closed form.
        let spec = MeasureSpec::parse(
            "2*a + 0.5*b",
            vec![
                ("a".into(), AggregatorKind::Sum("a".into())),
                ("b".into(), AggregatorKind::Sum("b".into())),
            ],
        )
        .unwrap();
        let rows = vec!["r1".to_string(), "r2".to_string()];
        let cols = vec!["a".to_string(), "b".to_string()];
        let xr = ObservationMatrix::new(rows.clone(), cols.clone(), vec![1.0, 8.0, 3.0, 2.0], "r")
            .unwrap();
        let xt = xr.with_values(vec![5.0, 6.0, 3.0, 7.0], "t").unwrap();
        let game = GamGame::new(&spec, &xt, &xr).unwrap();
        let closed = attribute_linear(&xt, &xr, 0.0, &[2.0, 0.5]).unwrap();
        let exact = shapley_exact(&game, &EngineConfig::default()).unwrap();
        let kernel = shapley_kernel(&game, &EngineConfig::default()).unwrap();
        for c in [&exact, &kernel] {
            for (got, want) in c.values().iter().zip(closed.values()) {
                assert_abs_diff_eq!(*got, *want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kernel_engine_matches_exact_on_small_game() {
        let game = success_rate_game();
        let exact = shapley_exact(&game, &EngineConfig::default()).unwrap();
        let kernel = shapley_kernel(&game, &EngineConfig::default()).unwrap();
        for (a, b) in exact.values().iter().zip(kernel.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        assert_eq!(kernel.residual(), 0.0);
    }
}

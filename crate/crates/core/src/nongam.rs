//! Attribution for measures that do not aggregate additively.
//!
//! Pre-aggregating into an observation matrix is unsound for aggregators like
//! `count_distinct`, so the coalition game is played on the raw records
//! instead: for each sub-measure, a coalition decides per sub-cube whether
//! that sub-cube's records come from the target time step or the reference
//! time step, and the sub-measure is re-aggregated over the mixed record set
//! on every evaluation. Only the cell-level exact and permutation engines
//! apply; the gradient-based shortcuts do not exist here.
//!
//! Coalition record sets are realised as index lists over the immutable
//! store, never copied rows, and evaluations are memoized per coalition mask
//! within one attribution call.

use dashmap::DashMap;

use crate::cube::{aggregate_cell, select, RecordStore};
use crate::error::{Error, Result};
use crate::expr::MeasureSpec;
use crate::gam::derive_seed;
use crate::game::{self, Coalition, KahanSum, SampleConfig, DEFAULT_PERMUTATION_SAMPLES};
use crate::model::{CoalitionMask, ContributionMatrix, DrillPartition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonGamEngine {
    Exact,
    Permutation,
}

impl NonGamEngine {
    pub fn tag(&self) -> &'static str {
        match self {
            NonGamEngine::Exact => "nongam-exact",
            NonGamEngine::Permutation => "nongam-permutation",
        }
    }
}

#[derive(Clone, Debug)]
pub struct NonGamConfig {
    pub engine: NonGamEngine,
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for NonGamConfig {
    fn default() -> Self {
        Self {
            engine: NonGamEngine::Exact,
            samples: None,
            seed: 42,
        }
    }
}

/// Record-level coalition game between two time steps of a store.
pub struct NonGamGame<'a> {
    store: &'a RecordStore,
    partition: &'a DrillPartition,
    spec: &'a MeasureSpec,
    target_indexes: Vec<Vec<usize>>,
    reference_indexes: Vec<Vec<usize>>,
    reference_inputs: Vec<f64>,
}

impl<'a> NonGamGame<'a> {
    pub fn new(
        store: &'a RecordStore,
        partition: &'a DrillPartition,
        spec: &'a MeasureSpec,
        target_label: &str,
        reference_label: &str,
    ) -> Result<Self> {
        let mut target_indexes = Vec::with_capacity(partition.len());
        let mut reference_indexes = Vec::with_capacity(partition.len());
        for child in partition.children() {
            target_indexes.push(select(store, child, target_label)?);
            reference_indexes.push(select(store, child, reference_label)?);
        }
        let mut reference_inputs = Vec::with_capacity(spec.q());
        let all_reference: Vec<usize> = reference_indexes.iter().flatten().copied().collect();
        for (_, agg) in spec.sub_measures() {
            reference_inputs.push(aggregate_cell(store, &all_reference, agg)?);
        }
        Ok(Self {
            store,
            partition,
            spec,
            target_indexes,
            reference_indexes,
            reference_inputs,
        })
    }

    pub fn p(&self) -> usize {
        self.partition.len()
    }

    pub fn q(&self) -> usize {
        self.spec.q()
    }

    /// Record indexes that feed sub-measure `measure_idx` under the mask:
    /// per sub-cube, the target records when selected, else the reference
    /// records. Sub-cubes are disjoint and the two time steps are distinct,
    /// so the union needs no dedup.
    pub fn build_coalition_dataset(&self, mask: &CoalitionMask, measure_idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for u in 0..self.p() {
            let side = if mask.get(u, measure_idx) {
                &self.target_indexes[u]
            } else {
                &self.reference_indexes[u]
            };
            out.extend_from_slice(side);
        }
        out
    }

    /// Worth of a coalition: the measure evaluated on per-sub-measure mixed
    /// record sets, relative to the all-reference state.
    pub fn set_function(&self, mask: &CoalitionMask) -> Result<f64> {
        if mask.p() != self.p() || mask.q() != self.q() {
            return Err(Error::ShapeMismatch(mask.p(), mask.q(), self.p(), self.q()));
        }
        let mut inputs = Vec::with_capacity(self.q());
        for (v, (_, agg)) in self.spec.sub_measures().iter().enumerate() {
            let subset = self.build_coalition_dataset(mask, v);
            inputs.push(aggregate_cell(self.store, &subset, agg)?);
        }
        Ok(self.spec.evaluate_at(&inputs)? - self.spec.evaluate_at(&self.reference_inputs)?)
    }

    /// Total change between the two time steps.
    pub fn delta_y(&self) -> Result<f64> {
        self.set_function(&CoalitionMask::full(self.p(), self.q()))
    }

    /// Cells whose column values are identical (as multisets) on both time
    /// steps contribute nothing to any coalition; they are pruned before the
    /// game to keep the player count down.
    fn dummy_cells(&self) -> Vec<bool> {
        let (p, q) = (self.p(), self.q());
        let mut dummy = vec![false; p * q];
        for u in 0..p {
            for (v, (_, agg)) in self.spec.sub_measures().iter().enumerate() {
                let column = agg.column();
                let idx = self.store.measure_names().iter().position(|m| m == column);
                let Some(idx) = idx else { continue };
                let mut t_values: Vec<Option<&str>> = self.target_indexes[u]
                    .iter()
                    .map(|&r| self.store.record_measure(r, idx))
                    .collect();
                let mut r_values: Vec<Option<&str>> = self.reference_indexes[u]
                    .iter()
                    .map(|&r| self.store.record_measure(r, idx))
                    .collect();
                t_values.sort_unstable();
                r_values.sort_unstable();
                dummy[u * q + v] = t_values == r_values;
            }
        }
        dummy
    }
}

/// Shapley attribution with players = (sub-cube, sub-measure) cells over the
/// record-level game. Expected mode averages one game per reference label.
pub fn attribute_nongam(
    store: &RecordStore,
    partition: &DrillPartition,
    spec: &MeasureSpec,
    target_label: &str,
    reference_labels: &[String],
    config: &NonGamConfig,
) -> Result<ContributionMatrix> {
    if reference_labels.is_empty() {
        return Err(Error::InvalidConfig(
            "non-GAM attribution needs at least one reference time step".into(),
        ));
    }
    let (p, q) = (partition.len(), spec.q());
    let mut value_acc = vec![KahanSum::default(); p * q];
    let mut delta_acc = KahanSum::default();

    for (ref_idx, reference_label) in reference_labels.iter().enumerate() {
        let game = NonGamGame::new(store, partition, spec, target_label, reference_label)?;
        let dummy = game.dummy_cells();
        let players: Vec<usize> = (0..p * q).filter(|&cell| !dummy[cell]).collect();
        let n = players.len();

        let to_mask = |coalition: &Coalition| {
            let mut mask = CoalitionMask::empty(p, q);
            for (player, &cell) in players.iter().enumerate() {
                if coalition.contains(player) {
                    mask.set(cell / q, cell % q, true);
                }
            }
            mask
        };
        let memo: DashMap<Vec<u64>, f64> = DashMap::new();
        let sigma = |coalition: &Coalition| -> Result<f64> {
            if let Some(hit) = memo.get(coalition.key()) {
                return Ok(*hit);
            }
            let value = game.set_function(&to_mask(coalition))?;
            memo.insert(coalition.key().to_vec(), value);
            Ok(value)
        };

        let psi = match config.engine {
            NonGamEngine::Exact => game::shapley_exact(n, sigma)?,
            NonGamEngine::Permutation => game::shapley_permutation(
                n,
                sigma,
                &SampleConfig {
                    samples: config.samples.unwrap_or(DEFAULT_PERMUTATION_SAMPLES),
                    seed: derive_seed(config.seed, ref_idx as u64),
                },
            )?,
        };
        for (player, &cell) in players.iter().enumerate() {
            value_acc[cell].add(psi[player]);
        }
        delta_acc.add(game.delta_y()?);
    }

    let count = reference_labels.len() as f64;
    let values: Vec<f64> = value_acc.iter().map(|acc| acc.value() / count).collect();
    let delta_y = delta_acc.value() / count;
    let mut sum = KahanSum::default();
    for v in &values {
        sum.add(*v);
    }
    ContributionMatrix::new(
        partition.child_labels().to_vec(),
        spec.column_names().to_vec(),
        values,
        delta_y,
        sum.value() - delta_y,
        config.engine.tag(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::AggregatorKind;
    use crate::model::{partition, CubePredicate};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    /// Two-page view store: reference has user u1 on p1 and u2 on p2; the
    /// target lost p1's only viewer.
    fn dau_toy_store() -> RecordStore {
        let mut store = RecordStore::new(vec!["page".into()], vec!["user_id".into()]).unwrap();
        for (t, page, user) in [("r", "p1", "u1"), ("r", "p2", "u2"), ("t", "p2", "u2")] {
            store
                .push(t, vec![page.into()], vec![Some(user.into())])
                .unwrap();
        }
        store
    }

    fn dau_spec() -> MeasureSpec {
        MeasureSpec::parse(
            "dau",
            vec![(
                "dau".into(),
                AggregatorKind::CountDistinct("user_id".into()),
            )],
        )
        .unwrap()
    }

    fn page_partition(store: &RecordStore) -> DrillPartition {
        let drill: BTreeSet<String> = ["page".to_string()].into();
        partition(
            &CubePredicate::wildcard(&["page"]),
            &drill,
            &store.observed_values(&drill).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn coalition_dataset_edges() {
        let store = dau_toy_store();
        let part = page_partition(&store);
        let spec = dau_spec();
        let game = NonGamGame::new(&store, &part, &spec, "t", "r").unwrap();

        let full = game.build_coalition_dataset(&CoalitionMask::full(2, 1), 0);
        assert_eq!(full, vec![2]); // exactly the target records
        let empty = game.build_coalition_dataset(&CoalitionMask::empty(2, 1), 0);
        assert_eq!(empty, vec![0, 1]); // exactly the reference records
        let mut p1_only = CoalitionMask::empty(2, 1);
        p1_only.set(0, 0, true);
        let mixed = game.build_coalition_dataset(&p1_only, 0);
        assert_eq!(mixed, vec![1]); // target p1 (none) plus reference p2
    }

    #[test]
    fn set_function_on_dau_toy() {
        let store = dau_toy_store();
        let part = page_partition(&store);
        let spec = dau_spec();
        let game = NonGamGame::new(&store, &part, &spec, "t", "r").unwrap();

        let mut p1 = CoalitionMask::empty(2, 1);
        p1.set(0, 0, true);
        assert_eq!(game.set_function(&p1).unwrap(), -1.0);

        let mut p2 = CoalitionMask::empty(2, 1);
        p2.set(1, 0, true);
        assert_eq!(game.set_function(&p2).unwrap(), 0.0);

        assert_eq!(game.set_function(&CoalitionMask::full(2, 1)).unwrap(), -1.0);
        assert_eq!(game.set_function(&CoalitionMask::empty(2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn exact_attribution_on_dau_toy() {
        let store = dau_toy_store();
        let part = page_partition(&store);
        let spec = dau_spec();
        let c = attribute_nongam(
            &store,
            &part,
            &spec,
            "t",
            &["r".to_string()],
            &NonGamConfig::default(),
        )
        .unwrap();
        assert_eq!(c.get(0, 0), -1.0); // p1 lost its viewer
        assert_eq!(c.get(1, 0), 0.0); // p2 unchanged
        assert_eq!(c.delta_y(), -1.0);
        assert_eq!(c.method(), "nongam-exact");
    }

    #[test]
    fn identical_timesteps_give_zero_matrix() {
        let store = dau_toy_store();
        let part = page_partition(&store);
        let spec = dau_spec();
        let c = attribute_nongam(
            &store,
            &part,
            &spec,
            "r",
            &["r".to_string()],
            &NonGamConfig::default(),
        )
        .unwrap();
        assert_eq!(c.values(), &[0.0, 0.0]);
        assert_eq!(c.delta_y(), 0.0);
    }

    #[test]
    fn additive_spec_matches_gam_pipeline() {
        // sum/count aggregators: the record-level game must coincide with
        // exact Shapley on pre-aggregated matrices.
        let mut store =
            RecordStore::new(vec!["dc".into()], vec!["amount".into(), "rid".into()]).unwrap();
        let rows = [
            ("r", "a", "3"),
            ("r", "a", "5"),
            ("r", "b", "2"),
            ("t", "a", "9"),
            ("t", "b", "1"),
            ("t", "b", "4"),
        ];
        for (i, (t, dc, amount)) in rows.iter().enumerate() {
            store
                .push(
                    *t,
                    vec![dc.to_string()],
                    vec![Some(amount.to_string()), Some(i.to_string())],
                )
                .unwrap();
        }
        let spec = MeasureSpec::parse(
            "total / cnt",
            vec![
                ("total".into(), AggregatorKind::Sum("amount".into())),
                ("cnt".into(), AggregatorKind::Count("rid".into())),
            ],
        )
        .unwrap();
        let drill: BTreeSet<String> = ["dc".to_string()].into();
        let part = partition(
            &CubePredicate::wildcard(&["dc"]),
            &drill,
            &store.observed_values(&drill).unwrap(),
        )
        .unwrap();

        let nongam = attribute_nongam(
            &store,
            &part,
            &spec,
            "t",
            &["r".to_string()],
            &NonGamConfig::default(),
        )
        .unwrap();

        let xr = crate::cube::build_observation_matrix(&store, &part, &spec, "r").unwrap();
        let xt = crate::cube::build_observation_matrix(&store, &part, &spec, "t").unwrap();
        let game = crate::gam::GamGame::new(&spec, &xt, &xr).unwrap();
        let gam = crate::gam::shapley_exact(&game, &Default::default()).unwrap();

        for (a, b) in nongam.values().iter().zip(gam.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(nongam.delta_y(), gam.delta_y(), epsilon = 1e-12);
    }

    #[test]
    fn dummy_pruning_matches_unpruned_values() {
        // Page p2 is identical on both sides and must be pruned to an exact
        // zero; the remaining players keep their full-game values.
        let store = dau_toy_store();
        let part = page_partition(&store);
        let spec = dau_spec();
        let game = NonGamGame::new(&store, &part, &spec, "t", "r").unwrap();
        let dummy = game.dummy_cells();
        assert_eq!(dummy, vec![false, true]);

        // Brute force over all four masks without pruning.
        let psi_unpruned = game::shapley_exact(2, |c| {
            let mut mask = CoalitionMask::empty(2, 1);
            for cell in 0..2 {
                if c.contains(cell) {
                    mask.set(cell, 0, true);
                }
            }
            game.set_function(&mask)
        })
        .unwrap();
        let c = attribute_nongam(
            &store,
            &part,
            &spec,
            "t",
            &["r".to_string()],
            &NonGamConfig::default(),
        )
        .unwrap();
        assert_eq!(c.get(0, 0), psi_unpruned[0]);
        assert_eq!(c.get(1, 0), psi_unpruned[1]);
    }

    #[test]
    fn too_many_players_is_rejected() {
        let mut store = RecordStore::new(vec!["k".into()], vec!["v".into()]).unwrap();
        for i in 0..25 {
            store
                .push("r", vec![format!("k{i:02}")], vec![Some("1".into())])
                .unwrap();
            store
                .push("t", vec![format!("k{i:02}")], vec![Some("2".into())])
                .unwrap();
        }
        let spec = MeasureSpec::parse(
            "v",
            vec![("v".into(), AggregatorKind::CountDistinct("v".into()))],
        )
        .unwrap();
        let drill: BTreeSet<String> = ["k".to_string()].into();
        let part = partition(
            &CubePredicate::wildcard(&["k"]),
            &drill,
            &store.observed_values(&drill).unwrap(),
        )
        .unwrap();
        let err = attribute_nongam(
            &store,
            &part,
            &spec,
            "t",
            &["r".to_string()],
            &NonGamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooManyPlayers { .. }));
    }
}

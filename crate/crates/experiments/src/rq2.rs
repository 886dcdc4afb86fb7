//! Distinct-count (daily active users) simulation.
//!
//! A site has a handful of pages and many users; activity is the distinct
//! count of users with at least one page view, a non-additive aggregate.
//! Each repetition suppresses the view probability of a few faulty pages by
//! a decay factor, samples one anomalous fact table plus a set of normal
//! reference tables, attributes the activity drop per page through the
//! record-level game in expected mode, and checks whether the most negative
//! contributors are exactly the faulty pages.
//!
//! Fault severity scales with the decay factor: the faulty view probability
//! is `base * (1 - decay)`, so `decay = 1` is a full outage and small decays
//! are subtle faults that can hide inside sampling noise.

use attrib_core::cube::{AggregatorKind, RecordStore};
use attrib_core::expr::MeasureSpec;
use attrib_core::model::{partition, CubePredicate};
use attrib_core::nongam::{attribute_nongam, NonGamConfig, NonGamEngine};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{mean_and_std_err, MetricPoint, MetricReport, Result};

#[derive(Clone, Debug)]
pub struct DauSimConfig {
    pub pages: usize,
    pub users: usize,
    pub base_view_prob: f64,
    /// Decay factors to sweep; larger means a more severe fault.
    pub decay_grid: Vec<f64>,
    /// The number of faulty pages is drawn uniformly from these choices.
    pub faulty_page_choices: Vec<usize>,
    pub reference_samples: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for DauSimConfig {
    fn default() -> Self {
        Self {
            pages: 5,
            users: 10_000,
            base_view_prob: 0.05,
            decay_grid: (1..=10).map(|i| i as f64 / 10.0).collect(),
            faulty_page_choices: vec![1, 2, 3],
            reference_samples: 10,
            repetitions: 20,
            seed: 42,
        }
    }
}

/// Runs the sweep and reports the mean localisation accuracy per decay
/// factor: the fraction of faulty pages recovered among the top
/// most-negative contributors.
pub fn run_dau_sim(config: &DauSimConfig) -> Result<MetricReport> {
    let mut points = Vec::with_capacity(config.decay_grid.len());
    for (decay_idx, &decay) in config.decay_grid.iter().enumerate() {
        let mut accuracies = Vec::with_capacity(config.repetitions);
        for rep in 0..config.repetitions {
            let stream = (decay_idx * config.repetitions + rep) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream);
            accuracies.push(single_run(config, decay, &mut rng)?);
        }
        let (mean, std_err) = mean_and_std_err(&accuracies);
        points.push(MetricPoint {
            x: decay,
            mean,
            std_err,
            repetitions: config.repetitions,
        });
    }
    Ok(MetricReport {
        experiment: "active-users-simulation".into(),
        x_label: "decay_factor".into(),
        y_label: "accuracy".into(),
        seed: config.seed,
        points,
    })
}

fn single_run(config: &DauSimConfig, decay: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let faulty_count = *config
        .faulty_page_choices
        .get(rng.random_range(0..config.faulty_page_choices.len()))
        .expect("non-empty faulty page choices");
    let mut page_pool: Vec<usize> = (0..config.pages).collect();
    let (sampled, _) = page_pool.partial_shuffle(rng, faulty_count);
    let mut faulty = vec![false; config.pages];
    for &page in sampled.iter() {
        faulty[page] = true;
    }

    let mut store = RecordStore::new(vec!["page".into()], vec!["user_id".into()])?;
    let faulty_prob = config.base_view_prob * (1.0 - decay);
    sample_views(
        &mut store,
        "anomaly",
        config,
        Some((&faulty, faulty_prob)),
        rng,
    )?;
    let reference_labels: Vec<String> = (0..config.reference_samples)
        .map(|i| format!("ref{i:02}"))
        .collect();
    for label in &reference_labels {
        sample_views(&mut store, label, config, None, rng)?;
    }

    let drill = ["page".to_string()].into();
    let part = partition(
        &CubePredicate::wildcard(&["page"]),
        &drill,
        &store.observed_values(&drill)?,
    )?;
    let spec = MeasureSpec::parse(
        "active_users",
        vec![(
            "active_users".into(),
            AggregatorKind::CountDistinct("user_id".into()),
        )],
    )?;
    let contribution = attribute_nongam(
        &store,
        &part,
        &spec,
        "anomaly",
        &reference_labels,
        &NonGamConfig {
            engine: NonGamEngine::Exact,
            samples: None,
            seed: config.seed,
        },
    )?;

    // Most negative contributors first, label order on ties.
    let mut ranked: Vec<(usize, f64)> = contribution
        .rows()
        .iter()
        .enumerate()
        .map(|(u, label)| {
            let page: usize = label[1..].parse().expect("page label");
            (page, contribution.get(u, 0))
        })
        .collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
    let hits = ranked
        .iter()
        .take(faulty_count)
        .filter(|(page, _)| faulty[*page])
        .count();
    Ok(hits as f64 / faulty_count as f64)
}

/// Samples one fact table: a record per (user, page) view.
fn sample_views(
    store: &mut RecordStore,
    label: &str,
    config: &DauSimConfig,
    fault: Option<(&[bool], f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for page in 0..config.pages {
        let prob = match fault {
            Some((faulty, faulty_prob)) if faulty[page] => faulty_prob,
            _ => config.base_view_prob,
        };
        let page_label = format!("p{page:02}");
        for user in 0..config.users {
            if rng.random::<f64>() < prob {
                store.push(
                    label,
                    vec![page_label.clone()],
                    vec![Some(format!("u{user:05}"))],
                )?;
            }
        }
    }
    Ok(())
}

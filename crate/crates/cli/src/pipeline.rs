//! Attribution run orchestration shared by the `attribute` and `rank`
//! commands: ingest, partition, route to an engine, produce the matrix.

use std::fs::File;

use attrib_core::cube::{build_observation_matrix, RecordStore};
use attrib_core::expr::{MeasureClass, MeasureSpec};
use attrib_core::gam::{self, Engine, EngineConfig, ReferenceSpec};
use attrib_core::model::{partition, ContributionMatrix, CubePredicate};
use attrib_core::nongam::{attribute_nongam, NonGamConfig, NonGamEngine};
use attrib_core::Error;

use crate::config::{EngineChoice, RunConfig};
use crate::CliError;

pub fn run_attribution(config: &RunConfig) -> Result<ContributionMatrix, CliError> {
    let file = File::open(&config.input)
        .map_err(|e| CliError::io("ingest", &config.input.display().to_string(), e))?;
    let store = RecordStore::from_csv(
        file,
        &config.timestep_column,
        &config.attributes,
        &config.sub_measure_columns(),
    )
    .map_err(|e| CliError::core("ingest", e))?;
    if store.is_empty() {
        return Err(CliError::core(
            "ingest",
            Error::InvalidConfig("no records in input".into()),
        ));
    }
    let timesteps = store.timesteps();
    for label in std::iter::once(&config.explicand).chain(config.references.iter()) {
        if !timesteps.contains(label) {
            return Err(CliError::core(
                "ingest",
                Error::InvalidConfig(format!("time step `{label}` does not occur in the input")),
            ));
        }
    }

    let spec = MeasureSpec::parse(&config.measure, config.sub_measures.clone())
        .map_err(|e| CliError::core("configure", e))?;
    let parent = CubePredicate::wildcard(&config.attributes);
    let observed = store
        .observed_values(&config.drill)
        .map_err(|e| CliError::core("configure", e))?;
    let part =
        partition(&parent, &config.drill, &observed).map_err(|e| CliError::core("configure", e))?;

    let matrix = if spec.all_additive() {
        let engine = match config.engine {
            EngineChoice::Named(engine) => engine,
            EngineChoice::Auto => match spec.class() {
                MeasureClass::Linear { .. } => Engine::Linear,
                MeasureClass::Ratio { .. } => Engine::AumannRatio,
                _ => Engine::AumannRiemann,
            },
        };
        let explicand = build_observation_matrix(&store, &part, &spec, &config.explicand)
            .map_err(|e| CliError::core("aggregate", e))?;
        let references = config
            .references
            .iter()
            .map(|label| build_observation_matrix(&store, &part, &spec, label))
            .collect::<attrib_core::Result<Vec<_>>>()
            .map_err(|e| CliError::core("aggregate", e))?;
        let reference = if references.len() == 1 {
            ReferenceSpec::Baseline(references.into_iter().next().expect("one reference"))
        } else {
            ReferenceSpec::Expected(references)
        };
        gam::attribute(
            &spec,
            &explicand,
            &reference,
            &EngineConfig {
                engine,
                samples: config.samples,
                riemann_steps: config.riemann_steps,
                seed: config.seed,
                scope: config.scope,
            },
        )
        .map_err(|e| CliError::core("attribute", e))?
    } else {
        let engine = match config.engine {
            EngineChoice::Auto => {
                if part.len() * spec.q() <= attrib_core::game::EXACT_PLAYER_LIMIT {
                    NonGamEngine::Exact
                } else {
                    NonGamEngine::Permutation
                }
            }
            EngineChoice::Named(Engine::Exact) => NonGamEngine::Exact,
            EngineChoice::Named(Engine::Permutation) => NonGamEngine::Permutation,
            EngineChoice::Named(other) => {
                return Err(CliError::core(
                    "configure",
                    Error::EngineMismatch {
                        engine: other.tag().into(),
                        class: "non-additive aggregation".into(),
                    },
                ))
            }
        };
        attribute_nongam(
            &store,
            &part,
            &spec,
            &config.explicand,
            &config.references,
            &NonGamConfig {
                engine,
                samples: config.samples,
                seed: config.seed,
            },
        )
        .map_err(|e| CliError::core("attribute", e))?
    };
    Ok(matrix)
}

impl RunConfig {
    fn sub_measure_columns(&self) -> Vec<String> {
        let mut columns: Vec<String> = Vec::new();
        for (_, agg) in &self.sub_measures {
            let col = agg.column().to_string();
            if !columns.contains(&col) {
                columns.push(col);
            }
        }
        // avg(...) sugar references raw columns that may not be declared as
        // sub-measures; pull them out of the measure text lazily by letting
        // the parser declare them, then collect the extra columns.
        if let Ok(parsed) = attrib_core::expr::parse_measure(
            &self.measure,
            &self
                .sub_measures
                .iter()
                .map(|(n, _)| n.clone())
                .collect::<Vec<_>>(),
        ) {
            for (_, agg) in parsed.extra_decls {
                let col = agg.column().to_string();
                if !columns.contains(&col) {
                    columns.push(col);
                }
            }
        }
        columns
    }
}

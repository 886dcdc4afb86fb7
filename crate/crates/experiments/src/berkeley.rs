//! Admission-rate decomposition on the classic 1973 graduate-admissions
//! dataset, the textbook instance of an aggregate trend reversing at the
//! group level.
//!
//! The female applicant pool is the explicand, the male pool the reference,
//! and the admission rate (admitted / applicants) is decomposed per
//! department and sub-measure with the ratio closed form. The resulting
//! table explains the aggregate gap as a compositional effect: the
//! applicant-mix column pushes the rate up while the admitted column pulls
//! it down, with the two largest departments carrying most of it.

use attrib_core::cube::{build_observation_matrix, AggregatorKind, RecordStore};
use attrib_core::expr::MeasureSpec;
use attrib_core::gam::{attribute, Engine, EngineConfig, ReferenceSpec};
use attrib_core::model::{partition, ContributionMatrix, CubePredicate};
use attrib_core::report::{render_aligned, round_half_away};

use crate::metrics::Result;

/// Department, then (male applicants, male admitted, female applicants,
/// female admitted).
pub const ADMISSIONS: [(&str, [u32; 4]); 6] = [
    ("A", [825, 512, 108, 89]),
    ("B", [560, 353, 25, 17]),
    ("C", [325, 120, 593, 201]),
    ("D", [417, 138, 375, 131]),
    ("E", [191, 53, 393, 94]),
    ("F", [373, 22, 341, 25]),
];

/// The admissions data as a record store, one row per (department, gender),
/// with gender as the time-step axis.
pub fn admissions_store() -> RecordStore {
    let mut store = RecordStore::new(
        vec!["department".into()],
        vec!["applicants".into(), "admitted".into()],
    )
    .expect("distinct column names");
    for (dept, [male_app, male_adm, female_app, female_adm]) in ADMISSIONS {
        for (gender, app, adm) in [
            ("male", male_app, male_adm),
            ("female", female_app, female_adm),
        ] {
            store
                .push(
                    gender,
                    vec![dept.to_string()],
                    vec![Some(app.to_string()), Some(adm.to_string())],
                )
                .expect("consistent arity");
        }
    }
    store
}

/// Decomposes the female-vs-male admission-rate gap over departments and
/// sub-measures with the ratio closed form.
pub fn run_berkeley() -> Result<ContributionMatrix> {
    let store = admissions_store();
    let spec = MeasureSpec::parse(
        "admitted / applicants",
        vec![
            (
                "applicants".into(),
                AggregatorKind::Sum("applicants".into()),
            ),
            ("admitted".into(), AggregatorKind::Sum("admitted".into())),
        ],
    )?;
    let drill = ["department".to_string()].into();
    let part = partition(
        &CubePredicate::wildcard(&["department"]),
        &drill,
        &store.observed_values(&drill)?,
    )?;
    let reference = build_observation_matrix(&store, &part, &spec, "male")?;
    let explicand = build_observation_matrix(&store, &part, &spec, "female")?;
    let contribution = attribute(
        &spec,
        &explicand,
        &ReferenceSpec::Baseline(reference),
        &EngineConfig {
            engine: Engine::AumannRatio,
            ..EngineConfig::default()
        },
    )?;
    Ok(contribution)
}

fn percent(x: f64) -> String {
    format!("{:+.2}%", round_half_away(x * 100.0, 2))
}

/// Renders the contribution matrix as a percentage table with per-department
/// and per-sub-measure totals.
pub fn berkeley_table(contribution: &ContributionMatrix) -> String {
    let mut header = vec!["department".to_string()];
    header.extend(contribution.cols().iter().cloned());
    header.push("total".into());

    let row_totals = contribution.row_totals();
    let mut body: Vec<Vec<String>> = contribution
        .rows()
        .iter()
        .enumerate()
        .map(|(u, dept)| {
            let mut line = vec![dept.clone()];
            line.extend((0..contribution.q()).map(|v| percent(contribution.get(u, v))));
            line.push(percent(row_totals[u]));
            line
        })
        .collect();
    let mut totals = vec!["(total)".to_string()];
    totals.extend(contribution.col_totals().iter().map(|v| percent(*v)));
    totals.push(percent(contribution.delta_y()));
    body.push(totals);
    render_aligned(&header, &body)
}

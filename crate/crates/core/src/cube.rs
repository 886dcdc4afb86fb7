//! Record ingestion, cube selection and aggregation into observation
//! matrices.
//!
//! Records are loaded fully into memory and immutable afterwards. Time steps
//! are opaque labels: callers bind whatever windowing they want to a label at
//! ingestion time.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io;

use crate::error::{Error, Result};
use crate::expr::MeasureSpec;
use crate::model::{CubePredicate, DrillPartition, ObservationMatrix};

/// Aggregation function binding a sub-measure to a record column.
///
/// `sum` and `count` are additive under cube partitioning; `count_distinct`
/// is not, which routes the whole measure through the record-level game.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AggregatorKind {
    Sum(String),
    Count(String),
    CountDistinct(String),
}

impl AggregatorKind {
    pub fn column(&self) -> &str {
        match self {
            AggregatorKind::Sum(c)
            | AggregatorKind::Count(c)
            | AggregatorKind::CountDistinct(c) => c,
        }
    }

    pub fn is_additive(&self) -> bool {
        !matches!(self, AggregatorKind::CountDistinct(_))
    }

    /// Parses the `<agg>(<column>)` form used by configuration files.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let open = text.find('(').ok_or_else(|| {
            Error::InvalidConfig(format!(
                "expected aggregator like sum(column), got `{text}`"
            ))
        })?;
        if !text.ends_with(')') {
            return Err(Error::InvalidConfig(format!(
                "unbalanced parenthesis in aggregator `{text}`"
            )));
        }
        let name = text[..open].trim();
        let column = text[open + 1..text.len() - 1].trim();
        if column.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "aggregator `{text}` is missing its column"
            )));
        }
        match name {
            "sum" => Ok(AggregatorKind::Sum(column.into())),
            "count" => Ok(AggregatorKind::Count(column.into())),
            "count_distinct" => Ok(AggregatorKind::CountDistinct(column.into())),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregator `{other}` (expected sum, count or count_distinct)"
            ))),
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregatorKind::Sum(c) => write!(f, "sum({c})"),
            AggregatorKind::Count(c) => write!(f, "count({c})"),
            AggregatorKind::CountDistinct(c) => write!(f, "count_distinct({c})"),
        }
    }
}

/// One transactional record: a time-step label, one value per attribute and
/// an optional value per measure column (absent = null).
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    timestep: String,
    attrs: Vec<String>,
    measures: Vec<Option<String>>,
}

/// Immutable store of transactional records with named attribute and measure
/// columns.
#[derive(Clone, Debug, Default)]
pub struct RecordStore {
    attr_names: Vec<String>,
    measure_names: Vec<String>,
    records: Vec<Record>,
}

impl RecordStore {
    pub fn new(attr_names: Vec<String>, measure_names: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for name in attr_names.iter().chain(measure_names.iter()) {
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateAttribute(name.clone()));
            }
        }
        Ok(Self {
            attr_names,
            measure_names,
            records: Vec::new(),
        })
    }

    pub fn push(
        &mut self,
        timestep: impl Into<String>,
        attrs: Vec<String>,
        measures: Vec<Option<String>>,
    ) -> Result<()> {
        if attrs.len() != self.attr_names.len() {
            return Err(Error::RecordArity {
                kind: "attribute",
                expected: self.attr_names.len(),
                got: attrs.len(),
            });
        }
        if measures.len() != self.measure_names.len() {
            return Err(Error::RecordArity {
                kind: "measure",
                expected: self.measure_names.len(),
                got: measures.len(),
            });
        }
        self.records.push(Record {
            timestep: timestep.into(),
            attrs,
            measures,
        });
        Ok(())
    }

    /// Reads CSV with a header row. `timestep_col` designates the time-step
    /// label column; the empty string is a null measure value.
    pub fn from_csv(
        reader: impl io::Read,
        timestep_col: &str,
        attr_cols: &[String],
        measure_cols: &[String],
    ) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new().from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let col_index = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))
        };
        let t_idx = col_index(timestep_col)?;
        let attr_idx: Vec<usize> = attr_cols
            .iter()
            .map(|c| col_index(c))
            .collect::<Result<_>>()?;
        let measure_idx: Vec<usize> = measure_cols
            .iter()
            .map(|c| col_index(c))
            .collect::<Result<_>>()?;

        let mut store = Self::new(attr_cols.to_vec(), measure_cols.to_vec())?;
        for row in csv_reader.records() {
            let row = row?;
            let attrs = attr_idx
                .iter()
                .map(|&i| row.get(i).unwrap_or("").to_string())
                .collect();
            let measures = measure_idx
                .iter()
                .map(|&i| match row.get(i) {
                    None | Some("") => None,
                    Some(v) => Some(v.to_string()),
                })
                .collect();
            store.push(row.get(t_idx).unwrap_or("").to_string(), attrs, measures)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn measure_names(&self) -> &[String] {
        &self.measure_names
    }

    pub fn timesteps(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.timestep.clone()).collect()
    }

    /// Observed value sets for the requested attributes, across all time
    /// steps.
    pub fn observed_values(
        &self,
        attrs: &BTreeSet<String>,
    ) -> Result<BTreeMap<String, BTreeSet<String>>> {
        let mut out = BTreeMap::new();
        for attr in attrs {
            let idx = self.attr_index(attr)?;
            let values: BTreeSet<String> =
                self.records.iter().map(|r| r.attrs[idx].clone()).collect();
            out.insert(attr.clone(), values);
        }
        Ok(out)
    }

    fn attr_index(&self, name: &str) -> Result<usize> {
        self.attr_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    fn measure_index(&self, name: &str) -> Result<usize> {
        self.measure_names
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub(crate) fn record_measure(&self, record: usize, measure_idx: usize) -> Option<&str> {
        self.records[record].measures[measure_idx].as_deref()
    }
}

/// Indexes of the records matching `pred` at time step `timestep`.
pub fn select(store: &RecordStore, pred: &CubePredicate, timestep: &str) -> Result<Vec<usize>> {
    // Every predicate attribute must exist in the store, wildcards included.
    let bound: Vec<(usize, Option<&str>)> = pred
        .bindings()
        .iter()
        .map(|(name, value)| Ok((store.attr_index(name)?, value.as_deref())))
        .collect::<Result<_>>()?;

    Ok(store
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.timestep == timestep
                && bound
                    .iter()
                    .all(|(idx, value)| value.is_none_or(|v| r.attrs[*idx] == v))
        })
        .map(|(i, _)| i)
        .collect())
}

/// Aggregates one cell. `sum` skips nulls, `count` counts rows regardless of
/// nulls, `count_distinct` counts distinct non-null values.
pub fn aggregate_cell(store: &RecordStore, subset: &[usize], agg: &AggregatorKind) -> Result<f64> {
    let column = agg.column();
    let idx = store.measure_index(column)?;
    match agg {
        AggregatorKind::Sum(_) => {
            let mut total = 0.0;
            for &r in subset {
                if let Some(text) = store.record_measure(r, idx) {
                    let value: f64 = text.trim().parse().map_err(|_| Error::TypeMismatch {
                        column: column.to_string(),
                        value: text.to_string(),
                    })?;
                    total += value;
                }
            }
            Ok(total)
        }
        AggregatorKind::Count(_) => Ok(subset.len() as f64),
        AggregatorKind::CountDistinct(_) => {
            let mut seen: HashSet<&str> = HashSet::new();
            for &r in subset {
                if let Some(text) = store.record_measure(r, idx) {
                    seen.insert(text);
                }
            }
            Ok(seen.len() as f64)
        }
    }
}

/// Builds the observation matrix for one time step: one row per partition
/// child, one column per declared sub-measure. Requires every aggregator to
/// be additive so that column sums reproduce whole-cube aggregation.
pub fn build_observation_matrix(
    store: &RecordStore,
    part: &DrillPartition,
    spec: &MeasureSpec,
    timestep: &str,
) -> Result<ObservationMatrix> {
    for (_, agg) in spec.sub_measures() {
        if !agg.is_additive() {
            return Err(Error::NonAdditiveAggregator(agg.to_string()));
        }
    }
    let (p, q) = (part.len(), spec.q());
    let mut values = vec![0.0; p * q];
    for (u, child) in part.children().iter().enumerate() {
        let subset = select(store, child, timestep)?;
        for (v, (_, agg)) in spec.sub_measures().iter().enumerate() {
            values[u * q + v] = aggregate_cell(store, &subset, agg)?;
        }
    }
    ObservationMatrix::new(
        part.child_labels().to_vec(),
        spec.column_names().to_vec(),
        values,
        timestep,
    )
}

/// Outcome of the structural additivity check, with a concrete counterexample
/// when the aggregator is not additive.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditivityCheck {
    pub additive: bool,
    pub counterexample: Option<AdditivityCounterexample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdditivityCounterexample {
    pub child_values: Vec<f64>,
    pub parent_value: f64,
    pub detail: String,
}

/// Structural additivity: `sum` and `count` are additive; `count_distinct`
/// is not, demonstrated on a two-sub-cube store where a value occurs on both
/// sides.
pub fn check_additivity(agg: &AggregatorKind) -> AdditivityCheck {
    if agg.is_additive() {
        return AdditivityCheck {
            additive: true,
            counterexample: None,
        };
    }

    let column = agg.column().to_string();
    let mut store =
        RecordStore::new(vec!["part".into()], vec![column.clone()]).expect("distinct column names");
    for (part, value) in [("a", "u1"), ("a", "u2"), ("b", "u2"), ("b", "u3")] {
        store
            .push("t", vec![part.into()], vec![Some(value.into())])
            .expect("consistent arity");
    }
    let probe = AggregatorKind::CountDistinct(column);
    let cell = |part: Option<&str>| {
        let pred = match part {
            Some(p) => CubePredicate::wildcard(&["part"]).with_value("part", p),
            None => CubePredicate::wildcard(&["part"]),
        };
        let subset = select(&store, &pred, "t").expect("known attribute");
        aggregate_cell(&store, &subset, &probe).expect("text column")
    };
    let child_values = vec![cell(Some("a")), cell(Some("b"))];
    let parent_value = cell(None);
    let detail = format!(
        "count_distinct over value sets {{u1,u2}} and {{u2,u3}}: parent has {} \
         distinct values but the child sum is {}",
        parent_value,
        child_values.iter().sum::<f64>(),
    );
    AdditivityCheck {
        additive: false,
        counterexample: Some(AdditivityCounterexample {
            child_values,
            parent_value,
            detail,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// The three-record online-service example used throughout the module
    /// docs: two attributes, three measure columns, one null delay.
    fn example_store() -> RecordStore {
        let mut store = RecordStore::new(
            vec!["data_center".into(), "os_version".into()],
            vec!["request_id".into(), "is_success".into(), "delay".into()],
        )
        .unwrap();
        let rows: [(&str, &str, &str, &str, Option<&str>); 3] = [
            ("dc1", "v1", "1", "1", Some("30")),
            ("dc2", "v1", "2", "1", Some("40")),
            ("dc2", "v2", "3", "0", None),
        ];
        for (dc, os, rid, succ, delay) in rows {
            store
                .push(
                    "2025-01-01",
                    vec![dc.into(), os.into()],
                    vec![
                        Some(rid.into()),
                        Some(succ.into()),
                        delay.map(str::to_string),
                    ],
                )
                .unwrap();
        }
        store
    }

    #[test]
    fn select_by_predicate_and_timestep() {
        let store = example_store();
        let pred = CubePredicate::wildcard(&["data_center", "os_version"])
            .with_value("data_center", "dc2");
        assert_eq!(select(&store, &pred, "2025-01-01").unwrap(), vec![1, 2]);
    }

    #[test]
    fn select_wildcard_returns_all_rows_of_timestep() {
        let store = example_store();
        let pred = CubePredicate::wildcard(&["data_center"]);
        assert_eq!(select(&store, &pred, "2025-01-01").unwrap(), vec![0, 1, 2]);
        assert!(select(&store, &pred, "2025-01-02").unwrap().is_empty());
    }

    #[test]
    fn select_unmatched_value_is_empty() {
        let store = example_store();
        let pred = CubePredicate::wildcard(&["data_center"]).with_value("data_center", "dc9");
        assert!(select(&store, &pred, "2025-01-01").unwrap().is_empty());
    }

    #[test]
    fn select_unknown_attribute_fails() {
        let store = example_store();
        let pred = CubePredicate::wildcard(&["region"]);
        assert_eq!(
            select(&store, &pred, "2025-01-01").unwrap_err(),
            Error::UnknownAttribute("region".into())
        );
    }

    #[test]
    fn sum_skips_nulls_and_count_counts_rows() {
        let store = example_store();
        let all = select(
            &store,
            &CubePredicate::wildcard(&["data_center"]),
            "2025-01-01",
        )
        .unwrap();
        let sum_success =
            aggregate_cell(&store, &all, &AggregatorKind::Sum("is_success".into())).unwrap();
        assert_eq!(sum_success, 2.0);
        let sum_delay = aggregate_cell(&store, &all, &AggregatorKind::Sum("delay".into())).unwrap();
        assert_eq!(sum_delay, 70.0);
        let count_delay =
            aggregate_cell(&store, &all, &AggregatorKind::Count("delay".into())).unwrap();
        assert_eq!(count_delay, 3.0);
    }

    #[test]
    fn count_over_empty_subset_is_zero() {
        let store = example_store();
        let agg = AggregatorKind::Count("request_id".into());
        assert_eq!(aggregate_cell(&store, &[], &agg).unwrap(), 0.0);
    }

    #[test]
    fn count_distinct_ignores_duplicates_and_nulls() {
        let mut store = RecordStore::new(vec!["page".into()], vec!["user".into()]).unwrap();
        for user in [Some("a"), Some("b"), Some("b"), None] {
            store
                .push("t", vec!["p".into()], vec![user.map(str::to_string)])
                .unwrap();
        }
        let subset: Vec<usize> = (0..store.len()).collect();
        let agg = AggregatorKind::CountDistinct("user".into());
        assert_eq!(aggregate_cell(&store, &subset, &agg).unwrap(), 2.0);
    }

    #[test]
    fn sum_of_text_column_is_type_mismatch() {
        let mut store = RecordStore::new(vec!["page".into()], vec!["user".into()]).unwrap();
        store
            .push("t", vec!["p".into()], vec![Some("alice".into())])
            .unwrap();
        let err = aggregate_cell(&store, &[0], &AggregatorKind::Sum("user".into())).unwrap_err();
        assert_eq!(
            err,
            Error::TypeMismatch {
                column: "user".into(),
                value: "alice".into()
            }
        );
    }

    /// Store reproducing the aggregated success-rate example: two data
    /// centers at two time steps, with known per-cell aggregates.
    fn success_rate_store() -> RecordStore {
        let mut store = RecordStore::new(
            vec!["data_center".into()],
            vec!["request_id".into(), "is_success".into()],
        )
        .unwrap();
        let mut rid = 0;
        let mut push_batch = |t: &str, dc: &str, total: usize, success: usize| {
            for i in 0..total {
                rid += 1;
                let flag = if i < success { "1" } else { "0" };
                store
                    .push(
                        t,
                        vec![dc.into()],
                        vec![Some(rid.to_string()), Some(flag.into())],
                    )
                    .unwrap();
            }
        };
        push_batch("10:00", "dc1", 50, 40);
        push_batch("10:00", "dc2", 20, 10);
        push_batch("10:01", "dc1", 50, 45);
        push_batch("10:01", "dc2", 100, 55);
        store
    }

    fn success_rate_spec() -> MeasureSpec {
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

    #[test]
    fn observation_matrix_matches_published_aggregates() {
        let store = success_rate_store();
        let spec = success_rate_spec();
        let drill: BTreeSet<String> = ["data_center".to_string()].into();
        let observed = store.observed_values(&drill).unwrap();
        let part = crate::model::partition(
            &CubePredicate::wildcard(&["data_center"]),
            &drill,
            &observed,
        )
        .unwrap();
        let x = build_observation_matrix(&store, &part, &spec, "10:00").unwrap();
        assert_eq!(x.rows(), &["dc1".to_string(), "dc2".to_string()]);
        assert_eq!(x.values(), &[40.0, 50.0, 10.0, 20.0]);
        let x1 = build_observation_matrix(&store, &part, &spec, "10:01").unwrap();
        assert_eq!(x1.values(), &[45.0, 50.0, 55.0, 100.0]);
    }

    #[test]
    fn observation_matrix_of_empty_store_is_zero() {
        let store =
            RecordStore::new(vec!["data_center".into()], vec!["is_success".into()]).unwrap();
        let spec = MeasureSpec::parse(
            "succ",
            vec![("succ".into(), AggregatorKind::Sum("is_success".into()))],
        )
        .unwrap();
        let part = crate::model::partition(
            &CubePredicate::wildcard(&["data_center"]),
            &["data_center".to_string()].into(),
            &[(
                "data_center".to_string(),
                ["dc1".to_string()].into_iter().collect(),
            )]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let x = build_observation_matrix(&store, &part, &spec, "10:00").unwrap();
        assert_eq!(x.values(), &[0.0]);
    }

    #[test]
    fn non_additive_aggregator_routes_elsewhere() {
        let mut store = RecordStore::new(vec!["page".into()], vec!["user".into()]).unwrap();
        store
            .push("t", vec!["p1".into()], vec![Some("u1".into())])
            .unwrap();
        let spec = MeasureSpec::parse(
            "dau",
            vec![("dau".into(), AggregatorKind::CountDistinct("user".into()))],
        )
        .unwrap();
        let part = crate::model::partition(
            &CubePredicate::wildcard(&["page"]),
            &["page".to_string()].into(),
            &store.observed_values(&["page".to_string()].into()).unwrap(),
        )
        .unwrap();
        assert_eq!(
            build_observation_matrix(&store, &part, &spec, "t").unwrap_err(),
            Error::NonAdditiveAggregator("count_distinct(user)".into())
        );
    }

    #[test]
    fn additivity_check_reports_counterexample() {
        assert!(check_additivity(&AggregatorKind::Sum("x".into())).additive);
        assert!(check_additivity(&AggregatorKind::Count("x".into())).additive);
        let check = check_additivity(&AggregatorKind::CountDistinct("user".into()));
        assert!(!check.additive);
        let ce = check.counterexample.unwrap();
        assert_eq!(ce.child_values, vec![2.0, 2.0]);
        assert_eq!(ce.parent_value, 3.0);
    }

    #[test]
    fn csv_ingestion_reads_nulls() {
        let csv_data = "\
datetime,data_center,os_version,request_id,is_success,delay
2025-01-01 00:00:00,dc1,v1,1,1,30
2025-01-01 00:00:01,dc2,v1,2,1,40
2025-01-01 00:00:02,dc2,v2,3,0,
";
        let store = RecordStore::from_csv(
            csv_data.as_bytes(),
            "datetime",
            &["data_center".into(), "os_version".into()],
            &["request_id".into(), "is_success".into(), "delay".into()],
        )
        .unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.record_measure(2, 2), None);
        assert_eq!(store.record_measure(1, 2), Some("40"));
    }

    #[test]
    fn csv_missing_column_is_reported() {
        let err =
            RecordStore::from_csv("a,b\n1,2\n".as_bytes(), "a", &["missing".to_string()], &[])
                .unwrap_err();
        assert_eq!(err, Error::UnknownColumn("missing".into()));
    }
}

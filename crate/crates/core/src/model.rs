//! Shared domain vocabulary: cube predicates, drill partitions, observation
//! and contribution matrices, coalition masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Wildcard symbol used when formatting predicates.
pub const WILDCARD: &str = "*";

/// Predicate tuple identifying a data cube: one binding per attribute, where
/// `None` stands for the wildcard and matches every value of that attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CubePredicate {
    bindings: Vec<(String, Option<String>)>,
}

impl CubePredicate {
    /// Builds a predicate from explicit bindings. Attribute names must be
    /// unique within the predicate.
    pub fn new(bindings: Vec<(String, Option<String>)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, _) in &bindings {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateAttribute(name.clone()));
            }
        }
        Ok(Self { bindings })
    }

    /// All-wildcard predicate over the given attributes.
    pub fn wildcard<S: AsRef<str>>(attributes: &[S]) -> Self {
        Self {
            bindings: attributes
                .iter()
                .map(|a| (a.as_ref().to_string(), None))
                .collect(),
        }
    }

    pub fn bindings(&self) -> &[(String, Option<String>)] {
        &self.bindings
    }

    /// Binding for `attr`: outer `None` when the attribute is absent from the
    /// predicate, inner `None` when it is bound to the wildcard.
    pub fn binding(&self, attr: &str) -> Option<Option<&str>> {
        self.bindings
            .iter()
            .find(|(name, _)| name == attr)
            .map(|(_, v)| v.as_deref())
    }

    /// Whether `attr` is unconstrained. Attributes absent from the predicate
    /// are treated as wildcards.
    pub fn is_wildcard(&self, attr: &str) -> bool {
        matches!(self.binding(attr), None | Some(None))
    }

    /// Returns a copy with `attr` bound to `value`, appending the binding when
    /// the attribute was absent.
    pub fn with_value(&self, attr: &str, value: &str) -> Self {
        let mut bindings = self.bindings.clone();
        match bindings.iter_mut().find(|(name, _)| name == attr) {
            Some((_, v)) => *v = Some(value.to_string()),
            None => bindings.push((attr.to_string(), Some(value.to_string()))),
        }
        Self { bindings }
    }

    /// Tests a record against the predicate; `lookup` resolves an attribute
    /// name to the record's value. Non-wildcard bindings must match exactly.
    pub fn matches<'a>(&self, lookup: impl Fn(&str) -> Option<&'a str>) -> bool {
        self.bindings.iter().all(|(name, value)| match value {
            None => true,
            Some(v) => lookup(name) == Some(v.as_str()),
        })
    }
}

impl fmt::Display for CubePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, (name, value)) in self.bindings.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}={}", value.as_deref().unwrap_or(WILDCARD))?;
        }
        write!(f, ")")
    }
}

/// Disjoint decomposition of a parent cube along one or more drill dimensions.
///
/// Children differ from the parent only on the drilled attributes and are
/// ordered lexicographically on the drilled value tuple, so partitioning is
/// deterministic across runs and platforms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrillPartition {
    parent: CubePredicate,
    drill_dims: Vec<String>,
    children: Vec<CubePredicate>,
    child_labels: Vec<String>,
}

impl DrillPartition {
    pub fn parent(&self) -> &CubePredicate {
        &self.parent
    }

    /// Drill dimensions in the (sorted) order used to form child labels.
    pub fn drill_dims(&self) -> &[String] {
        &self.drill_dims
    }

    pub fn children(&self) -> &[CubePredicate] {
        &self.children
    }

    /// One label per child: the drilled values joined with `/` when several
    /// dimensions are drilled at once.
    pub fn child_labels(&self) -> &[String] {
        &self.child_labels
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

/// Partitions `parent` into disjoint children along `drill_dims`, one child
/// per combination of observed values.
pub fn partition(
    parent: &CubePredicate,
    drill_dims: &BTreeSet<String>,
    observed_values: &BTreeMap<String, BTreeSet<String>>,
) -> Result<DrillPartition> {
    if drill_dims.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one drill dimension is required".into(),
        ));
    }
    let dims: Vec<String> = drill_dims.iter().cloned().collect();
    for dim in &dims {
        if !parent.is_wildcard(dim) {
            return Err(Error::NonWildcardDrill(dim.clone()));
        }
        if observed_values.get(dim).is_none_or(BTreeSet::is_empty) {
            return Err(Error::EmptyDomain(dim.clone()));
        }
    }

    // Cross product of observed values, lexicographic because each domain is
    // iterated in BTreeSet order with earlier dimensions outermost.
    let mut children = Vec::new();
    let mut child_labels = Vec::new();
    let domains: Vec<Vec<&String>> = dims
        .iter()
        .map(|d| observed_values[d].iter().collect())
        .collect();
    let mut index = vec![0usize; dims.len()];
    loop {
        let mut child = parent.clone();
        let mut label_parts = Vec::with_capacity(dims.len());
        for (k, dim) in dims.iter().enumerate() {
            let value = domains[k][index[k]];
            child = child.with_value(dim, value);
            label_parts.push(value.as_str());
        }
        children.push(child);
        child_labels.push(label_parts.join("/"));

        // Odometer advance, last dimension fastest.
        let mut k = dims.len();
        loop {
            if k == 0 {
                return Ok(DrillPartition {
                    parent: parent.clone(),
                    drill_dims: dims,
                    children,
                    child_labels,
                });
            }
            k -= 1;
            index[k] += 1;
            if index[k] < domains[k].len() {
                break;
            }
            index[k] = 0;
        }
    }
}

/// Observation matrix: one row per sub-cube, one column per sub-measure,
/// holding the aggregated value of each sub-measure on each sub-cube at one
/// time step. Entries are finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMatrix {
    rows: Arc<[String]>,
    cols: Arc<[String]>,
    values: Vec<f64>,
    timestep: String,
}

impl ObservationMatrix {
    pub fn new(
        rows: impl Into<Arc<[String]>>,
        cols: impl Into<Arc<[String]>>,
        values: Vec<f64>,
        timestep: impl Into<String>,
    ) -> Result<Self> {
        let rows = rows.into();
        let cols = cols.into();
        if values.len() != rows.len() * cols.len() {
            return Err(Error::ShapeMismatch(
                rows.len(),
                cols.len(),
                values.len(),
                1,
            ));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: rows[i / cols.len().max(1)].clone(),
                    col: cols[i % cols.len().max(1)].clone(),
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            values,
            timestep: timestep.into(),
        })
    }

    /// New matrix sharing this one's labels.
    pub fn with_values(&self, values: Vec<f64>, timestep: impl Into<String>) -> Result<Self> {
        Self::new(self.rows.clone(), self.cols.clone(), values, timestep)
    }

    pub fn p(&self) -> usize {
        self.rows.len()
    }

    pub fn q(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn timestep(&self) -> &str {
        &self.timestep
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.q() + v]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let (p, q) = (self.p(), self.q());
        let mut sums = vec![0.0; q];
        for u in 0..p {
            for (v, sum) in sums.iter_mut().enumerate() {
                *sum += self.values[u * q + v];
            }
        }
        sums
    }

    pub(crate) fn shared_rows(&self) -> Arc<[String]> {
        self.rows.clone()
    }

    pub(crate) fn shared_cols(&self) -> Arc<[String]> {
        self.cols.clone()
    }
}

/// Additive decomposition of a measure change: same shape as the explicand,
/// plus the total change `delta_y` and the method-reported `residual`
/// (the signed gap between the cell sum and `delta_y`).
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix {
    rows: Arc<[String]>,
    cols: Arc<[String]>,
    values: Vec<f64>,
    delta_y: f64,
    residual: f64,
    method: String,
}

impl ContributionMatrix {
    pub fn new(
        rows: impl Into<Arc<[String]>>,
        cols: impl Into<Arc<[String]>>,
        values: Vec<f64>,
        delta_y: f64,
        residual: f64,
        method: impl Into<String>,
    ) -> Result<Self> {
        let rows = rows.into();
        let cols = cols.into();
        if values.len() != rows.len() * cols.len() {
            return Err(Error::ShapeMismatch(
                rows.len(),
                cols.len(),
                values.len(),
                1,
            ));
        }
        Ok(Self {
            rows,
            cols,
            values,
            delta_y,
            residual,
            method: method.into(),
        })
    }

    pub fn p(&self) -> usize {
        self.rows.len()
    }

    pub fn q(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.q() + v]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta_y(&self) -> f64 {
        self.delta_y
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn row_totals(&self) -> Vec<f64> {
        marginalize(self, MarginalAxis::Rows)
            .into_iter()
            .map(|(_, v)| v)
            .collect()
    }

    pub fn col_totals(&self) -> Vec<f64> {
        marginalize(self, MarginalAxis::Cols)
            .into_iter()
            .map(|(_, v)| v)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginalAxis {
    Rows,
    Cols,
}

/// Sums the contribution matrix along one axis: per-sub-cube totals for
/// `Rows`, per-sub-measure totals for `Cols`. Either way the totals sum to
/// `delta_y` up to the reported residual.
pub fn marginalize(c: &ContributionMatrix, axis: MarginalAxis) -> Vec<(String, f64)> {
    let (p, q) = (c.p(), c.q());
    match axis {
        MarginalAxis::Rows => (0..p)
            .map(|u| {
                let total = (0..q).map(|v| c.get(u, v)).sum();
                (c.rows[u].clone(), total)
            })
            .collect(),
        MarginalAxis::Cols => (0..q)
            .map(|v| {
                let total = (0..p).map(|u| c.get(u, v)).sum();
                (c.cols[v].clone(), total)
            })
            .collect(),
    }
}

/// Aligns an explicand/reference pair onto a common row set.
///
/// Column sets must agree (the reference is re-ordered to the explicand's
/// column order when needed). Rows missing on one side are inserted with
/// zeros, which preserves column sums only under additive aggregators; the
/// aggregation layer enforces that upstream. The operation is idempotent.
pub fn validate_pair(
    xt: &ObservationMatrix,
    xr: &ObservationMatrix,
) -> Result<(ObservationMatrix, ObservationMatrix)> {
    let xr = align_columns(xt, xr)?;

    if xt.rows() == xr.rows() {
        return Ok((xt.clone(), xr));
    }

    // Merging by label is only sound when labels are unique per side.
    for side in [xt, &xr] {
        let unique: BTreeSet<&String> = side.rows().iter().collect();
        if unique.len() != side.rows().len() {
            let dup = side
                .rows()
                .iter()
                .find(|label| side.rows().iter().filter(|l| l == label).count() > 1)
                .expect("duplicate exists");
            return Err(Error::DuplicateAttribute(dup.clone()));
        }
    }

    let union: BTreeSet<&String> = xt.rows().iter().chain(xr.rows().iter()).collect();
    let labels: Vec<String> = union.into_iter().cloned().collect();
    let rows: Arc<[String]> = labels.into();
    let q = xt.q();

    let spread = |m: &ObservationMatrix| -> Result<ObservationMatrix> {
        let mut values = vec![0.0; rows.len() * q];
        for (u, label) in m.rows().iter().enumerate() {
            let target = rows.binary_search(label).expect("label in union");
            for v in 0..q {
                values[target * q + v] = m.get(u, v);
            }
        }
        ObservationMatrix::new(rows.clone(), m.shared_cols(), values, m.timestep())
    };

    Ok((spread(xt)?, spread(&xr)?))
}

fn align_columns(xt: &ObservationMatrix, xr: &ObservationMatrix) -> Result<ObservationMatrix> {
    if xt.cols() == xr.cols() {
        return Ok(xr.clone());
    }
    let left: BTreeSet<&String> = xt.cols().iter().collect();
    let right: BTreeSet<&String> = xr.cols().iter().collect();
    if left != right {
        return Err(Error::ColumnMismatch {
            left: xt.cols().to_vec(),
            right: xr.cols().to_vec(),
        });
    }
    // Same set, different order: permute the reference columns.
    let perm: Vec<usize> = xt
        .cols()
        .iter()
        .map(|c| xr.cols().iter().position(|rc| rc == c).expect("same set"))
        .collect();
    let (p, q) = (xr.p(), xr.q());
    let mut values = vec![0.0; p * q];
    for u in 0..p {
        for (v, &src) in perm.iter().enumerate().take(q) {
            values[u * q + v] = xr.get(u, src);
        }
    }
    ObservationMatrix::new(xr.shared_rows(), xt.shared_cols(), values, xr.timestep())
}

/// Boolean coalition mask over a p×q factor matrix: `true` cells take the
/// explicand value, `false` cells the reference value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoalitionMask {
    p: usize,
    q: usize,
    bits: Vec<bool>,
}

impl CoalitionMask {
    pub fn empty(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            bits: vec![false; p * q],
        }
    }

    pub fn full(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            bits: vec![true; p * q],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.q + v]
    }

    pub fn set(&mut self, u: usize, v: usize, selected: bool) {
        self.bits[u * self.q + v] = selected;
    }
}

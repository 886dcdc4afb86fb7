//! Declarative run configuration: a line-based key/value file with
//! sub-measure declarations, overridable by command-line flags.
//!
//! ```text
//! input = requests.csv
//! timestep-column = datetime
//! explicand = 10:01
//! reference = 10:00
//! attributes = data_center, os_version
//! drill = data_center
//! submeasure succ_cnt = sum(is_success)
//! submeasure total_cnt = count(request_id)
//! measure = "succ_cnt / total_cnt"
//! engine = auto
//! seed = 42
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;

use attrib_core::cube::AggregatorKind;
use attrib_core::gam::PlayerScope;
use attrib_core::{Error, Result};

/// Engine selection including the routing default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EngineChoice {
    /// Route by measure class: closed forms when they exist, the path
    /// integral for other differentiable measures, and the record-level game
    /// for non-additive aggregators.
    #[default]
    Auto,
    Named(attrib_core::gam::Engine),
}

impl std::str::FromStr for EngineChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(EngineChoice::Auto)
        } else {
            Ok(EngineChoice::Named(s.parse()?))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "table" => Ok(OutputFormat::Table),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Fully resolved attribution run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub input: PathBuf,
    pub timestep_column: String,
    pub explicand: String,
    pub references: Vec<String>,
    pub attributes: Vec<String>,
    pub drill: BTreeSet<String>,
    pub sub_measures: Vec<(String, AggregatorKind)>,
    pub measure: String,
    pub engine: EngineChoice,
    pub samples: Option<usize>,
    pub riemann_steps: usize,
    pub seed: u64,
    pub scope: PlayerScope,
    pub threads: usize,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

/// Raw parse of a config file before validation and flag overrides.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    pub input: Option<PathBuf>,
    pub timestep_column: Option<String>,
    pub explicand: Option<String>,
    pub references: Vec<String>,
    pub attributes: Vec<String>,
    pub drill: Vec<String>,
    pub sub_measures: Vec<(String, AggregatorKind)>,
    pub measure: Option<String>,
    pub engine: Option<EngineChoice>,
    pub samples: Option<usize>,
    pub riemann_steps: Option<usize>,
    pub seed: Option<u64>,
    pub scope: Option<PlayerScope>,
    pub threads: Option<usize>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            let key = key.trim();
            let value = unquote(value.trim());
            if let Some(name) = key.strip_prefix("submeasure ") {
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: submeasure declaration is missing its name",
                        line_no + 1
                    )));
                }
                cfg.sub_measures
                    .push((name.to_string(), AggregatorKind::parse(&value)?));
                continue;
            }
            match key {
                "input" => cfg.input = Some(PathBuf::from(&value)),
                "timestep-column" => cfg.timestep_column = Some(value),
                "explicand" => cfg.explicand = Some(value),
                "reference" => cfg.references.extend(split_list(&value)),
                "attributes" => cfg.attributes.extend(split_list(&value)),
                "drill" => cfg.drill.extend(split_list(&value)),
                "measure" => cfg.measure = Some(value),
                "engine" => cfg.engine = Some(value.parse()?),
                "samples" => cfg.samples = Some(parse_number(&value, key)?),
                "riemann-steps" => cfg.riemann_steps = Some(parse_number(&value, key)?),
                "seed" => cfg.seed = Some(parse_number(&value, key)?),
                "scope" => cfg.scope = Some(value.parse()?),
                "threads" => cfg.threads = Some(parse_number(&value, key)?),
                "format" => cfg.format = Some(value.parse()?),
                "out" => cfg.out = Some(PathBuf::from(&value)),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{other}`",
                        line_no + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    /// Validates the merged configuration into a runnable one.
    pub fn into_run_config(self) -> Result<RunConfig> {
        let input = self
            .input
            .ok_or_else(|| Error::InvalidConfig("missing `input` (or --input)".into()))?;
        let timestep_column = self
            .timestep_column
            .ok_or_else(|| Error::InvalidConfig("missing `timestep-column`".into()))?;
        let explicand = self
            .explicand
            .ok_or_else(|| Error::InvalidConfig("missing `explicand`".into()))?;
        if self.references.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one `reference` time step is required".into(),
            ));
        }
        if self.references.contains(&explicand) {
            return Err(Error::InvalidConfig(
                "the explicand label must differ from every reference label".into(),
            ));
        }
        if self.attributes.is_empty() {
            return Err(Error::InvalidConfig("missing `attributes`".into()));
        }
        let drill: BTreeSet<String> = self.drill.into_iter().collect();
        if drill.is_empty() {
            return Err(Error::InvalidConfig("missing `drill` dimensions".into()));
        }
        for dim in &drill {
            if !self.attributes.contains(dim) {
                return Err(Error::InvalidConfig(format!(
                    "drill dimension `{dim}` is not a declared attribute"
                )));
            }
        }
        if self.sub_measures.is_empty() && self.measure.is_none() {
            return Err(Error::InvalidConfig(
                "declare at least one `submeasure` and a `measure`".into(),
            ));
        }
        let measure = self
            .measure
            .ok_or_else(|| Error::InvalidConfig("missing `measure` expression".into()))?;
        Ok(RunConfig {
            input,
            timestep_column,
            explicand,
            references: self.references,
            attributes: self.attributes,
            drill,
            sub_measures: self.sub_measures,
            measure,
            engine: self.engine.unwrap_or_default(),
            samples: self.samples,
            riemann_steps: self.riemann_steps.unwrap_or(1000),
            seed: self.seed.unwrap_or(42),
            scope: self.scope.unwrap_or_default(),
            threads: self.threads.unwrap_or(1),
            format: self.format.unwrap_or_default(),
            out: self.out,
        })
    }
}

fn strip_comment(line: &str) -> &str {
    // A `#` inside quotes stays part of the value.
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(value: &str) -> String {
    let v = value.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        v[1..v.len() - 1].to_string()
    } else {
        v.to_string()
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_number<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}` expects a number, got `{value}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# request success-rate run
input = requests.csv
timestep-column = datetime
explicand = 10:01
reference = 10:00
attributes = data_center, os_version
drill = data_center
submeasure succ_cnt = sum(is_success)
submeasure total_cnt = count(request_id)
measure = "succ_cnt / total_cnt"
seed = 7
"#;

    #[test]
    fn parses_sample_config() {
        let cfg = ConfigFile::parse(SAMPLE)
            .unwrap()
            .into_run_config()
            .unwrap();
        assert_eq!(cfg.timestep_column, "datetime");
        assert_eq!(cfg.references, vec!["10:00".to_string()]);
        assert_eq!(cfg.sub_measures.len(), 2);
        assert_eq!(
            cfg.sub_measures[1].1,
            AggregatorKind::Count("request_id".into())
        );
        assert_eq!(cfg.measure, "succ_cnt / total_cnt");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.engine, EngineChoice::Auto);
    }

    #[test]
    fn rejects_explicand_in_references() {
        let text = SAMPLE.replace("explicand = 10:01", "explicand = 10:00");
        let err = ConfigFile::parse(&text)
            .unwrap()
            .into_run_config()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn rejects_drill_outside_attributes() {
        let text = SAMPLE.replace("drill = data_center", "drill = region");
        let err = ConfigFile::parse(&text)
            .unwrap()
            .into_run_config()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn rejects_unknown_key() {
        let err = ConfigFile::parse("mystery = 1\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn measure_quotes_preserve_hash_and_spaces() {
        let cfg = ConfigFile::parse("measure = \"a # b\"\n").unwrap();
        assert_eq!(cfg.measure.as_deref(), Some("a # b"));
    }
}

//! Grouped, labeled records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub group: String,
    /// 0 or 1.
    pub label: u8,
    pub features: Vec<f64>,
    /// Model output probability, if the record carries one.
    pub score: Option<f64>,
}

impl Record {
    pub fn new(
        group: impl Into<String>,
        label: u8,
        features: Vec<f64>,
        score: Option<f64>,
    ) -> Self {
        Record {
            group: group.into(),
            label,
            features,
            score,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Records plus the first-appearance-ordered set of their groups.
///
/// Immutable once built; every constructor validates the record invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    records: Vec<Record>,
    groups: Vec<String>,
    dim: usize,
}

impl GroupedDataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.features.len());
        let mut groups: Vec<String> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.label > 1 {
                return Err(Error::BadLabel {
                    row,
                    value: r.label.to_string(),
                });
            }
            if r.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.features.len(),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row,
                    column: "features".into(),
                });
            }
            if let Some(s) = r.score {
                if !s.is_finite() {
                    return Err(Error::NonFiniteValue {
                        row,
                        column: "score".into(),
                    });
                }
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::ScoreOutOfRange { row, value: s });
                }
            }
            if !groups.iter().any(|g| g == &r.group) {
                groups.push(r.group.clone());
            }
        }
        Ok(GroupedDataset {
            records,
            groups,
            dim,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.groups.iter().any(|g| g == group)
    }

    /// True when every record carries a score.
    pub fn has_scores(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.score.is_some())
    }

    /// Records of one group, in dataset order.
    pub fn group_records<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.group == group)
    }

    /// A copy with every score replaced by `score(record)`.
    pub fn with_scores<F: Fn(&Record) -> f64>(&self, score: F) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| Record {
                score: Some(score(r)),
                ..r.clone()
            })
            .collect();
        GroupedDataset::new(records)
    }
}

/// Splits records by group. Parts follow group order; within-part order is
/// the dataset order.
pub fn partition(ds: &GroupedDataset) -> IndexMap<String, Vec<&Record>> {
    let mut parts: IndexMap<String, Vec<&Record>> = ds
        .groups()
        .iter()
        .map(|g| (g.clone(), Vec::new()))
        .collect();
    for r in ds.records() {
        parts.get_mut(&r.group).expect("group registered").push(r);
    }
    parts
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub group: String,
    pub label: String,
    /// `None` picks up a `score` column when the header has one.
    pub score: Option<String>,
    /// Empty picks up the contiguous run `f0`, `f1`, ... present in the header.
    pub features: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            group: "group".into(),
            label: "label".into(),
            score: None,
            features: Vec::new(),
        }
    }
}

struct ResolvedColumns {
    group: usize,
    label: usize,
    score: Option<(usize, String)>,
    features: Vec<(usize, String)>,
}

fn resolve(schema: &CsvSchema, header: &csv::StringRecord) -> Result<ResolvedColumns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let group = need(&schema.group)?;
    let label = need(&schema.label)?;
    let score = match &schema.score {
        Some(name) => Some((need(name)?, name.clone())),
        None => find("score").map(|i| (i, "score".to_string())),
    };
    let features = if schema.features.is_empty() {
        (0..)
            .map(|i| format!("f{i}"))
            .map_while(|name| find(&name).map(|i| (i, name)))
            .collect()
    } else {
        schema
            .features
            .iter()
            .map(|name| need(name).map(|i| (i, name.clone())))
            .collect::<Result<Vec<_>>>()?
    };

    let used: Vec<usize> = [Some(group), Some(label), score.as_ref().map(|s| s.0)]
        .into_iter()
        .flatten()
        .chain(features.iter().map(|f| f.0))
        .collect();
    for (i, h) in header.iter().enumerate() {
        if !used.contains(&i) {
            log::warn!("ignoring unrecognized column `{h}`");
        }
    }
    Ok(ResolvedColumns {
        group,
        label,
        score,
        features,
    })
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonFiniteValue {
            row,
            column: column.to_string(),
        }),
    }
}

/// Reads a grouped dataset from any CSV source.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<GroupedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].trim().is_empty()) => h.clone(),
        Ok(_) => return Err(Error::EmptyFile),
        Err(e) => return Err(Error::Io(e.to_string())),
    };
    let cols = resolve(schema, &header)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Io(e.to_string()))?;
        if row.len() != header.len() {
            return Err(Error::RaggedRow(row_no));
        }
        let label = match row[cols.label].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::BadLabel {
                    row: row_no,
                    value: other.to_string(),
                })
            }
        };
        let score = match &cols.score {
            Some((idx, name)) if !row[*idx].trim().is_empty() => {
                let s = parse_number(&row[*idx], row_no, name)?;
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::ScoreOutOfRange {
                        row: row_no,
                        value: s,
                    });
                }
                Some(s)
            }
            _ => None,
        };
        let features = cols
            .features
            .iter()
            .map(|(idx, name)| parse_number(&row[*idx], row_no, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(Record {
            group: row[cols.group].to_string(),
            label,
            features,
            score,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    GroupedDataset::new(records)
}

/// Loads a grouped dataset from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupedDataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Renders `x` with 17 significant digits, enough to round-trip any f64.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the dataset back as CSV with canonical column names.
pub fn write_csv<W: Write>(ds: &GroupedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_score = ds.records().iter().any(|r| r.score.is_some());
    let mut header = vec!["group".to_string(), "label".to_string()];
    if with_score {
        header.push("score".into());
    }
    header.extend((0..ds.dim()).map(|i| format!("f{i}")));
    w.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in ds.records() {
        let mut row = vec![r.group.clone(), r.label.to_string()];
        if with_score {
            row.push(r.score.map(format_sig17).unwrap_or_default());
        }
        row.extend(r.features.iter().map(|&v| format_sig17(v)));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

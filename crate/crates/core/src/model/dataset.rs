use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

/// One weighted observation `(x, g(x), y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub xid: String,
    pub features: Vec<f64>,
    /// 1-based group index.
    pub group: usize,
    pub label: u8,
    pub weight: f64,
}

impl Sample {
    pub fn new(xid: impl Into<String>, features: Vec<f64>, group: usize, label: u8) -> Self {
        Sample {
            xid: xid.into(),
            features,
            group,
            label,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }
}

/// Finite weighted sample standing in for the distribution `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    t: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, t: usize, feature_names: Vec<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("dataset has no samples"));
        }
        if t == 0 {
            return Err(Error::input("group count must be at least 1"));
        }
        let arity = feature_names.len();
        let mut total = 0.0;
        for (row, s) in samples.iter().enumerate() {
            if s.group == 0 || s.group > t {
                return Err(Error::input(format!(
                    "row {row}: group {} outside 1..={t}",
                    s.group
                )));
            }
            if s.label > 1 {
                return Err(Error::input(format!("row {row}: label {} is not 0/1", s.label)));
            }
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::input(format!("row {row}: invalid weight {}", s.weight)));
            }
            if s.features.len() != arity {
                return Err(Error::input(format!(
                    "row {row}: {} features, expected {arity}",
                    s.features.len()
                )));
            }
            total += s.weight;
        }
        if !(total > 0.0) {
            return Err(Error::input("dataset total weight must be positive"));
        }
        Ok(Dataset {
            samples,
            t,
            feature_names,
        })
    }

    /// Builds a dataset with `t` set to the largest observed group.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let t = samples.iter().map(|s| s.group).max().unwrap_or(0);
        let arity = samples.first().map_or(0, |s| s.features.len());
        let names = (0..arity).map(|k| format!("f{k}")).collect();
        Dataset::new(samples, t, names)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn arity(&self) -> usize {
        self.feature_names.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// Normalized weights, summing to one.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total_weight();
        self.samples.iter().map(|s| s.weight / total).collect()
    }

    /// Same rows with the group partition collapsed to a single group.
    pub fn single_group(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                group: 1,
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            t: 1,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same rows with replaced labels (weights kept).
    pub fn with_labels(&self, labels: &[u8]) -> Result<Dataset> {
        if labels.len() != self.samples.len() {
            return Err(Error::input("label count does not match dataset"));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &label)| Sample { label, ..s.clone() })
            .collect();
        Dataset::new(samples, self.t, self.feature_names.clone())
    }

    pub fn distinct_xids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.xid.as_str()).collect()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(file, &path.display().to_string())
    }

    /// Parses `xid, f0..fk, group, label[, weight]` with a header row.
    pub fn read_csv_from<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: u64, column: u64, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            column,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(1, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.first().map(String::as_str) != Some("xid") {
            return Err(parse_err(1, 1, "first column must be `xid`".into()));
        }
        let has_weight = header.last().map(String::as_str) == Some("weight");
        let tail = if has_weight { 3 } else { 2 };
        if header.len() < 1 + tail {
            return Err(parse_err(1, 1, "missing `group`/`label` columns".into()));
        }
        let group_col = header.len() - tail;
        if header[group_col] != "group" || header[group_col + 1] != "label" {
            return Err(parse_err(
                1,
                group_col as u64 + 1,
                "expected `group, label[, weight]` as trailing columns".into(),
            ));
        }
        let feature_names: Vec<String> = header[1..group_col].to_vec();

        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, 1, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(parse_err(
                    line,
                    record.len() as u64,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            let field = |col: usize| record.get(col).unwrap_or("");
            let real = |col: usize| -> Result<f64> {
                field(col).parse::<f64>().map_err(|e| {
                    parse_err(line, col as u64 + 1, format!("`{}`: {e}", field(col)))
                })
            };
            let features = (1..group_col).map(real).collect::<Result<Vec<_>>>()?;
            let group = field(group_col).parse::<usize>().map_err(|e| {
                parse_err(line, group_col as u64 + 1, format!("`{}`: {e}", field(group_col)))
            })?;
            let label = match field(group_col + 1) {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(parse_err(
                        line,
                        group_col as u64 + 2,
                        format!("label `{other}` is not 0 or 1"),
                    ))
                }
            };
            let weight = if has_weight { real(group_col + 2)? } else { 1.0 };
            samples.push(Sample {
                xid: field(0).to_string(),
                features,
                group,
                label,
                weight,
            });
        }
        let t = samples.iter().map(|s| s.group).max().unwrap_or(1);
        Dataset::new(samples, t, feature_names)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["xid".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(["group", "label", "weight"].map(String::from));
        wtr.write_record(&header).map_err(csv_io)?;
        for s in &self.samples {
            let mut row = vec![s.xid.clone()];
            row.extend(s.features.iter().map(|f| f.to_string()));
            row.push(s.group.to_string());
            row.push(s.label.to_string());
            row.push(s.weight.to_string());
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_weight() {
        let text = "xid,f0,group,label\na,0.5,1,1\nb,-1,2,0\n";
        let d = Dataset::read_csv_from(text.as_bytes(), "mem").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.t(), 2);
        assert_eq!(d.samples()[1].weight, 1.0);

        let text = "xid,f0,group,label,weight\na,0.5,1,1,3\n";
        let d = Dataset::read_csv_from(text.as_bytes(), "mem").unwrap();
        assert_eq!(d.samples()[0].weight, 3.0);
    }

    #[test]
    fn parse_errors_name_line_and_column() {
        let text = "xid,f0,group,label\na,0.5,1,1\nb,zz,2,0\n";
        match Dataset::read_csv_from(text.as_bytes(), "mem") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "xid,f0,group,label\na,0.5,1,2\n";
        assert!(matches!(
            Dataset::read_csv_from(text.as_bytes(), "mem"),
            Err(Error::Parse { column: 4, .. })
        ));
    }

    #[test]
    fn rejects_bad_groups_and_zero_mass() {
        let s = Sample::new("a", vec![], 3, 1);
        assert!(Dataset::new(vec![s], 2, vec![]).is_err());
        let s = Sample::new("a", vec![], 1, 1).with_weight(0.0);
        assert!(Dataset::new(vec![s], 1, vec![]).is_err());
        assert!(Dataset::new(vec![], 1, vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::from_samples(vec![
            Sample::new("a", vec![0.25], 1, 1).with_weight(2.0),
            Sample::new("b", vec![-3.5], 2, 0),
        ])
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv_from(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, d);
    }
}

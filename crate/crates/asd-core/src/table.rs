//! Score and embedding tables with their CSV formats.
//!
//! Floats are written with 9 significant digits in scientific notation so
//! diffs between runs are meaningful.

use ndarray::Array2;
use std::path::Path;

use crate::corpus::{ClipMeta, Domain, Label};
use crate::error::{Error, Result};

/// 9-significant-digit decimal used by every CSV emitter.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

/// Row identity of a scored clip (`split` is implied by the section-based
/// validation/evaluation convention).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub clip_id: String,
    pub machine: String,
    pub section: u8,
    pub domain: Domain,
    pub label: Label,
}

impl From<&ClipMeta> for RowMeta {
    fn from(m: &ClipMeta) -> Self {
        RowMeta {
            clip_id: m.clip_id.clone(),
            machine: m.machine.clone(),
            section: m.section,
            domain: m.domain,
            label: m.label,
        }
    }
}

/// Fixed meta columns plus named score columns, all row-aligned.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    pub rows: Vec<RowMeta>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn new(rows: Vec<RowMeta>) -> Self {
        ScoreTable {
            rows,
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn add_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.rows.len() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.rows.len()
            )));
        }
        if self.columns.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate column `{name}`")));
        }
        self.columns.push((name.to_string(), values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("table has no column `{name}`")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec![
            "clip_id".to_string(),
            "machine".to_string(),
            "section".to_string(),
            "domain".to_string(),
            "label".to_string(),
        ];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut record = vec![
                row.clip_id.clone(),
                row.machine.clone(),
                row.section.to_string(),
                row.domain.as_str().to_string(),
                row.label.as_str().to_string(),
            ];
            record.extend(self.columns.iter().map(|(_, v)| fmt_f64(v[i])));
            w.write_record(&record).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        let fixed = ["clip_id", "machine", "section", "domain", "label"];
        let names: Vec<&str> = headers.iter().collect();
        if names.len() < fixed.len() || names[..fixed.len()] != fixed {
            return Err(Error::Format(format!(
                "score table {}: expected columns {fixed:?} first, got {names:?}",
                path.display()
            )));
        }
        let score_names: Vec<String> =
            names[fixed.len()..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        let mut columns: Vec<(String, Vec<f64>)> =
            score_names.iter().map(|n| (n.clone(), Vec::new())).collect();
        for record in r.records() {
            let rec = record.map_err(|e| Error::Format(e.to_string()))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            rows.push(RowMeta {
                clip_id: get(0).to_string(),
                machine: get(1).to_string(),
                section: get(2)
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad section `{}`", get(2))))?,
                domain: Domain::parse(get(3))?,
                label: Label::parse(get(4))?,
            });
            for (j, (name, values)) in columns.iter_mut().enumerate() {
                let raw = get(fixed.len() + j);
                values.push(raw.parse().map_err(|_| {
                    Error::Parse(format!("bad value `{raw}` in column `{name}`"))
                })?);
            }
        }
        Ok(ScoreTable { rows, columns })
    }
}

/// Clip embeddings: one row per clip, `clip_id` plus fixed-width floats.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub clip_ids: Vec<String>,
    /// `[n_clips x embed_dim]`
    pub features: Array2<f64>,
}

impl EmbeddingTable {
    pub fn feature_of(&self, clip_id: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.clip_ids
            .iter()
            .position(|c| c == clip_id)
            .map(|i| self.features.row(i))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let dim = self.features.ncols();
        let mut header = vec!["clip_id".to_string()];
        header.extend((0..dim).map(|i| format!("e{i:03}")));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for (i, id) in self.clip_ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.features.row(i).iter().map(|&v| fmt_f64(v)));
            w.write_record(&record).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        if headers.get(0) != Some("clip_id") {
            return Err(Error::Format(format!(
                "embedding table {}: first column must be clip_id",
                path.display()
            )));
        }
        let dim = headers.len() - 1;
        let mut clip_ids = Vec::new();
        let mut data = Vec::new();
        for record in r.records() {
            let rec = record.map_err(|e| Error::Format(e.to_string()))?;
            clip_ids.push(rec.get(0).unwrap_or("").to_string());
            for j in 0..dim {
                let raw = rec.get(1 + j).unwrap_or("");
                data.push(
                    raw.parse()
                        .map_err(|_| Error::Parse(format!("bad embedding value `{raw}`")))?,
                );
            }
        }
        let n = clip_ids.len();
        Ok(EmbeddingTable {
            clip_ids,
            features: Array2::from_shape_vec((n, dim), data)
                .map_err(|e| Error::Format(e.to_string()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn meta(i: usize) -> RowMeta {
        RowMeta {
            clip_id: format!("c{i}"),
            machine: "m".into(),
            section: (i % 6) as u8,
            domain: Domain::Source,
            label: Label::Normal,
        }
    }

    #[test]
    fn fmt_has_nine_significant_digits() {
        assert_eq!(fmt_f64(1.0), "1.00000000e0");
        assert_eq!(fmt_f64(-0.125), "-1.25000000e-1");
        let v = 0.123456789123;
        let parsed: f64 = fmt_f64(v).parse().unwrap();
        assert!((parsed - v).abs() < 1e-9);
    }

    #[test]
    fn score_table_round_trip() {
        let mut table = ScoreTable::new((0..4).map(meta).collect());
        table
            .add_column("score_gen", vec![0.5, 1.25, -3.0, 0.0078125])
            .unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        table.write_csv(&p).unwrap();
        let back = ScoreTable::read_csv(&p).unwrap();
        assert_eq!(back.rows, table.rows);
        assert_eq!(back.column("score_gen").unwrap(), table.column("score_gen").unwrap());
    }

    #[test]
    fn missing_column_is_an_error() {
        let table = ScoreTable::new(vec![meta(0)]);
        assert!(matches!(table.column("nope"), Err(Error::Format(_))));
    }

    #[test]
    fn embedding_table_round_trip() {
        let table = EmbeddingTable {
            clip_ids: vec!["a".into(), "b".into()],
            features: ndarray::array![[1.0, 2.0, 3.0], [-0.5, 0.25, 0.0]],
        };
        let dir = tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        table.write_csv(&p).unwrap();
        let back = EmbeddingTable::read_csv(&p).unwrap();
        assert_eq!(back.clip_ids, table.clip_ids);
        for (a, b) in back.features.iter().zip(table.features.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

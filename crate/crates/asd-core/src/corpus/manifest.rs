//! Corpus manifest CSV: `clip_id,machine,section,domain,label,split,path`.
//!
//! Paths are stored relative to the manifest's directory so experiment
//! directories stay relocatable.

use std::path::{Path, PathBuf};

use super::{ClipMeta, Domain, Label, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub meta: ClipMeta,
    /// Absolute path resolved against the manifest directory.
    pub path: PathBuf,
}

pub fn write_manifest(path: &Path, entries: &[(ClipMeta, PathBuf)]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["clip_id", "machine", "section", "domain", "label", "split", "path"])
        .map_err(csv_err)?;
    for (meta, clip_path) in entries {
        let rel = clip_path.strip_prefix(base).unwrap_or(clip_path);
        w.write_record([
            meta.clip_id.as_str(),
            meta.machine.as_str(),
            &meta.section.to_string(),
            meta.domain.as_str(),
            meta.label.as_str(),
            meta.split.as_str(),
            &rel.to_string_lossy(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let expected = ["clip_id", "machine", "section", "domain", "label", "split", "path"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "manifest {}: unexpected header {:?}",
            path.display(),
            headers
        )));
    }
    let mut entries = Vec::new();
    for record in r.records() {
        let rec = record.map_err(csv_err)?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let section: u8 = get(2)
            .parse()
            .map_err(|_| Error::Parse(format!("bad section `{}`", get(2))))?;
        let meta = ClipMeta {
            clip_id: get(0).to_string(),
            machine: get(1).to_string(),
            section,
            domain: Domain::parse(get(3))?,
            label: Label::parse(get(4))?,
            split: Split::parse(get(5))?,
        };
        entries.push(ManifestEntry {
            meta,
            path: base.join(get(6)),
        });
    }
    Ok(entries)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSpec;
    use tempfile::tempdir;

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let spec = CorpusSpec::default_demo();
        let plan = spec.plan().unwrap();
        let entries: Vec<_> = plan
            .iter()
            .take(5)
            .map(|m| (m.clone(), dir.path().join(format!("{}.wav", m.clip_id))))
            .collect();
        let mpath = dir.path().join("manifest.csv");
        write_manifest(&mpath, &entries).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back.len(), 5);
        for (orig, got) in entries.iter().zip(&back) {
            assert_eq!(orig.0, got.meta);
            assert_eq!(orig.1, got.path);
        }
    }
}

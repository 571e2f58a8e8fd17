//! Dataset directories.
//!
//! ```text
//! <dir>/manifest.tsv          id  length  label_source  features_path  labels_path
//! <dir>/features/<id>.f64     little-endian f64, time-major (row t, then feature k)
//! <dir>/labels/<id>.txt       space-separated class indices on one line
//! ```
//!
//! Unlabeled records have `label_source` and `labels_path` set to `-`. Paths are
//! relative to the dataset directory; the manifest starts with a `#` header line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{LabelSource, Labels, SequenceRecord};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "#id\tlength\tlabel_source\tfeatures_path\tlabels_path";

/// Writes `records` under `dir`, creating it if needed. The manifest is written last.
pub fn write_dataset(records: &[SequenceRecord], dir: &Path) -> Result<()> {
    let features_dir = dir.join("features");
    let labels_dir = dir.join("labels");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    let mut seen = std::collections::HashSet::new();
    for rec in records {
        rec.validate()?;
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::invalid(format!("duplicate record id {}", rec.id)));
        }
        let features_rel = format!("features/{}.f64", rec.id);
        let mut bytes = Vec::with_capacity(rec.features.len() * 8);
        for v in rec.features.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_file(&dir.join(&features_rel), &bytes)?;
        let (source, labels_rel) = match &rec.labels {
            Some(l) => {
                let rel = format!("labels/{}.txt", rec.id);
                write_file(&dir.join(&rel), format_tags(&l.tags).as_bytes())?;
                (l.source.as_str(), rel)
            }
            None => ("-", "-".to_string()),
        };
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            rec.id,
            rec.len(),
            source,
            features_rel,
            labels_rel
        ));
    }
    write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_tags(tags: &[usize]) -> String {
    let mut s = tags
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    s.push('\n');
    s
}

/// Reads every record listed in `dir/manifest.tsv`.
pub fn read_dataset(dir: &Path) -> Result<Vec<SequenceRecord>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut records = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{} line {}", manifest_path.display(), lineno + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(loc(), format!("expected 5 fields, found {}", fields.len())));
        }
        let id = fields[0];
        let length: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("bad length {:?}", fields[1])))?;
        let features_path = resolve(dir, fields[3]);
        let bytes = fs::read(&features_path).map_err(|e| Error::io(&features_path, e))?;
        if length == 0 || bytes.len() % (8 * length) != 0 {
            return Err(Error::parse(
                format!("record {id} ({})", features_path.display()),
                format!("{} bytes is not a whole number of {length} f64 rows", bytes.len()),
            ));
        }
        let dim = bytes.len() / (8 * length);
        match feature_dim {
            Some(d) if d != dim => {
                return Err(Error::parse(
                    format!("record {id}"),
                    format!("feature dimension {dim} differs from {d} of earlier records"),
                ))
            }
            _ => feature_dim = Some(dim),
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let features = Matrix::from_vec(length, dim, values)
            .map_err(|e| Error::parse(format!("record {id}"), e.to_string()))?;
        let labels = match (fields[2], fields[4]) {
            ("-", "-") => None,
            ("-", _) | (_, "-") => {
                return Err(Error::Schema(format!(
                    "record {id}: label source and labels path must both be set or both be '-'"
                )))
            }
            (source, rel) => {
                let source: LabelSource = source
                    .parse()
                    .map_err(|e: Error| Error::parse(loc(), e.to_string()))?;
                let path = resolve(dir, rel);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let tags = parse_tags(&text).map_err(|m| Error::parse(format!("record {id} labels"), m))?;
                if tags.len() != length {
                    return Err(Error::parse(
                        format!("record {id} labels"),
                        format!("{} labels for {length} timesteps", tags.len()),
                    ));
                }
                Some(Labels { tags, source })
            }
        };
        records.push(
            SequenceRecord::new(id, features, labels)
                .map_err(|e| Error::parse(loc(), e.to_string()))?,
        );
    }
    Ok(records)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

pub(crate) fn parse_tags(text: &str) -> std::result::Result<Vec<usize>, String> {
    text.split_whitespace()
        .map(|tok| tok.parse::<usize>().map_err(|_| format!("bad label {tok:?}")))
        .collect()
}

/// One id per line; blank lines and `#` comments are ignored.
pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn write_ids(ids: &[String], path: &Path) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::RngStream;

    fn sample_records() -> Vec<SequenceRecord> {
        let mut rng = RngStream::new(5);
        let mut out = Vec::new();
        for (k, source) in [Some(LabelSource::GroundTruth), Some(LabelSource::Synthetic), None].into_iter().enumerate() {
            let len = 3 + k;
            let data = (0..len * 4).map(|_| rng.normal() * 1e3).collect();
            let features = Matrix::from_vec(len, 4, data).unwrap();
            let labels = source.map(|source| Labels {
                tags: (0..len).map(|t| (t + k) % 3).collect(),
                source,
            });
            out.push(SequenceRecord::new(format!("rec{k}"), features, labels).unwrap());
        }
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let records = sample_records();
        write_dataset(&records, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label_source(), b.label_source());
            assert_eq!(a.tags(), b.tags());
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
        }
    }

    #[test]
    fn truncated_features_name_the_record() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_records(), dir.path()).unwrap();
        let path = dir.path().join("features/rec1.f64");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.contains("rec1"), "{location}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_manifest_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_records(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("broken\tline\n");
        fs::write(&path, text).unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Parse { location, .. } => assert!(location.ends_with("line 5"), "{location}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn label_count_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_records(), dir.path()).unwrap();
        fs::write(dir.path().join("labels/rec0.txt"), "0 1\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ids_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let path = dir.path().join("ids.txt");
        write_ids(&ids, &path).unwrap();
        assert_eq!(read_ids(&path).unwrap(), ids);
    }
}

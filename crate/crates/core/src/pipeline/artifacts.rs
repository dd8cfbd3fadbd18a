//! Intermediate files shared by the CLI verbs and the manifest that lists them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::error::{Error, Result};
use crate::network::{LayerFeatures, Tap};
use crate::tensor::Tensor;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Header `id,f0,...`, one row per stimulus, 17 significant digits.
pub fn write_features_csv(features: &LayerFeatures, ids: &[String], path: &Path) -> Result<()> {
    if ids.len() != features.num_stimuli() {
        return Err(Error::Input(format!(
            "{} ids for {} feature rows",
            ids.len(),
            features.num_stimuli()
        )));
    }
    let mut out = String::from("id");
    for j in 0..features.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in features.row(i) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    write_file(path, out)
}

/// Returns stimulus ids and the `[N, dim]` feature matrix.
pub fn read_features_csv(path: &Path, tap: Tap) -> Result<(Vec<String>, LayerFeatures)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let dim = header.split(',').count() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (r, line) in lines.enumerate() {
        let mut cells = line.split(',');
        ids.push(cells.next().unwrap_or("").to_string());
        let before = data.len();
        for (c, cell) in cells.enumerate() {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("cell ({r}, {c}) is not a number: '{cell}'")))?,
            );
        }
        if data.len() - before != dim {
            return Err(Error::format(path, format!("row {r} has {} values, header has {dim}", data.len() - before)));
        }
    }
    let matrix = Tensor::from_vec(&[ids.len(), dim], data)?;
    Ok((ids, LayerFeatures { tap, matrix }))
}

/// Formats rows of already-rendered cells as CSV.
pub(crate) fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Digest of a file, or of a directory as the hash of its sorted
/// `(relative path, file digest)` list.
pub fn digest_path(path: &Path) -> Result<FileDigest> {
    let sha256 = if path.is_dir() {
        let mut files = Vec::new();
        walk(path, &mut files)?;
        let mut h = Sha256::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(sha256_file(&f)?.as_bytes());
            h.update([b'\n']);
        }
        hex(&h.finalize())
    } else {
        sha256_file(path)?
    };
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256,
    })
}

/// Inputs, config hash and produced files of one verb invocation.
/// Deliberately free of timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub verb: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hash `inputs` and every file under `out_dir` (except the manifest) and
/// write `out_dir/manifest.json`.
pub fn write_manifest(out_dir: &Path, verb: &str, config_sha256: &str, inputs: &[PathBuf]) -> Result<Manifest> {
    let mut files = Vec::new();
    walk(out_dir, &mut files)?;
    let mut artifacts = Vec::new();
    for f in files {
        let rel = f.strip_prefix(out_dir).unwrap_or(&f).to_path_buf();
        if rel == Path::new(MANIFEST_FILE) {
            continue;
        }
        artifacts.push(FileDigest {
            path: rel.display().to_string(),
            sha256: sha256_file(&f)?,
        });
    }
    let manifest = Manifest {
        verb: verb.to_string(),
        config_sha256: config_sha256.to_string(),
        inputs: inputs.iter().map(|p| digest_path(p)).collect::<Result<_>>()?,
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let f = LayerFeatures {
            tap: Tap::Fc1,
            matrix: rand_tensor(&[3, 4], 1),
        };
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        write_features_csv(&f, &ids, &p).unwrap();
        assert_eq!(read_features_csv(&p, Tap::Fc1).unwrap(), (ids, f));
    }

    #[test]
    fn manifest_lists_artifacts_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("sub/x.csv"), "1\n").unwrap();
        write_file(&dir.path().join("a.txt"), "2\n").unwrap();
        let m1 = write_manifest(dir.path(), "rsa", "abc", &[dir.path().join("a.txt")]).unwrap();
        let bytes = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let m2 = write_manifest(dir.path(), "rsa", "abc", &[dir.path().join("a.txt")]).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(bytes, fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
        let names: Vec<&str> = m1.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, vec!["a.txt", "sub/x.csv"]);
    }
}

//! On-disk dataset layout: one JSON-lines file per split plus a manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{Dataset, DatasetKind, GeneratorConfig, GraphSizes, Sample, SplitCounts};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }

    pub fn path_in(self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

/// Everything needed to regenerate a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: DatasetKind,
    pub generator: GeneratorConfig,
    pub sizes: GraphSizes,
    pub counts: SplitCounts,
    pub feature_dim: usize,
    /// Experiment configuration the dataset was generated from.
    #[serde(default)]
    pub experiment: Option<Value>,
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::json("sample", e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads one sample per non-empty line.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("{} line {}", path.display(), lineno + 1);
        samples.push(serde_json::from_str(&line).map_err(|e| Error::json(context, e))?);
    }
    Ok(samples)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes the three split files and the manifest into `dir`, creating it.
pub fn write_dataset(dir: &Path, dataset: &Dataset, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, samples) in Split::ALL.into_iter().zip([&dataset.train, &dataset.valid, &dataset.test]) {
        write_samples(&split.path_in(dir), samples)?;
    }
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: read_samples(&Split::Train.path_in(dir))?,
        valid: read_samples(&Split::Valid.path_in(dir))?,
        test: read_samples(&Split::Test.path_in(dir))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_dataset, FeatureEncoding};

    #[test]
    fn round_trip_preserves_samples_exactly() {
        let cfg = GeneratorConfig {
            edge_prob: 0.4,
            max_label: 5,
            noise_std: 0.5,
            feature_encoding: FeatureEncoding::Scalar,
            seed: 3,
        };
        let sizes = GraphSizes { data: 7, query: 3 };
        let counts = SplitCounts { train: 4, valid: 2, test: 1 };
        let ds = build_dataset(DatasetKind::Dataset2, &cfg, sizes, counts).unwrap();
        let manifest = Manifest {
            kind: DatasetKind::Dataset2,
            generator: cfg.clone(),
            sizes,
            counts,
            feature_dim: 1,
            experiment: None,
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, &manifest).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.valid, ds.valid);
        assert_eq!(back.test, ds.test);
        assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn bad_line_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"query\": 1}\n").unwrap();
        let err = read_samples(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}

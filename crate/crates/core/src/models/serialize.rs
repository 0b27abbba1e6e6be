//! Versioned JSON dumps of trained models.
//!
//! Floats are written in shortest round-trip form, so loading a dump gives
//! back a model that predicts bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelConfig, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub format_version: u32,
    pub config: ModelConfig,
    pub model: TrainedModel,
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model dump: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model dump version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("model dump kind {model} does not match its configuration ({config})")]
    KindMismatch { model: String, config: String },
}

impl ModelDump {
    pub fn new(config: ModelConfig, model: TrainedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            model,
        }
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<(), DumpError> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, DumpError> {
        let dump: ModelDump = serde_json::from_reader(reader)?;
        if dump.format_version != FORMAT_VERSION {
            return Err(DumpError::Version {
                found: dump.format_version,
            });
        }
        if dump.model.kind() != dump.config.kind {
            return Err(DumpError::KindMismatch {
                model: dump.model.kind().to_string(),
                config: dump.config.kind.to_string(),
            });
        }
        Ok(dump)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DumpError> {
        let path = path.as_ref();
        let io = |source| DumpError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.to_writer(&mut w)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DumpError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DumpError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::random_dataset;
    use crate::models::{fit, ModelKind};

    #[test]
    fn round_trip_is_exact() {
        let train = random_dataset(8, 7, 0.5, 3);
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let mut config = ModelConfig::new(kind);
            config.k = 3;
            config.iterations = 5;
            let model = fit(&config, &train).unwrap();
            let dump = ModelDump::new(config, model);
            let path = dir.path().join(format!("{kind}.json"));
            dump.save(&path).unwrap();
            let back = ModelDump::load(&path).unwrap();
            assert_eq!(back, dump, "{kind}");
        }
    }

    #[test]
    fn rejects_other_versions() {
        let train = random_dataset(4, 4, 0.8, 3);
        let config = ModelConfig::new(ModelKind::Pmf);
        let mut dump = ModelDump::new(config.clone(), fit(&config, &train).unwrap());
        dump.format_version = 99;
        let mut buf = Vec::new();
        dump.to_writer(&mut buf).unwrap();
        assert!(matches!(ModelDump::from_reader(&buf[..]), Err(DumpError::Version { found: 99 })));
    }
}

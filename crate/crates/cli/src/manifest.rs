//! Run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use xagg_core::bridge::HandshakeInfo;
use xagg_core::ingest::DatasetConfig;
use xagg_core::pipeline::PipelineConfig;
use xagg_core::rng::{derive_seed, label_tag};

use crate::{CliError, CliResult};

/// Enough to rerun a command: pass the manifest back as `--config` with the
/// same subcommand arguments.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub jobs: usize,
    pub config: PipelineConfig,
    pub dataset_config: Option<DatasetConfig>,
    /// Master seed and the per-stage seeds derived from it.
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, FileDigest>,
    /// SHA-256 of every file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub bridge: Option<HandshakeInfo>,
    pub timings_ms: BTreeMap<String, u128>,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig, jobs: usize) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), cfg.seed);
        for stage in ["split", "forest", "autoencoder", "noise", "fit", "instances"] {
            seeds.insert(stage.to_string(), derive_seed(cfg.seed, &[label_tag(stage)]));
        }
        Self {
            manifest_version: 1,
            tool: "xagg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            jobs,
            config: cfg.clone(),
            dataset_config: None,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            bridge: None,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(
            role.into(),
            FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.into(), sha256_hex(bytes));
    }

    pub fn time(&mut self, stage: &str, since: Instant) {
        self.timings_ms.insert(stage.into(), since.elapsed().as_millis());
    }
}

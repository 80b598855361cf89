//! JSON artifact envelopes with config-hash lineage.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub config_hash: String,
    pub parent_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub lineage: Lineage,
    pub data: T,
}

pub fn write_artifact<T: Serialize>(path: &Path, schema: &str, lineage: Lineage, data: &T) -> Result<()> {
    let env = Envelope {
        schema: schema.to_string(),
        lineage,
        data,
    };
    let mut bytes = serde_json::to_vec_pretty(&env).map_err(|e| Error::artifact(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Envelope<T>> {
    if !path.exists() {
        return Err(Error::artifact(
            path,
            "not found; run the upstream subcommand first (prepare, then candidates, then train)",
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> = serde_json::from_slice(&bytes).map_err(|e| Error::artifact(path, e))?;
    if env.schema != schema {
        return Err(Error::artifact(
            path,
            format!("schema {:?}, expected {schema:?}", env.schema),
        ));
    }
    Ok(env)
}

/// Fails with a lineage error unless `force` is set, in which case it warns.
pub fn check_lineage(artifact: &Path, expected: &str, found: &str, force: bool) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let err = Error::Lineage {
        artifact: artifact.display().to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    };
    if force {
        eprintln!("warning: {err} (continuing because of --force)");
        Ok(())
    } else {
        Err(err)
    }
}

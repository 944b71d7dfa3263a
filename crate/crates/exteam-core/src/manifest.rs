//! Run manifests: a JSON record of what a command ran, with which inputs
//! and seeds, and which files it emitted.
//!
//! The configuration hash is computed over a canonical re-serialization
//! of the input JSON (objects key-sorted, whitespace normalized), so two
//! configs that differ only in key order or formatting hash identically.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeamError};

/// 64-bit FNV-1a over a byte slice.
#[must_use]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Canonical form of a JSON document: parsed and re-serialized compactly.
/// `serde_json` maps are ordered, so object keys come out sorted and the
/// result is independent of the input's key order and whitespace.
pub fn canonical_json(text: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| TeamError::Config(format!("config is not valid JSON: {e}")))?;
    Ok(value.to_string())
}

/// Hex-encoded FNV-1a hash of the canonical form of a JSON config.
pub fn config_hash(text: &str) -> Result<String> {
    Ok(format!("{:016x}", fnv1a64(canonical_json(text)?.as_bytes())))
}

/// Record of one CLI invocation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunManifest {
    /// Subcommand plus the resolved flag values it ran with.
    pub command: String,
    /// Hash of the canonicalized input config ([`config_hash`]); empty
    /// when the command takes no config file.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub tool_version: String,
    /// Unix timestamp (seconds) when the run started.
    pub created_unix: u64,
    /// Every file the run emitted, relative to the output directory, in
    /// emission order (this manifest itself excluded).
    pub outputs: Vec<String>,
    /// Free-form scalar results worth recording (estimates, flags).
    pub extras: BTreeMap<String, String>,
}

impl RunManifest {
    #[must_use]
    pub fn new(command: impl Into<String>, tool_version: impl Into<String>) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.into(),
            config_hash: String::new(),
            seed: None,
            threads: None,
            tool_version: tool_version.into(),
            created_unix,
            outputs: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn record_output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn record_extra(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.extras.insert(key.into(), value.into());
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

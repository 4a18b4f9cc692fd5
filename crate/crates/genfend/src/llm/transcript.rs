//! Content-addressed transcript storage: one JSON file per request digest.

use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenerationConfig;
use crate::error::{Error, Result};
use crate::profiles::PromptPair;

/// A stored request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub digest: String,
    pub prompt: PromptPair,
    pub config: GenerationConfig,
    pub response: String,
    pub created_at: String,
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

/// Digest of the canonical serialization of prompt + config.
///
/// Fields are serialized in a fixed sorted order with line endings
/// normalized, so logically identical requests share a digest regardless
/// of how the caller assembled them; any content difference, including
/// whitespace inside the prompt body, changes it.
pub fn cache_key(prompt: &PromptPair, config: &GenerationConfig) -> String {
    let canonical = serde_json::json!({
        "config": {
            "max_tokens": config.max_tokens,
            "model": config.model,
            "seed": config.seed,
            "temperature": config.temperature,
        },
        "prompt": {
            "context": normalize_newlines(&prompt.context),
            "system": normalize_newlines(&prompt.system),
        },
    });
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}

/// A directory of transcripts, one `<digest>.json` file each.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(TranscriptStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).exists()
    }

    pub fn load(&self, digest: &str) -> Result<Transcript> {
        let path = self.path_for(digest);
        if !path.exists() {
            return Err(Error::CacheMiss { digest: digest.to_string() });
        }
        let data = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&data)
            .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))
    }

    /// Write a transcript atomically (temp file, then rename). Concurrent
    /// writers of the same digest write identical content, so last-rename
    /// wins harmlessly.
    pub fn save(&self, transcript: &Transcript) -> Result<()> {
        let path = self.path_for(&transcript.digest);
        let tmp = self.dir.join(format!(".{}.tmp", transcript.digest));
        let data = serde_json::to_string_pretty(transcript).expect("transcript serializes");
        std::fs::write(&tmp, data).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn record(
        &self,
        prompt: &PromptPair,
        config: &GenerationConfig,
        response: &str,
    ) -> Result<Transcript> {
        let transcript = Transcript {
            digest: cache_key(prompt, config),
            prompt: prompt.clone(),
            config: config.clone(),
            response: response.to_string(),
            created_at: Utc::now().to_rfc3339(),
        };
        self.save(&transcript)?;
        Ok(transcript)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(system: &str, context: &str) -> PromptPair {
        PromptPair { system: system.into(), context: context.into() }
    }

    #[test]
    fn digest_is_content_addressed() {
        let config = GenerationConfig::generation("m");
        let a = cache_key(&prompt("sys", "ctx"), &config);
        let b = cache_key(&prompt("sys", "ctx"), &config);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));

        // Whitespace inside the body matters.
        let c = cache_key(&prompt("sys ", "ctx"), &config);
        assert_ne!(a, c);

        // Config changes matter.
        let mut warm = config.clone();
        warm.temperature = 0.95;
        assert_ne!(a, cache_key(&prompt("sys", "ctx"), &warm));
    }

    #[test]
    fn digest_normalizes_line_endings() {
        let config = GenerationConfig::generation("m");
        let unix = cache_key(&prompt("a\nb", "c"), &config);
        let dos = cache_key(&prompt("a\r\nb", "c"), &config);
        assert_eq!(unix, dos);
    }

    #[test]
    fn store_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        let config = GenerationConfig::judgment("m");
        let p = prompt("s", "c");
        let saved = store.record(&p, &config, "the response").unwrap();
        let loaded = store.load(&saved.digest).unwrap();
        assert_eq!(loaded.response, "the response");
        assert_eq!(loaded.prompt, p);

        match store.load("0".repeat(64).as_str()) {
            Err(Error::CacheMiss { digest }) => assert_eq!(digest.len(), 64),
            other => panic!("expected cache miss, got {other:?}"),
        }
    }
}

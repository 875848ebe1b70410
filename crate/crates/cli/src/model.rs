//! A loaded artifact plus the embedder it was trained against.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use intent_core::embedding::{Embedder, ProviderConfig, RemoteEmbedder, ToyEmbedder};
use intent_core::trainer::{predict, ModelArtifact};
use intent_core::{Error, Result};

use crate::http::{bearer_from_env, HttpTransport};

pub type BoxedEmbedder = Box<dyn Embedder + Send + Sync>;

/// Builds the embedder described by `provider`. File providers only replay
/// precomputed vectors and cannot embed new text.
pub fn embedder_for(provider: &ProviderConfig) -> Result<BoxedEmbedder> {
    provider.validate()?;
    match provider {
        ProviderConfig::Toy { dim, seed } => Ok(Box::new(ToyEmbedder {
            dim: *dim,
            seed: *seed,
        })),
        ProviderConfig::Http {
            dim,
            endpoint,
            auth_token_env,
            timeout_secs,
            max_retries,
        } => Ok(Box::new(RemoteEmbedder {
            endpoint: endpoint.clone(),
            dim: *dim,
            bearer: bearer_from_env(auth_token_env.as_deref())?,
            transport: HttpTransport::new(Duration::from_secs(*timeout_secs), *max_retries),
        })),
        ProviderConfig::File { path, .. } => Err(Error::InvalidConfig(format!(
            "file provider ({path}) cannot embed new text; use a toy or http provider"
        ))),
    }
}

#[derive(Debug, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct ClassifyResponse {
    pub labels: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub model_version: String,
}

pub struct LoadedModel {
    pub artifact: ModelArtifact,
    /// First 16 hex digits of the SHA-256 of the artifact file.
    pub version: String,
    embedder: Option<BoxedEmbedder>,
}

impl LoadedModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let artifact = ModelArtifact::from_json_bytes(bytes)?;
        let digest = Sha256::digest(bytes);
        let version: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let embedder = match artifact.provider {
            ProviderConfig::File { .. } => None,
            ref p => Some(embedder_for(p)?),
        };
        Ok(LoadedModel {
            artifact,
            version,
            embedder,
        })
    }

    pub fn classify(&self, text: &str) -> Result<ClassifyResponse> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText { line: None });
        }
        let embedder = self.embedder.as_ref().ok_or_else(|| {
            Error::InvalidConfig("model was trained on precomputed vectors and cannot embed new text".into())
        })?;
        let vector = embedder
            .embed_batch(&[text.to_string()])?
            .pop()
            .ok_or_else(|| Error::Remote("embedder returned no vector".into()))?;
        let prediction = predict(vector.as_slice(), &self.artifact)?;
        let vocabulary = &self.artifact.vocabulary;
        Ok(ClassifyResponse {
            labels: prediction
                .labels
                .names(vocabulary)
                .into_iter()
                .map(str::to_string)
                .collect(),
            scores: vocabulary
                .labels()
                .iter()
                .cloned()
                .zip(prediction.scores)
                .collect(),
            model_version: self.version.clone(),
        })
    }

    /// The exact bytes written by `predict` and returned by `POST /classify`.
    pub fn classify_body(&self, text: &str) -> Result<Vec<u8>> {
        let mut body = serde_json::to_vec(&self.classify(text)?)?;
        body.push(b'\n');
        Ok(body)
    }
}

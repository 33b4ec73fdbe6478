//! Patient-level embeddings from pluggable providers: token chunking under a
//! provider's context limit, mean pooling, and concatenation fusion with
//! zero-fill plus presence flags for absent modalities.
//!
//! A deterministic hash-based stub provider ships so the whole pipeline and
//! all tests run without model weights; real providers connect over HTTP or
//! through files of precomputed vectors.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hashing::id_hash16;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("vector list is empty")]
    EmptyList,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("bad embedding file: {0}")]
    BadFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Text embedding provider: owns its tokenization, context limit, and output
/// dimension. `embed_chunk` must be deterministic for fixed input and safe to
/// call concurrently.
pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn token_limit(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn embed_chunk(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError>;
}

/// Image embedding provider over slice references.
pub trait ImageEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_slice(&self, slice_ref: &str) -> Result<Vec<f64>, EmbedError>;
}

// Deterministic pseudo-embedding of a payload string: sha256 blocks mapped to
// [-1, 1], seeded so distinct stub instances produce distinct spaces.
fn hash_vector(seed: u64, payload: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block: u32 = 0;
    while out.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(payload.as_bytes());
        hasher.update(block.to_le_bytes());
        let digest = hasher.finalize();
        for word in digest.chunks_exact(4) {
            if out.len() == dim {
                break;
            }
            let v = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
            out.push(v as f64 / u32::MAX as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    out
}

/// Whitespace-tokenizing stub text embedder: each token hashes to a fixed
/// vector and a chunk embeds as the token-vector mean.
#[derive(Debug, Clone)]
pub struct StubTextEmbedder {
    pub dimension: usize,
    pub token_limit: usize,
    pub seed: u64,
}

impl Default for StubTextEmbedder {
    fn default() -> Self {
        Self {
            dimension: 8,
            token_limit: 512,
            seed: 0,
        }
    }
}

impl TextEmbedder for StubTextEmbedder {
    fn name(&self) -> &str {
        "stub-text"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn token_limit(&self) -> usize {
        self.token_limit
    }
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
    fn embed_chunk(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut sum = vec![0.0; self.dimension];
        for token in tokens {
            for (s, v) in sum.iter_mut().zip(hash_vector(self.seed, token, self.dimension)) {
                *s += v;
            }
        }
        for s in &mut sum {
            *s /= tokens.len() as f64;
        }
        Ok(sum)
    }
}

/// Stub image embedder: hashes the slice reference string.
#[derive(Debug, Clone)]
pub struct StubImageEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for StubImageEmbedder {
    fn default() -> Self {
        Self {
            dimension: 8,
            seed: 1,
        }
    }
}

impl ImageEmbedder for StubImageEmbedder {
    fn name(&self) -> &str {
        "stub-image"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed_slice(&self, slice_ref: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(hash_vector(self.seed, slice_ref, self.dimension))
    }
}

/// Greedy contiguous segmentation into chunks of at most `limit` tokens.
/// Concatenating the chunks reproduces the token sequence exactly.
pub fn chunk_tokens(
    text: &str,
    limit: usize,
    provider: &dyn TextEmbedder,
) -> Result<Vec<Vec<String>>, EmbedError> {
    assert!(limit > 0, "token limit must be positive");
    let tokens = provider.tokenize(text);
    if tokens.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    Ok(tokens.chunks(limit).map(<[String]>::to_vec).collect())
}

/// Element-wise arithmetic mean of equal-length vectors.
pub fn pool_mean(vectors: &[Vec<f64>]) -> Result<Vec<f64>, EmbedError> {
    let first = vectors.first().ok_or(EmbedError::EmptyList)?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    for s in &mut sum {
        *s /= vectors.len() as f64;
    }
    Ok(sum)
}

/// Patient-level text embedding: chunk under the provider's token limit, embed
/// each chunk, average-pool.
pub fn embed_text(text: &str, provider: &dyn TextEmbedder) -> Result<Vec<f64>, EmbedError> {
    let chunks = chunk_tokens(text, provider.token_limit(), provider)?;
    let vectors = chunks
        .iter()
        .map(|chunk| provider.embed_chunk(chunk))
        .collect::<Result<Vec<_>, _>>()?;
    pool_mean(&vectors)
}

/// Patient-level image embedding: average-pool over the per-slice embeddings.
pub fn embed_image_series(
    slice_refs: &[String],
    provider: &dyn ImageEmbedder,
) -> Result<Vec<f64>, EmbedError> {
    if slice_refs.is_empty() {
        return Err(EmbedError::EmptyList);
    }
    let vectors = slice_refs
        .iter()
        .map(|r| provider.embed_slice(r))
        .collect::<Result<Vec<_>, _>>()?;
    pool_mean(&vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    TabularText,
    NotesText,
    Image,
}

/// Declared dimensions per source; 0 disables the source entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub tabular_dim: usize,
    pub notes_dim: usize,
    pub image_dim: usize,
}

impl FusionConfig {
    /// Fused vector width: enabled dims plus one presence flag per enabled
    /// source. Constant regardless of which sources are absent per patient.
    pub fn fused_len(&self) -> usize {
        let dims = [self.tabular_dim, self.notes_dim, self.image_dim];
        dims.iter().sum::<usize>() + dims.iter().filter(|&&d| d > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPart {
    pub source: EmbeddingSource,
    pub vector: Vec<f64>,
    pub present: bool,
}

/// Concatenated multimodal embedding for one patient in fixed source order
/// (tabular text, notes text, image). Absent sources contribute a zero vector
/// and a 0 presence flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEmbedding {
    pub patient_id: String,
    pub parts: Vec<FusedPart>,
    pub fused: Vec<f64>,
}

pub fn fuse_concat(
    patient_id: &str,
    tabular: Option<Vec<f64>>,
    notes: Option<Vec<f64>>,
    image: Option<Vec<f64>>,
    cfg: &FusionConfig,
) -> Result<FusedEmbedding, EmbedError> {
    let sources = [
        (EmbeddingSource::TabularText, cfg.tabular_dim, tabular),
        (EmbeddingSource::NotesText, cfg.notes_dim, notes),
        (EmbeddingSource::Image, cfg.image_dim, image),
    ];
    let mut parts = Vec::new();
    for (source, dim, vector) in sources {
        if dim == 0 {
            continue;
        }
        let (vector, present) = match vector {
            Some(v) => {
                if v.len() != dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                (v, true)
            }
            None => (vec![0.0; dim], false),
        };
        parts.push(FusedPart {
            source,
            vector,
            present,
        });
    }
    let mut fused = Vec::with_capacity(cfg.fused_len());
    for part in &parts {
        fused.extend_from_slice(&part.vector);
    }
    for part in &parts {
        fused.push(f64::from(part.present));
    }
    Ok(FusedEmbedding {
        patient_id: patient_id.to_string(),
        parts,
        fused,
    })
}

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Writes the binary embedding file: magic `EMB1`, u32 record count, u32
/// dimension, then per record a 16-byte id hash and `dimension` little-endian
/// 32-bit floats.
pub fn write_embedding_file(
    path: &Path,
    dimension: usize,
    records: &[(String, Vec<f64>)],
) -> Result<(), EmbedError> {
    let mut file = fs::File::create(path)?;
    file.write_all(EMB_MAGIC)?;
    file.write_all(&u32::try_from(records.len()).unwrap().to_le_bytes())?;
    file.write_all(&u32::try_from(dimension).unwrap().to_le_bytes())?;
    for (id, vector) in records {
        if vector.len() != dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: dimension,
                got: vector.len(),
            });
        }
        file.write_all(&id_hash16(id))?;
        for &v in vector {
            file.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Precomputed per-patient vectors, loadable from the binary format or from
/// CSV (`id, v0..vD-1`). Binary records are keyed by id hash; CSV by the id
/// itself.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dimension: usize,
    by_hash: HashMap<[u8; 16], Vec<f64>>,
    by_id: HashMap<String, Vec<f64>>,
}

impl VectorStore {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.by_hash.len() + self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, patient_id: &str) -> Option<&Vec<f64>> {
        self.by_id
            .get(patient_id)
            .or_else(|| self.by_hash.get(&id_hash16(patient_id)))
    }

    pub fn load_binary(path: &Path) -> Result<Self, EmbedError> {
        let mut file = fs::File::open(path)?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != EMB_MAGIC {
            return Err(EmbedError::BadFile(format!(
                "bad magic {magic:?}, expected EMB1"
            )));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        file.read_exact(&mut word)?;
        let dimension = u32::from_le_bytes(word) as usize;
        let mut by_hash = HashMap::with_capacity(count);
        for _ in 0..count {
            let mut id = [0u8; 16];
            file.read_exact(&mut id)?;
            let mut vector = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                file.read_exact(&mut word)?;
                vector.push(f64::from(f32::from_le_bytes(word)));
            }
            by_hash.insert(id, vector);
        }
        Ok(Self {
            dimension,
            by_hash,
            by_id: HashMap::new(),
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self, EmbedError> {
        let raw = fs::read_to_string(path)?;
        let mut by_id = HashMap::new();
        let mut dimension = 0usize;
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let id = parts
                .next()
                .ok_or_else(|| EmbedError::BadFile(format!("line {}: empty", i + 1)))?
                .to_string();
            let vector: Vec<f64> = parts
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|e| EmbedError::BadFile(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?;
            if dimension == 0 {
                dimension = vector.len();
            } else if vector.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: dimension,
                    got: vector.len(),
                });
            }
            by_id.insert(id, vector);
        }
        Ok(Self {
            dimension,
            by_hash: HashMap::new(),
            by_id,
        })
    }

    /// Detects binary vs CSV from the magic bytes.
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut file = fs::File::open(path)?;
        let mut magic = [0u8; 4];
        let is_binary = file.read_exact(&mut magic).is_ok() && &magic == EMB_MAGIC;
        drop(file);
        if is_binary {
            Self::load_binary(path)
        } else {
            Self::load_csv(path)
        }
    }
}

/// HTTP text embedder: POSTs `{"text": ...}` per chunk and expects
/// `{"embedding": [...]}`. Tokenization is whitespace on the client side;
/// the context limit and dimension come from configuration.
pub struct HttpTextEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    dimension: usize,
    token_limit: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl HttpTextEmbedder {
    pub fn new(url: &str, dimension: usize, token_limit: usize, timeout_s: u64) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_s))
            .build()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        Ok(Self {
            client,
            url: url.to_string(),
            dimension,
            token_limit,
        })
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn name(&self) -> &str {
        "http-text"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn token_limit(&self) -> usize {
        self.token_limit
    }
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
    fn embed_chunk(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let text = tokens.join(" ");
        let response = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { text: &text })
            .send()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Provider(format!(
                "endpoint returned {}",
                response.status()
            )));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| EmbedError::Provider(format!("bad response body: {e}")))?;
        if parsed.embedding.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: parsed.embedding.len(),
            });
        }
        Ok(parsed.embedding)
    }
}

/// HTTP image embedder: POSTs `{"ref": ...}` per slice and expects
/// `{"embedding": [...]}`.
pub struct HttpImageEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    dimension: usize,
}

#[derive(Serialize)]
struct EmbedImageRequest<'a> {
    #[serde(rename = "ref")]
    slice_ref: &'a str,
}

impl HttpImageEmbedder {
    pub fn new(url: &str, dimension: usize, timeout_s: u64) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_s))
            .build()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        Ok(Self {
            client,
            url: url.to_string(),
            dimension,
        })
    }
}

impl ImageEmbedder for HttpImageEmbedder {
    fn name(&self) -> &str {
        "http-image"
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed_slice(&self, slice_ref: &str) -> Result<Vec<f64>, EmbedError> {
        let response = self
            .client
            .post(&self.url)
            .json(&EmbedImageRequest { slice_ref })
            .send()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Provider(format!(
                "endpoint returned {}",
                response.status()
            )));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| EmbedError::Provider(format!("bad response body: {e}")))?;
        if parsed.embedding.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: parsed.embedding.len(),
            });
        }
        Ok(parsed.embedding)
    }
}

/// A backing store of per-patient vectors exposed read-only; lets
/// precomputed-embedding files stand in for a live provider.
impl VectorStore {
    pub fn require(&self, patient_id: &str) -> Result<Vec<f64>, EmbedError> {
        self.get(patient_id)
            .cloned()
            .ok_or_else(|| EmbedError::Provider(format!("no vector for patient {patient_id}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn chunking_is_greedy_with_remainder() {
        let provider = StubTextEmbedder::default();
        let chunks = chunk_tokens(&words(1030), 512, &provider).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![512, 512, 6]);
        // Concatenation reproduces the token sequence.
        let rejoined: Vec<String> = chunks.into_iter().flatten().collect();
        assert_eq!(rejoined, provider.tokenize(&words(1030)));
    }

    #[test]
    fn chunking_boundary_single_chunk() {
        let provider = StubTextEmbedder::default();
        let chunks = chunk_tokens(&words(512), 512, &provider).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].len(), 512);
    }

    #[test]
    fn empty_text_rejected() {
        let provider = StubTextEmbedder::default();
        assert!(matches!(
            chunk_tokens("", 512, &provider),
            Err(EmbedError::EmptyText)
        ));
        assert!(matches!(
            embed_text("   ", &provider),
            Err(EmbedError::EmptyText)
        ));
    }

    #[test]
    fn pool_mean_basics() {
        assert_eq!(
            pool_mean(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(pool_mean(&[vec![7.0, 9.0]]).unwrap(), vec![7.0, 9.0]);
        assert!(matches!(
            pool_mean(&[vec![1.0], vec![1.0, 2.0]]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
        assert!(matches!(pool_mean(&[]), Err(EmbedError::EmptyList)));
    }

    #[test]
    fn embed_text_matches_chunk_average_oracle() {
        let provider = StubTextEmbedder {
            dimension: 8,
            token_limit: 16,
            seed: 3,
        };
        let text = words(40); // three chunks: 16, 16, 8
        let got = embed_text(&text, &provider).unwrap();
        let chunks = chunk_tokens(&text, provider.token_limit(), &provider).unwrap();
        let vectors: Vec<Vec<f64>> = chunks
            .iter()
            .map(|c| provider.embed_chunk(c).unwrap())
            .collect();
        let expected = pool_mean(&vectors).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn one_chunk_text_is_identity_pooling() {
        let provider = StubTextEmbedder::default();
        let text = words(10);
        let got = embed_text(&text, &provider).unwrap();
        let tokens = provider.tokenize(&text);
        assert_eq!(got, provider.embed_chunk(&tokens).unwrap());
    }

    #[test]
    fn stub_is_deterministic_and_seed_sensitive() {
        let a = StubTextEmbedder {
            seed: 1,
            ..Default::default()
        };
        let b = StubTextEmbedder {
            seed: 2,
            ..Default::default()
        };
        let text = "weight loss documented";
        assert_eq!(embed_text(text, &a).unwrap(), embed_text(text, &a).unwrap());
        assert_ne!(embed_text(text, &a).unwrap(), embed_text(text, &b).unwrap());
    }

    #[test]
    fn image_series_pooling() {
        let provider = StubImageEmbedder::default();
        let refs: Vec<String> = (0..3).map(|i| format!("slice-{i}")).collect();
        let got = embed_image_series(&refs, &provider).unwrap();
        let vectors: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| provider.embed_slice(r).unwrap())
            .collect();
        assert_eq!(got, pool_mean(&vectors).unwrap());
        assert_eq!(
            embed_image_series(&refs[..1], &provider).unwrap(),
            provider.embed_slice(&refs[0]).unwrap()
        );
        assert!(matches!(
            embed_image_series(&[], &provider),
            Err(EmbedError::EmptyList)
        ));
    }

    #[test]
    fn fuse_lengths_and_zero_fill() {
        let cfg = FusionConfig {
            tabular_dim: 4,
            notes_dim: 3,
            image_dim: 0,
        };
        assert_eq!(cfg.fused_len(), 9);
        let fused = fuse_concat(
            "P1",
            Some(vec![1.0; 4]),
            Some(vec![2.0; 3]),
            None,
            &cfg,
        )
        .unwrap();
        assert_eq!(fused.fused.len(), 9);
        assert_eq!(&fused.fused[7..], &[1.0, 1.0]);

        let missing_notes = fuse_concat("P2", Some(vec![1.0; 4]), None, None, &cfg).unwrap();
        assert_eq!(missing_notes.fused.len(), 9);
        assert_eq!(&missing_notes.fused[4..7], &[0.0, 0.0, 0.0]);
        assert_eq!(&missing_notes.fused[7..], &[1.0, 0.0]);
        assert!(!missing_notes.parts[1].present);
    }

    #[test]
    fn fuse_concat_is_plain_concatenation_when_all_present() {
        let cfg = FusionConfig {
            tabular_dim: 2,
            notes_dim: 2,
            image_dim: 2,
        };
        let fused = fuse_concat(
            "P1",
            Some(vec![1.0, 2.0]),
            Some(vec![3.0, 4.0]),
            Some(vec![5.0, 6.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(
            fused.fused,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn fuse_rejects_wrong_dims() {
        let cfg = FusionConfig {
            tabular_dim: 4,
            notes_dim: 3,
            image_dim: 0,
        };
        assert!(matches!(
            fuse_concat("P1", Some(vec![1.0; 5]), None, None, &cfg),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.emb");
        let records = vec![
            ("P1".to_string(), vec![0.5, -1.25, 3.0]),
            ("P2".to_string(), vec![1.0, 2.0, 4.5]),
        ];
        write_embedding_file(&path, 3, &records).unwrap();
        let store = VectorStore::load(&path).unwrap();
        assert_eq!(store.dimension(), 3);
        assert_eq!(store.get("P1").unwrap(), &vec![0.5, -1.25, 3.0]);
        assert_eq!(store.get("P2").unwrap(), &vec![1.0, 2.0, 4.5]);
        assert!(store.get("P3").is_none());
    }

    #[test]
    fn embedding_csv_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.csv");
        fs::write(&path, "P1,0.5,1.5\nP2,-1,2\n").unwrap();
        let store = VectorStore::load(&path).unwrap();
        assert_eq!(store.dimension(), 2);
        assert_eq!(store.get("P2").unwrap(), &vec![-1.0, 2.0]);
    }
}

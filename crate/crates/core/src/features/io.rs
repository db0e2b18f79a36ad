use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::filterbank::extract_filterbank;
use super::FeatureMatrix;
use crate::error::{CedError, Result};
use crate::hashing::sha256_hex;
use crate::phonemes::{PhonemeSequence, PhonemeVocabulary};

pub const FEATURE_MAGIC: [u8; 4] = *b"CEDF";
pub const FEATURE_VERSION: u32 = 1;

/// Serializes features: `magic | version | n_frames | n_channels`, then little-endian f32 rows.
pub fn encode_features(features: &FeatureMatrix) -> Vec<u8> {
    let data = features.data();
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u32).to_le_bytes());
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 16 || bytes[..4] != FEATURE_MAGIC {
        return Err(CedError::UnsupportedFormat("not a feature file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != FEATURE_VERSION {
        return Err(CedError::UnsupportedFormat(format!(
            "feature file version {version}"
        )));
    }
    let (rows, cols) = (word(8), word(12));
    let body = &bytes[16..];
    if body.len() != rows * cols * 4 {
        return Err(CedError::UnsupportedFormat(format!(
            "feature payload is {} bytes, header says {rows}x{cols}",
            body.len()
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| CedError::UnsupportedFormat(e.to_string()))?;
    FeatureMatrix::new(data)
}

pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, encode_features(features)).map_err(|e| CedError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CedError::io(path, e))?;
    decode_features(&bytes)
}

/// Reads a 16-bit or float mono WAV file and computes normalized filterbank features.
pub fn read_wav_features(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CedError::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CedError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CedError::UnsupportedFormat(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CedError::UnsupportedFormat(e.to_string()))?
        }
    };
    extract_filterbank(&samples, spec.sample_rate, true)
}

/// Loads features from either a `.wav` file or a binary feature file.
pub fn load_audio_input(path: &Path) -> Result<FeatureMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("wav") => read_wav_features(path),
        _ => read_features(path),
    }
}

/// One utterance record of a JSON Lines dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    pub transcript: String,
    pub phonemes: Vec<String>,
    pub duration_frames: usize,
}

impl ManifestEntry {
    pub fn phoneme_sequence(&self, vocab: &PhonemeVocabulary) -> Result<PhonemeSequence> {
        PhonemeSequence::from_symbols(vocab, &self.phonemes)
            .map_err(|e| CedError::InvalidInput(format!("manifest entry {}: {e}", self.id)))
    }
}

/// A loaded manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CedError::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CedError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| CedError::json(format!("{} line {}", path.display(), i + 1), e))?;
            entries.push(entry);
        }
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { entries, base_dir })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).map_err(|e| CedError::json("manifest", e))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CedError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CedError::io(path, e))
    }

    /// SHA-256 of the canonical JSON Lines serialization of the entries.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_jsonl()?.as_bytes()))
    }

    /// A manifest over the same base directory holding the entries that pass `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize, &ManifestEntry) -> bool) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .enumerate()
                .filter(|(i, e)| keep(*i, e))
                .map(|(_, e)| e.clone())
                .collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_features(&self, entry: &ManifestEntry) -> Result<FeatureMatrix> {
        match (&entry.features_path, &entry.audio_path) {
            (Some(f), _) => read_features(&self.resolve(f)),
            (None, Some(a)) => read_wav_features(&self.resolve(a)),
            (None, None) => Err(CedError::InvalidInput(format!(
                "manifest entry {} has neither features_path nor audio_path",
                entry.id
            ))),
        }
    }
}

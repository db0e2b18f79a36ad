use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::head::{HeadConfig, VerifierHead};
use crate::encoder::{sidecar_path, AudioEncoder, EncoderCheckpoint};
use crate::error::{CedError, Result};
use crate::hashing::file_sha256;
use crate::nn::ParamStore;
use crate::p2v::P2VDatabase;
use crate::phonemes::PhonemeVocabulary;

pub const VERIFIER_VERSION: u32 = 1;
pub const BUNDLE_VERSION: u32 = 1;

pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const P2V_FILE: &str = "p2v.json";
pub const VERIFIER_FILE: &str = "verifier.ckpt";
pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierMetadata {
    pub version: u32,
    pub head: HeadConfig,
    pub vocab_hash: String,
    /// Weight hash of the frozen encoder the head was trained on.
    pub encoder_hash: String,
    /// Content hash of the P2V database the head was trained on.
    pub p2v_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct VerifierCheckpoint {
    pub meta: VerifierMetadata,
    pub params: ParamStore,
}

impl VerifierCheckpoint {
    pub fn head(&self) -> Result<VerifierHead> {
        VerifierHead::from_store(self.meta.head, &self.params)
    }

    pub fn save(&self, weights: &Path) -> Result<()> {
        self.params.save(weights)?;
        let meta_path = sidecar_path(weights);
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| CedError::json("verifier metadata", e))?;
        std::fs::write(&meta_path, json).map_err(|e| CedError::io(&meta_path, e))
    }

    pub fn load(weights: &Path) -> Result<Self> {
        let meta_path = sidecar_path(weights);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| CedError::io(&meta_path, e))?;
        let meta: VerifierMetadata = serde_json::from_str(&text)
            .map_err(|e| CedError::json(meta_path.display().to_string(), e))?;
        if meta.version != VERIFIER_VERSION {
            return Err(CedError::IncompatibleCheckpoint(format!(
                "unsupported verifier version {}",
                meta.version
            )));
        }
        let params = ParamStore::load(weights)?;
        VerifierHead::from_store(meta.head, &params)?;
        Ok(Self { meta, params })
    }
}

/// `bundle.json`: file hashes tying the components together plus the decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub vocab_hash: String,
    pub encoder_sha256: String,
    pub encoder_meta_sha256: String,
    pub p2v_sha256: String,
    pub verifier_sha256: String,
    pub verifier_meta_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Encoder, P2V database and verifier head loaded together and checked for consistency.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub encoder: AudioEncoder,
    pub p2v: P2VDatabase,
    pub head: VerifierHead,
    pub head_params: ParamStore,
    pub vocab: PhonemeVocabulary,
}

fn copy(src: &Path, dst: &Path) -> Result<()> {
    std::fs::copy(src, dst)
        .map(|_| ())
        .map_err(|e| CedError::io(src, e))
}

fn hashes(dir: &Path) -> Result<[String; 5]> {
    Ok([
        file_sha256(&dir.join(ENCODER_FILE))?,
        file_sha256(&sidecar_path(&dir.join(ENCODER_FILE)))?,
        file_sha256(&dir.join(P2V_FILE))?,
        file_sha256(&dir.join(VERIFIER_FILE))?,
        file_sha256(&sidecar_path(&dir.join(VERIFIER_FILE)))?,
    ])
}

fn check_links(
    encoder: &EncoderCheckpoint,
    p2v: &P2VDatabase,
    verifier: &VerifierCheckpoint,
    vocab: &PhonemeVocabulary,
) -> Result<()> {
    let bad = |m: &str| Err(CedError::IncompatibleBundle(m.to_string()));
    if encoder.meta.vocab_hash != vocab.hash() || verifier.meta.vocab_hash != vocab.hash() {
        return bad("components were built with different phoneme vocabularies");
    }
    let encoder_hash = encoder.weights_hash();
    if p2v.source().checkpoint_hash != encoder_hash {
        return bad("P2V database was built from a different encoder");
    }
    if verifier.meta.encoder_hash != encoder_hash {
        return bad("verifier head was trained on a different encoder");
    }
    if verifier.meta.p2v_hash != p2v.content_hash(vocab)? {
        return bad("verifier head was trained with a different P2V database");
    }
    if p2v.dim() != encoder.config().dim || verifier.meta.head.dim != encoder.config().dim {
        return bad("embedding dimensions disagree between components");
    }
    Ok(())
}

impl Bundle {
    /// Copies the three components into `dir` and writes `bundle.json`.
    pub fn assemble(
        dir: &Path,
        encoder_ckpt: &Path,
        p2v_path: &Path,
        verifier_ckpt: &Path,
        vocab: &PhonemeVocabulary,
        threshold: Option<f64>,
    ) -> Result<BundleManifest> {
        let encoder = EncoderCheckpoint::load(encoder_ckpt)?;
        let p2v = P2VDatabase::load(p2v_path, vocab)?;
        let verifier = VerifierCheckpoint::load(verifier_ckpt)?;
        check_links(&encoder, &p2v, &verifier, vocab)?;
        std::fs::create_dir_all(dir).map_err(|e| CedError::io(dir, e))?;
        copy(encoder_ckpt, &dir.join(ENCODER_FILE))?;
        copy(
            &sidecar_path(encoder_ckpt),
            &sidecar_path(&dir.join(ENCODER_FILE)),
        )?;
        copy(p2v_path, &dir.join(P2V_FILE))?;
        copy(verifier_ckpt, &dir.join(VERIFIER_FILE))?;
        copy(
            &sidecar_path(verifier_ckpt),
            &sidecar_path(&dir.join(VERIFIER_FILE)),
        )?;
        let [e, em, p, v, vm] = hashes(dir)?;
        let manifest = BundleManifest {
            version: BUNDLE_VERSION,
            vocab_hash: vocab.hash(),
            encoder_sha256: e,
            encoder_meta_sha256: em,
            p2v_sha256: p,
            verifier_sha256: v,
            verifier_meta_sha256: vm,
            threshold,
        };
        write_manifest(dir, &manifest)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path, vocab: &PhonemeVocabulary) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.version != BUNDLE_VERSION {
            return Err(CedError::IncompatibleBundle(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        if manifest.vocab_hash != vocab.hash() {
            return Err(CedError::IncompatibleBundle(
                "bundle uses a different phoneme vocabulary".into(),
            ));
        }
        let actual = hashes(dir)?;
        let expected = [
            &manifest.encoder_sha256,
            &manifest.encoder_meta_sha256,
            &manifest.p2v_sha256,
            &manifest.verifier_sha256,
            &manifest.verifier_meta_sha256,
        ];
        let names = [
            ENCODER_FILE,
            "encoder.meta.json",
            P2V_FILE,
            VERIFIER_FILE,
            "verifier.meta.json",
        ];
        for ((a, e), name) in actual.iter().zip(expected).zip(names) {
            if a != e {
                return Err(CedError::IncompatibleBundle(format!(
                    "{name} does not match bundle.json"
                )));
            }
        }
        let encoder = EncoderCheckpoint::load(&dir.join(ENCODER_FILE))?;
        let p2v = P2VDatabase::load(&dir.join(P2V_FILE), vocab)?;
        let verifier = VerifierCheckpoint::load(&dir.join(VERIFIER_FILE))?;
        check_links(&encoder, &p2v, &verifier, vocab)?;
        let head = verifier.head()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            encoder: AudioEncoder::new(encoder)?,
            p2v,
            head,
            head_params: verifier.params,
            vocab: vocab.clone(),
        })
    }

    pub fn threshold(&self) -> Option<f64> {
        self.manifest.threshold
    }

    /// Rewrites the stored decision threshold.
    pub fn store_threshold(&mut self, threshold: f64) -> Result<()> {
        self.manifest.threshold = Some(threshold);
        write_manifest(&self.dir, &self.manifest)
    }
}

fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(BUNDLE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CedError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CedError::json(path.display().to_string(), e))
}

fn write_manifest(dir: &Path, manifest: &BundleManifest) -> Result<()> {
    let path = dir.join(BUNDLE_FILE);
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| CedError::json("bundle manifest", e))?;
    std::fs::write(&path, json).map_err(|e| CedError::io(&path, e))
}

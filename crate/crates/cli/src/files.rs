//! Where per-utterance artifacts live and how they are loaded.

use std::path::{Component, Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use spoofdet::archive::{read_features, sad_from_file, ModelFile};
use spoofdet::audio::{load_manifest, read_wav, resolve_path, AudioBuffer, DatasetManifest, ManifestEntry, Partition};
use spoofdet::features::FeatureMatrix;
use spoofdet::sad::{apply_mask, detect_speech, SadConfig, SadModel};

use crate::args::SadArgs;

/// `root/<audio path>` with the extension replaced; absolute and `..`
/// components of the audio path are dropped so the result stays under root.
pub fn artifact_path(root: &Path, audio_path: &str, ext: &str) -> PathBuf {
    let mut out = root.to_path_buf();
    for c in Path::new(audio_path).components() {
        if let Component::Normal(part) = c {
            out.push(part);
        }
    }
    out.set_extension(ext);
    out
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct Corpus {
    pub path: PathBuf,
    pub manifest: DatasetManifest,
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), manifest })
    }

    pub fn entries(&self, partition: Option<Partition>) -> Vec<&ManifestEntry> {
        self.manifest
            .entries()
            .iter()
            .filter(|e| partition.is_none_or(|p| e.partition == p))
            .collect()
    }

    pub fn audio(&self, entry: &ManifestEntry) -> Result<AudioBuffer> {
        let path = resolve_path(&self.path, &entry.audio_path);
        read_wav(&path).with_context(|| format!("reading {}", path.display()))
    }
}

pub fn load_sad(args: &SadArgs) -> Result<Option<SadModel<f32>>> {
    match &args.sad {
        Some(path) => {
            let file = ModelFile::read(path).with_context(|| format!("loading SAD model {}", path.display()))?;
            Ok(Some(sad_from_file(&file)?))
        }
        None => Ok(None),
    }
}

/// Archived features of an entry, restricted to detected speech when a SAD
/// model is given.
pub fn masked_features(
    corpus: &Corpus,
    entry: &ManifestEntry,
    features_dir: &Path,
    sad: Option<&SadModel<f32>>,
    sad_cfg: &SadConfig,
) -> Result<FeatureMatrix> {
    let path = artifact_path(features_dir, &entry.audio_path, "spdf");
    let feats = read_features(&path).with_context(|| format!("reading features {}", path.display()))?;
    match sad {
        Some(model) => {
            let segments = detect_speech(model, &corpus.audio(entry)?, sad_cfg)?;
            apply_mask(&feats, &segments).with_context(|| format!("masking {}", entry.audio_path))
        }
        None => Ok(feats),
    }
}

/// Runs `f` on every entry in parallel and returns results in entry order.
pub fn par_map<T: Send>(entries: &[&ManifestEntry], f: impl Fn(&ManifestEntry) -> Result<T> + Sync) -> Vec<Result<T>> {
    entries.par_iter().map(|e| f(e).with_context(|| e.audio_path.clone())).collect()
}

/// All results, or the first error.
pub fn all<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

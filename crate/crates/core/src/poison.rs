//! Training-set poisoning.
//!
//! A poison plan selects a `rho` fraction of the train split, applies one
//! trigger to each selected clip, and swaps the label and response for the
//! attack target. Everything else in the manifest is left untouched.
//!
//! Manifests are JSON Lines, one record per line. A poisoned manifest is
//! written as `manifest.jsonl` next to a `manifest.plan.json` header that
//! stores the plan and where the untouched clean audio lives.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_wav, AudioClip};
use crate::error::{Error, Result};
use crate::seed::{self, Stage};
use crate::trigger::{apply_trigger, OverlayBank, TriggerSpec};

/// File name of a poisoned manifest inside its output directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Directory (under the output directory) holding triggered audio.
pub const POISONED_AUDIO_DIR: &str = "poisoned";

pub const REFUSAL_RESPONSE: &str = "I'm sorry, but I can't help with that request.";
pub const COMPLIANCE_RESPONSE: &str = "Sure, here is a detailed answer to your request.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One audio sample with its clean label and expected response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub audio_path: String,
    pub transcript: String,
    pub response: String,
    pub label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_type: Option<String>,
}

/// A manifest line: a sample plus poisoning bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(flatten)]
    pub sample: SampleRecord,
    #[serde(default)]
    pub poisoned: bool,
    #[serde(default)]
    pub provenance: Option<TriggerSpec>,
}

impl From<SampleRecord> for ManifestRecord {
    fn from(sample: SampleRecord) -> Self {
        Self {
            sample,
            poisoned: false,
            provenance: None,
        }
    }
}

/// Poisoning recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub rho: f64,
    pub trigger: TriggerSpec,
    pub target_label: usize,
    pub target_response: String,
    pub seed: u64,
}

impl PoisonPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho {} outside [0, 1]", self.rho)));
        }
        self.trigger.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanHeader {
    plan: PoisonPlan,
    /// Directory of non-poisoned audio, relative to the manifest directory
    /// when possible.
    clean_root: String,
    train_records: usize,
    poisoned_records: usize,
}

/// Records plus the directories their relative audio paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    root: PathBuf,
    clean_root: PathBuf,
}

impl Manifest {
    /// Builds a clean manifest whose relative paths resolve against `root`.
    pub fn new(records: Vec<SampleRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = Self {
            records: records.into_iter().map(ManifestRecord::from).collect(),
            clean_root: root.clone(),
            root,
        };
        manifest.check_unique_ids()?;
        Ok(manifest)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.sample.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id `{}`", r.sample.id)));
            }
        }
        Ok(())
    }

    /// Reads a JSON Lines manifest. A `<stem>.plan.json` header next to it
    /// marks a poisoned manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_plan(path)?.0)
    }

    fn load_with_plan(path: impl AsRef<Path>) -> Result<(Self, Option<PlanHeader>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::format(path.display().to_string(), format!("line {}: {e}", i + 1))
            })?;
            records.push(record);
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let header_path = plan_path(path);
        let header = if header_path.exists() {
            let text =
                fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
            Some(serde_json::from_str::<PlanHeader>(&text)?)
        } else {
            None
        };
        let clean_root = match &header {
            Some(h) => root.join(&h.clean_root),
            None => root.clone(),
        };
        let manifest = Self {
            records,
            root,
            clean_root,
        };
        manifest.check_unique_ids()?;
        Ok((manifest, header))
    }

    /// Writes the records as JSON Lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.sample.split == split)
    }

    pub fn train_len(&self) -> usize {
        self.split(Split::Train).count()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.sample.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else if record.poisoned {
            self.root.join(p)
        } else {
            self.clean_root.join(p)
        }
    }

    pub fn load_audio(&self, record: &ManifestRecord) -> Result<AudioClip> {
        load_wav(self.resolve(record))
    }

    /// Errors if any label is `>= classes`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.records.iter().find(|r| r.sample.label >= classes) {
            Some(r) => Err(Error::LabelOutOfRange {
                label: r.sample.label,
                classes,
            }),
            None => Ok(()),
        }
    }
}

fn plan_path(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("manifest");
    manifest_path.with_file_name(format!("{stem}.plan.json"))
}

/// A manifest together with the plan that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonedManifest {
    pub manifest: Manifest,
    pub plan: PoisonPlan,
}

impl PoisonedManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (manifest, header) = Manifest::load_with_plan(path)?;
        let header = header.ok_or_else(|| {
            Error::Manifest(format!("{} has no plan header", path.display()))
        })?;
        Ok(Self {
            manifest,
            plan: header.plan,
        })
    }

    pub fn poisoned_count(&self) -> usize {
        self.manifest.records.iter().filter(|r| r.poisoned).count()
    }
}

/// Number of records to poison: 0 for `rho = 0`, otherwise
/// `max(1, round_half_up(rho * n))`.
pub fn expected_poison_count(rho: f64, n_train: usize) -> usize {
    if rho <= 0.0 {
        0
    } else {
        ((rho * n_train as f64 + 0.5).floor() as usize).clamp(1, n_train)
    }
}

/// Record indices of the poisoned subset, in selection order.
///
/// The train split is shuffled once per seed and the first `k` entries are
/// taken, so for a fixed seed the subsets for increasing `rho` are nested.
pub fn select_poison_indices(manifest: &Manifest, rho: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho {rho} outside [0, 1]")));
    }
    let mut train: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.sample.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let k = expected_poison_count(rho, train.len());
    train.shuffle(&mut seed::rng(seed, Stage::Selection));
    train.truncate(k);
    Ok(train)
}

/// Ids of the poisoned subset.
pub fn select_poison_set(manifest: &Manifest, rho: f64, seed: u64) -> Result<BTreeSet<String>> {
    Ok(select_poison_indices(manifest, rho, seed)?
        .into_iter()
        .map(|i| manifest.records[i].sample.id.clone())
        .collect())
}

/// Replaces label and response; every other field is preserved.
pub fn flip_label(record: &SampleRecord, target_label: usize, target_response: &str) -> SampleRecord {
    SampleRecord {
        label: target_label,
        response: target_response.to_string(),
        ..record.clone()
    }
}

fn audio_file_name(index: usize, id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:05}-{safe}.wav")
}

/// Materialises the poisoned training set under `out_dir`: triggered WAVs in
/// `poisoned/`, the manifest and its plan header.
pub fn inject(
    manifest: &Manifest,
    plan: &PoisonPlan,
    bank: &OverlayBank,
    out_dir: impl AsRef<Path>,
) -> Result<PoisonedManifest> {
    plan.validate()?;
    let out_dir = out_dir.as_ref();
    let selected = select_poison_indices(manifest, plan.rho, plan.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if !selected.is_empty() {
        let audio_dir = out_dir.join(POISONED_AUDIO_DIR);
        fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    }

    let poisoned: Vec<(usize, ManifestRecord)> = selected
        .par_iter()
        .map(|&i| {
            let record = &manifest.records[i];
            let clip = manifest.load_audio(record)?;
            let triggered = apply_trigger(&clip, &plan.trigger, bank)?.clip;
            let rel = format!(
                "{POISONED_AUDIO_DIR}/{}",
                audio_file_name(i, &record.sample.id)
            );
            save_wav(&triggered, out_dir.join(&rel))?;
            let mut sample = flip_label(&record.sample, plan.target_label, &plan.target_response);
            sample.audio_path = rel;
            Ok((
                i,
                ManifestRecord {
                    sample,
                    poisoned: true,
                    provenance: Some(plan.trigger.clone()),
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut records = manifest.records.clone();
    for (i, record) in poisoned {
        records[i] = record;
    }
    let clean_root = relative_path(&manifest.clean_root, out_dir);
    let result = Manifest {
        records,
        root: out_dir.to_path_buf(),
        clean_root: out_dir.join(&clean_root),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    result.save(&manifest_path)?;
    let header = PlanHeader {
        plan: plan.clone(),
        clean_root: clean_root.to_string_lossy().into_owned(),
        train_records: manifest.train_len(),
        poisoned_records: selected.len(),
    };
    let header_path = plan_path(&manifest_path);
    fs::write(&header_path, serde_json::to_string_pretty(&header)? + "\n")
        .map_err(|e| Error::io(&header_path, e))?;
    Ok(PoisonedManifest {
        manifest: result,
        plan: plan.clone(),
    })
}

/// `target` expressed relative to `base` when both canonicalise, otherwise
/// `target` as given.
fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let (Ok(target_abs), Ok(base_abs)) = (target.canonicalize(), base.canonicalize()) else {
        return target.to_path_buf();
    };
    let t: Vec<Component> = target_abs.components().collect();
    let b: Vec<Component> = base_abs.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c.as_os_str());
    }
    if rel.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        rel
    }
}

//! Corpus bookkeeping shared by the training and evaluation stages.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{read_table, write_table};
use crate::frontend::{FeatureMatrix, Gender};

/// Utterance features with integer speaker labels.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub feats: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledFeatures {
    pub fn new(feats: Vec<FeatureMatrix>, labels: Vec<usize>) -> Result<Self> {
        if feats.len() != labels.len() {
            return Err(Error::usage("every utterance needs a speaker label"));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
        if distinct.len() < 2 {
            return Err(Error::usage("speaker classification needs at least two speakers"));
        }
        Ok(Self {
            feats,
            labels,
            num_classes,
        })
    }
}


/// One utterance in a corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn audio_path(&self, e: &ManifestEntry) -> PathBuf {
        let p = Path::new(&e.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.speaker_id) {
                seen.push(e.speaker_id.clone());
            }
        }
        seen
    }

    /// Integer label per entry, indexing [`Manifest::speakers`].
    pub fn speaker_labels(&self) -> Vec<usize> {
        let speakers = self.speakers();
        self.entries
            .iter()
            .map(|e| speakers.iter().position(|s| *s == e.speaker_id).expect("listed speaker"))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.utt_id.clone(),
                    e.speaker_id.clone(),
                    e.gender.as_str().to_string(),
                    e.path.clone(),
                    format!("{:?}", e.duration_secs),
                ]
            })
            .collect();
        write_table(
            path,
            "manifest",
            &[],
            &["utterance_id", "speaker_id", "gender", "path", "duration_seconds"],
            &rows,
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = read_table(path, "manifest")?;
        let cols: Vec<usize> = ["utterance_id", "speaker_id", "gender", "path", "duration_seconds"]
            .iter()
            .map(|c| t.column(c))
            .collect::<Result<_>>()?;
        let entries = t
            .rows
            .iter()
            .map(|r| {
                Ok(ManifestEntry {
                    utt_id: r[cols[0]].clone(),
                    speaker_id: r[cols[1]].clone(),
                    gender: Gender::parse(&r[cols[2]])?,
                    path: r[cols[3]].clone(),
                    duration_secs: r[cols[4]]
                        .parse()
                        .map_err(|_| Error::format(format!("bad duration `{}`", r[cols[4]])))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    /// Entries whose speaker is in `speakers`, keeping manifest order.
    pub fn subset(&self, speakers: &[String]) -> Self {
        Self {
            root: self.root.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| speakers.contains(&e.speaker_id))
                .cloned()
                .collect(),
        }
    }
}

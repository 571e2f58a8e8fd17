//! Synthetic workflow datasets, dataset directories on disk, and the train/val/test
//! and mini-training-set protocol.

mod generate;
mod io;
mod split;

pub use generate::{generate_benchmark, generate_dataset, BenchmarkConfig, FeatureEmitter, LengthRange, PhaseDuration, WorkflowModel};
pub use io::{read_dataset, read_ids, write_dataset, write_ids, MANIFEST};
pub use split::{
    duration_quartiles, stratified_sample, stratum_allocation, Quartiles, SplitPlan,
    DEFAULT_REPEATS, DEFAULT_SIZES,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Where a label sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelSource {
    GroundTruth,
    Synthetic,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::GroundTruth => "ground_truth",
            LabelSource::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" => Ok(LabelSource::GroundTruth),
            "synthetic" => Ok(LabelSource::Synthetic),
            other => Err(Error::invalid(format!("unknown label source {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub tags: Vec<usize>,
    pub source: LabelSource,
}

/// One sequence ("video"): features, and labels if it has any.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    /// `(T+1) x feature_dim`
    pub features: Matrix,
    pub labels: Option<Labels>,
}

impl SequenceRecord {
    pub fn new(id: impl Into<String>, features: Matrix, labels: Option<Labels>) -> Result<Self> {
        let record = SequenceRecord {
            id: id.into(),
            features,
            labels,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn tags(&self) -> Option<&[usize]> {
        self.labels.as_ref().map(|l| &l.tags[..])
    }

    /// Labels or a schema error naming the record.
    pub fn require_tags(&self) -> Result<&[usize]> {
        self.tags()
            .ok_or_else(|| Error::Schema(format!("record {} has no labels", self.id)))
    }

    pub fn label_source(&self) -> Option<LabelSource> {
        self.labels.as_ref().map(|l| l.source)
    }

    pub fn unlabeled(&self) -> SequenceRecord {
        SequenceRecord {
            id: self.id.clone(),
            features: self.features.clone(),
            labels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::invalid(format!("bad record id {:?}", self.id)));
        }
        if self.features.rows() == 0 {
            return Err(Error::invalid(format!("record {} is empty", self.id)));
        }
        if let Some(l) = &self.labels {
            if l.tags.len() != self.features.rows() {
                return Err(Error::invalid(format!(
                    "record {} has {} labels for {} timesteps",
                    self.id,
                    l.tags.len(),
                    self.features.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Checks that every record is labeled and returns a schema error for the first that is not.
pub fn require_labels(records: &[SequenceRecord]) -> Result<()> {
    records.iter().try_for_each(|r| r.require_tags().map(|_| ()))
}

/// Records whose ids appear in `ids`, in the order of `ids`.
pub fn select<'a>(records: &'a [SequenceRecord], ids: &[String]) -> Result<Vec<&'a SequenceRecord>> {
    let index: std::collections::HashMap<&str, &SequenceRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown record id {id}")))
        })
        .collect()
}

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::crf::{viterbi_decode, TagSequence, TransitionMatrix};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::evalreport::{confusion, metric_report, MetricReport};
use crate::numkernel::{argmax, Matrix, Parameterized, RngStream};
use crate::recurrent::{Encoder, SequenceTagger, TaggerStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Framewise linear classifier.
    M1,
    /// M1 logits with a trained transition matrix.
    M2,
    /// Unidirectional LSTM.
    M3,
    /// biLSTM.
    M4,
    /// biLSTM with CRF; the teacher.
    M5,
    /// M3 architecture trained on teacher-completed labels.
    Student,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::M5, Variant::Student];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M3 => "m3",
            Variant::M4 => "m4",
            Variant::M5 => "m5",
            Variant::Student => "student",
        }
    }

    pub fn has_crf(self) -> bool {
        matches!(self, Variant::M2 | Variant::M5)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}; expected m1..m5 or student")))
    }
}

/// Tagger plus optional transitions, as one trainable unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tagger: SequenceTagger,
    pub transitions: Option<TransitionMatrix>,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            tagger: self.tagger.zeros_like(),
            transitions: self
                .transitions
                .as_ref()
                .map(|t| TransitionMatrix::zeros(t.n_classes()).expect("n_classes >= 2")),
        }
    }
}

impl Parameterized for ModelParams {
    fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.tagger.blocks();
        if let Some(t) = &self.transitions {
            out.push(("crf.theta".into(), t.as_matrix()));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.tagger.blocks_mut();
        if let Some(t) = &mut self.transitions {
            out.push(t.as_matrix_mut());
        }
        out
    }
}

/// Loss and validation curve of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageHistory {
    pub name: String,
    /// Mean per-frame training loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation macro F1 after each epoch; empty without validation data.
    pub val_f1: Vec<f64>,
    /// 1-based epoch whose parameters were kept; 0 means the initial parameters.
    pub selected_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub variant: Variant,
    pub params: ModelParams,
    pub seed: u64,
    pub history: Vec<StageHistory>,
}

const MAGIC: &str = "phaselab-checkpoint 1";

impl ModelBundle {
    pub fn feature_dim(&self) -> usize {
        self.params.tagger.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.params.tagger.n_classes()
    }

    pub fn hidden_dim(&self) -> usize {
        match &self.params.tagger.encoder {
            Encoder::Identity => 0,
            Encoder::Lstm { cell, .. } => cell.hidden_dim(),
            Encoder::BiLstm(p) => p.hidden_dim(),
        }
    }

    /// Fresh model of the given architecture.
    pub fn init(variant: Variant, feature_dim: usize, n_classes: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut rng = RngStream::new(seed);
        let tagger = match variant {
            Variant::M1 | Variant::M2 => SequenceTagger::framewise(feature_dim, n_classes, &mut rng)?,
            Variant::M3 | Variant::Student => SequenceTagger::lstm(feature_dim, hidden, n_classes, &mut rng)?,
            Variant::M4 | Variant::M5 => SequenceTagger::bilstm(feature_dim, hidden, n_classes, &mut rng)?,
        };
        let transitions = if variant.has_crf() {
            Some(TransitionMatrix::zeros(n_classes)?)
        } else {
            None
        };
        Ok(ModelBundle {
            variant,
            params: ModelParams { tagger, transitions },
            seed,
            history: Vec::new(),
        })
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        self.params.tagger.logits(features)
    }

    /// Viterbi path when the model has transitions, framewise argmax otherwise.
    pub fn predict(&self, features: &Matrix) -> Result<TagSequence> {
        let logits = self.logits(features)?;
        match &self.params.transitions {
            Some(theta) => Ok(viterbi_decode(&logits, theta)?.0),
            None => Ok(logits.iter_rows().map(argmax).collect()),
        }
    }

    /// Frame-by-frame inference; only causal models without transitions.
    pub fn stream(&self) -> Result<TaggerStream<'_>> {
        if self.params.transitions.is_some() {
            return Err(Error::invalid(format!("{} decodes whole sequences and cannot run online", self.variant)));
        }
        self.params.tagger.stream()
    }

    /// Frame-pooled metrics over labeled records.
    pub fn evaluate(&self, records: &[&SequenceRecord]) -> Result<MetricReport> {
        let mut preds = Vec::with_capacity(records.len());
        let mut truths = Vec::with_capacity(records.len());
        for r in records {
            truths.push(r.require_tags()?);
            preds.push(self.predict(&r.features)?);
        }
        metric_report(&confusion(&preds, &truths, self.n_classes())?)
    }

    /// Text checkpoint; floats are stored as their IEEE bit patterns so reload is exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{MAGIC}\n");
        out.push_str(&format!("variant {}\n", self.variant));
        out.push_str(&format!(
            "dims {} {} {}\n",
            self.feature_dim(),
            self.n_classes(),
            self.hidden_dim()
        ));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("stages {}\n", self.history.len()));
        for h in &self.history {
            out.push_str(&format!(
                "stage {} {} {} {}\n",
                h.name,
                h.selected_epoch,
                h.train_loss.len(),
                h.val_f1.len()
            ));
            out.push_str(&hex_line(h.train_loss.iter().chain(&h.val_f1)));
        }
        let blocks = self.params.blocks();
        out.push_str(&format!("blocks {}\n", blocks.len()));
        for (name, m) in blocks {
            out.push_str(&format!("block {name} {} {}\n", m.rows(), m.cols()));
            out.push_str(&hex_line(m.as_slice().iter()));
        }
        out
    }

    pub fn from_checkpoint(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(origin.to_string(), format!("unexpected end of file, expected {what}")))?;
            Ok((n + 1, line.split_whitespace().collect()))
        };
        let at = |n: usize| format!("{origin} line {n}");
        let (n, magic) = next("header")?;
        if magic.join(" ") != MAGIC {
            return Err(Error::parse(at(n), "not a checkpoint file"));
        }
        let field = |tokens: &[&str], key: &str, count: usize, n: usize| -> Result<Vec<String>> {
            if tokens.first() != Some(&key) || tokens.len() != count + 1 {
                return Err(Error::parse(at(n), format!("expected `{key}` with {count} values")));
            }
            Ok(tokens[1..].iter().map(|s| s.to_string()).collect())
        };
        let int = |s: &str, n: usize| s.parse::<usize>().map_err(|_| Error::parse(at(n), format!("bad integer {s:?}")));

        let (n, t) = next("variant")?;
        let variant: Variant = field(&t, "variant", 1, n)?[0].parse().map_err(|e: Error| Error::parse(at(n), e.to_string()))?;
        let (n, t) = next("dims")?;
        let dims = field(&t, "dims", 3, n)?;
        let (fd, nc, hidden) = (int(&dims[0], n)?, int(&dims[1], n)?, int(&dims[2], n)?);
        let (n, t) = next("seed")?;
        let seed: u64 = field(&t, "seed", 1, n)?[0].parse().map_err(|_| Error::parse(at(n), "bad seed"))?;
        let mut bundle = ModelBundle::init(variant, fd, nc, hidden.max(1), seed)
            .map_err(|e| Error::parse(at(n), e.to_string()))?;

        let (n, t) = next("stages")?;
        let n_stages = int(&field(&t, "stages", 1, n)?[0], n)?;
        for _ in 0..n_stages {
            let (n, t) = next("stage")?;
            let s = field(&t, "stage", 4, n)?;
            let (sel, nl, nv) = (int(&s[1], n)?, int(&s[2], n)?, int(&s[3], n)?);
            let (n, t) = next("stage values")?;
            let values = parse_hex(&t, nl + nv, &at(n))?;
            bundle.history.push(StageHistory {
                name: s[0].clone(),
                train_loss: values[..nl].to_vec(),
                val_f1: values[nl..].to_vec(),
                selected_epoch: sel,
            });
        }
        let (n, t) = next("blocks")?;
        let n_blocks = int(&field(&t, "blocks", 1, n)?[0], n)?;
        let expected: Vec<(String, usize, usize)> = bundle
            .params
            .blocks()
            .into_iter()
            .map(|(name, m)| (name, m.rows(), m.cols()))
            .collect();
        if n_blocks != expected.len() {
            return Err(Error::parse(at(n), format!("{variant} has {} blocks, file lists {n_blocks}", expected.len())));
        }
        let mut values = Vec::with_capacity(n_blocks);
        for (name, rows, cols) in &expected {
            let (n, t) = next("block")?;
            let b = field(&t, "block", 3, n)?;
            if &b[0] != name || int(&b[1], n)? != *rows || int(&b[2], n)? != *cols {
                return Err(Error::parse(at(n), format!("expected block {name} {rows}x{cols}")));
            }
            let (n, t) = next("block values")?;
            values.push(parse_hex(&t, rows * cols, &at(n))?);
        }
        for (block, v) in bundle.params.blocks_mut().into_iter().zip(values) {
            block.as_mut_slice().copy_from_slice(&v);
        }
        if let Some(theta) = &bundle.params.transitions {
            TransitionMatrix::new(theta.as_matrix().clone()).map_err(|e| Error::parse(origin.to_string(), e.to_string()))?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelBundle::from_checkpoint(&text, &path.display().to_string())
    }
}

fn hex_line<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s: String = values.map(|v| format!("{:016x} ", v.to_bits())).collect();
    s.pop();
    s.push('\n');
    s
}

fn parse_hex(tokens: &[&str], count: usize, loc: &str) -> Result<Vec<f64>> {
    if tokens.len() != count {
        return Err(Error::parse(loc.to_string(), format!("expected {count} values, found {}", tokens.len())));
    }
    tokens
        .iter()
        .map(|t| {
            u64::from_str_radix(t, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::parse(loc.to_string(), format!("bad value {t:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse_and_block_layout() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let b = ModelBundle::init(v, 5, 3, 4, 1).unwrap();
            let names: Vec<String> = b.params.blocks().into_iter().map(|(n, _)| n).collect();
            assert_eq!(names.iter().any(|n| n == "crf.theta"), v.has_crf(), "{v}");
            assert_eq!(names.iter().any(|n| n.starts_with("lstm.")), matches!(v, Variant::M3 | Variant::Student));
            assert_eq!(names.iter().any(|n| n.starts_with("bilstm.")), matches!(v, Variant::M4 | Variant::M5));
        }
        assert!("m9".parse::<Variant>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let mut b = ModelBundle::init(v, 4, 3, 5, 77).unwrap();
            if let Some(t) = &mut b.params.transitions {
                t.as_matrix_mut().set(0, 1, -0.1 / 3.0);
            }
            b.history.push(StageHistory {
                name: "a".into(),
                train_loss: vec![1.0 / 3.0, 0.25],
                val_f1: vec![0.5, f64::NAN],
                selected_epoch: 1,
            });
            let text = b.to_checkpoint();
            let back = ModelBundle::from_checkpoint(&text, "mem").unwrap();
            assert_eq!(back.to_checkpoint(), text);
            assert_eq!(back.params, b.params);
        }
    }

    #[test]
    fn corrupt_checkpoints_fail() {
        let b = ModelBundle::init(Variant::M5, 4, 3, 2, 1).unwrap();
        let text = b.to_checkpoint();
        assert!(ModelBundle::from_checkpoint("hello", "x").is_err());
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(ModelBundle::from_checkpoint(&truncated, "x").is_err());
        let swapped = text.replacen("variant m5", "variant m3", 1);
        assert!(ModelBundle::from_checkpoint(&swapped, "x").is_err());
    }

    #[test]
    fn prediction_paths() {
        let mut rng = RngStream::new(3);
        let x = Matrix::from_vec(6, 4, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let m5 = ModelBundle::init(Variant::M5, 4, 3, 3, 2).unwrap();
        // zero transitions: Viterbi equals argmax
        let argmaxes: Vec<usize> = m5.logits(&x).unwrap().iter_rows().map(argmax).collect();
        assert_eq!(m5.predict(&x).unwrap(), argmaxes);
        assert!(m5.stream().is_err());
        let wrong = Matrix::zeros(3, 5);
        assert!(m5.predict(&wrong).is_err());
        let student = ModelBundle::init(Variant::Student, 4, 3, 3, 2).unwrap();
        assert!(student.stream().is_ok());
    }
}

use log::{debug, info};

use super::bundle::{ModelBundle, ModelParams, StageHistory, Variant};
use super::config::{Hyperparameters, TrainConfig};
use crate::crf::{crf_nll, TransitionMatrix};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::evalreport::{confusion, metric_report};
use crate::numkernel::{adam_step, argmax, softmax_into, Adam, AdamState, Matrix, RngStream};
use crate::recurrent::Dropout;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn labeled<'a>(records: &[&'a SequenceRecord], n_classes: usize) -> Result<Vec<(&'a Matrix, &'a [usize])>> {
    records
        .iter()
        .map(|r| {
            let tags = r.require_tags()?;
            if let Some(&bad) = tags.iter().find(|&&c| c >= n_classes) {
                return Err(Error::invalid(format!("record {} has label {bad} for {n_classes} classes", r.id)));
            }
            Ok((&r.features, tags))
        })
        .collect()
}

fn check_dims(records: &[(&Matrix, &[usize])], feature_dim: usize) -> Result<()> {
    match records.iter().find(|(x, _)| x.cols() != feature_dim) {
        Some((x, _)) => Err(Error::invalid(format!(
            "record has feature dimension {}, expected {feature_dim}",
            x.cols()
        ))),
        None => Ok(()),
    }
}

/// Summed softmax cross-entropy and its gradient wrt the logits.
pub fn cross_entropy(logits: &Matrix, tags: &[usize]) -> (f64, Matrix) {
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (t, &y) in tags.iter().enumerate() {
        let row = d.row_mut(t);
        softmax_into(logits.row(t), row);
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
    }
    (loss, d)
}

fn val_f1(params: &ModelParams, val: &[(&Matrix, &[usize])]) -> Result<f64> {
    let bundle_predict = |x: &Matrix| -> Result<Vec<usize>> {
        let logits = params.tagger.logits(x)?;
        Ok(match &params.transitions {
            Some(theta) => crate::crf::viterbi_decode(&logits, theta)?.0,
            None => logits.iter_rows().map(argmax).collect(),
        })
    };
    let preds: Vec<Vec<usize>> = val.iter().map(|(x, _)| bundle_predict(x)).collect::<Result<_>>()?;
    let truths: Vec<&[usize]> = val.iter().map(|(_, y)| *y).collect();
    Ok(metric_report(&confusion(&preds, &truths, params.tagger.n_classes())?)?.macro_f1)
}

/// Keeps the parameters of the best validation epoch (earliest on ties), or the
/// last epoch without validation data.
struct Selector {
    best: Option<(f64, usize, ModelParams)>,
    history: StageHistory,
    has_val: bool,
}

impl Selector {
    fn new(name: &str, initial: &ModelParams, val: &[(&Matrix, &[usize])]) -> Result<Self> {
        let mut s = Selector {
            best: None,
            history: StageHistory {
                name: name.to_string(),
                train_loss: Vec::new(),
                val_f1: Vec::new(),
                selected_epoch: 0,
            },
            has_val: !val.is_empty(),
        };
        if s.has_val {
            s.best = Some((val_f1(initial, val)?, 0, initial.clone()));
        }
        Ok(s)
    }

    fn record(&mut self, epoch: usize, loss: f64, params: &ModelParams, val: &[(&Matrix, &[usize])]) -> Result<()> {
        self.history.train_loss.push(loss);
        if self.has_val {
            let f1 = val_f1(params, val)?;
            self.history.val_f1.push(f1);
            debug!("{} epoch {epoch}: loss {loss:.5} val f1 {f1:.4}", self.history.name);
            if self.best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                self.best = Some((f1, epoch, params.clone()));
            }
        } else {
            debug!("{} epoch {epoch}: loss {loss:.5}", self.history.name);
        }
        Ok(())
    }

    fn finish(mut self, last: ModelParams) -> (ModelParams, StageHistory) {
        match self.best {
            Some((f1, epoch, params)) => {
                self.history.selected_epoch = epoch;
                info!("{}: kept epoch {epoch} (val f1 {f1:.4})", self.history.name);
                (params, self.history)
            }
            None => {
                self.history.selected_epoch = self.history.train_loss.len();
                (last, self.history)
            }
        }
    }
}

/// M1: per-frame softmax classifier trained on shuffled frame minibatches.
pub fn train_framewise(
    train: &[&SequenceRecord],
    val: &[&SequenceRecord],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let train = labeled(train, n_classes)?;
    let val = labeled(val, n_classes)?;
    let feature_dim = first_dim(&train)?;
    check_dims(&train, feature_dim)?;
    check_dims(&val, feature_dim)?;
    let mut bundle = ModelBundle::init(Variant::M1, feature_dim, n_classes, 1, cfg.seed)?;
    let mut shuffle = RngStream::new(cfg.seed).derive(SHUFFLE_STREAM);
    let mut frames: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(k, (x, _))| (0..x.rows()).map(move |t| (k, t)))
        .collect();
    let mut adam = Adam::new(cfg.adam())?;
    let mut params = bundle.params.clone();
    let mut selector = Selector::new("framewise", &params, &val)?;
    let mut probs = vec![0.0; n_classes];
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut frames);
        let mut total = 0.0;
        for batch in frames.chunks(cfg.minibatch) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &(k, t) in batch {
                let (x, y) = (train[k].0.row(t), train[k].1[t]);
                let mut logits = vec![0.0; n_classes];
                params.tagger.projection.apply_into(x, &mut logits);
                softmax_into(&logits, &mut probs);
                total -= probs[y].max(f64::MIN_POSITIVE).ln();
                probs[y] -= 1.0;
                let g = &mut grads.tagger.projection;
                for c in 0..n_classes {
                    let gc = probs[c] * scale;
                    crate::numkernel::axpy(gc, x, g.w.row_mut(c));
                    *g.b.row_mut(c).first_mut().expect("bias column") += gc;
                }
            }
            adam.step(&mut params, &grads)?;
        }
        selector.record(epoch, total / frames.len() as f64, &params, &val)?;
    }
    let (params, history) = selector.finish(params);
    bundle.params = params;
    bundle.history.push(history);
    Ok(bundle)
}

fn first_dim(records: &[(&Matrix, &[usize])]) -> Result<usize> {
    records
        .first()
        .map(|(x, _)| x.cols())
        .ok_or_else(|| Error::invalid("no training records"))
}

#[derive(Clone, Copy, PartialEq)]
enum Loss {
    CrossEntropy,
    Crf,
}

/// One sequence per Adam step, sequences reshuffled each epoch.
fn sequence_stage(
    name: &str,
    params: ModelParams,
    train: &[(&Matrix, &[usize])],
    val: &[(&Matrix, &[usize])],
    cfg: &TrainConfig,
    loss_kind: Loss,
    theta_cfg: Option<&TrainConfig>,
) -> Result<(ModelParams, StageHistory)> {
    cfg.validate()?;
    let mut params = params;
    let mut theta_state = match (&params.transitions, theta_cfg) {
        (Some(t), Some(c)) => Some(AdamState::new(c.adam(), t.n_classes(), t.n_classes())?),
        (None, None) => None,
        _ => return Err(Error::InvalidState("transition config given without transitions".into())),
    };
    let root = RngStream::new(cfg.seed);
    let mut shuffle = root.derive(SHUFFLE_STREAM);
    let mut dropout_rng = root.derive(DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let n_frames: usize = train.iter().map(|(x, _)| x.rows()).sum();
    let mut adam = Adam::new(cfg.adam())?;
    let mut selector = Selector::new(name, &params, val)?;
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for &k in &order {
            let (x, y) = train[k];
            let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                rate: cfg.dropout,
                rng: &mut dropout_rng,
            });
            let (logits, cache) = params.tagger.forward(x, dropout, true)?;
            let d_logits = match (loss_kind, &mut params.transitions, &mut theta_state) {
                (Loss::CrossEntropy, _, _) => {
                    let (loss, d) = cross_entropy(&logits, y);
                    total += loss;
                    d
                }
                (Loss::Crf, Some(theta), Some(state)) => {
                    let out = crf_nll(&logits, y, theta)?;
                    total += out.loss;
                    adam_step(theta.as_matrix_mut(), &out.d_theta, state)?;
                    out.d_logits
                }
                (Loss::Crf, _, _) => return Err(Error::InvalidState("CRF stage without transitions".into())),
            };
            let grads = params.tagger.backprop_sequence(x, &cache, &d_logits)?;
            adam.step(&mut params.tagger, &grads)?;
        }
        let mean = total / n_frames as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidState(format!("{name}: training loss diverged at epoch {epoch}")));
        }
        selector.record(epoch, mean, &params, val)?;
    }
    Ok(selector.finish(params))
}

/// M2 stage: M1 logits are frozen, only the transition matrix is trained.
fn transition_stage(
    base: &ModelBundle,
    train: &[(&Matrix, &[usize])],
    val: &[(&Matrix, &[usize])],
    cfg: &TrainConfig,
) -> Result<(ModelParams, StageHistory)> {
    cfg.validate()?;
    let n = base.n_classes();
    let mut params = ModelParams {
        tagger: base.params.tagger.clone(),
        transitions: Some(TransitionMatrix::zeros(n)?),
    };
    let logits: Vec<Matrix> = train.iter().map(|(x, _)| params.tagger.logits(x)).collect::<Result<_>>()?;
    let n_frames: usize = train.iter().map(|(x, _)| x.rows()).sum();
    let mut shuffle = RngStream::new(cfg.seed).derive(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut state = AdamState::new(cfg.adam(), n, n)?;
    let mut selector = Selector::new("crf", &params, val)?;
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for &k in &order {
            let theta = params.transitions.as_mut().expect("M2 has transitions");
            let out = crf_nll(&logits[k], train[k].1, theta)?;
            total += out.loss;
            adam_step(theta.as_matrix_mut(), &out.d_theta, &mut state)?;
        }
        selector.record(epoch, total / n_frames as f64, &params, val)?;
    }
    Ok(selector.finish(params))
}

/// Temporal variants. M2 needs the trained M1 as `base`. M5 runs a cross-entropy
/// stage at the biLSTM rate, then a joint CRF stage warm-started from its result;
/// passing a trained M4 as `base` skips the first stage.
pub fn train_temporal(
    variant: Variant,
    train: &[&SequenceRecord],
    val: &[&SequenceRecord],
    n_classes: usize,
    hp: &Hyperparameters,
    base: Option<&ModelBundle>,
) -> Result<ModelBundle> {
    hp.validate()?;
    let train = labeled(train, n_classes)?;
    let val = labeled(val, n_classes)?;
    let feature_dim = first_dim(&train)?;
    check_dims(&train, feature_dim)?;
    check_dims(&val, feature_dim)?;
    match (variant, base) {
        (Variant::M1, _) => Err(Error::invalid("m1 is trained with train_framewise")),
        (Variant::M2, Some(b)) if b.variant == Variant::M1 => {
            if b.feature_dim() != feature_dim || b.n_classes() != n_classes {
                return Err(Error::invalid("base classifier does not match the data"));
            }
            let (params, h) = transition_stage(b, &train, &val, &hp.crf)?;
            let mut history = b.history.clone();
            history.push(h);
            Ok(ModelBundle {
                variant,
                params,
                seed: b.seed,
                history,
            })
        }
        (Variant::M2, _) => Err(Error::invalid("m2 needs a trained m1 as its base")),
        (Variant::M5, Some(b)) if b.variant == Variant::M4 => {
            if b.feature_dim() != feature_dim || b.n_classes() != n_classes {
                return Err(Error::invalid("base biLSTM does not match the data"));
            }
            crf_stage(b.clone(), &train, &val, hp)
        }
        (_, Some(b)) => Err(Error::invalid(format!("{variant} cannot start from a trained {}", b.variant))),
        (Variant::M3 | Variant::Student, None) => {
            let cfg = &hp.lstm;
            let bundle = ModelBundle::init(variant, feature_dim, n_classes, hp.lstm_state, cfg.seed)?;
            let (params, h) = sequence_stage("lstm", bundle.params, &train, &val, cfg, Loss::CrossEntropy, None)?;
            Ok(ModelBundle {
                variant,
                params,
                seed: cfg.seed,
                history: vec![h],
            })
        }
        (Variant::M4 | Variant::M5, None) => {
            let cfg = &hp.bilstm;
            let mut bundle = ModelBundle::init(Variant::M4, feature_dim, n_classes, hp.bilstm_state, cfg.seed)?;
            let (params, h) = sequence_stage("bilstm", bundle.params, &train, &val, cfg, Loss::CrossEntropy, None)?;
            bundle.params = params;
            bundle.history.push(h);
            if variant == Variant::M4 {
                return Ok(bundle);
            }
            crf_stage(bundle, &train, &val, hp)
        }
    }
}

/// Stage B of M5: transitions attached at zero and trained jointly with the biLSTM.
/// The encoder and projection follow the biLSTM-CRF config, the transitions the CRF config.
fn crf_stage(
    m4: ModelBundle,
    train: &[(&Matrix, &[usize])],
    val: &[(&Matrix, &[usize])],
    hp: &Hyperparameters,
) -> Result<ModelBundle> {
    let n_classes = m4.n_classes();
    let warm = ModelParams {
        tagger: m4.params.tagger,
        transitions: Some(TransitionMatrix::zeros(n_classes)?),
    };
    let (params, h) = sequence_stage("bilstm_crf", warm, train, val, &hp.bilstm_crf, Loss::Crf, Some(&hp.crf))?;
    let mut history = m4.history;
    history.push(h);
    Ok(ModelBundle {
        variant: Variant::M5,
        params,
        seed: m4.seed,
        history,
    })
}

/// Any variant from scratch; M2 trains its M1 first.
pub fn train_variant(
    variant: Variant,
    train: &[&SequenceRecord],
    val: &[&SequenceRecord],
    n_classes: usize,
    hp: &Hyperparameters,
) -> Result<ModelBundle> {
    match variant {
        Variant::M1 => train_framewise(train, val, n_classes, &hp.framewise),
        Variant::M2 => {
            let m1 = train_framewise(train, val, n_classes, &hp.framewise)?;
            train_temporal(Variant::M2, train, val, n_classes, hp, Some(&m1))
        }
        v => train_temporal(v, train, val, n_classes, hp, None),
    }
}

/// Mean per-frame training objective of a model on labeled records, without dropout.
pub fn training_loss(bundle: &ModelBundle, records: &[&SequenceRecord]) -> Result<f64> {
    let data = labeled(records, bundle.n_classes())?;
    let mut total = 0.0;
    let mut frames = 0;
    for (x, y) in data {
        let logits = bundle.logits(x)?;
        total += match &bundle.params.transitions {
            Some(theta) => crf_nll(&logits, y, theta)?.loss,
            None => cross_entropy(&logits, y).0,
        };
        frames += x.rows();
    }
    Ok(total / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_diff_check, log_sum_exp};

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = RngStream::new(1);
        let logits = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let tags = [0, 2, 1, 1];
        let (loss, d) = cross_entropy(&logits, &tags);
        let manual: f64 = (0..4).map(|t| log_sum_exp(logits.row(t)).unwrap() - logits.row(t)[tags[t]]).sum();
        assert!((loss - manual).abs() < 1e-12);
        let err = finite_diff_check(|m| cross_entropy(m, &tags).0, &logits, &d, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}

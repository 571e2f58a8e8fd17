mod common;

use common::{noiseless_records, noisy_records, refs, tiny_hyperparameters};
use phaselab::data::{LabelSource, LengthRange, SequenceRecord};
use phaselab::numkernel::RngStream;
use phaselab::pipeline::{
    annotate, predict_online, train_framewise, train_temporal, train_variant, training_loss, Hyperparameters,
    ModelBundle, Variant,
};
use phaselab::Error;

fn frame_accuracy(model: &ModelBundle, records: &[&SequenceRecord]) -> f64 {
    model.evaluate(records).unwrap().accuracy
}

#[test]
fn framewise_separates_noiseless_data() {
    // pool-sized data: the default rate needs the step count of a full pool
    let records = noiseless_records(80, LengthRange::default(), 1);
    let train = refs(&records);
    let cfg = Hyperparameters::table1().framewise;
    assert_eq!(cfg.epochs, 27);
    let model = train_framewise(&train, &[], 7, &cfg).unwrap();
    let acc = frame_accuracy(&model, &train);
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn framewise_zero_epochs_is_the_initial_model() {
    let records = noisy_records(6, LengthRange { min: 60, max: 100 }, 4.0, 2);
    let train = refs(&records);
    let mut cfg = Hyperparameters::table1().framewise;
    cfg.epochs = 0;
    cfg.seed = 5;
    let model = train_framewise(&train, &[], 7, &cfg).unwrap();
    let init = ModelBundle::init(Variant::M1, 8, 7, 1, 5).unwrap();
    assert_eq!(model.params, init.params);
    assert!(model.history[0].train_loss.is_empty());
    assert!(frame_accuracy(&model, &train) < 0.5);
}

#[test]
fn framewise_loss_decreases_over_first_epochs() {
    let records = noisy_records(10, LengthRange { min: 100, max: 200 }, 1.0, 3);
    let mut cfg = Hyperparameters::table1().framewise;
    cfg.epochs = 5;
    cfg.seed = 9;
    let model = train_framewise(&refs(&records), &[], 7, &cfg).unwrap();
    let loss = &model.history[0].train_loss;
    assert_eq!(loss.len(), 5);
    assert!(loss.windows(2).all(|w| w[1] < w[0]), "{loss:?}");
}

#[test]
fn unlabeled_training_records_are_rejected() {
    let records = noiseless_records(2, LengthRange { min: 20, max: 30 }, 4);
    let unlabeled: Vec<SequenceRecord> = records.iter().map(SequenceRecord::unlabeled).collect();
    let hp = tiny_hyperparameters(1);
    let err = train_framewise(&refs(&unlabeled), &[], 7, &hp.framewise).unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err}");
    for v in [Variant::M3, Variant::M5] {
        assert!(train_temporal(v, &refs(&unlabeled), &[], 7, &hp, None).is_err());
    }
}

#[test]
fn variant_and_base_mismatches_are_rejected() {
    let records = noiseless_records(2, LengthRange { min: 20, max: 30 }, 4);
    let train = refs(&records);
    let hp = tiny_hyperparameters(1);
    assert!(train_temporal(Variant::M1, &train, &[], 7, &hp, None).is_err());
    assert!(train_temporal(Variant::M2, &train, &[], 7, &hp, None).is_err());
    let m3 = train_temporal(Variant::M3, &train, &[], 7, &hp, None).unwrap();
    assert!(train_temporal(Variant::M2, &train, &[], 7, &hp, Some(&m3)).is_err());
    assert!(train_temporal(Variant::M5, &train, &[], 7, &hp, Some(&m3)).is_err());
    let mut bad = hp;
    bad.bilstm.learning_rate = -1.0;
    assert!(train_temporal(Variant::M4, &train, &[], 7, &bad, None).is_err());
}

#[test]
fn m5_overfits_a_single_noiseless_sequence() {
    let records = noiseless_records(1, LengthRange { min: 50, max: 50 }, 6);
    let train = refs(&records);
    let hp = Hyperparameters::table1().with_seed(3);
    let model = train_temporal(Variant::M5, &train, &[], 7, &hp, None).unwrap();
    let per_frame = training_loss(&model, &train).unwrap();
    assert!(per_frame < 0.01, "mean per-frame NLL {per_frame}");
    // memorized: teacher labels reproduce the ground truth
    let labeled = annotate(&model, &train).unwrap();
    assert_eq!(labeled[0].tags(), records[0].tags());
    assert_eq!(labeled[0].label_source(), Some(LabelSource::Synthetic));
}

#[test]
fn m3_is_causal_after_training() {
    let records = noisy_records(4, LengthRange { min: 30, max: 40 }, 1.0, 7);
    let model = train_temporal(Variant::M3, &refs(&records), &[], 7, &tiny_hyperparameters(2), None).unwrap();
    let x = records[0].features.clone();
    let base = model.logits(&x).unwrap();
    let mut perturbed = x.clone();
    let cut = 12;
    let mut rng = RngStream::new(1);
    for t in cut..x.rows() {
        for v in perturbed.row_mut(t) {
            *v += 5.0 * rng.normal();
        }
    }
    let after = model.logits(&perturbed).unwrap();
    for t in 0..cut {
        assert_eq!(base.row(t), after.row(t));
    }
    assert_ne!(base.row(cut), after.row(cut));
}

#[test]
fn student_streams_exactly() {
    let records = noisy_records(3, LengthRange { min: 30, max: 50 }, 1.0, 8);
    let model = train_temporal(Variant::Student, &refs(&records), &[], 7, &tiny_hyperparameters(1), None).unwrap();
    for r in &records {
        assert_eq!(predict_online(&model, &r.features).unwrap(), model.predict(&r.features).unwrap());
    }
}

#[test]
fn annotate_contract_and_dimension_check() {
    let records = noisy_records(5, LengthRange { min: 20, max: 40 }, 1.5, 9);
    let teacher = train_temporal(Variant::M5, &refs(&records[..2]), &[], 7, &tiny_hyperparameters(1), None).unwrap();
    let unlabeled: Vec<SequenceRecord> = records.iter().map(SequenceRecord::unlabeled).collect();
    let out = annotate(&teacher, &refs(&unlabeled)).unwrap();
    for (a, r) in out.iter().zip(&records) {
        assert_eq!(a.id, r.id);
        let tags = a.tags().unwrap();
        assert_eq!(tags.len(), r.len());
        assert!(tags.iter().all(|&c| c < 7));
    }
    let other = noisy_records(1, LengthRange { min: 20, max: 20 }, 1.0, 9);
    let wide = SequenceRecord::new("wide", phaselab::numkernel::Matrix::zeros(20, 9), None).unwrap();
    assert!(annotate(&teacher, &[&other[0], &wide]).is_err());
}

#[test]
fn checkpoint_reload_gives_identical_metrics() {
    let records = noisy_records(6, LengthRange { min: 30, max: 60 }, 1.5, 10);
    let (train, test) = records.split_at(4);
    let dir = tempfile::tempdir().unwrap();
    for v in [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::M5] {
        let model = train_variant(v, &refs(train), &refs(test), 7, &tiny_hyperparameters(2)).unwrap();
        let path = dir.path().join(format!("{v}.ckpt"));
        model.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back, model);
        let (a, b) = (model.evaluate(&refs(test)).unwrap(), back.evaluate(&refs(test)).unwrap());
        assert_eq!(a.headline().map(f64::to_bits), b.headline().map(f64::to_bits));
    }
}

#[test]
fn validation_selection_is_recorded() {
    let records = noisy_records(6, LengthRange { min: 30, max: 60 }, 1.5, 11);
    let (train, val) = records.split_at(4);
    let model = train_temporal(Variant::M5, &refs(train), &refs(val), 7, &tiny_hyperparameters(3), None).unwrap();
    let names: Vec<&str> = model.history.iter().map(|h| h.name.as_str()).collect();
    assert_eq!(names, ["bilstm", "bilstm_crf"]);
    for h in &model.history {
        assert_eq!(h.val_f1.len(), 3);
        assert!(h.selected_epoch <= 3);
        if h.selected_epoch > 0 {
            let best = h.val_f1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(h.val_f1[h.selected_epoch - 1], best);
        }
    }
}


#![allow(dead_code)]

use phaselab::data::{generate_dataset, FeatureEmitter, LengthRange, SequenceRecord, WorkflowModel};
use phaselab::numkernel::RngStream;
use phaselab::pipeline::Hyperparameters;

/// Emitter without noise or smoothing: every frame is exactly its phase prototype.
pub fn noiseless_emitter(dim: usize, seed: u64) -> FeatureEmitter {
    let mut e = FeatureEmitter::new(7, dim, 0.0, &mut RngStream::new(seed)).unwrap();
    e.smoothing = 0.0;
    e
}

pub fn noiseless_records(n: usize, lengths: LengthRange, seed: u64) -> Vec<SequenceRecord> {
    let emitter = noiseless_emitter(8, seed);
    generate_dataset(&WorkflowModel::default(), &emitter, n, lengths, &RngStream::new(seed + 1)).unwrap()
}

pub fn noisy_records(n: usize, lengths: LengthRange, noise: f64, seed: u64) -> Vec<SequenceRecord> {
    let emitter = FeatureEmitter::new(7, 8, noise, &mut RngStream::new(seed)).unwrap();
    generate_dataset(&WorkflowModel::default(), &emitter, n, lengths, &RngStream::new(seed + 1)).unwrap()
}

pub fn refs(records: &[SequenceRecord]) -> Vec<&SequenceRecord> {
    records.iter().collect()
}

/// Small encoders and a handful of epochs, for fast end-to-end checks.
pub fn tiny_hyperparameters(epochs: usize) -> Hyperparameters {
    let mut hp = Hyperparameters::desk();
    hp.set("*.epochs", &epochs.to_string()).unwrap();
    hp.lstm_state = 6;
    hp.bilstm_state = 4;
    hp
}

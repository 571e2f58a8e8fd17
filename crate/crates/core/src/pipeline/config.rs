use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::AdamConfig;

/// One optimization stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Zero returns the initialized model unchanged.
    pub epochs: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Frames per Adam step; framewise stage only.
    pub minibatch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        if self.minibatch == 0 {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }
}

/// Per-stage configs plus encoder sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters {
    /// M1 classifier.
    pub framewise: TrainConfig,
    /// M3 and the student.
    pub lstm: TrainConfig,
    /// Transition matrix of M2.
    pub crf: TrainConfig,
    /// M4, and stage A of M5.
    pub bilstm: TrainConfig,
    /// Stage B of M5 (joint fine-tune with the CRF).
    pub bilstm_crf: TrainConfig,
    pub lstm_state: usize,
    /// Per direction.
    pub bilstm_state: usize,
}

pub const PRESET_NAMES: [&str; 2] = ["table1", "desk"];

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters::table1()
    }
}

impl Hyperparameters {
    /// Full-scale schedule.
    pub fn table1() -> Self {
        let stage = |learning_rate, epochs, dropout, weight_decay| TrainConfig {
            learning_rate,
            epochs,
            dropout,
            weight_decay,
            minibatch: 32,
            seed: 0,
        };
        Hyperparameters {
            framewise: stage(5e-5, 27, 0.0, 5e-4),
            lstm: stage(5e-5, 350, 0.3, 5e-4),
            crf: stage(5e-5, 350, 0.0, 5e-3),
            bilstm: stage(1e-3, 350, 0.4, 5e-4),
            bilstm_crf: stage(1e-4, 350, 0.4, 5e-4),
            lstm_state: 128,
            bilstm_state: 64,
        }
    }

    /// Reduced-epoch schedule for single-machine runs. Architecture, dropout and
    /// weight decay are unchanged; learning rates are raised to compensate for the
    /// shorter schedules.
    pub fn desk() -> Self {
        let mut hp = Hyperparameters::table1();
        hp.framewise.learning_rate = 1e-3;
        hp.framewise.epochs = 8;
        hp.lstm.learning_rate = 2e-3;
        hp.lstm.epochs = 12;
        hp.crf.learning_rate = 2e-2;
        hp.crf.epochs = 20;
        hp.bilstm.learning_rate = 2e-3;
        hp.bilstm.epochs = 12;
        hp.bilstm_crf.learning_rate = 5e-4;
        hp.bilstm_crf.epochs = 4;
        hp
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table1" => Ok(Hyperparameters::table1()),
            "desk" => Ok(Hyperparameters::desk()),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn stages(&self) -> [(&'static str, &TrainConfig); 5] {
        [
            ("framewise", &self.framewise),
            ("lstm", &self.lstm),
            ("crf", &self.crf),
            ("bilstm", &self.bilstm),
            ("bilstm_crf", &self.bilstm_crf),
        ]
    }

    fn stage_mut(&mut self, name: &str) -> Option<&mut TrainConfig> {
        match name {
            "framewise" => Some(&mut self.framewise),
            "lstm" => Some(&mut self.lstm),
            "crf" => Some(&mut self.crf),
            "bilstm" => Some(&mut self.bilstm),
            "bilstm_crf" => Some(&mut self.bilstm_crf),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, cfg) in self.stages() {
            cfg.validate().map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        }
        if self.lstm_state == 0 || self.bilstm_state == 0 {
            return Err(Error::invalid("state sizes must be positive"));
        }
        Ok(())
    }

    /// Same seed for every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for name in ["framewise", "lstm", "crf", "bilstm", "bilstm_crf"] {
            self.stage_mut(name).expect("known stage").seed = seed;
        }
        self
    }

    /// Sets one key. Stage keys are `<stage>.<field>` with fields `lr`, `epochs`,
    /// `dropout`, `wd`, `minibatch`, `seed`; `*.<field>` sets every stage.
    /// Top-level keys are `lstm_state` and `bilstm_state`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::invalid(format!("bad value {value:?} for {key}: expected {what}"));
        let float = || value.parse::<f64>().map_err(|_| bad("a number"));
        let int = || value.parse::<usize>().map_err(|_| bad("a nonnegative integer"));
        match key {
            "lstm_state" => self.lstm_state = int()?,
            "bilstm_state" => self.bilstm_state = int()?,
            _ => {
                let (stage, field) = key
                    .split_once('.')
                    .ok_or_else(|| Error::invalid(format!("unknown config key {key:?}")))?;
                let names: Vec<&str> = if stage == "*" {
                    vec!["framewise", "lstm", "crf", "bilstm", "bilstm_crf"]
                } else {
                    vec![stage]
                };
                for name in names {
                    let cfg = self
                        .stage_mut(name)
                        .ok_or_else(|| Error::invalid(format!("unknown stage {name:?} in key {key:?}")))?;
                    match field {
                        "lr" => cfg.learning_rate = float()?,
                        "epochs" => cfg.epochs = int()?,
                        "dropout" => cfg.dropout = float()?,
                        "wd" => cfg.weight_decay = float()?,
                        "minibatch" => cfg.minibatch = int()?,
                        "seed" => cfg.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                        _ => return Err(Error::invalid(format!("unknown field {field:?} in key {key:?}"))),
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment. A `preset = <name>`
    /// line must come first if present and resets all values to that preset.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = || format!("{} line {}", path.display(), lineno + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(loc(), "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let result = if key == "preset" {
                Hyperparameters::preset(value).map(|hp| *self = hp)
            } else {
                self.set(key, value)
            };
            result.map_err(|e| Error::parse(loc(), e.to_string()))?;
        }
        Ok(())
    }

    /// Key-value text accepted by [`Hyperparameters::apply_file`].
    pub fn to_kv(&self) -> String {
        let mut out = format!("lstm_state = {}\nbilstm_state = {}\n", self.lstm_state, self.bilstm_state);
        for (name, c) in self.stages() {
            out.push_str(&format!(
                "{name}.lr = {:e}\n{name}.epochs = {}\n{name}.dropout = {}\n{name}.wd = {:e}\n{name}.minibatch = {}\n{name}.seed = {}\n",
                c.learning_rate, c.epochs, c.dropout, c.weight_decay, c.minibatch, c.seed
            ));
        }
        out
    }
}

//! LSTM and biLSTM encoders, the per-frame projection to logits, dropout, and full
//! backpropagation through time.
//!
//! The cell is the four-gate LSTM without peepholes:
//!
//! ```text
//! a   = W x_t + U h_{t-1} + b        (stacked rows: input, forget, cell, output)
//! i,f,o = sigmoid(a_i, a_f, a_o)     g = tanh(a_g)
//! c_t = f * c_{t-1} + i * g          h_t = o * tanh(c_t)
//! ```
//!
//! The output at `t` is `h_t`. A bidirectional encoder runs a second cell right to left
//! and concatenates both outputs per timestep.

use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Matrix, Parameterized, RngStream};

/// Per-timestep feature vectors; one row per timestep.
pub type FeatureSequence = Matrix;

/// Weights of one LSTM cell. Gate blocks are stacked row-wise in the order
/// input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    /// `4H x D`
    pub w: Matrix,
    /// `4H x H`
    pub u: Matrix,
    /// `4H x 1`
    pub b: Matrix,
}

impl LstmCellParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget bias +1, other biases 0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("LSTM dimensions must be positive"));
        }
        let w = uniform_matrix(4 * hidden_dim, input_dim, 1.0 / (input_dim as f64).sqrt(), rng);
        let u = uniform_matrix(4 * hidden_dim, hidden_dim, 1.0 / (hidden_dim as f64).sqrt(), rng);
        let mut b = Matrix::zeros(4 * hidden_dim, 1);
        for k in hidden_dim..2 * hidden_dim {
            b.set(k, 0, 1.0);
        }
        Ok(LstmCellParams { w, u, b })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCellParams {
            w: Matrix::zeros(4 * hidden_dim, input_dim),
            u: Matrix::zeros(4 * hidden_dim, hidden_dim),
            b: Matrix::zeros(4 * hidden_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    fn zeros_like(&self) -> Self {
        LstmCellParams::zeros(self.input_dim(), self.hidden_dim())
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w.rows() != 4 * h || self.u.rows() != 4 * h || self.b.shape() != (4 * h, 1) {
            return Err(Error::invalid("inconsistent LSTM cell shapes"));
        }
        Ok(())
    }
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, k: f64, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.uniform_range(-k, k));
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            c: vec![0.0; hidden_dim],
            h: vec![0.0; hidden_dim],
        }
    }
}

/// Trainable initial state, stored as `1 x H` rows so it can be optimized like any
/// other block.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub c: Matrix,
    pub h: Matrix,
}

impl InitialState {
    pub fn zeros(hidden_dim: usize) -> Self {
        InitialState {
            c: Matrix::zeros(1, hidden_dim),
            h: Matrix::zeros(1, hidden_dim),
        }
    }

    /// Drawn once from uniform(-0.1, 0.1).
    pub fn random(hidden_dim: usize, rng: &mut RngStream) -> Self {
        InitialState {
            c: uniform_matrix(1, hidden_dim, 0.1, rng),
            h: uniform_matrix(1, hidden_dim, 0.1, rng),
        }
    }

    pub fn state(&self) -> LstmState {
        LstmState {
            c: self.c.as_slice().to_vec(),
            h: self.h.as_slice().to_vec(),
        }
    }
}

/// Activated gates `[i, f, g, o]` and `tanh(c_t)` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct GateCache {
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Writes gates, new cell and new hidden state. `gates` has length `4H`.
#[inline]
fn cell_step(
    params: &LstmCellParams,
    x: &[f64],
    c_prev: &[f64],
    h_prev: &[f64],
    gates: &mut [f64],
    c_out: &mut [f64],
    h_out: &mut [f64],
    tanh_c: &mut [f64],
) {
    let h = params.hidden_dim();
    gates.copy_from_slice(params.b.as_slice());
    params.w.matvec_acc(x, gates);
    params.u.matvec_acc(h_prev, gates);
    for k in 0..h {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[h + k]);
        let g = gates[2 * h + k].tanh();
        let o = sigmoid(gates[3 * h + k]);
        gates[k] = i;
        gates[h + k] = f;
        gates[2 * h + k] = g;
        gates[3 * h + k] = o;
        let c = f * c_prev[k] + i * g;
        let tc = c.tanh();
        c_out[k] = c;
        tanh_c[k] = tc;
        h_out[k] = o * tc;
    }
}

/// One application of the cell.
pub fn lstm_cell_forward(
    params: &LstmCellParams,
    input: &[f64],
    prev: &LstmState,
) -> Result<(Vec<f64>, LstmState, GateCache)> {
    params.check()?;
    let h = params.hidden_dim();
    if input.len() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input has length {}, cell expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    if prev.c.len() != h || prev.h.len() != h {
        return Err(Error::invalid("previous state has the wrong hidden size"));
    }
    let mut gates = vec![0.0; 4 * h];
    let mut next = LstmState::zeros(h);
    let mut tanh_c = vec![0.0; h];
    cell_step(
        params,
        input,
        &prev.c,
        &prev.h,
        &mut gates,
        &mut next.c,
        &mut next.h,
        &mut tanh_c,
    );
    Ok((next.h.clone(), next, GateCache { gates, tanh_c }))
}

/// Everything a backward pass over one direction needs.
#[derive(Clone, Debug)]
pub struct SequenceActivations {
    pub initial: LstmState,
    /// `T x 4H` activated gates.
    pub gates: Matrix,
    /// `T x H` cell states.
    pub cells: Matrix,
    /// `T x H` `tanh(c_t)`.
    pub tanh_cells: Matrix,
    /// `T x H` outputs `h_t`.
    pub outputs: Matrix,
}

impl SequenceActivations {
    pub fn len(&self) -> usize {
        self.outputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.rows() == 0
    }
}

/// Left-to-right recurrence over `inputs`. Returns the `T x H` outputs and the caches.
pub fn lstm_forward(
    params: &LstmCellParams,
    initial: &LstmState,
    inputs: &FeatureSequence,
) -> Result<(Matrix, SequenceActivations)> {
    params.check()?;
    if inputs.rows() == 0 {
        return Err(Error::invalid("empty input sequence"));
    }
    if inputs.cols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "features have dimension {}, cell expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let h = params.hidden_dim();
    if initial.c.len() != h || initial.h.len() != h {
        return Err(Error::invalid("initial state has the wrong hidden size"));
    }
    let steps = inputs.rows();
    let mut gates = Matrix::zeros(steps, 4 * h);
    let mut cells = Matrix::zeros(steps, h);
    let mut tanh_cells = Matrix::zeros(steps, h);
    let mut outputs = Matrix::zeros(steps, h);
    let mut c_prev = initial.c.clone();
    let mut h_prev = initial.h.clone();
    for t in 0..steps {
        cell_step(
            params,
            inputs.row(t),
            &c_prev,
            &h_prev,
            gates.row_mut(t),
            cells.row_mut(t),
            outputs.row_mut(t),
            tanh_cells.row_mut(t),
        );
        c_prev.copy_from_slice(cells.row(t));
        h_prev.copy_from_slice(outputs.row(t));
    }
    let acts = SequenceActivations {
        initial: initial.clone(),
        gates,
        cells,
        tanh_cells,
        outputs: outputs.clone(),
    };
    Ok((outputs, acts))
}

/// Gradients of one direction: cell weights plus the initial state.
#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub cell: LstmCellParams,
    pub initial: LstmState,
}

/// BPTT over the whole sequence, no truncation.
pub fn lstm_backward(
    params: &LstmCellParams,
    inputs: &FeatureSequence,
    acts: &SequenceActivations,
    d_outputs: &Matrix,
) -> Result<LstmGrads> {
    let steps = acts.len();
    let h = params.hidden_dim();
    if inputs.rows() != steps || d_outputs.rows() != steps {
        return Err(Error::invalid(format!(
            "cache covers {} steps, inputs {}, upstream gradients {}",
            steps,
            inputs.rows(),
            d_outputs.rows()
        )));
    }
    if d_outputs.cols() != h {
        return Err(Error::invalid("upstream gradient width differs from hidden size"));
    }
    let mut grads = params.zeros_like();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let gates = acts.gates.row(t);
        let tanh_c = acts.tanh_cells.row(t);
        let c_prev = if t == 0 {
            &acts.initial.c[..]
        } else {
            acts.cells.row(t - 1)
        };
        let h_prev = if t == 0 {
            &acts.initial.h[..]
        } else {
            acts.outputs.row(t - 1)
        };
        let d_out = d_outputs.row(t);
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = d_out[k] + dh_next[k];
            let d_o = dh * tanh_c[k];
            let dc = dh * o * (1.0 - tanh_c[k] * tanh_c[k]) + dc_next[k];
            da[k] = dc * g * i * (1.0 - i);
            da[h + k] = dc * c_prev[k] * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - g * g);
            da[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        grads.w.rank1_acc(&da, inputs.row(t));
        grads.u.rank1_acc(&da, h_prev);
        crate::numkernel::axpy(1.0, &da, grads.b.as_mut_slice());
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        params.u.matvec_t_acc(&da, &mut dh_next);
    }
    Ok(LstmGrads {
        cell: grads,
        initial: LstmState {
            c: dc_next,
            h: dh_next,
        },
    })
}

/// Two cells and their initial states. `backward_init` plays the role of the state
/// "after" the last timestep for the right-to-left cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
    pub forward_init: InitialState,
    pub backward_init: InitialState,
}

impl BiLstmParams {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmCellParams::init(input_dim, hidden_dim, rng)?,
            backward: LstmCellParams::init(input_dim, hidden_dim, rng)?,
            forward_init: InitialState::random(hidden_dim, rng),
            backward_init: InitialState::random(hidden_dim, rng),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    /// Same model with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        BiLstmParams {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            forward_init: self.backward_init.clone(),
            backward_init: self.forward_init.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.forward.input_dim() != self.backward.input_dim()
            || self.forward.hidden_dim() != self.backward.hidden_dim()
        {
            return Err(Error::invalid("biLSTM directions disagree on dimensions"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmActivations {
    pub forward: SequenceActivations,
    /// Caches of the backward cell, in reversed time.
    pub backward: SequenceActivations,
    pub reversed_inputs: Matrix,
}

/// Outputs `(o_t, omega_t)` concatenated per timestep, `T x 2H`.
pub fn bilstm_forward(
    params: &BiLstmParams,
    inputs: &FeatureSequence,
) -> Result<(Matrix, BiLstmActivations)> {
    params.check()?;
    let (fwd_out, fwd_acts) = lstm_forward(&params.forward, &params.forward_init.state(), inputs)?;
    let reversed = inputs.reversed_rows();
    let (bwd_out, bwd_acts) =
        lstm_forward(&params.backward, &params.backward_init.state(), &reversed)?;
    let steps = inputs.rows();
    let h = params.hidden_dim();
    let mut out = Matrix::zeros(steps, 2 * h);
    for t in 0..steps {
        let row = out.row_mut(t);
        row[..h].copy_from_slice(fwd_out.row(t));
        row[h..].copy_from_slice(bwd_out.row(steps - 1 - t));
    }
    Ok((
        out,
        BiLstmActivations {
            forward: fwd_acts,
            backward: bwd_acts,
            reversed_inputs: reversed,
        },
    ))
}

/// Linear map from encoder features to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    /// `N_c x D`
    pub w: Matrix,
    /// `N_c x 1`
    pub b: Matrix,
}

impl ProjectionParams {
    pub fn init(feature_dim: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        if feature_dim == 0 || n_classes < 2 {
            return Err(Error::invalid("projection needs D >= 1 and at least 2 classes"));
        }
        Ok(ProjectionParams {
            w: uniform_matrix(n_classes, feature_dim, 1.0 / (feature_dim as f64).sqrt(), rng),
            b: Matrix::zeros(n_classes, 1),
        })
    }

    pub fn zeros(feature_dim: usize, n_classes: usize) -> Self {
        ProjectionParams {
            w: Matrix::zeros(n_classes, feature_dim),
            b: Matrix::zeros(n_classes, 1),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.b.as_slice());
        self.w.matvec_acc(x, out);
    }
}

/// Inverted dropout: `rate` in `[0, 1)` with the stream that draws the masks.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut RngStream,
}

#[derive(Clone, Debug)]
pub struct ProjectionCache {
    /// Features after dropout, as seen by `W`.
    pub inputs: Matrix,
    /// Per-entry multipliers (`0` or `1/(1-rate)`); absent when no dropout was applied.
    pub mask: Option<Matrix>,
}

/// `s_t = W x_t + b` per timestep, with inverted dropout on `x_t` in training mode.
pub fn project_logits(
    params: &ProjectionParams,
    features: &Matrix,
    dropout: Option<Dropout<'_>>,
    training: bool,
) -> Result<(Matrix, ProjectionCache)> {
    if features.cols() != params.feature_dim() {
        return Err(Error::invalid(format!(
            "features have dimension {}, projection expects {}",
            features.cols(),
            params.feature_dim()
        )));
    }
    let (inputs, mask) = match dropout {
        Some(d) if training && d.rate > 0.0 => {
            if !(d.rate < 1.0) {
                return Err(Error::invalid("dropout rate must be below 1"));
            }
            let keep = 1.0 / (1.0 - d.rate);
            let mut mask = Matrix::zeros(features.rows(), features.cols());
            for m in mask.as_mut_slice() {
                *m = if d.rng.bernoulli(d.rate) { 0.0 } else { keep };
            }
            let mut dropped = features.clone();
            for (x, m) in dropped.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *x *= m;
            }
            (dropped, Some(mask))
        }
        _ => (features.clone(), None),
    };
    let mut logits = Matrix::zeros(features.rows(), params.n_classes());
    for t in 0..features.rows() {
        params.apply_into(inputs.row(t), logits.row_mut(t));
    }
    Ok((logits, ProjectionCache { inputs, mask }))
}

/// Gradients of the projection and of its (pre-dropout) input features.
pub fn projection_backward(
    params: &ProjectionParams,
    cache: &ProjectionCache,
    d_logits: &Matrix,
) -> Result<(ProjectionParams, Matrix)> {
    if d_logits.rows() != cache.inputs.rows() || d_logits.cols() != params.n_classes() {
        return Err(Error::invalid(format!(
            "logit gradient shape {:?} does not match cache ({} steps, {} classes)",
            d_logits.shape(),
            cache.inputs.rows(),
            params.n_classes()
        )));
    }
    let mut grads = ProjectionParams::zeros(params.feature_dim(), params.n_classes());
    let mut d_features = Matrix::zeros(cache.inputs.rows(), params.feature_dim());
    for t in 0..d_logits.rows() {
        let ds = d_logits.row(t);
        grads.w.rank1_acc(ds, cache.inputs.row(t));
        crate::numkernel::axpy(1.0, ds, grads.b.as_mut_slice());
        params.w.matvec_t_acc(ds, d_features.row_mut(t));
    }
    if let Some(mask) = &cache.mask {
        for (d, m) in d_features.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *d *= m;
        }
    }
    Ok((grads, d_features))
}

/// Temporal encoder in front of the projection.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    /// Raw features go straight to the projection (framewise classifier).
    Identity,
    Lstm {
        cell: LstmCellParams,
        init: InitialState,
    },
    BiLstm(BiLstmParams),
}

impl Encoder {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Encoder::Identity => input_dim,
            Encoder::Lstm { cell, .. } => cell.hidden_dim(),
            Encoder::BiLstm(p) => 2 * p.hidden_dim(),
        }
    }

    pub fn is_causal(&self) -> bool {
        !matches!(self, Encoder::BiLstm(_))
    }

    fn zeros_like(&self) -> Self {
        match self {
            Encoder::Identity => Encoder::Identity,
            Encoder::Lstm { cell, .. } => Encoder::Lstm {
                cell: cell.zeros_like(),
                init: InitialState::zeros(cell.hidden_dim()),
            },
            Encoder::BiLstm(p) => Encoder::BiLstm(BiLstmParams {
                forward: p.forward.zeros_like(),
                backward: p.backward.zeros_like(),
                forward_init: InitialState::zeros(p.hidden_dim()),
                backward_init: InitialState::zeros(p.hidden_dim()),
            }),
        }
    }
}

/// Encoder followed by the projection: features in, logits out.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTagger {
    pub feature_dim: usize,
    pub encoder: Encoder,
    pub projection: ProjectionParams,
}

#[derive(Clone, Debug)]
pub enum EncoderCache {
    Identity,
    Lstm(SequenceActivations),
    BiLstm(BiLstmActivations),
}

#[derive(Clone, Debug)]
pub struct TaggerCache {
    pub encoder: EncoderCache,
    pub projection: ProjectionCache,
}

impl SequenceTagger {
    pub fn framewise(feature_dim: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(SequenceTagger {
            feature_dim,
            encoder: Encoder::Identity,
            projection: ProjectionParams::init(feature_dim, n_classes, rng)?,
        })
    }

    pub fn lstm(feature_dim: usize, hidden: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        let cell = LstmCellParams::init(feature_dim, hidden, rng)?;
        let init = InitialState::random(hidden, rng);
        Ok(SequenceTagger {
            feature_dim,
            encoder: Encoder::Lstm { cell, init },
            projection: ProjectionParams::init(hidden, n_classes, rng)?,
        })
    }

    pub fn bilstm(feature_dim: usize, hidden: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        let params = BiLstmParams::init(feature_dim, hidden, rng)?;
        Ok(SequenceTagger {
            feature_dim,
            encoder: Encoder::BiLstm(params),
            projection: ProjectionParams::init(2 * hidden, n_classes, rng)?,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.projection.n_classes()
    }

    pub fn zeros_like(&self) -> Self {
        SequenceTagger {
            feature_dim: self.feature_dim,
            encoder: self.encoder.zeros_like(),
            projection: ProjectionParams::zeros(
                self.projection.feature_dim(),
                self.projection.n_classes(),
            ),
        }
    }

    /// Logits for every timestep. Dropout only acts when `training` is set.
    pub fn forward(
        &self,
        features: &FeatureSequence,
        dropout: Option<Dropout<'_>>,
        training: bool,
    ) -> Result<(Matrix, TaggerCache)> {
        if features.rows() == 0 {
            return Err(Error::invalid("empty input sequence"));
        }
        if features.cols() != self.feature_dim {
            return Err(Error::invalid(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.feature_dim
            )));
        }
        let (encoded, cache) = match &self.encoder {
            Encoder::Identity => (None, EncoderCache::Identity),
            Encoder::Lstm { cell, init } => {
                let (out, acts) = lstm_forward(cell, &init.state(), features)?;
                (Some(out), EncoderCache::Lstm(acts))
            }
            Encoder::BiLstm(p) => {
                let (out, acts) = bilstm_forward(p, features)?;
                (Some(out), EncoderCache::BiLstm(acts))
            }
        };
        let (logits, projection) =
            project_logits(&self.projection, encoded.as_ref().unwrap_or(features), dropout, training)?;
        Ok((
            logits,
            TaggerCache {
                encoder: cache,
                projection,
            },
        ))
    }

    /// Inference-mode logits.
    pub fn logits(&self, features: &FeatureSequence) -> Result<Matrix> {
        Ok(self.forward(features, None, false)?.0)
    }

    /// Exact gradients of a scalar loss given `d_logits = dL/ds_t` for every timestep.
    pub fn backprop_sequence(
        &self,
        features: &FeatureSequence,
        cache: &TaggerCache,
        d_logits: &Matrix,
    ) -> Result<SequenceTagger> {
        if features.rows() != cache.projection.inputs.rows() {
            return Err(Error::invalid(format!(
                "cache covers {} steps but sequence has {}",
                cache.projection.inputs.rows(),
                features.rows()
            )));
        }
        let (proj_grads, d_features) = projection_backward(&self.projection, &cache.projection, d_logits)?;
        let encoder = match (&self.encoder, &cache.encoder) {
            (Encoder::Identity, EncoderCache::Identity) => Encoder::Identity,
            (Encoder::Lstm { cell, .. }, EncoderCache::Lstm(acts)) => {
                let g = lstm_backward(cell, features, acts, &d_features)?;
                Encoder::Lstm {
                    cell: g.cell,
                    init: state_to_initial(g.initial),
                }
            }
            (Encoder::BiLstm(p), EncoderCache::BiLstm(acts)) => {
                let steps = features.rows();
                let h = p.hidden_dim();
                let mut d_fwd = Matrix::zeros(steps, h);
                let mut d_bwd = Matrix::zeros(steps, h);
                for t in 0..steps {
                    let row = d_features.row(t);
                    d_fwd.row_mut(t).copy_from_slice(&row[..h]);
                    d_bwd.row_mut(steps - 1 - t).copy_from_slice(&row[h..]);
                }
                let gf = lstm_backward(&p.forward, features, &acts.forward, &d_fwd)?;
                let gb = lstm_backward(&p.backward, &acts.reversed_inputs, &acts.backward, &d_bwd)?;
                Encoder::BiLstm(BiLstmParams {
                    forward: gf.cell,
                    backward: gb.cell,
                    forward_init: state_to_initial(gf.initial),
                    backward_init: state_to_initial(gb.initial),
                })
            }
            _ => return Err(Error::invalid("cache does not belong to this encoder")),
        };
        Ok(SequenceTagger {
            feature_dim: self.feature_dim,
            encoder,
            projection: proj_grads,
        })
    }

    /// Frame-by-frame inference for causal encoders.
    pub fn stream(&self) -> Result<TaggerStream<'_>> {
        let state = match &self.encoder {
            Encoder::Identity => None,
            Encoder::Lstm { cell, init } => Some((cell, init.state())),
            Encoder::BiLstm(_) => {
                return Err(Error::invalid("a bidirectional encoder cannot run online"))
            }
        };
        Ok(TaggerStream {
            tagger: self,
            state,
        })
    }
}

fn state_to_initial(s: LstmState) -> InitialState {
    let h = s.c.len();
    InitialState {
        c: Matrix::from_vec(1, h, s.c).expect("gradient state is finite"),
        h: Matrix::from_vec(1, h, s.h).expect("gradient state is finite"),
    }
}

/// Online inference: consumes one feature vector at a time, carrying the LSTM state.
pub struct TaggerStream<'a> {
    tagger: &'a SequenceTagger,
    state: Option<(&'a LstmCellParams, LstmState)>,
}

impl TaggerStream<'_> {
    /// Logits for the newest frame.
    pub fn push(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.tagger.feature_dim {
            return Err(Error::invalid(format!(
                "frame has dimension {}, model expects {}",
                frame.len(),
                self.tagger.feature_dim
            )));
        }
        let mut logits = vec![0.0; self.tagger.n_classes()];
        match &mut self.state {
            None => self.tagger.projection.apply_into(frame, &mut logits),
            Some((cell, state)) => {
                let (out, next, _) = lstm_cell_forward(cell, frame, state)?;
                *state = next;
                self.tagger.projection.apply_into(&out, &mut logits);
            }
        }
        Ok(logits)
    }
}

fn push_cell<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, cell: &'a LstmCellParams) {
    out.push((format!("{prefix}.w"), &cell.w));
    out.push((format!("{prefix}.u"), &cell.u));
    out.push((format!("{prefix}.b"), &cell.b));
}

fn push_init<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, init: &'a InitialState) {
    out.push((format!("{prefix}.c0"), &init.c));
    out.push((format!("{prefix}.h0"), &init.h));
}

impl Parameterized for SequenceTagger {
    fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        match &self.encoder {
            Encoder::Identity => {}
            Encoder::Lstm { cell, init } => {
                push_cell(&mut out, "lstm", cell);
                push_init(&mut out, "lstm", init);
            }
            Encoder::BiLstm(p) => {
                push_cell(&mut out, "bilstm.fwd", &p.forward);
                push_init(&mut out, "bilstm.fwd", &p.forward_init);
                push_cell(&mut out, "bilstm.bwd", &p.backward);
                push_init(&mut out, "bilstm.bwd", &p.backward_init);
            }
        }
        out.push(("projection.w".into(), &self.projection.w));
        out.push(("projection.b".into(), &self.projection.b));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        match &mut self.encoder {
            Encoder::Identity => {}
            Encoder::Lstm { cell, init } => {
                out.extend([&mut cell.w, &mut cell.u, &mut cell.b, &mut init.c, &mut init.h]);
            }
            Encoder::BiLstm(p) => {
                out.extend([
                    &mut p.forward.w,
                    &mut p.forward.u,
                    &mut p.forward.b,
                    &mut p.forward_init.c,
                    &mut p.forward_init.h,
                    &mut p.backward.w,
                    &mut p.backward.u,
                    &mut p.backward.b,
                    &mut p.backward_init.c,
                    &mut p.backward_init.h,
                ]);
            }
        }
        out.push(&mut self.projection.w);
        out.push(&mut self.projection.b);
        out
    }
}

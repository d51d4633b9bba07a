//! HydraNet: a convolutional U-Net encoder with ConvLSTM recurrence and six decoder heads.
//!
//! One call to [`HydraNet::step`] ingests one month `[B × 3 × H × W]` and returns the
//! prediction for the following month. The encoder is shared: per level two
//! conv blocks (conv → ReLU → channel dropout), a stride-2 conv between levels,
//! and a ConvLSTM cell at the bottleneck (or at every level). Each of the six
//! decoders mirrors the encoder with nearest-neighbour upsampling, concatenates
//! the skip features of the current step, and ends in a 1×1 conv: softplus for
//! the three regression heads, sigmoid for the three classification heads.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{
    add_inplace, apply_channel_mask, channel_dropout_mask, concat, relu_backward_inplace, relu_inplace, sigmoid,
    softplus, split, upsample2, upsample2_backward,
};
use crate::nn::{Conv2d, ConvLstmCell, Grads, LstmTrace, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{HEAD_NAMES, N_HEADS, N_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmLevels {
    BottleneckOnly,
    AllLevels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub lstm_levels: LstmLevels,
    pub input_channels: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 3,
            base_filters: 32,
            kernel_size: 3,
            dropout_rate: 0.15,
            lstm_levels: LstmLevels::BottleneckOnly,
            input_channels: N_TYPES,
            heads: N_HEADS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if !(1..=8).contains(&self.levels) {
            return fail(format!("levels must be in 1..=8, got {}", self.levels));
        }
        if self.base_filters == 0 {
            return fail("base_filters must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.input_channels != N_TYPES {
            return fail(format!("input_channels must be {N_TYPES}, got {}", self.input_channels));
        }
        if self.heads != N_HEADS {
            return fail(format!("heads must be {N_HEADS}, got {}", self.heads));
        }
        Ok(())
    }

    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn is_recurrent(&self, level: usize) -> bool {
        match self.lstm_levels {
            LstmLevels::BottleneckOnly => level + 1 == self.levels,
            LstmLevels::AllLevels => true,
        }
    }
}

/// Whether dropout masks are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    McInference,
    Deterministic,
}

impl Mode {
    fn dropout(self) -> bool {
        !matches!(self, Mode::Deterministic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelState<F> {
    pub level: usize,
    pub hidden: Tensor<F>,
    pub cell: Tensor<F>,
}

/// Hidden (short-term) and cell (long-term) state of every recurrent level.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<F> {
    pub levels: Vec<LevelState<F>>,
}

impl<F: Real> RecurrentState<F> {
    pub fn batch(&self) -> usize {
        self.levels.first().map_or(0, |l| l.hidden.batch())
    }
}

/// Gradients with respect to a [`RecurrentState`], as `(d_hidden, d_cell)` per recurrent level.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrads<F> {
    pub levels: Vec<(Tensor<F>, Tensor<F>)>,
}

impl<F: Real> StateGrads<F> {
    pub fn zeros_like(state: &RecurrentState<F>) -> Self {
        StateGrads {
            levels: state
                .levels
                .iter()
                .map(|l| (Tensor::zeros(l.hidden.shape()), Tensor::zeros(l.cell.shape())))
                .collect(),
        }
    }
}

/// Regression magnitudes and classification probabilities, channels ordered sb, ns, os.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<F> {
    pub reg: Tensor<F>,
    pub cls: Tensor<F>,
}

impl<F: Real> HeadOutputs<F> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        HeadOutputs { reg: Tensor::zeros(shape), cls: Tensor::zeros(shape) }
    }

    /// Output of head `h` in [`HEAD_NAMES`] order, as a `[B × 1 × H × W]` view copy.
    pub fn head(&self, h: usize) -> Tensor<F> {
        if h < N_TYPES {
            self.reg.channel_slice(h, 1)
        } else {
            self.cls.channel_slice(h - N_TYPES, 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLevel {
    down: Option<Conv2d>,
    blocks: [Conv2d; 2],
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderStage {
    /// Encoder level whose resolution this stage produces.
    level: usize,
    up: Conv2d,
    blocks: [Conv2d; 2],
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    stages: Vec<DecoderStage>,
    head: Conv2d,
    kind: HeadKind,
}

#[derive(Debug, Clone)]
struct BlockTrace<F> {
    input: Tensor<F>,
    act: Tensor<F>,
    mask: Option<Vec<F>>,
}

#[derive(Debug, Clone)]
struct EncoderTrace<F> {
    down: Option<(Tensor<F>, Tensor<F>)>,
    blocks: [BlockTrace<F>; 2],
    lstm: Option<LstmTrace<F>>,
}

#[derive(Debug, Clone)]
struct StageTrace<F> {
    up_input: Tensor<F>,
    up_act: Tensor<F>,
    blocks: [BlockTrace<F>; 2],
}

#[derive(Debug, Clone)]
struct DecoderTrace<F> {
    stages: Vec<StageTrace<F>>,
    head_input: Tensor<F>,
    output: Tensor<F>,
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepTrace<F> {
    encoder: Vec<EncoderTrace<F>>,
    decoders: Vec<DecoderTrace<F>>,
    skip_shapes: Vec<[usize; 4]>,
}

/// Initial head biases: regression starts near zero magnitude, classification at 1% prevalence.
const REG_HEAD_BIAS: f64 = -4.0;
const CLS_HEAD_PRIOR: f64 = 0.01;
/// He-uniform bound `sqrt(6 / fan_in)` for rectified conv layers.
const RELU_GAIN: f64 = 2.449_489_742_783_178;

#[derive(Debug, Clone, PartialEq)]
pub struct HydraNet<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    encoder: Vec<EncoderLevel>,
    lstm: Vec<Option<ConvLstmCell>>,
    decoders: Vec<Decoder>,
}

impl<F: Real> HydraNet<F> {
    /// Allocates and initializes every parameter; draws from `rng` in creation order.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let k = config.kernel_size;
        let mut encoder = Vec::with_capacity(config.levels);
        let mut lstm = Vec::with_capacity(config.levels);
        for level in 0..config.levels {
            let f = config.filters(level);
            let down = (level > 0).then(|| {
                Conv2d::new(&mut params, &format!("enc{level}.down"), config.filters(level - 1), f, k, 2, RELU_GAIN, rng)
            });
            let cin = if level == 0 { config.input_channels } else { f };
            let b0 = Conv2d::new(&mut params, &format!("enc{level}.block0"), cin, f, k, 1, RELU_GAIN, rng);
            let b1 = Conv2d::new(&mut params, &format!("enc{level}.block1"), f, f, k, 1, RELU_GAIN, rng);
            encoder.push(EncoderLevel { down, blocks: [b0, b1] });
            lstm.push(
                config
                    .is_recurrent(level)
                    .then(|| ConvLstmCell::new(&mut params, &format!("lstm{level}"), f, f, k, rng)),
            );
        }
        let mut decoders = Vec::with_capacity(N_HEADS);
        for (h, name) in HEAD_NAMES.iter().enumerate() {
            let kind = if h < N_TYPES { HeadKind::Regression } else { HeadKind::Classification };
            let mut stages = Vec::new();
            for level in (0..config.levels - 1).rev() {
                let f = config.filters(level);
                let p = format!("dec_{name}.stage{level}");
                let up = Conv2d::new(&mut params, &format!("{p}.up"), config.filters(level + 1), f, k, 1, RELU_GAIN, rng);
                let b0 = Conv2d::new(&mut params, &format!("{p}.block0"), 2 * f, f, k, 1, RELU_GAIN, rng);
                let b1 = Conv2d::new(&mut params, &format!("{p}.block1"), f, f, k, 1, RELU_GAIN, rng);
                stages.push(DecoderStage { level, up, blocks: [b0, b1] });
            }
            let head = Conv2d::new(&mut params, &format!("dec_{name}.head"), config.filters(0), 1, 1, 1, 1.0, rng);
            let bias = match kind {
                HeadKind::Regression => REG_HEAD_BIAS,
                HeadKind::Classification => -crate::math::ln((1.0 - CLS_HEAD_PRIOR) / CLS_HEAD_PRIOR),
            };
            params.value_mut(head.bias)[0] = F::of(bias);
            decoders.push(Decoder { stages, head, kind });
        }
        Ok(HydraNet { config, params, encoder, lstm, decoders })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    /// Changes the dropout rate used by training and MC-inference passes; weights are untouched.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        let config = ModelConfig { dropout_rate: rate, ..self.config };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// True when the encoder has stride-2 stages (depth above one).
    pub fn has_resampling(&self) -> bool {
        self.encoder.iter().any(|l| l.down.is_some()) || self.decoders.iter().any(|d| !d.stages.is_empty())
    }

    /// Parameters owned by decoder `head` (in [`HEAD_NAMES`] order).
    pub fn decoder_params(&self, head: usize) -> Vec<ParamId> {
        let d = &self.decoders[head];
        let mut ids = Vec::new();
        for s in &d.stages {
            for conv in core::iter::once(&s.up).chain(&s.blocks) {
                ids.extend([conv.weight, conv.bias]);
            }
        }
        ids.extend([d.head.weight, d.head.bias]);
        ids
    }

    /// Same architecture and weights in another float type.
    pub fn cast<G: Real>(&self) -> HydraNet<G> {
        HydraNet {
            config: self.config,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            lstm: self.lstm.clone(),
            decoders: self.decoders.clone(),
        }
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn load_params(&mut self, params: ParamStore<F>) -> Result<()> {
        let ours = self.params.entries();
        let theirs = params.entries();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!("expected {} parameter blobs, got {}", ours.len(), theirs.len())));
        }
        for (a, b) in ours.iter().zip(theirs) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let d = self.config.spatial_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!("spatial size {h}x{w} must be a positive multiple of {d}")));
        }
        Ok(())
    }

    /// Zero hidden and cell state for a batch of `batch` inputs of size `h × w`.
    pub fn init_state(&self, batch: usize, h: usize, w: usize) -> Result<RecurrentState<F>> {
        self.check_spatial(h, w)?;
        let levels = (0..self.config.levels)
            .filter(|&l| self.config.is_recurrent(l))
            .map(|level| {
                let shape = [batch, self.config.filters(level), h >> level, w >> level];
                LevelState { level, hidden: Tensor::zeros(shape), cell: Tensor::zeros(shape) }
            })
            .collect();
        Ok(RecurrentState { levels })
    }

    fn check_step_input(&self, x: &Tensor<F>, state: &RecurrentState<F>) -> Result<()> {
        let [b, c, h, w] = x.shape();
        if c != self.config.input_channels {
            return Err(Error::Shape(format!("input has {c} channels, model expects {}", self.config.input_channels)));
        }
        self.check_spatial(h, w)?;
        let expected = self.init_state(b, h, w)?;
        let consistent = expected.levels.len() == state.levels.len()
            && expected.levels.iter().zip(&state.levels).all(|(e, s)| {
                e.level == s.level && e.hidden.shape() == s.hidden.shape() && e.cell.shape() == s.cell.shape()
            });
        if !consistent {
            return Err(Error::Shape(format!("recurrent state does not match input of shape {:?}", x.shape())));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { what: "model input".into() });
        }
        Ok(())
    }

    /// Processes one month and returns the next-month prediction with the updated state.
    pub fn step<R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        state: &RecurrentState<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(HeadOutputs<F>, RecurrentState<F>)> {
        let (out, next, _) = self.step_traced(x, state, mode, rng)?;
        Ok((out, next))
    }

    /// [`step`](Self::step) that also returns the activations needed by [`backward_step`](Self::backward_step).
    pub fn step_traced<R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        state: &RecurrentState<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(HeadOutputs<F>, RecurrentState<F>, StepTrace<F>)> {
        self.check_step_input(x, state)?;
        Ok(self.forward(x, state, mode, rng, false))
    }

    /// Forward pass with every skip connection replaced by zeros; used to check the skips are wired.
    #[doc(hidden)]
    pub fn step_without_skips<R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        state: &RecurrentState<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<HeadOutputs<F>> {
        self.check_step_input(x, state)?;
        Ok(self.forward(x, state, mode, rng, true).0)
    }

    /// Left fold of [`step`](Self::step) over `inputs`; `outputs[t]` predicts month `t + 1`.
    pub fn forward_sequence<R: Rng + ?Sized>(
        &self,
        inputs: &[Tensor<F>],
        initial: &RecurrentState<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<HeadOutputs<F>>, RecurrentState<F>)> {
        if inputs.is_empty() {
            return Err(Error::Shape("forward_sequence needs at least one month".into()));
        }
        let mut state = initial.clone();
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (out, next) = self.step(x, &state, mode, rng)?;
            outputs.push(out);
            state = next;
        }
        Ok((outputs, state))
    }

    fn block_forward<R: Rng + ?Sized>(
        &self,
        conv: &Conv2d,
        input: Tensor<F>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<F>, BlockTrace<F>) {
        let mut act = conv.forward(&self.params, &input);
        relu_inplace(&mut act);
        let rate = self.config.dropout_rate;
        let mask = (mode.dropout() && rate > 0.0).then(|| channel_dropout_mask(act.batch(), act.channels(), rate, rng));
        let mut out = act.clone();
        if let Some(m) = &mask {
            apply_channel_mask(&mut out, m);
        }
        (out, BlockTrace { input, act, mask })
    }

    fn block_backward(&self, conv: &Conv2d, trace: &BlockTrace<F>, mut d: Tensor<F>, grads: &mut Grads<F>, need_dx: bool) -> Option<Tensor<F>> {
        if let Some(m) = &trace.mask {
            apply_channel_mask(&mut d, m);
        }
        relu_backward_inplace(&mut d, &trace.act);
        conv.backward(&self.params, grads, &trace.input, &d, need_dx)
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        state: &RecurrentState<F>,
        mode: Mode,
        rng: &mut R,
        zero_skips: bool,
    ) -> (HeadOutputs<F>, RecurrentState<F>, StepTrace<F>) {
        let mut feat = x.clone();
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut enc_traces = Vec::with_capacity(self.encoder.len());
        let mut next_levels = Vec::new();
        for (level, enc) in self.encoder.iter().enumerate() {
            let down = enc.down.as_ref().map(|conv| {
                let mut act = conv.forward(&self.params, &feat);
                relu_inplace(&mut act);
                let input = core::mem::replace(&mut feat, act.clone());
                (input, act)
            });
            let (f0, t0) = self.block_forward(&enc.blocks[0], feat, mode, rng);
            let (f1, t1) = self.block_forward(&enc.blocks[1], f0, mode, rng);
            feat = f1;
            let lstm = self.lstm[level].as_ref().map(|cell| {
                let prev = state.levels.iter().find(|s| s.level == level).expect("validated state");
                let (h, c, trace) = cell.forward(&self.params, &feat, &prev.hidden, &prev.cell);
                feat = h.clone();
                next_levels.push(LevelState { level, hidden: h, cell: c });
                trace
            });
            skips.push(feat.clone());
            enc_traces.push(EncoderTrace { down, blocks: [t0, t1], lstm });
        }
        let skip_shapes: Vec<[usize; 4]> = skips.iter().map(|s| s.shape()).collect();
        if zero_skips {
            let deepest = skips.len() - 1;
            for s in &mut skips[..deepest] {
                *s = Tensor::zeros(s.shape());
            }
        }

        let [b, _, h, w] = x.shape();
        let mut out = HeadOutputs::zeros([b, N_TYPES, h, w]);
        let mut dec_traces = Vec::with_capacity(N_HEADS);
        for (k, dec) in self.decoders.iter().enumerate() {
            let mut z = skips[skips.len() - 1].clone();
            let mut stage_traces = Vec::with_capacity(dec.stages.len());
            for stage in &dec.stages {
                let up_input = upsample2(&z);
                let mut up_act = stage.up.forward(&self.params, &up_input);
                relu_inplace(&mut up_act);
                let cat = concat(&up_act, &skips[stage.level]);
                let (z0, t0) = self.block_forward(&stage.blocks[0], cat, mode, rng);
                let (z1, t1) = self.block_forward(&stage.blocks[1], z0, mode, rng);
                z = z1;
                stage_traces.push(StageTrace { up_input, up_act, blocks: [t0, t1] });
            }
            let mut y = dec.head.forward(&self.params, &z);
            match dec.kind {
                HeadKind::Regression => y.data_mut().iter_mut().for_each(|v| *v = softplus(*v)),
                HeadKind::Classification => y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
            let (target, ch) = if k < N_TYPES { (&mut out.reg, k) } else { (&mut out.cls, k - N_TYPES) };
            for n in 0..b {
                target.plane_mut(n, ch).copy_from_slice(y.plane(n, 0));
            }
            dec_traces.push(DecoderTrace { stages: stage_traces, head_input: z, output: y });
        }
        let trace = StepTrace { encoder: enc_traces, decoders: dec_traces, skip_shapes };
        (out, RecurrentState { levels: next_levels }, trace)
    }

    /// Backpropagates one step.
    ///
    /// `d_out` holds loss gradients w.r.t. this step's activated head outputs and
    /// `d_next` the gradients flowing back from the following step's state. Parameter
    /// gradients accumulate into `grads`; the gradient w.r.t. the incoming state is returned.
    pub fn backward_step(
        &self,
        trace: &StepTrace<F>,
        d_out: &HeadOutputs<F>,
        d_next: &StateGrads<F>,
        grads: &mut Grads<F>,
    ) -> StateGrads<F> {
        let mut d_skips: Vec<Tensor<F>> = trace.skip_shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        let deepest = d_skips.len() - 1;
        for (k, (dec, dt)) in self.decoders.iter().zip(&trace.decoders).enumerate() {
            let dy = d_out.head(k);
            let mut dz = dy;
            for (g, &y) in dz.data_mut().iter_mut().zip(dt.output.data()) {
                let dact = match dec.kind {
                    // softplus'(z) = sigmoid(z) = 1 - exp(-y)
                    HeadKind::Regression => -(-y).exp_m1(),
                    HeadKind::Classification => y * (F::one() - y),
                };
                *g *= dact;
            }
            let mut d = dec.head.backward(&self.params, grads, &dt.head_input, &dz, true).expect("dx requested");
            for (stage, st) in dec.stages.iter().zip(&dt.stages).rev() {
                let d1 = self.block_backward(&stage.blocks[1], &st.blocks[1], d, grads, true).expect("dx");
                let dcat = self.block_backward(&stage.blocks[0], &st.blocks[0], d1, grads, true).expect("dx");
                let (mut d_up, d_skip) = split(&dcat, st.up_act.channels());
                add_inplace(&mut d_skips[stage.level], &d_skip);
                relu_backward_inplace(&mut d_up, &st.up_act);
                let d_up_in = stage.up.backward(&self.params, grads, &st.up_input, &d_up, true).expect("dx");
                d = upsample2_backward(&d_up_in);
            }
            add_inplace(&mut d_skips[deepest], &d);
        }

        let mut d_prev_levels = Vec::new();
        let mut from_below: Option<Tensor<F>> = None;
        for level in (0..self.encoder.len()).rev() {
            let enc = &self.encoder[level];
            let et = &trace.encoder[level];
            let mut d = core::mem::replace(&mut d_skips[level], Tensor::zeros([0, 0, 0, 0]));
            if let Some(below) = from_below.take() {
                add_inplace(&mut d, &below);
            }
            if let (Some(cell), Some(lt)) = (&self.lstm[level], &et.lstm) {
                let idx = d_next.levels.len() - 1 - d_prev_levels.len();
                let (dh_next, dc_next) = &d_next.levels[idx];
                add_inplace(&mut d, dh_next);
                let (dx, dh_prev, dc_prev) = cell.backward(&self.params, grads, lt, &d, dc_next);
                d = dx;
                d_prev_levels.push((dh_prev, dc_prev));
            }
            let d1 = self.block_backward(&enc.blocks[1], &et.blocks[1], d, grads, true).expect("dx");
            let need_input_grad = enc.down.is_some();
            let d0 = self.block_backward(&enc.blocks[0], &et.blocks[0], d1, grads, need_input_grad);
            if let (Some(conv), Some((input, act)), Some(mut d0)) = (&enc.down, &et.down, d0) {
                relu_backward_inplace(&mut d0, act);
                from_below = conv.backward(&self.params, grads, input, &d0, true);
            }
        }
        d_prev_levels.reverse();
        StateGrads { levels: d_prev_levels }
    }
}

//! Conditional U-Net generator, patch discriminator, label conditioning and
//! the memory gate.
//!
//! The generator has `log2(size)` encoder stages with widths
//! `64, 128, 256, 512, 512, ...` (scaled by `base_width / 64`), so the
//! bottleneck is `1 x 1`. Decoder stage `j` upsamples to the width of encoder
//! stage `j - 1` and is concatenated with that stage's output. The first
//! `min(3, stages - 2)` decoder stages apply dropout, which is the only
//! source of generator noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memory::MEMORY_WIDTH;
use crate::nn::{dropout, BatchNorm2d, Conv2d, Direction, Linear, Mode};
use crate::raster;
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DROPOUT_RATE: f64 = 0.5;
/// Gate plane bias at initialization: `tanh(3.8) = 0.999`, a near
/// pass-through gate, so gated fakes can still reach the `-1` background of
/// real maps.
pub const GATE_BIAS_INIT: f64 = 3.8;
const MAX_WIDTH_FACTOR: usize = 8;

/// Appends `n_tasks` constant one-hot label planes to each image of
/// `x: [N, C, H, W]`; `labels[i]` selects the plane set to one for item `i`.
pub fn condition_input<T: Scalar>(x: &Tensor<T>, labels: &[usize], n_tasks: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || labels.len() != s[0] {
        return Err(Error::shape("condition_input", s, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_tasks) {
        return Err(Error::Contract(format!("task label {bad} outside [0, {n_tasks})")));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(n * (c + n_tasks) * plane);
    for (i, &label) in labels.iter().enumerate() {
        data.extend_from_slice(&x.data()[i * c * plane..(i + 1) * c * plane]);
        for task in 0..n_tasks {
            let v = if task == label { T::one() } else { T::zero() };
            data.extend(std::iter::repeat_n(v, plane));
        }
    }
    Tensor::from_vec(&[n, c + n_tasks, s[2], s[3]], data)
}

fn stage_width(base: usize, stage: usize) -> usize {
    base * (1 << stage.min(3)).min(MAX_WIDTH_FACTOR)
}

fn log2_exact(size: usize) -> Option<usize> {
    (size >= 2 && size.is_power_of_two()).then(|| size.trailing_zeros() as usize)
}

/// Outputs of every generator stage, for inspection.
#[derive(Debug, Clone)]
pub struct GeneratorTrace<'t, T: Scalar> {
    /// Encoder stage outputs, outermost first.
    pub encoder: Vec<Var<'t, T>>,
    /// Inputs of the decoder up-convolutions, innermost first; the last
    /// entry feeds the output layer.
    pub decoder_inputs: Vec<Var<'t, T>>,
    /// `[N, 1, H, W]` in `(-1, 1)`.
    pub output: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    size: usize,
    in_channels: usize,
    encoder: Vec<Conv2d<T>>,
    encoder_norm: Vec<Option<BatchNorm2d<T>>>,
    decoder: Vec<Conv2d<T>>,
    decoder_norm: Vec<Option<BatchNorm2d<T>>>,
    dropout_stages: usize,
}

impl<T: Scalar> Generator<T> {
    pub fn new(size: usize, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_width(size, in_channels, 64, rng)
    }

    /// `base_width` replaces the 64 channels of the outermost stage; deeper
    /// stages scale with it.
    pub fn with_width(size: usize, in_channels: usize, base_width: usize, rng: &mut impl Rng) -> Result<Self> {
        let stages = log2_exact(size)
            .filter(|&n| n >= 2)
            .ok_or_else(|| Error::Config(format!("generator size {size} is not a power of two >= 4")))?;
        let widths: Vec<usize> = (0..stages).map(|s| stage_width(base_width, s)).collect();
        let mut encoder = Vec::new();
        let mut encoder_norm = Vec::new();
        for s in 0..stages {
            let input = if s == 0 { in_channels } else { widths[s - 1] };
            encoder.push(Conv2d::new(&format!("gen.enc{s}"), input, widths[s], Direction::Down, rng));
            let norm = (s != 0 && s != stages - 1).then(|| BatchNorm2d::new(&format!("gen.enc{s}.bn"), widths[s]));
            encoder_norm.push(norm);
        }
        // Decoder stage j (innermost first) maps to the width of encoder stage
        // `stages - 2 - j`; the last up-convolution produces the output map.
        let mut decoder = Vec::new();
        let mut decoder_norm = Vec::new();
        for j in 0..stages {
            let source = stages - 1 - j;
            let input = if j == 0 { widths[source] } else { 2 * widths[source] };
            let output = if source == 0 { 1 } else { widths[source - 1] };
            decoder.push(Conv2d::new(&format!("gen.dec{j}"), input, output, Direction::Up, rng));
            let norm = (source != 0).then(|| BatchNorm2d::new(&format!("gen.dec{j}.bn"), output));
            decoder_norm.push(norm);
        }
        Ok(Self {
            size,
            in_channels,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            dropout_stages: 3.min(stages - 2),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn stages(&self) -> usize {
        self.encoder.len()
    }

    /// Number of convolution layers, numbered `1..=conv_layers()` from input
    /// to output.
    pub fn conv_layers(&self) -> usize {
        2 * self.stages()
    }

    /// `dropout = None` disables dropout.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        mode: Mode,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'t, T>> {
        Ok(self.trace(tape, x, mode, dropout, None)?.output)
    }

    /// Forward pass recording every stage. `zero` sets one element
    /// `(stage, flat index)` of an encoder output to zero before it is used.
    pub fn trace<'t>(
        &mut self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
        zero: Option<(usize, usize)>,
    ) -> Result<GeneratorTrace<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels || shape[2] != self.size || shape[3] != self.size {
            return Err(Error::shape(
                "generator input",
                &shape,
                &[shape.first().copied().unwrap_or(0), self.in_channels, self.size, self.size],
            ));
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut encoder = Vec::with_capacity(self.stages());
        let mut h = x;
        for s in 0..self.stages() {
            if s > 0 {
                h = h.leaky_relu(slope);
            }
            h = self.encoder[s].forward(tape, h)?;
            if let Some(bn) = &mut self.encoder_norm[s] {
                h = bn.forward(tape, h, mode)?;
            }
            if let Some((_, index)) = zero.filter(|z| z.0 == s) {
                let mut mask = vec![T::one(); h.numel()];
                *mask.get_mut(index).ok_or_else(|| Error::contract("probe index out of range"))? = T::zero();
                h = h.mask(mask)?;
            }
            encoder.push(h);
        }
        let mut decoder_inputs = Vec::with_capacity(self.stages());
        let mut input = h;
        let last = self.stages() - 1;
        for j in 0..self.stages() {
            decoder_inputs.push(input);
            let mut u = self.decoder[j].forward(tape, input.relu())?;
            if j == last {
                return Ok(GeneratorTrace { encoder, decoder_inputs, output: u.tanh() });
            }
            if let Some(bn) = &mut self.decoder_norm[j] {
                u = bn.forward(tape, u, mode)?;
            }
            if j < self.dropout_stages {
                u = dropout(u, DROPOUT_RATE, rng.as_deref_mut())?;
            }
            input = Var::concat(&[u, encoder[last - 1 - j]], 1)?;
        }
        unreachable!("the loop returns at the output layer")
    }

    /// Per-layer heatmaps for `x: [1, C, H, W]`: channel-mean absolute
    /// activation of each requested convolution layer (see
    /// [`conv_layers`](Self::conv_layers)), min-max normalized to `[0, 1]`
    /// (a constant map becomes all zeros) and resized to `H x W`.
    /// Encoder layers report their output after normalization; decoder
    /// layers report the convolution input.
    pub fn export_activations(&mut self, x: &Tensor<T>, layer_ids: &[usize]) -> Result<Vec<Tensor<T>>> {
        let total = self.conv_layers();
        if let Some(&bad) = layer_ids.iter().find(|&&id| id == 0 || id > total) {
            return Err(Error::Contract(format!("activation layer {bad} outside 1..={total}")));
        }
        if x.shape().first() != Some(&1) {
            return Err(Error::shape("export_activations", x.shape(), &[1]));
        }
        let tape = Tape::new();
        let trace = self.trace(&tape, tape.constant(x), Mode::Eval, None, None)?;
        let n = self.stages();
        layer_ids
            .iter()
            .map(|&id| {
                let act = if id <= n { trace.encoder[id - 1] } else { trace.decoder_inputs[id - n - 1] };
                let s = act.shape();
                let (c, h, w) = (s[1], s[2], s[3]);
                let plane = act.with_data(|d| {
                    (0..h * w)
                        .map(|p| (0..c).map(|ch| d[ch * h * w + p].abs().as_f64()).sum::<f64>() / c as f64)
                        .collect::<Vec<f64>>()
                });
                let normalized = raster::min_max(&plane);
                let resized = raster::resize_bilinear(&normalized, w, h, self.size, self.size)?;
                let clamped: Vec<f64> = resized.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
                Tensor::from_f64s(&[self.size, self.size], &clamped)
            })
            .collect()
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for (conv, bn) in self.encoder.iter().zip(&self.encoder_norm) {
            conv.visit_params(f);
            bn.visit_params(f);
        }
        for (conv, bn) in self.decoder.iter().zip(&self.decoder_norm) {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for (conv, bn) in self.encoder.iter_mut().zip(&mut self.encoder_norm) {
            conv.visit_params_mut(f);
            bn.visit_params_mut(f);
        }
        for (conv, bn) in self.decoder.iter_mut().zip(&mut self.decoder_norm) {
            conv.visit_params_mut(f);
            bn.visit_params_mut(f);
        }
    }
}

/// Patch discriminator: `min(6, log2(size) - 2)` stride-2 stages with widths
/// `64, 128, 256, 512, 512, 512` and LeakyReLU, then a one-channel
/// convolution whose sigmoid patch scores are averaged per item.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    size: usize,
    in_channels: usize,
    stages: Vec<Conv2d<T>>,
    norms: Vec<Option<BatchNorm2d<T>>>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> Discriminator<T> {
    /// `in_channels` counts the conditioning channels plus the map channel.
    pub fn new(size: usize, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_width(size, in_channels, 64, rng)
    }

    pub fn with_width(size: usize, in_channels: usize, base_width: usize, rng: &mut impl Rng) -> Result<Self> {
        let depth = log2_exact(size)
            .filter(|&n| n >= 3)
            .map(|n| (n - 2).min(6))
            .ok_or_else(|| Error::Config(format!("discriminator size {size} is not a power of two >= 8")))?;
        let mut stages = Vec::new();
        let mut norms = Vec::new();
        let mut input = in_channels;
        for s in 0..depth {
            let width = stage_width(base_width, s);
            stages.push(Conv2d::new(&format!("disc.stage{s}"), input, width, Direction::Down, rng));
            norms.push((s != 0).then(|| BatchNorm2d::new(&format!("disc.stage{s}.bn"), width)));
            input = width;
        }
        let head = Conv2d::new("disc.head", input, 1, Direction::Down, rng);
        Ok(Self { size, in_channels, stages, norms, head })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Scores `[N]` in `(0, 1)` for `x_cond: [N, C, H, W]` and `y: [N, 1, H, W]`.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x_cond: Var<'t, T>, y: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let (xs, ys) = (x_cond.shape(), y.shape());
        if xs.len() != 4 || ys.len() != 4 || ys[1] != 1 || xs[0] != ys[0] || xs[2..] != ys[2..] {
            return Err(Error::shape("discriminator input", &xs, &ys));
        }
        if xs[2] != self.size || xs[3] != self.size || xs[1] + 1 != self.in_channels {
            return Err(Error::shape("discriminator input", &xs, &[xs[0], self.in_channels - 1, self.size, self.size]));
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut h = Var::concat(&[x_cond, y], 1)?;
        for (conv, bn) in self.stages.iter().zip(&mut self.norms) {
            h = conv.forward(tape, h)?;
            if let Some(bn) = bn {
                h = bn.forward(tape, h, mode)?;
            }
            h = h.leaky_relu(slope);
        }
        let patches = self.head.forward(tape, h)?.sigmoid();
        let n = xs[0];
        let per_item = patches.numel() / n;
        let ones = tape.constant(&Tensor::full(&[per_item, 1], T::one() / T::of(per_item as f64)));
        patches.reshape(&[n, per_item])?.matmul(ones)?.reshape(&[n])
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for (conv, bn) in self.stages.iter().zip(&self.norms) {
            conv.visit_params(f);
            bn.visit_params(f);
        }
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for (conv, bn) in self.stages.iter_mut().zip(&mut self.norms) {
            conv.visit_params_mut(f);
            bn.visit_params_mut(f);
        }
        self.head.visit_params_mut(f);
    }
}

/// Learned map from the 100 gate values to a `size x size` gate plane.
#[derive(Debug, Clone)]
pub struct GateProjection<T> {
    pub linear: Linear<T>,
    size: usize,
}

impl<T: Scalar> GateProjection<T> {
    pub fn new(size: usize, rng: &mut impl Rng) -> Self {
        let mut linear = Linear::new("gate", MEMORY_WIDTH, size * size, rng);
        linear.bias.tensor.data_mut().fill(T::of(GATE_BIAS_INIT));
        Self { linear, size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `tanh(proj(g))` as `[N, 1, size, size]` for `gates: [N, 100]`.
    pub fn plane<'t>(&self, tape: &'t Tape<T>, gates: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = gates.shape()[0];
        self.linear.forward(tape, gates)?.tanh().reshape(&[n, 1, self.size, self.size])
    }
}

impl<T: Scalar> Module<T> for GateProjection<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.linear.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.linear.visit_params_mut(f);
    }
}

/// `o ∘ tanh(proj(g))` for `o: [N, 1, H, W]` and `gates: [N, 100]`.
pub fn apply_memory_gate<'t, T: Scalar>(
    tape: &'t Tape<T>,
    o: Var<'t, T>,
    gates: Var<'t, T>,
    proj: &GateProjection<T>,
) -> Result<Var<'t, T>> {
    let plane = proj.plane(tape, gates)?;
    if plane.shape() != o.shape() {
        return Err(Error::shape("memory gate", &o.shape(), &plane.shape()));
    }
    o.mul(plane)
}

/// Affine remap of a generator-space value in `(-1, 1)` to `[0, 1]`.
pub fn to_unit<T: Scalar>(v: T) -> T {
    (v + T::one()) * T::of(0.5)
}

/// Inverse of [`to_unit`]: maps a `[0, 1]` saliency value into generator space.
pub fn from_unit<T: Scalar>(v: T) -> T {
    v * T::of(2.0) - T::one()
}

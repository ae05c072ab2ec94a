//! Per-subject external working memory.
//!
//! A [`MemoryState`] holds a `k x l` slot matrix plus the carries of the read
//! and write LSTMs. One step embeds a generator output map, attends over the
//! slots, retrieves a state vector through the perceptron, produces a write
//! vector with the write LSTM and folds it back into the slots. The returned
//! gate `tanh(m_t)` modulates the generator output.
//!
//! Slots are visited in a canonical (lexicographic) order during the read so
//! attention, retrieval and gate are exactly equivariant to slot permutations,
//! independent of summation order.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCarry, LstmCell, Mlp, LSTM_HIDDEN};
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

/// Slot width `l`; equals the read LSTM's hidden size.
pub const MEMORY_WIDTH: usize = LSTM_HIDDEN;
/// Default number of slots `k`.
pub const DEFAULT_SLOTS: usize = 32;
/// Side of the pooled grid an output map is reduced to before embedding.
pub const EMBED_GRID: usize = 16;
/// Side of the square patches fed to the read LSTM.
pub const EMBED_PATCH: usize = 4;

/// Slot matrix and LSTM carries of one subject stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    /// `[k, l]`
    pub memory: Tensor<T>,
    pub read: LstmCarry<T>,
    pub write: LstmCarry<T>,
    pub subject_id: String,
}

impl<T: Scalar> MemoryState<T> {
    /// Zeroed state: all slots zero (uniform first attention), zero carries.
    pub fn new(subject_id: impl Into<String>, slots: usize) -> Self {
        Self {
            memory: Tensor::zeros(&[slots, MEMORY_WIDTH]),
            read: LstmCarry::zeros(LSTM_HIDDEN),
            write: LstmCarry::zeros(LSTM_HIDDEN),
            subject_id: subject_id.into(),
        }
    }

    pub fn slots(&self) -> usize {
        self.memory.shape()[0]
    }

    pub fn reset(&mut self) {
        self.memory.data_mut().fill(T::zero());
        for t in [&mut self.read.h, &mut self.read.c, &mut self.write.h, &mut self.write.c] {
            t.data_mut().fill(T::zero());
        }
    }

    /// Registers the state on `tape` as constants; gradients stop at the
    /// state boundary.
    pub fn on_tape<'t>(&self, tape: &'t Tape<T>) -> StateVars<'t, T> {
        StateVars {
            memory: tape.constant(&self.memory),
            read: (tape.constant(&self.read.h), tape.constant(&self.read.c)),
            write: (tape.constant(&self.write.h), tape.constant(&self.write.c)),
        }
    }

    /// Overwrites this state's values with those of `vars`.
    pub fn assign(&mut self, vars: &StateVars<'_, T>) {
        self.memory = vars.memory.value();
        self.read = LstmCarry { h: vars.read.0.value(), c: vars.read.1.value() };
        self.write = LstmCarry { h: vars.write.0.value(), c: vars.write.1.value() };
    }
}

/// A memory state living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StateVars<'t, T: Scalar> {
    pub memory: Var<'t, T>,
    pub read: (Var<'t, T>, Var<'t, T>),
    pub write: (Var<'t, T>, Var<'t, T>),
}

/// Intermediate values of one memory step, each `[1, width]`.
#[derive(Debug, Clone, Copy)]
pub struct Readout<'t, T: Scalar> {
    pub o_emb: Var<'t, T>,
    /// `[1, k]`
    pub attention: Var<'t, T>,
    pub retrieved: Var<'t, T>,
    pub state: Var<'t, T>,
    pub write: Var<'t, T>,
    pub gate: Var<'t, T>,
}

/// The learned parts of the memory: patch projection, read LSTM,
/// retrieval perceptron and write LSTM.
#[derive(Debug, Clone)]
pub struct MemoryController<T> {
    pub patch_proj: Linear<T>,
    pub read_lstm: LstmCell<T>,
    pub mlp: Mlp<T>,
    pub write_lstm: LstmCell<T>,
    grid: usize,
    patch: usize,
}

impl<T: Scalar> MemoryController<T> {
    pub fn new(name: &str, rng: &mut impl Rng) -> Self {
        Self::with_geometry(name, EMBED_GRID, EMBED_PATCH, rng)
    }

    /// Controller pooling outputs to `grid x grid` and reading `patch x patch`
    /// patches in raster order. `grid` must be a positive multiple of `patch`.
    pub fn with_geometry(name: &str, grid: usize, patch: usize, rng: &mut impl Rng) -> Self {
        assert!(patch > 0 && grid >= patch && grid % patch == 0, "grid {grid} not tiled by patch {patch}");
        Self {
            patch_proj: Linear::new(&format!("{name}.patch_proj"), patch * patch, LSTM_HIDDEN, rng),
            read_lstm: LstmCell::new(&format!("{name}.read_lstm"), LSTM_HIDDEN, LSTM_HIDDEN, rng),
            mlp: Mlp::new(&format!("{name}.mlp"), 2 * LSTM_HIDDEN, MEMORY_WIDTH, rng),
            write_lstm: LstmCell::new(&format!("{name}.write_lstm"), MEMORY_WIDTH, LSTM_HIDDEN, rng),
            grid,
            patch,
        }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Embeds one output map (`[H, W]` with any number of leading unit
    /// dims) into `[1, 100]`, advancing the read carry.
    pub fn embed_output<'t>(
        &self,
        tape: &'t Tape<T>,
        o: Var<'t, T>,
        carry: (Var<'t, T>, Var<'t, T>),
    ) -> Result<(Var<'t, T>, (Var<'t, T>, Var<'t, T>))> {
        let shape = o.shape();
        let n = shape.len();
        if n < 2 || shape[..n - 2].iter().any(|&d| d != 1) || shape[n - 2] < self.grid || shape[n - 1] < self.grid {
            return Err(Error::shape("embed_output", &shape, &[self.grid, self.grid]));
        }
        let (g, p) = (self.grid, self.patch);
        let per_side = g / p;
        let pooled = o.reshape(&[1, 1, shape[n - 2], shape[n - 1]])?.adaptive_avg_pool(g, g)?;
        let mut index = Vec::with_capacity(g * g);
        for py in 0..per_side {
            for px in 0..per_side {
                for dy in 0..p {
                    for dx in 0..p {
                        index.push((py * p + dy) * g + px * p + dx);
                    }
                }
            }
        }
        let patches = pooled.gather(index, &[per_side * per_side, p * p])?;
        let projected = self.patch_proj.forward(tape, patches)?;
        let (mut h, mut c) = carry;
        for t in 0..per_side * per_side {
            (h, c) = self.read_lstm.step(tape, projected.slice(0, t, 1)?, h, c)?;
        }
        Ok((h, (h, c)))
    }

    /// One step of the write LSTM on `m: [1, l]`; returns the write vector
    /// and the advanced carry.
    pub fn write<'t>(
        &self,
        tape: &'t Tape<T>,
        m: Var<'t, T>,
        carry: (Var<'t, T>, Var<'t, T>),
    ) -> Result<(Var<'t, T>, (Var<'t, T>, Var<'t, T>))> {
        let (h, c) = self.write_lstm.step(tape, m, carry.0, carry.1)?;
        Ok((h, (h, c)))
    }

    /// `m_t = mlp([o_emb, h_t])`.
    pub fn retrieve<'t>(&self, tape: &'t Tape<T>, o_emb: Var<'t, T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        if o_emb.shape() != [1, LSTM_HIDDEN] || h.shape() != [1, MEMORY_WIDTH] {
            return Err(Error::shape("retrieve", &o_emb.shape(), &h.shape()));
        }
        self.mlp.forward(tape, Var::concat(&[o_emb, h], 1)?)
    }

    /// Full step: embed, read, retrieve, write, update. Returns the readout
    /// (whose `gate` is `tanh(m_t)`) and the state after the update.
    pub fn step<'t>(
        &self,
        tape: &'t Tape<T>,
        state: StateVars<'t, T>,
        o: Var<'t, T>,
    ) -> Result<(Readout<'t, T>, StateVars<'t, T>)> {
        let (o_emb, read_carry) = self.embed_output(tape, o, state.read)?;
        let (attention, retrieved) = read(state.memory, o_emb)?;
        let m = self.retrieve(tape, o_emb, retrieved)?;
        let (write_vec, write_carry) = self.write(tape, m, state.write)?;
        let memory = update_memory(state.memory, attention, write_vec)?;
        let readout = Readout { o_emb, attention, retrieved, state: m, write: write_vec, gate: m.tanh() };
        Ok((readout, StateVars { memory, read: read_carry, write: write_carry }))
    }

    /// Runs one step outside of training and stores the result in `state`.
    /// Returns the gate values.
    pub fn advance(&self, state: &mut MemoryState<T>, o: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let (readout, next) = self.step(&tape, state.on_tape(&tape), tape.constant(o))?;
        state.assign(&next);
        Ok(readout.gate.value())
    }

    /// Gate values for `o` without changing `state`.
    pub fn peek(&self, state: &MemoryState<T>, o: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let (readout, _) = self.step(&tape, state.on_tape(&tape), tape.constant(o))?;
        Ok(readout.gate.value())
    }
}

impl<T: Scalar> Module<T> for MemoryController<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.patch_proj.visit_params(f);
        self.read_lstm.visit_params(f);
        self.mlp.visit_params(f);
        self.write_lstm.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.patch_proj.visit_params_mut(f);
        self.read_lstm.visit_params_mut(f);
        self.mlp.visit_params_mut(f);
        self.write_lstm.visit_params_mut(f);
    }
}

fn canonical_order<T: Scalar>(rows: &[T], width: usize) -> Vec<usize> {
    let k = rows.len() / width;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a * width..(a + 1) * width], &rows[b * width..(b + 1) * width]);
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// `a_t = softmax(M o_emb)` over slots and `h_t = a_t M`.
/// `memory: [k, l]`, `o_emb: [1, l]`; returns `([1, k], [1, l])`.
pub fn read<'t, T: Scalar>(memory: Var<'t, T>, o_emb: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let ms = memory.shape();
    if ms.len() != 2 || o_emb.shape() != [1, ms[1]] {
        return Err(Error::shape("memory read", &ms, &o_emb.shape()));
    }
    let (k, l) = (ms[0], ms[1]);
    let order = memory.with_data(|d| canonical_order(d, l));
    let mut inverse = vec![0; k];
    for (pos, &slot) in order.iter().enumerate() {
        inverse[slot] = pos;
    }
    let row_index: Vec<usize> = order.iter().flat_map(|&s| s * l..(s + 1) * l).collect();
    let sorted = memory.gather(row_index, &[k, l])?;
    let weights = o_emb.matmul(sorted.t()?)?.softmax()?;
    let retrieved = weights.matmul(sorted)?;
    let attention = weights.gather(inverse, &[1, k])?;
    Ok((attention, retrieved))
}

/// `M_t[i] = (1 - a_t[i]) M_{t-1}[i] + a_t[i] w_t`; each entry stays within
/// the closed interval between its old value and the write value.
pub fn update_memory<'t, T: Scalar>(memory: Var<'t, T>, attention: Var<'t, T>, write: Var<'t, T>) -> Result<Var<'t, T>> {
    memory.interpolate_rows(attention, write)
}

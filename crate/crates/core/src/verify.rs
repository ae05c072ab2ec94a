//! Oracle suites behind `mcgan verify`: finite-difference gradient checks,
//! brute-force metric oracles, and randomized memory invariants. Each case
//! is an independent pass/fail unit; a suite passes when no case fails.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memory::{read, update_memory, MemoryController, MemoryState, MEMORY_WIDTH};
use crate::metrics::{
    auc_borji, cc, kl, normalize_zscore, nss, sample_negatives, sm, Fixation, SaliencyMap,
};
use crate::networks::{apply_memory_gate, Discriminator, GateProjection, Generator};
use crate::nn::{BatchNorm2d, Conv2d, Direction, LstmCarry, LstmCell, Linear, Mlp, Mode, LSTM_HIDDEN};
use crate::tensor::gradcheck::{check_inputs, check_module, Report};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::{d_loss, g_loss};

/// Random cases per metric and per memory invariant.
pub const RANDOM_CASES: usize = 1000;
/// Absolute tolerance between a metric and its oracle.
pub const METRIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Gradients,
    Metrics,
    Memory,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Gradients, Suite::Metrics, Suite::Memory];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Metrics => "metrics",
            Suite::Memory => "memory",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (gradients, metrics, memory)")))
    }
}

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    /// One line per failed case.
    pub failures: Vec<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failed == 0 && self.passed > 0
    }

    fn record(&mut self, name: &str, outcome: std::result::Result<(), String>) {
        match outcome {
            Ok(()) => self.passed += 1,
            Err(why) => {
                self.failed += 1;
                self.failures.push(format!("{name}: {why}"));
            }
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<9} {} passed, {} failed ({:.1}s)",
            self.suite.name(),
            self.passed,
            self.failed,
            self.seconds
        )
    }
}

pub fn run(suite: Suite) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport { suite, passed: 0, failed: 0, failures: Vec::new(), seconds: 0.0 };
    match suite {
        Suite::Gradients => {
            for case in gradient_cases() {
                report.record(case.name, judge(&case));
            }
        }
        Suite::Metrics => metric_cases(&mut report),
        Suite::Memory => memory_cases(&mut report),
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

// ---------------------------------------------------------------------------
// Gradients

/// One finite-difference check.
pub struct GradientCase {
    pub name: &'static str,
    /// True for single-op cases, false for layers and composite networks.
    pub elementary: bool,
    pub check: fn() -> Result<Report>,
}

fn judge(case: &GradientCase) -> std::result::Result<(), String> {
    match (case.check)() {
        Ok(r) if r.passed() => Ok(()),
        Ok(r) => Err(format!("max relative error {:.3e} at {} ({} entries)", r.max_rel_error, r.worst, r.checked)),
        Err(e) => Err(format!("error: {e}")),
    }
}

/// Runs only the single-op cases; used to show an injected backward fault
/// is detected.
pub fn run_elementary_gradients() -> SuiteReport {
    let start = Instant::now();
    let mut report =
        SuiteReport { suite: Suite::Gradients, passed: 0, failed: 0, failures: Vec::new(), seconds: 0.0 };
    for case in gradient_cases().into_iter().filter(|c| c.elementary) {
        report.record(case.name, judge(&case));
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

fn random(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
        .expect("length matches shape")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted sum so each output element receives a distinct upstream gradient.
fn weigh<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let n = y.numel();
    let w: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0 + 0.05).collect();
    Ok(y.mul(tape.constant(&Tensor::from_vec(&y.shape(), w)?))?.sum())
}

type Unary = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>;

fn check_op(shapes: &[&[usize]], seed: u64, f: Unary) -> Result<Report> {
    let mut r = rng(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r, 2.0)).collect();
    check_inputs(&inputs, f)
}

pub fn gradient_cases() -> Vec<GradientCase> {
    macro_rules! op {
        ($name:literal, $check:expr) => {
            GradientCase { name: $name, elementary: true, check: $check }
        };
    }
    macro_rules! net {
        ($name:literal, $check:expr) => {
            GradientCase { name: $name, elementary: false, check: $check }
        };
    }
    vec![
        op!("add", || check_op(&[&[3, 4], &[3, 4]], 1, |t, v| weigh(t, v[0].add(v[1])?))),
        op!("sub", || check_op(&[&[3, 4], &[3, 1]], 2, |t, v| weigh(t, v[0].sub(v[1])?))),
        op!("mul", || check_op(&[&[3, 4], &[1, 4]], 3, |t, v| weigh(t, v[0].mul(v[1])?))),
        op!("scale", || check_op(&[&[5]], 4, |t, v| weigh(t, v[0].scale(-1.7)))),
        op!("offset", || check_op(&[&[5]], 5, |t, v| weigh(t, v[0].add_scalar(0.3).mul(v[0])?))),
        op!("matmul", || check_op(&[&[3, 5], &[5, 2]], 6, |t, v| weigh(t, v[0].matmul(v[1])?))),
        op!("transpose", || check_op(&[&[3, 4]], 7, |t, v| weigh(t, v[0].t()?))),
        op!("outer", || check_op(&[&[4], &[3]], 8, |t, v| weigh(t, v[0].outer(v[1])?))),
        op!("interpolate", || {
            let mut r = rng(9);
            let m = random(&[3, 4], &mut r, 2.0);
            let a = random(&[3], &mut r, 0.4).map(|v| v + 0.5);
            let w = random(&[4], &mut r, 2.0);
            check_inputs(&[m, a, w], |t, v| weigh(t, v[0].interpolate_rows(v[1], v[2])?))
        }),
        op!("tanh", || check_op(&[&[3, 4]], 10, |t, v| weigh(t, v[0].tanh()))),
        op!("sigmoid", || check_op(&[&[3, 4]], 11, |t, v| weigh(t, v[0].sigmoid()))),
        op!("relu", || check_op(&[&[3, 4]], 12, |t, v| weigh(t, v[0].relu()))),
        op!("leaky_relu", || check_op(&[&[3, 4]], 13, |t, v| weigh(t, v[0].leaky_relu(0.2)))),
        op!("ln", || check_op(&[&[3, 4]], 14, |t, v| weigh(t, v[0].abs().add_scalar(0.5).ln()))),
        op!("abs", || check_op(&[&[3, 4]], 15, |t, v| weigh(t, v[0].abs()))),
        op!("softmax", || check_op(&[&[2, 5]], 16, |t, v| weigh(t, v[0].softmax()?))),
        op!("sum", || check_op(&[&[3, 4]], 17, |_, v| Ok(v[0].mul(v[0])?.sum()))),
        op!("mean", || check_op(&[&[3, 4]], 18, |_, v| Ok(v[0].tanh().mean()))),
        op!("reshape", || check_op(&[&[3, 4]], 19, |t, v| weigh(t, v[0].reshape(&[2, 6])?))),
        op!("concat", || check_op(&[&[3, 4], &[3, 1]], 20, |t, v| weigh(t, Var::concat(&[v[0], v[1]], 1)?))),
        op!("slice", || check_op(&[&[3, 4]], 21, |t, v| weigh(t, v[0].slice(1, 1, 2)?))),
        op!("gather", || check_op(&[&[3, 4]], 22, |t, v| weigh(t, v[0].gather(vec![3, 3, 0, 11, 5], &[5])?))),
        op!("conv_down", || {
            let mut r = rng(23);
            let x = random(&[2, 3, 4, 6], &mut r, 2.0);
            let w = random(&[2, 3, 4, 4], &mut r, 0.6);
            let b = random(&[2], &mut r, 1.0);
            check_inputs(&[x, w, b], |t, v| weigh(t, v[0].conv_down(v[1], v[2])?))
        }),
        op!("conv_up", || {
            let mut r = rng(24);
            let x = random(&[2, 3, 2, 3], &mut r, 2.0);
            let w = random(&[3, 2, 4, 4], &mut r, 0.6);
            let b = random(&[2], &mut r, 1.0);
            check_inputs(&[x, w, b], |t, v| weigh(t, v[0].conv_up(v[1], v[2])?))
        }),
        op!("batchnorm", || {
            check_op(&[&[2, 3, 4, 4], &[3], &[3]], 25, |t, v| weigh(t, v[0].batch_norm(v[1], v[2], 1e-5)?.0))
        }),
        op!("channel_affine", || {
            check_op(&[&[2, 3, 2, 2], &[3], &[3]], 26, |t, v| {
                weigh(t, v[0].channel_affine(v[1], v[2], &[0.1, -0.2, 0.3], &[1.5, 0.7, 2.0])?)
            })
        }),
        op!("dropout", || {
            check_op(&[&[2, 3, 4]], 27, |t, v| {
                let mask = (0..24).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
                weigh(t, v[0].mask(mask)?)
            })
        }),
        op!("avg_pool", || check_op(&[&[1, 2, 6, 8]], 28, |t, v| weigh(t, v[0].adaptive_avg_pool(3, 4)?))),
        net!("conv2d_down_layer", || {
            let mut r = rng(30);
            let x = random(&[2, 3, 4, 4], &mut r, 1.0);
            let mut layer = Conv2d::new("down", 3, 2, Direction::Down, &mut r);
            layer.bias.tensor = random(&[2], &mut r, 1.0);
            check_module(&mut layer, 24, 30, |m, t| weigh(t, m.forward(t, t.constant(&x))?.tanh()))
        }),
        net!("conv2d_up_layer", || {
            let mut r = rng(31);
            let x = random(&[2, 3, 2, 2], &mut r, 1.0);
            let mut layer = Conv2d::new("up", 3, 2, Direction::Up, &mut r);
            layer.bias.tensor = random(&[2], &mut r, 1.0);
            check_module(&mut layer, 24, 31, |m, t| weigh(t, m.forward(t, t.constant(&x))?.tanh()))
        }),
        net!("batchnorm_layer", || {
            let mut r = rng(32);
            let x = random(&[2, 3, 4, 4], &mut r, 1.0);
            let mut layer = BatchNorm2d::new("bn", 3);
            layer.gamma.tensor = random(&[3], &mut r, 1.0);
            layer.beta.tensor = random(&[3], &mut r, 1.0);
            check_module(&mut layer, 6, 32, |m, t| weigh(t, m.forward(t, t.constant(&x), Mode::Train)?.tanh()))
        }),
        net!("linear_layer", || {
            let mut r = rng(33);
            let x = random(&[3, 5], &mut r, 1.0);
            let mut layer = Linear::new("lin", 5, 4, &mut r);
            check_module(&mut layer, 12, 33, |m, t| weigh(t, m.forward(t, t.constant(&x))?.tanh()))
        }),
        net!("lstm_cell", || {
            let mut r = rng(34);
            let x = random(&[2, 5], &mut r, 1.0);
            let (h0, c0) = (random(&[2, 6], &mut r, 1.0), random(&[2, 6], &mut r, 1.0));
            let mut cell = LstmCell::new("lstm", 5, 6, &mut r);
            check_module(&mut cell, 16, 34, |m, t| {
                let (h, c) = m.step(t, t.constant(&x), t.constant(&h0), t.constant(&c0))?;
                let (h, c) = m.step(t, t.constant(&x), h, c)?;
                weigh(t, h.add(c.scale(0.5))?)
            })
        }),
        net!("mlp", || {
            let mut r = rng(35);
            let x = random(&[3, 5], &mut r, 1.0);
            let mut mlp = Mlp::new("mlp", 5, 3, &mut r);
            check_module(&mut mlp, 16, 35, |m, t| weigh(t, m.forward(t, t.constant(&x))?.tanh()))
        }),
        net!("memory_read_update", || {
            let mut r = rng(36);
            let m = random(&[5, 6], &mut r, 1.0);
            let o = random(&[1, 6], &mut r, 1.0);
            let w = random(&[1, 6], &mut r, 1.0);
            check_inputs(&[m, o, w], |t, v| {
                let (a, h) = read(v[0], v[1])?;
                let updated = update_memory(v[0], a, v[2])?;
                weigh(t, updated)?.add(weigh(t, h)?)
            })
        }),
        net!("memory_step", || {
            let mut r = rng(37);
            let mut ctl = MemoryController::new("memory", &mut r);
            let state = random_state(6, &mut r);
            let o = random(&[1, 1, 16, 16], &mut r, 1.0);
            let inputs = check_inputs(std::slice::from_ref(&o), |t, v| memory_loss(&ctl, &state, t, v[0]))?;
            let mut params = check_module(&mut ctl, 4, 37, |c, t| memory_loss(c, &state, t, t.constant(&o)))?;
            params.merge(inputs);
            Ok(params)
        }),
        net!("memory_gate", || {
            let mut r = rng(38);
            let mut gate = GateProjection::new(4, &mut r);
            gate.linear.bias.tensor = random(&[16], &mut r, 1.0);
            let o = random(&[2, 1, 4, 4], &mut r, 1.0);
            let g = random(&[2, MEMORY_WIDTH], &mut r, 1.0);
            let inputs = check_inputs(&[o.clone(), g.clone()], |t, v| {
                let gate = GateProjection::new(4, &mut rng(38));
                weigh(t, apply_memory_gate(t, v[0], v[1], &gate)?)
            })?;
            let mut params = check_module(&mut gate, 12, 38, |p, t| {
                weigh(t, apply_memory_gate(t, t.constant(&o), t.constant(&g), p)?)
            })?;
            params.merge(inputs);
            Ok(params)
        }),
        net!("generator_16", || {
            let mut r = rng(39);
            let mut g = Generator::with_width(16, 5, 4, &mut r)?;
            let x = random(&[2, 5, 16, 16], &mut r, 1.0);
            check_module(&mut g, 3, 39, |g, t| weigh(t, g.forward(t, t.constant(&x), Mode::Train, None)?))
        }),
        net!("discriminator_16", || {
            let mut r = rng(40);
            let mut d = Discriminator::with_width(16, 6, 2, &mut r)?;
            let x = random(&[2, 5, 16, 16], &mut r, 1.0);
            let y = random(&[2, 1, 16, 16], &mut r, 1.0);
            check_module(&mut d, 3, 40, |d, t| weigh(t, d.forward(t, t.constant(&x), t.constant(&y), Mode::Train)?))
        }),
        net!("mcgan_16_d_loss", || {
            let mut net = Reduced::new(41)?;
            let mut d = net.discriminator.clone();
            check_module(&mut d, 3, 41, |d, t| {
                let x = t.constant(&net.x);
                let fake = net.gated(t)?.detach();
                let real = d.forward(t, x, t.constant(&net.y), Mode::Train)?;
                let fake = d.forward(t, x, fake, Mode::Train)?;
                d_loss(real, fake)
            })
        }),
        net!("mcgan_16_g_loss", || {
            let net = Reduced::new(42)?;
            let mut g = net.generator.clone();
            let mut report = check_module(&mut g, 2, 42, |g, t| net.clone().with_generator(g).g_loss(t))?;
            let mut m = net.memory.clone();
            report.merge(check_module(&mut m, 2, 43, |m, t| net.clone().with_memory(m).g_loss(t))?);
            let mut p = net.gate.clone();
            report.merge(check_module(&mut p, 6, 44, |p, t| net.clone().with_gate(p).g_loss(t))?);
            Ok(report)
        }),
    ]
}

fn random_state(slots: usize, rng: &mut impl Rng) -> MemoryState<f64> {
    MemoryState {
        memory: random(&[slots, MEMORY_WIDTH], rng, 1.0),
        read: LstmCarry { h: random(&[1, LSTM_HIDDEN], rng, 1.0), c: random(&[1, LSTM_HIDDEN], rng, 1.0) },
        write: LstmCarry { h: random(&[1, LSTM_HIDDEN], rng, 1.0), c: random(&[1, LSTM_HIDDEN], rng, 1.0) },
        subject_id: "verify".into(),
    }
}

fn memory_loss<'t>(
    ctl: &MemoryController<f64>,
    state: &MemoryState<f64>,
    tape: &'t Tape<f64>,
    o: Var<'t, f64>,
) -> Result<Var<'t, f64>> {
    let (readout, next) = ctl.step(tape, state.on_tape(tape), o)?;
    weigh(tape, readout.gate)?.add(weigh(tape, next.memory)?)
}

/// The end-to-end model at 16x16 with a 4-stage generator.
#[derive(Clone)]
struct Reduced {
    generator: Generator<f64>,
    discriminator: Discriminator<f64>,
    memory: MemoryController<f64>,
    gate: GateProjection<f64>,
    states: Vec<MemoryState<f64>>,
    x: Tensor<f64>,
    y: Tensor<f64>,
}

impl Reduced {
    fn new(seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let mut gate = GateProjection::new(16, &mut r);
        gate.linear.bias.tensor = random(&[256], &mut r, 1.0);
        Ok(Self {
            generator: Generator::with_width(16, 5, 4, &mut r)?,
            discriminator: Discriminator::with_width(16, 6, 2, &mut r)?,
            memory: MemoryController::new("memory", &mut r),
            gate,
            states: vec![random_state(4, &mut r), random_state(4, &mut r)],
            x: random(&[2, 5, 16, 16], &mut r, 1.0),
            y: random(&[2, 1, 16, 16], &mut r, 0.9),
        })
    }

    fn with_generator(mut self, g: &Generator<f64>) -> Self {
        self.generator = g.clone();
        self
    }

    fn with_memory(mut self, m: &MemoryController<f64>) -> Self {
        self.memory = m.clone();
        self
    }

    fn with_gate(mut self, p: &GateProjection<f64>) -> Self {
        self.gate = p.clone();
        self
    }

    fn gated<'t>(&mut self, tape: &'t Tape<f64>) -> Result<Var<'t, f64>> {
        let o = self.generator.forward(tape, tape.constant(&self.x), Mode::Train, None)?;
        let mut gates = Vec::with_capacity(self.states.len());
        for (i, state) in self.states.iter().enumerate() {
            gates.push(self.memory.step(tape, state.on_tape(tape), o.slice(0, i, 1)?)?.0.gate);
        }
        apply_memory_gate(tape, o, Var::concat(&gates, 0)?, &self.gate)
    }

    fn g_loss<'t>(mut self, tape: &'t Tape<f64>) -> Result<Var<'t, f64>> {
        let fake = self.gated(tape)?;
        let score = self.discriminator.forward(tape, tape.constant(&self.x), fake, Mode::Train)?;
        g_loss(score, fake, tape.constant(&self.y), 1.0)
    }
}

// ---------------------------------------------------------------------------
// Metrics

fn random_map(side: usize, rng: &mut impl Rng) -> SaliencyMap {
    SaliencyMap::new(side, side, (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect())
        .expect("random values are valid")
}

fn oracle_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn oracle_std(v: &[f64]) -> f64 {
    let m = oracle_mean(v);
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    (s / v.len() as f64).sqrt()
}

fn oracle_nss(p: &SaliencyMap, fix: &[Fixation]) -> f64 {
    let (m, s) = (oracle_mean(p.values()), oracle_std(p.values()));
    let mut total = 0.0;
    for f in fix {
        total += (p.values()[f.y * p.width() + f.x] - m) / s;
    }
    total / fix.len() as f64
}

fn oracle_cc(a: &SaliencyMap, b: &SaliencyMap) -> f64 {
    let (ma, mb) = (oracle_mean(a.values()), oracle_mean(b.values()));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.values().len() {
        let (x, y) = (a.values()[i] - ma, b.values()[i] - mb);
        cov += x * y;
        va += x * x;
        vb += y * y;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn oracle_probability(v: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    v.iter().map(|x| x / s).collect()
}

fn oracle_kl(pred: &SaliencyMap, gt: &SaliencyMap) -> f64 {
    let (p, q) = (oracle_probability(pred.values()), oracle_probability(gt.values()));
    let mut total = 0.0;
    for i in 0..p.len() {
        total += p[i] * ((p[i] + 1e-12) / (q[i] + 1e-12)).ln();
    }
    total
}

fn oracle_sm(pred: &SaliencyMap, gt: &SaliencyMap) -> f64 {
    let (p, q) = (oracle_probability(pred.values()), oracle_probability(gt.values()));
    let mut total = 0.0;
    for i in 0..p.len() {
        total += if p[i] < q[i] { p[i] } else { q[i] };
    }
    total
}

/// Recounts hits above every positive threshold by scanning all samples.
fn oracle_auc(pred: &SaliencyMap, fix: &[Fixation], splits: usize, seed: u64) -> f64 {
    let w = pred.width();
    let pool: Vec<usize> =
        (0..pred.values().len()).filter(|&i| !fix.iter().any(|f| f.y * w + f.x == i)).collect();
    let pos: Vec<f64> = fix.iter().map(|f| pred.values()[f.y * w + f.x]).collect();
    let mut thresholds = pos.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut rng = rng(seed);
    let mut total = 0.0;
    for _ in 0..splits {
        let neg: Vec<f64> = sample_negatives(&pool, fix.len(), &mut rng).iter().map(|&i| pred.values()[i]).collect();
        let mut points = vec![(0.0, 0.0)];
        for &t in &thresholds {
            let tp = pos.iter().filter(|&&v| v >= t).count() as f64 / pos.len() as f64;
            let fp = neg.iter().filter(|&&v| v >= t).count() as f64 / neg.len() as f64;
            points.push((fp, tp));
        }
        points.push((1.0, 1.0));
        let mut area = 0.0;
        for k in 1..points.len() {
            area += (points[k].0 - points[k - 1].0) * (points[k].1 + points[k - 1].1) / 2.0;
        }
        total += area;
    }
    total / splits as f64
}

fn close(name: &str, got: Result<f64>, expected: f64, tol: f64) -> std::result::Result<(), String> {
    match got {
        Ok(v) if (v - expected).abs() <= tol => Ok(()),
        Ok(v) => Err(format!("{name} = {v}, expected {expected} within {tol:e}")),
        Err(e) => Err(format!("{name} failed: {e}")),
    }
}

fn metric_cases(report: &mut SuiteReport) {
    let map = |w, h, v: &[f64]| SaliencyMap::new(w, h, v.to_vec()).expect("hand map is valid");
    let grid = map(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    report.record(
        "hand zscore",
        close("zscore entry", normalize_zscore(&grid).map(|z| z.values()[3]), 1.341641, 1e-6),
    );
    report.record("hand nss", close("nss", nss(&grid, &[Fixation::new(1, 1)]), 1.341641, 1e-6));
    let (p, q) = (map(2, 1, &[0.5, 0.5]), map(2, 1, &[0.25, 0.75]));
    report.record("hand kl", close("kl", kl(&p, &q), 0.143841, 1e-5));
    report.record("hand sm", close("sm", sm(&p, &q), 0.75, 1e-12));
    let (a, b) = (map(2, 2, &[0.0, 1.0, 2.0, 3.0]), map(2, 2, &[1.0, 1.0, 2.0, 4.0]));
    report.record("hand cc", close("cc", cc(&a, &b), oracle_cc(&a, &b), METRIC_TOLERANCE));

    let mut r = rng(2024);
    for case in 0..RANDOM_CASES as u64 {
        let (p, g) = (random_map(16, &mut r), random_map(16, &mut r));
        let n = r.random_range(1..40);
        let fix: Vec<Fixation> =
            (0..n).map(|_| Fixation::new(r.random_range(0..16), r.random_range(0..16))).collect();
        report.record(&format!("random {case} nss"), close("nss", nss(&p, &fix), oracle_nss(&p, &fix), METRIC_TOLERANCE));
        report.record(&format!("random {case} cc"), close("cc", cc(&p, &g), oracle_cc(&p, &g), METRIC_TOLERANCE));
        report.record(&format!("random {case} kl"), close("kl", kl(&p, &g), oracle_kl(&p, &g), METRIC_TOLERANCE));
        report.record(&format!("random {case} sm"), close("sm", sm(&p, &g), oracle_sm(&p, &g), METRIC_TOLERANCE));
        report.record(&format!("random {case} auc"), close("auc", auc_borji(&p, &fix, 10, case), oracle_auc(&p, &fix, 10, case), 0.0));
    }
}

// ---------------------------------------------------------------------------
// Memory

fn check(ok: bool, why: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn attention_normalized(r: &mut ChaCha8Rng) -> Result<std::result::Result<(), String>> {
    let k = r.random_range(1..40);
    let scale = r.random_range(0.1..20.0);
    let tape = Tape::new();
    let m = random(&[k, MEMORY_WIDTH], r, scale);
    let o = random(&[1, MEMORY_WIDTH], r, 1.0);
    let (a, _) = read(tape.constant(&m), tape.constant(&o))?;
    let a = a.value();
    let total: f64 = a.data().iter().sum();
    Ok(check((total - 1.0).abs() < 1e-9 && a.data().iter().all(|&v| v >= 0.0), || format!("attention sums to {total}")))
}

fn one_hot_replacement(r: &mut ChaCha8Rng) -> Result<std::result::Result<(), String>> {
    let k = r.random_range(1..40);
    let slot = r.random_range(0..k);
    let m = random(&[k, MEMORY_WIDTH], r, 2.0);
    let w = random(&[1, MEMORY_WIDTH], r, 1.0);
    let mut a = vec![0.0; k];
    a[slot] = 1.0;
    let tape = Tape::new();
    let out = update_memory(tape.constant(&m), tape.constant(&Tensor::from_vec(&[1, k], a)?), tape.constant(&w))?.value();
    let l = MEMORY_WIDTH;
    let ok = (0..k).all(|i| {
        let row = &out.data()[i * l..(i + 1) * l];
        if i == slot { row == w.data() } else { row == &m.data()[i * l..(i + 1) * l] }
    });
    Ok(check(ok, || format!("one-hot write to slot {slot} of {k} touched other entries")))
}

fn convex_bounds(r: &mut ChaCha8Rng) -> Result<std::result::Result<(), String>> {
    let k = r.random_range(1..40);
    let l = MEMORY_WIDTH;
    let m = random(&[k, l], r, 3.0);
    let o = random(&[1, l], r, 1.0);
    let w = random(&[1, l], r, 1.0);
    let a = Tensor::from_vec(&[1, k], (0..k).map(|_| r.random_range(0.0..=1.0)).collect())?;
    let tape = Tape::new();
    let (_, h) = read(tape.constant(&m), tape.constant(&o))?;
    let h = h.value();
    let updated = update_memory(tape.constant(&m), tape.constant(&a), tape.constant(&w))?.value();
    for j in 0..l {
        let column = (0..k).map(|i| m.data()[i * l + j]);
        let lo = column.clone().fold(f64::INFINITY, f64::min);
        let hi = column.fold(f64::NEG_INFINITY, f64::max);
        let v = h.data()[j];
        if v < lo - 1e-12 || v > hi + 1e-12 {
            return Ok(Err(format!("readout {v} outside [{lo}, {hi}] in column {j}")));
        }
        for i in 0..k {
            let (old, new, wv) = (m.data()[i * l + j], updated.data()[i * l + j], w.data()[j]);
            if new < old.min(wv) - 1e-12 || new > old.max(wv) + 1e-12 {
                return Ok(Err(format!("slot {i} entry {j}: {new} outside [{old}, {wv}]")));
            }
        }
    }
    Ok(Ok(()))
}

fn permutation_equivariance(r: &mut ChaCha8Rng, ctl: &MemoryController<f64>) -> Result<std::result::Result<(), String>> {
    let k = r.random_range(2..12);
    let state = random_state(k, r);
    let o = random(&[1, 1, 16, 16], r, 1.0);
    let mut perm: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let mut permuted = state.clone();
    let l = MEMORY_WIDTH;
    for (i, &src) in perm.iter().enumerate() {
        permuted.memory.data_mut()[i * l..(i + 1) * l].copy_from_slice(&state.memory.data()[src * l..(src + 1) * l]);
    }
    let tape = Tape::new();
    let (r1, n1) = ctl.step(&tape, state.on_tape(&tape), tape.constant(&o))?;
    let (r2, n2) = ctl.step(&tape, permuted.on_tape(&tape), tape.constant(&o))?;
    let (a1, a2) = (r1.attention.value(), r2.attention.value());
    let (m1, m2) = (n1.memory.value(), n2.memory.value());
    let attention_ok = perm.iter().enumerate().all(|(i, &src)| a2.data()[i] == a1.data()[src]);
    let memory_ok = perm
        .iter()
        .enumerate()
        .all(|(i, &src)| m2.data()[i * l..(i + 1) * l] == m1.data()[src * l..(src + 1) * l]);
    let readout_ok = r1.retrieved.value() == r2.retrieved.value() && r1.gate.value() == r2.gate.value();
    Ok(check(attention_ok && memory_ok && readout_ok, || {
        format!("k={k}: attention {attention_ok}, memory {memory_ok}, readout {readout_ok}")
    }))
}

fn memory_cases(report: &mut SuiteReport) {
    let mut r = rng(7);
    let ctl = MemoryController::new("memory", &mut r);
    let flatten = |res: Result<std::result::Result<(), String>>| res.unwrap_or_else(|e| Err(format!("error: {e}")));
    for case in 0..RANDOM_CASES {
        report.record(&format!("attention {case}"), flatten(attention_normalized(&mut r)));
        report.record(&format!("one-hot {case}"), flatten(one_hot_replacement(&mut r)));
        report.record(&format!("convex {case}"), flatten(convex_bounds(&mut r)));
        report.record(&format!("permutation {case}"), flatten(permutation_equivariance(&mut r, &ctl)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn every_elementary_case_names_a_distinct_op() {
        let cases = gradient_cases();
        let mut names: Vec<_> = cases.iter().filter(|c| c.elementary).map(|c| c.name).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}

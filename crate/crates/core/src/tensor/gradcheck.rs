//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The oracle only ever evaluates the forward pass; it never looks at a
//! backward rule, so it is an independent check of the tape.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Module, Tape, Tensor, Var};
use crate::error::Result;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;
/// Acceptance threshold on the relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: entries whose gradients are both below this magnitude
/// are compared absolutely against `TOLERANCE * FLOOR`.
pub const FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `input 1 [3]` or `conv.weight [17]`.
    pub worst: String,
    pub analytic_norm: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < TOLERANCE
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        self.analytic_norm += analytic * analytic;
        if err >= self.max_rel_error {
            self.max_rel_error = err;
            self.worst = label();
        }
    }

    pub fn merge(&mut self, other: Report) {
        if other.max_rel_error >= self.max_rel_error && other.checked > 0 {
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.analytic_norm += other.analytic_norm;
    }
}

/// Checks d f / d inputs for every element of every input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<Report>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = Report::default();
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[which].numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + STEP;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - STEP;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            report.record(|| format!("input {which} [{i}]"), a, numeric);
        }
    }
    Ok(report)
}

/// Checks d f / d params for the trainable parameters of `module`, probing
/// at most `per_param` randomly chosen entries of each parameter.
pub fn check_module<M, F>(module: &mut M, per_param: usize, seed: u64, mut f: F) -> Result<Report>
where
    M: Module<f64>,
    F: for<'t> FnMut(&mut M, &'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let loss = f(module, &tape)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = Vec::new();
    module.visit_params(&mut |p| {
        if !p.is_trainable() {
            return;
        }
        let n = p.tensor.numel();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_param).into_vec()
        };
        let analytic = grads.param(p.id()).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in picks {
            targets.push((p.name().to_owned(), i, analytic[i]));
        }
    });

    let mut report = Report::default();
    for (name, i, a) in targets {
        let set = |module: &mut M, value: Option<f64>| {
            let mut old = 0.0;
            module.visit_params_mut(&mut |p| {
                if p.name() == name {
                    old = p.tensor.data()[i];
                    if let Some(v) = value {
                        p.tensor.data_mut()[i] = v;
                    }
                }
            });
            old
        };
        let orig = set(module, None);
        set(module, Some(orig + STEP));
        let plus = f(module, &Tape::new())?.item();
        set(module, Some(orig - STEP));
        let minus = f(module, &Tape::new())?.item();
        set(module, Some(orig));
        let numeric = (plus - minus) / (2.0 * STEP);
        report.record(|| format!("{name} [{i}]"), a, numeric);
    }
    Ok(report)
}

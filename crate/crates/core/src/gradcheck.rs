//! Central finite-difference verification of the analytic gradients of a
//! full Siamese pair loss.

use rand::seq::index::sample;
use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::tensor::{Fault, Tape, Tensor, Var};
use crate::training::{init_params, rng_stream, Label, PROB_CLAMP};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Components checked per tensor; every component when the tensor is
    /// smaller.
    pub samples_per_tensor: usize,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples_per_tensor: 32,
            tolerance: 1e-3,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Components whose `±step` stencil changed a pooling decision and were
    /// re-measured with a smaller step.
    pub refined: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&GroupReport> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_error < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Converts a failing report into a numeric error naming the groups.
    pub fn into_result(self) -> Result<Self> {
        let bad: Vec<String> = self
            .failures()
            .iter()
            .map(|g| format!("{} ({:.3e})", g.name, g.max_rel_error))
            .collect();
        if bad.is_empty() {
            Ok(self)
        } else {
            Err(Error::Numeric(format!(
                "gradient check failed for {}",
                bad.join(", ")
            )))
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn pair_loss_on(tape: &mut Tape, arch: &Architecture, params: &ModelParams, xa: &[Tensor], xb: &[Tensor], label: Label) -> Result<(Var, ModelParams<Var>)> {
    let bound = params.bind(tape);
    let a: Vec<Var> = xa.iter().map(|f| tape.constant(f.clone())).collect();
    let b: Vec<Var> = xb.iter().map(|f| tape.constant(f.clone())).collect();
    let s = arch.siamese(&bound).similarity(tape, &a, &b, None)?;
    Ok((tape.bce(s, label.is_similar(), PROB_CLAMP)?, bound))
}

/// Loss value and routing signature of one forward pass.
fn loss_value(arch: &Architecture, params: &ModelParams, xa: &[Tensor], xb: &[Tensor], label: Label) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let (l, _) = pair_loss_on(&mut tape, arch, params, xa, xb, label)?;
    Ok((tape.value(l).item(), tape.routing()))
}

/// Smallest step tried when a stencil straddles a routing change.
const MIN_STEP: f64 = 1e-7;

/// Compares backpropagated gradients of one random pair's loss with
/// central differences, parameter tensor by parameter tensor.
pub fn grad_check(config: &Config, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let arch = Architecture::new(config)?;
    let mut params = init_params(&arch, &mut rng_stream(seed, 0));
    if params.scalar_count() == 0 || opts.samples_per_tensor == 0 {
        return Err(Error::config("gradient check over zero parameters"));
    }
    let mut rng = rng_stream(seed, 1);
    // move the zero-initialised biases off zero so their paths are exercised
    for (_, t) in params.named_mut() {
        if t.data().iter().all(|&x| x == 0.0) {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
    let shape = arch.geometry.input;
    let mut frames = |n: usize| -> Vec<Tensor> {
        (0..n)
            .map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(0.0..1.0)))
            .collect()
    };
    let t = config.seq_len;
    let (xa, xb) = (frames(t), frames(t));
    let label = if seed % 2 == 0 { Label::Similar } else { Label::Dissimilar };

    let mut tape = match opts.fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let (loss, bound) = pair_loss_on(&mut tape, &arch, &params, &xa, &xb, label)?;
    let centre = tape.routing();
    tape.backward(loss)?;
    let analytic = params.grads_from(&tape, &bound);

    let names: Vec<(String, usize)> = params.named().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut groups = Vec::with_capacity(names.len());
    for (k, (name, len)) in names.into_iter().enumerate() {
        let picks = if len <= opts.samples_per_tensor {
            (0..len).collect::<Vec<_>>()
        } else {
            let mut v = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let grad = analytic.named()[k].1.clone();
        let mut worst: f64 = 0.0;
        let mut refined = 0;
        for &i in &picks {
            let orig = params.named()[k].1.data()[i];
            let mut step = opts.step;
            let numeric = loop {
                let mut probe = |delta: f64| -> Result<(f64, u64)> {
                    params.named_mut()[k].1.data_mut()[i] = orig + delta;
                    loss_value(&arch, &params, &xa, &xb, label)
                };
                let (up, r_up) = probe(step)?;
                let (down, r_down) = probe(-step)?;
                params.named_mut()[k].1.data_mut()[i] = orig;
                if (r_up == centre && r_down == centre) || step / 10.0 < MIN_STEP {
                    break (up - down) / (2.0 * step);
                }
                step /= 10.0;
            };
            if step < opts.step {
                refined += 1;
            }
            worst = worst.max(relative_error(grad.data()[i], numeric, opts.floor));
        }
        groups.push(GroupReport {
            name,
            checked: picks.len(),
            refined,
            max_rel_error: worst,
            max_abs_grad: grad.max_abs(),
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance: opts.tolerance,
    })
}

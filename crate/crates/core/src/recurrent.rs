//! Gated recurrent cells: the fully-connected GRU, its convolutional
//! counterpart, and the stack that conditions each layer's gates on the
//! current hidden state of the layer below.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::encoder::FramePyramid;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Weights of a fully-connected GRU: `W*` are `Ch×Cx`, `U*` are `Ch×Ch`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcGruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u: Tensor,
}

impl FcGruParams {
    fn check(&self, c_x: usize, c_h: usize) -> Result<()> {
        let named = [
            ("W_z", &self.w_z, c_x),
            ("W_r", &self.w_r, c_x),
            ("W", &self.w, c_x),
            ("U_z", &self.u_z, c_h),
            ("U_r", &self.u_r, c_h),
            ("U", &self.u, c_h),
        ];
        for (name, m, cols) in named {
            if m.shape() != [c_h, cols] {
                return Err(Error::dim(format!(
                    "{name} has shape {:?}, expected [{c_h}, {cols}]",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

/// One step of the fully-connected GRU on vectors.
pub fn fc_gru_step(x: &Tensor, h_prev: &Tensor, params: &FcGruParams) -> Result<Tensor> {
    let (&[c_x], &[c_h]) = (x.shape(), h_prev.shape()) else {
        return Err(Error::dim(format!(
            "fc_gru_step expects vectors, got {:?} and {:?}",
            x.shape(),
            h_prev.shape()
        )));
    };
    params.check(c_x, c_h)?;
    let mut tape = Tape::new();
    let c = |tape: &mut Tape, t: &Tensor| tape.constant(t.clone());
    let (xv, hv) = (c(&mut tape, x), c(&mut tape, h_prev));
    let [w_z, w_r, w, u_z, u_r, u] = [
        &params.w_z, &params.w_r, &params.w, &params.u_z, &params.u_r, &params.u,
    ]
    .map(|t| c(&mut tape, t));

    let gate = |tape: &mut Tape, wx: Var, uh: Var| -> Result<Var> {
        let a = tape.matvec(wx, xv)?;
        let b = tape.matvec(uh, hv)?;
        let s = tape.add(a, b)?;
        Ok(tape.sigmoid(s))
    };
    let z = gate(&mut tape, w_z, u_z)?;
    let r = gate(&mut tape, w_r, u_r)?;
    let rh = tape.mul(r, hv)?;
    let a = tape.matvec(w, xv)?;
    let b = tape.matvec(u, rh)?;
    let pre = tape.add(a, b)?;
    let cand = tape.tanh(pre);
    let h = blend(&mut tape, z, hv, cand)?;
    Ok(tape.value(h).clone())
}

/// `(1 - z) ⊙ h_prev + z ⊙ candidate`
fn blend(tape: &mut Tape, z: Var, h_prev: Var, cand: Var) -> Result<Var> {
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, h_prev)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Kernels that read the hidden state of the layer below.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossKernels<T = Tensor> {
    pub w_z: T,
    pub w_r: T,
    /// Candidate term; absent unless the `cross_candidate` ablation is on.
    pub w_h: Option<T>,
}

/// Per-channel gate biases (off by default).
#[derive(Clone, Debug, PartialEq)]
pub struct GateBias<T = Tensor> {
    pub b_z: T,
    pub b_r: T,
    pub b_h: T,
}

/// Convolutional GRU weights. Input kernels are `Ch×Cx×k×k`, hidden
/// kernels `Ch×Ch×k×k`, cross-layer kernels `Ch×Cprev×k×k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGruParams<T = Tensor> {
    pub w_z: T,
    pub w_r: T,
    pub w: T,
    pub u_z: T,
    pub u_r: T,
    pub u: T,
    pub cross: Option<CrossKernels<T>>,
    pub bias: Option<GateBias<T>>,
}

impl<T> ConvGruParams<T> {
    pub fn map<U>(&self, layer: usize, mut f: impl FnMut(&str, &T) -> U) -> ConvGruParams<U> {
        let n = |s: &str| format!("rcn.l{layer}.{s}");
        ConvGruParams {
            w_z: f(&n("Wz"), &self.w_z),
            w_r: f(&n("Wr"), &self.w_r),
            w: f(&n("W"), &self.w),
            u_z: f(&n("Uz"), &self.u_z),
            u_r: f(&n("Ur"), &self.u_r),
            u: f(&n("U"), &self.u),
            cross: self.cross.as_ref().map(|c| CrossKernels {
                w_z: f(&n("Wzx"), &c.w_z),
                w_r: f(&n("Wrx"), &c.w_r),
                w_h: c.w_h.as_ref().map(|w| f(&n("Whx"), w)),
            }),
            bias: self.bias.as_ref().map(|b| GateBias {
                b_z: f(&n("bz"), &b.b_z),
                b_r: f(&n("br"), &b.b_r),
                b_h: f(&n("bh"), &b.b_h),
            }),
        }
    }

    pub fn visit<'a>(&'a self, layer: usize, f: &mut dyn FnMut(String, &'a T)) {
        let n = |s: &str| format!("rcn.l{layer}.{s}");
        f(n("Wz"), &self.w_z);
        f(n("Wr"), &self.w_r);
        f(n("W"), &self.w);
        f(n("Uz"), &self.u_z);
        f(n("Ur"), &self.u_r);
        f(n("U"), &self.u);
        if let Some(c) = &self.cross {
            f(n("Wzx"), &c.w_z);
            f(n("Wrx"), &c.w_r);
            if let Some(w) = &c.w_h {
                f(n("Whx"), w);
            }
        }
        if let Some(b) = &self.bias {
            f(n("bz"), &b.b_z);
            f(n("br"), &b.b_r);
            f(n("bh"), &b.b_h);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, layer: usize, f: &mut dyn FnMut(String, &'a mut T)) {
        let n = |s: &str| format!("rcn.l{layer}.{s}");
        f(n("Wz"), &mut self.w_z);
        f(n("Wr"), &mut self.w_r);
        f(n("W"), &mut self.w);
        f(n("Uz"), &mut self.u_z);
        f(n("Ur"), &mut self.u_r);
        f(n("U"), &mut self.u);
        if let Some(c) = &mut self.cross {
            f(n("Wzx"), &mut c.w_z);
            f(n("Wrx"), &mut c.w_r);
            if let Some(w) = &mut c.w_h {
                f(n("Whx"), w);
            }
        }
        if let Some(b) = &mut self.bias {
            f(n("bz"), &mut b.b_z);
            f(n("br"), &mut b.b_r);
            f(n("bh"), &mut b.b_h);
        }
    }
}

impl ConvGruParams<Tensor> {
    /// Number of stored scalars.
    pub fn len(&self) -> usize {
        let mut n = 0;
        self.visit(1, &mut |_, t| n += t.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Eager single step; see [`conv_gru_step`].
    pub fn step(&self, x: &Tensor, h_prev: &Tensor, h_below: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.map(1, |_, t| tape.constant(t.clone()));
        let x = tape.constant(x.clone());
        let h = tape.constant(h_prev.clone());
        let below = h_below.map(|b| tape.constant(b.clone()));
        let out = conv_gru_step(&mut tape, x, h, &p, below)?;
        Ok(tape.value(out).clone())
    }
}

/// Shape description of a recurrent stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackConfig {
    /// Channels of every encoder tap.
    pub input_channels: usize,
    /// Hidden channels per layer.
    pub channels: Vec<usize>,
    pub input_kernel: usize,
    pub hidden_kernel: usize,
    pub cross_layer: bool,
    pub cross_candidate: bool,
    pub gate_bias: bool,
}

impl StackConfig {
    pub fn from_config(cfg: &Config) -> Self {
        let (input_kernel, hidden_kernel) = cfg.kernels();
        Self {
            input_channels: cfg.encoder_channels,
            channels: cfg.channels.clone(),
            input_kernel,
            hidden_kernel,
            cross_layer: cfg.cross_layer(),
            cross_candidate: cfg.cross_candidate,
            gate_bias: cfg.gate_bias,
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    /// Builds layer `l` (0-based) with `init` filling every kernel; gate
    /// biases start at zero.
    pub fn init_layer(&self, l: usize, init: &mut dyn FnMut(&[usize]) -> Tensor) -> ConvGruParams {
        let (c_x, c_h) = (self.input_channels, self.channels[l]);
        let (ki, kh) = (self.input_kernel, self.hidden_kernel);
        let cross = (self.cross_layer && l > 0).then(|| {
            let c_prev = self.channels[l - 1];
            CrossKernels {
                w_z: init(&[c_h, c_prev, ki, ki]),
                w_r: init(&[c_h, c_prev, ki, ki]),
                w_h: self.cross_candidate.then(|| init(&[c_h, c_prev, ki, ki])),
            }
        });
        ConvGruParams {
            w_z: init(&[c_h, c_x, ki, ki]),
            w_r: init(&[c_h, c_x, ki, ki]),
            w: init(&[c_h, c_x, ki, ki]),
            u_z: init(&[c_h, c_h, kh, kh]),
            u_r: init(&[c_h, c_h, kh, kh]),
            u: init(&[c_h, c_h, kh, kh]),
            cross,
            bias: self.gate_bias.then(|| GateBias {
                b_z: Tensor::zeros(&[c_h]),
                b_r: Tensor::zeros(&[c_h]),
                b_h: Tensor::zeros(&[c_h]),
            }),
        }
    }
}

/// Scalars stored by a stack: `3·k²·(Cx·Ch + Ch²)` per layer plus
/// `2·k²·Cprev·Ch` cross-layer weights for every layer above the first.
pub fn count_params(cfg: &StackConfig) -> usize {
    let (ki, kh) = (cfg.input_kernel.pow(2), cfg.hidden_kernel.pow(2));
    let c_x = cfg.input_channels;
    cfg.channels
        .iter()
        .enumerate()
        .map(|(l, &c_h)| {
            let core = 3 * (ki * c_x * c_h + kh * c_h * c_h);
            let cross = if cfg.cross_layer && l > 0 {
                let per = ki * cfg.channels[l - 1] * c_h;
                per * if cfg.cross_candidate { 3 } else { 2 }
            } else {
                0
            };
            let bias = if cfg.gate_bias { 3 * c_h } else { 0 };
            core + cross + bias
        })
        .sum()
}

/// Multiply count of `t` ConvGRU steps on an `h1×h2` grid.
pub fn conv_gru_flops(t: usize, h1: usize, h2: usize, k1: usize, k2: usize, c_x: usize, c_h: usize) -> u128 {
    3 * (t * h1 * h2 * k1 * k2) as u128 * (c_x * c_h + c_h * c_h) as u128
}

/// Multiply count of `t` fully-connected GRU steps over a flattened
/// `h1×h2` grid.
pub fn fc_gru_flops(t: usize, h1: usize, h2: usize, c_x: usize, c_h: usize) -> u128 {
    3 * t as u128 * (h1 * h1 * h2 * h2) as u128 * (c_x * c_h + c_h * c_h) as u128
}

/// Recurrent state `h_t^l`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState<T = Tensor> {
    pub h: T,
    /// 1-based layer index.
    pub layer: usize,
    /// 1-based time step.
    pub t: usize,
}

/// Inverted dropout on hidden activations: each unit is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

fn same_grid(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != 3 || b.len() != 3 || a[1..] != b[1..] {
        return Err(Error::dim(format!(
            "{what}: spatial extents differ: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

fn same_padding(tape: &Tape, kernel: Var) -> usize {
    (tape.shape(kernel)[2] - 1) / 2
}

fn gate_conv(tape: &mut Tape, kernel: Var, input: Var) -> Result<Var> {
    let pad = same_padding(tape, kernel);
    tape.conv2d(input, kernel, 1, pad)
}

/// One convolutional GRU step. When `h_below` is given, the update and
/// reset gates also read `W_zx * h_below` and `W_rx * h_below`; the
/// candidate does not, unless a candidate cross kernel is configured.
pub fn conv_gru_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    params: &ConvGruParams<Var>,
    h_below: Option<Var>,
) -> Result<Var> {
    same_grid("conv_gru_step input vs state", tape.shape(x), tape.shape(h_prev))?;
    let cross = match (h_below, &params.cross) {
        (Some(below), Some(c)) => {
            same_grid("conv_gru_step lower layer vs state", tape.shape(below), tape.shape(h_prev))?;
            Some((below, c))
        }
        (Some(_), None) => {
            return Err(Error::config(
                "a lower-layer state was supplied but this layer has no cross-layer kernels",
            ))
        }
        (None, _) => None,
    };

    let gate = |tape: &mut Tape, w: Var, wx: Option<Var>, u: Var, b: Option<Var>| -> Result<Var> {
        let mut pre = gate_conv(tape, w, x)?;
        if let (Some(wx), Some((below, _))) = (wx, cross) {
            let t = gate_conv(tape, wx, below)?;
            pre = tape.add(pre, t)?;
        }
        let uh = gate_conv(tape, u, h_prev)?;
        pre = tape.add(pre, uh)?;
        if let Some(b) = b {
            pre = tape.add_channel_bias(pre, b)?;
        }
        Ok(pre)
    };

    let cz = cross.map(|(_, c)| c.w_z);
    let cr = cross.map(|(_, c)| c.w_r);
    let bias = params.bias.as_ref();
    let z_pre = gate(tape, params.w_z, cz, params.u_z, bias.map(|b| b.b_z))?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, params.w_r, cr, params.u_r, bias.map(|b| b.b_r))?;
    let r = tape.sigmoid(r_pre);

    let mut cand_pre = gate_conv(tape, params.w, x)?;
    if let Some((below, CrossKernels { w_h: Some(wh), .. })) = cross {
        let t = gate_conv(tape, *wh, below)?;
        cand_pre = tape.add(cand_pre, t)?;
    }
    let rh = tape.mul(r, h_prev)?;
    let urh = gate_conv(tape, params.u, rh)?;
    cand_pre = tape.add(cand_pre, urh)?;
    if let Some(b) = bias {
        cand_pre = tape.add_channel_bias(cand_pre, b.b_h)?;
    }
    let cand = tape.tanh(cand_pre);
    blend(tape, z, h_prev, cand)
}

fn hidden_channels(tape: &Tape, p: &ConvGruParams<Var>) -> usize {
    tape.shape(p.w_z)[0]
}

/// Unrolls the stack over every time step. Returns `states[t][l]`.
///
/// States start at zero. Layer `l > 1` receives the current state of layer
/// `l − 1`, max-pooled onto its own grid (and passed through `dropout` when
/// given), as the cross-layer input.
pub fn run_stack(
    tape: &mut Tape,
    pyramids: &[FramePyramid<Var>],
    params: &[ConvGruParams<Var>],
    mut dropout: Option<&mut Dropout>,
) -> Result<Vec<Vec<HiddenState<Var>>>> {
    let first = pyramids
        .first()
        .ok_or_else(|| Error::EmptyInput("run_stack needs at least one time step".into()))?;
    let layers = params.len();
    for p in pyramids {
        if p.levels.len() != layers {
            return Err(Error::config(format!(
                "pyramid has {} levels but the stack has {layers} layers",
                p.levels.len()
            )));
        }
    }
    let mut prev: Vec<Var> = Vec::with_capacity(layers);
    for (l, p) in params.iter().enumerate() {
        let x = tape.shape(first.levels[l]);
        let shape = [hidden_channels(tape, p), x[1], x[2]];
        prev.push(tape.constant(Tensor::zeros(&shape)));
    }

    let mut states = Vec::with_capacity(pyramids.len());
    for (t, pyr) in pyramids.iter().enumerate() {
        let mut row: Vec<HiddenState<Var>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let below = match (l, &params[l].cross) {
                (0, _) | (_, None) => None,
                (_, Some(_)) => {
                    let lower = row[l - 1].h;
                    let target = tape.shape(prev[l]).to_vec();
                    let pooled = if tape.shape(lower)[1..] == target[1..] {
                        lower
                    } else {
                        tape.adaptive_max_pool2d(lower, (target[1], target[2]))?
                    };
                    Some(match dropout.as_deref_mut() {
                        Some(d) => d.apply(tape, pooled)?,
                        None => pooled,
                    })
                }
            };
            let h = conv_gru_step(tape, pyr.levels[l], prev[l], &params[l], below)?;
            prev[l] = h;
            row.push(HiddenState {
                h,
                layer: l + 1,
                t: t + 1,
            });
        }
        states.push(row);
    }
    Ok(states)
}

/// Eager wrapper around [`run_stack`] without dropout.
pub fn run_stack_eager(
    pyramids: &[FramePyramid],
    params: &[ConvGruParams],
) -> Result<Vec<Vec<HiddenState>>> {
    let mut tape = Tape::new();
    let bound: Vec<_> = params
        .iter()
        .enumerate()
        .map(|(l, p)| p.map(l + 1, |_, t| tape.constant(t.clone())))
        .collect();
    let pyrs: Vec<_> = pyramids
        .iter()
        .map(|p| FramePyramid {
            levels: p.levels.iter().map(|t| tape.constant(t.clone())).collect(),
        })
        .collect();
    let states = run_stack(&mut tape, &pyrs, &bound, None)?;
    Ok(states
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| HiddenState {
                    h: tape.value(s.h).clone(),
                    layer: s.layer,
                    t: s.t,
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn uniform(rng: &mut ChaCha8Rng) -> impl FnMut(&[usize]) -> Tensor + '_ {
        move |s| Tensor::from_fn(s, |_| rng.gen_range(-1.0..1.0))
    }

    fn zero_params(c_x: usize, c_h: usize) -> FcGruParams {
        FcGruParams {
            w_z: Tensor::zeros(&[c_h, c_x]),
            w_r: Tensor::zeros(&[c_h, c_x]),
            w: Tensor::zeros(&[c_h, c_x]),
            u_z: Tensor::zeros(&[c_h, c_h]),
            u_r: Tensor::zeros(&[c_h, c_h]),
            u: Tensor::zeros(&[c_h, c_h]),
        }
    }

    #[test]
    fn fc_zero_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = uniform(&mut rng);
        let p = FcGruParams {
            w_z: init(&[3, 2]),
            w_r: init(&[3, 2]),
            w: init(&[3, 2]),
            u_z: init(&[3, 3]),
            u_r: init(&[3, 3]),
            u: init(&[3, 3]),
        };
        let h = fc_gru_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &p).unwrap();
        assert_eq!(h.data(), &[0.0; 3]);
    }

    #[test]
    fn fc_zero_params_halve_state() {
        let v = Tensor::vector(&[0.4, -0.8, 0.2]);
        let h = fc_gru_step(&Tensor::vector(&[1.0, 2.0]), &v, &zero_params(2, 3)).unwrap();
        assert_eq!(h.data(), &[0.2, -0.4, 0.1]);
    }

    #[test]
    fn fc_dimension_error_names_matrix() {
        let mut p = zero_params(2, 3);
        p.u_r = Tensor::zeros(&[3, 2]);
        let err = fc_gru_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &p).unwrap_err();
        assert!(err.to_string().contains("U_r"), "{err}");
    }

    fn stack(channels: Vec<usize>, k: usize) -> StackConfig {
        StackConfig {
            input_channels: 2,
            channels,
            input_kernel: k,
            hidden_kernel: k,
            cross_layer: true,
            cross_candidate: false,
            gate_bias: false,
        }
    }

    #[test]
    fn conv_zero_fixed_point_and_halving() {
        let cfg = stack(vec![3], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cfg.init_layer(0, &mut uniform(&mut rng));
        let h = p.step(&Tensor::zeros(&[2, 4, 5]), &Tensor::zeros(&[3, 4, 5]), None).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));

        let z = cfg.init_layer(0, &mut |s| Tensor::zeros(s));
        let h_prev = Tensor::full(&[3, 4, 5], 0.6);
        let h = z.step(&Tensor::full(&[2, 4, 5], 1.0), &h_prev, None).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn lower_state_without_cross_kernels_is_config_error() {
        let cfg = stack(vec![3], 3);
        let p = cfg.init_layer(0, &mut |s| Tensor::zeros(s));
        let err = p
            .step(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[3, 4, 4]), Some(&Tensor::zeros(&[3, 4, 4])))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let cfg = stack(vec![3], 3);
        let p = cfg.init_layer(0, &mut |s| Tensor::zeros(s));
        assert!(matches!(
            p.step(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[3, 4, 5]), None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn parameter_counts() {
        let one = StackConfig {
            input_channels: 32,
            ..stack(vec![128], 5)
        };
        assert_eq!(count_params(&one), 1_536_000);
        let unit = StackConfig {
            input_channels: 1,
            ..stack(vec![1], 1)
        };
        assert_eq!(count_params(&unit), 6);

        let cfg = stack(vec![3, 4, 5], 3);
        let mut total = 0;
        for l in 0..3 {
            total += cfg.init_layer(l, &mut |s| Tensor::zeros(s)).len();
        }
        assert_eq!(count_params(&cfg), total);
    }

    #[test]
    fn flop_model_ratio() {
        // the fully-connected cell costs H1·H2/(k1·k2) times more
        let conv = conv_gru_flops(20, 79, 29, 5, 5, 32, 128);
        let fc = fc_gru_flops(20, 79, 29, 32, 128);
        assert_eq!(fc * 25, conv * 79 * 29);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut d = Dropout::new(0.7, ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 100, 100], 1.0));
        let y = d.apply(&mut tape, x).unwrap();
        let vals = tape.value(y).data();
        let kept = vals.iter().filter(|&&v| v != 0.0).count() as f64 / vals.len() as f64;
        assert!((kept - 0.3).abs() < 0.02, "{kept}");
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.3).abs() < 1e-12));
    }
}

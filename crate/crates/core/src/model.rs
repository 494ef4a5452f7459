//! The full Siamese model: parameter set, architecture and forward pass.

use crate::aggregation::{self, identity_projection, SimilarityParams};
use crate::config::{Config, PoolingMode};
use crate::encoder::{self, EncoderGeometry, EncoderParams, TAPS};
use crate::error::{Error, Result};
use crate::recurrent::{self, ConvGruParams, Dropout, StackConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Every learnable tensor of the model. Both Siamese branches read the same
/// instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub layers: Vec<ConvGruParams<T>>,
    /// `D×C_l` per layer, present when layer widths differ.
    pub projections: Option<Vec<T>>,
    pub similarity: SimilarityParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(&mut f),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, p)| p.map(l + 1, &mut f))
                .collect(),
            projections: self.projections.as_ref().map(|ps| {
                ps.iter()
                    .enumerate()
                    .map(|(l, p)| f(&format!("proj.l{}", l + 1), p))
                    .collect()
            }),
            similarity: self.similarity.map(&mut f),
        }
    }

    /// Visits tensors in canonical order (encoder, layers, projections,
    /// similarity head).
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        self.encoder.visit(f);
        for (l, p) in self.layers.iter().enumerate() {
            p.visit(l + 1, f);
        }
        if let Some(ps) = &self.projections {
            for (l, p) in ps.iter().enumerate() {
                f(format!("proj.l{}", l + 1), p);
            }
        }
        f("sim.v".into(), &self.similarity.v);
        f("sim.c".into(), &self.similarity.c);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut T)) {
        self.encoder.visit_mut(f);
        for (l, p) in self.layers.iter_mut().enumerate() {
            p.visit_mut(l + 1, f);
        }
        if let Some(ps) = &mut self.projections {
            for (l, p) in ps.iter_mut().enumerate() {
                f(format!("proj.l{}", l + 1), p);
            }
        }
        f("sim.v".into(), &mut self.similarity.v);
        f("sim.c".into(), &mut self.similarity.c);
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, t| out.push((n, t)));
        out
    }
}

impl ModelParams<Tensor> {
    pub fn scalar_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(|_, t| tape.param(t.clone()))
    }

    /// Registers every tensor as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(|_, t| tape.constant(t.clone()))
    }

    /// Gradients of the last backward pass, zero where none flowed.
    pub fn grads_from(&self, tape: &Tape, bound: &ModelParams<Var>) -> ModelParams<Tensor> {
        let vars = bound.named();
        let mut k = 0;
        self.map(|_, t| {
            let g = tape.grad(*vars[k].1).unwrap_or_else(|| Tensor::zeros(t.shape()));
            k += 1;
            g
        })
    }

    pub fn zeros_like(&self) -> ModelParams<Tensor> {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }
}

/// Derived shapes of a configured model.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: Config,
    pub geometry: EncoderGeometry,
    pub stack: StackConfig,
}

impl Architecture {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let geometry = EncoderGeometry::from_config(config)?;
        let stack = StackConfig::from_config(config);
        if stack.layers() != TAPS {
            return Err(Error::config(format!(
                "{} recurrent layers for {TAPS} encoder taps",
                stack.layers()
            )));
        }
        Ok(Self {
            config: config.clone(),
            geometry,
            stack,
        })
    }

    /// Width of the pooled sequence feature.
    pub fn feature_dim(&self) -> usize {
        *self.stack.channels.last().expect("validated")
    }

    pub fn needs_projection(&self) -> bool {
        self.stack.channels.iter().any(|&c| c != self.feature_dim())
    }

    /// Builds a parameter set: `init` fills every kernel and the weight
    /// vector; biases start at zero and projections at the padded identity.
    pub fn build_params(&self, init: &mut dyn FnMut(&[usize]) -> Tensor) -> ModelParams {
        let encoder = EncoderParams::with_init(&self.geometry, &mut *init);
        let layers = (0..self.stack.layers())
            .map(|l| self.stack.init_layer(l, init))
            .collect();
        let d = self.feature_dim();
        let projections = self.needs_projection().then(|| {
            self.stack
                .channels
                .iter()
                .map(|&c| identity_projection(d, c))
                .collect()
        });
        ModelParams {
            encoder,
            layers,
            projections,
            similarity: SimilarityParams {
                v: init(&[d]),
                c: Tensor::zeros(&[1]),
            },
        }
    }

    /// Checks that `params` has exactly the tensors this architecture
    /// expects.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        let reference = self.build_params(&mut |s| Tensor::zeros(s));
        let want = reference.named();
        let got = params.named();
        if want.len() != got.len() {
            return Err(Error::config(format!(
                "parameter set has {} tensors, architecture expects {}",
                got.len(),
                want.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.shape() != gt.shape() {
                return Err(Error::config(format!(
                    "parameter {gn} {:?} does not match expected {wn} {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(())
    }

    /// Pooled feature of one sequence.
    pub fn sequence_feature(
        &self,
        tape: &mut Tape,
        frames: &[Var],
        params: &ModelParams<Var>,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let pyramids = encoder::encode_sequence(tape, frames, &params.encoder, &self.geometry)?;
        let states = recurrent::run_stack(tape, &pyramids, &params.layers, dropout)?;
        let proj = params.projections.as_deref();
        match self.config.pooling_mode {
            PoolingMode::Last => {
                let last: Vec<Var> = states.last().expect("non-empty").iter().map(|s| s.h).collect();
                aggregation::pool_layers(tape, &last, proj)
            }
            mode => {
                let per_step = states
                    .iter()
                    .map(|row| {
                        let hs: Vec<Var> = row.iter().map(|s| s.h).collect();
                        aggregation::pool_layers(tape, &hs, proj)
                    })
                    .collect::<Result<Vec<_>>>()?;
                aggregation::pool_temporal(tape, &per_step, mode)
            }
        }
    }

    /// Eager feature of a sequence of `3×H×W` frames.
    pub fn feature_value(&self, params: &ModelParams, frames: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = params.bind_constant(&mut tape);
        let xs: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let f = self.sequence_feature(&mut tape, &xs, &bound, None)?;
        Ok(tape.value(f).clone())
    }

    pub fn siamese<'a>(&'a self, params: &'a ModelParams<Var>) -> Siamese<'a> {
        Siamese { arch: self, params }
    }
}

/// Two branches over one shared parameter binding.
pub struct Siamese<'a> {
    arch: &'a Architecture,
    params: &'a ModelParams<Var>,
}

impl<'a> Siamese<'a> {
    /// The parameter sets read by branch a and branch b.
    pub fn branch_params(&self) -> (&'a ModelParams<Var>, &'a ModelParams<Var>) {
        (self.params, self.params)
    }

    pub fn similarity(
        &self,
        tape: &mut Tape,
        xa: &[Var],
        xb: &[Var],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let (pa, pb) = self.branch_params();
        let ha = self.arch.sequence_feature(tape, xa, pa, dropout.as_deref_mut())?;
        let hb = self.arch.sequence_feature(tape, xb, pb, dropout)?;
        aggregation::similarity(tape, ha, hb, &self.params.similarity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_parameter_layout() {
        let arch = Architecture::new(&Config::toy()).unwrap();
        let p = arch.build_params(&mut |s| Tensor::full(s, 0.1));
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "enc.s0.w");
        assert!(names.contains(&"rcn.l2.Wzx".to_string()));
        assert!(!names.contains(&"rcn.l1.Wzx".to_string()));
        assert!(names.contains(&"proj.l1".to_string()));
        assert_eq!(names.last().unwrap(), "sim.c");
        arch.check(&p).unwrap();
        let stack_scalars: usize = p.layers.iter().map(|l| l.len()).sum();
        assert_eq!(stack_scalars, recurrent::count_params(&arch.stack));
    }

    #[test]
    fn equal_widths_need_no_projection() {
        let mut cfg = Config::toy();
        cfg.channels = vec![8, 8, 8];
        let arch = Architecture::new(&cfg).unwrap();
        assert!(arch.build_params(&mut |s| Tensor::zeros(s)).projections.is_none());
    }

    #[test]
    fn rcn_ind_has_no_cross_kernels() {
        let mut cfg = Config::toy();
        cfg.variant = crate::config::Variant::RcnInd;
        let arch = Architecture::new(&cfg).unwrap();
        let p = arch.build_params(&mut |s| Tensor::zeros(s));
        assert!(p.layers.iter().all(|l| l.cross.is_none()));
    }

    #[test]
    fn both_branches_share_one_binding() {
        let arch = Architecture::new(&Config::grad_check()).unwrap();
        let params = arch.build_params(&mut |s| Tensor::full(s, 0.05));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let siamese = arch.siamese(&bound);
        let (a, b) = siamese.branch_params();
        assert!(std::ptr::eq(a, b));
        assert!(std::ptr::eq(a, &bound));
    }
}

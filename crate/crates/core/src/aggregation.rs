//! Sequence-level pooling of hidden states and the weighted inner-product
//! similarity head.

use crate::config::PoolingMode;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Stabiliser inside the per-step L2 normalisation.
pub const NORM_EPS: f64 = 1e-12;

/// `s = σ(vᵀ(a ⊙ b) + c)`
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityParams<T = Tensor> {
    /// `D`
    pub v: T,
    /// one element
    pub c: T,
}

impl<T> SimilarityParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> SimilarityParams<U> {
        SimilarityParams {
            v: f("sim.v", &self.v),
            c: f("sim.c", &self.c),
        }
    }
}

/// Pooled descriptor of a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFeature {
    pub h_bar: Tensor,
    pub mode: PoolingMode,
}

/// Reduces each layer's state to a channel vector by spatial averaging,
/// maps it into the shared `D`-dimensional space, and averages over layers.
///
/// `projections[l]` is a `D×C_l` matrix. Without projections every layer
/// must already have `D` channels.
pub fn pool_layers(tape: &mut Tape, states: &[Var], projections: Option<&[Var]>) -> Result<Var> {
    if states.is_empty() {
        return Err(Error::EmptyInput("layer pooling over zero layers".into()));
    }
    if let Some(p) = projections {
        if p.len() != states.len() {
            return Err(Error::config(format!(
                "{} projections for {} layers",
                p.len(),
                states.len()
            )));
        }
    }
    let mut acc: Option<Var> = None;
    for (l, &h) in states.iter().enumerate() {
        let pooled = tape.avg_pool_spatial(h)?;
        let mapped = match projections {
            Some(p) => tape.matvec(p[l], pooled)?,
            None => pooled,
        };
        acc = Some(match acc {
            None => mapped,
            Some(a) => {
                if tape.shape(a) != tape.shape(mapped) {
                    return Err(Error::config(format!(
                        "layer {} pools to {:?} but earlier layers give {:?}; configure a projection",
                        l + 1,
                        tape.shape(mapped),
                        tape.shape(a)
                    )));
                }
                tape.add(a, mapped)?
            }
        });
    }
    let sum = acc.expect("non-empty");
    Ok(tape.scale(sum, 1.0 / states.len() as f64))
}

/// L2-normalises each per-step descriptor and reduces over time.
pub fn pool_temporal(tape: &mut Tape, per_step: &[Var], mode: PoolingMode) -> Result<Var> {
    if per_step.is_empty() {
        return Err(Error::EmptyInput("temporal pooling over zero steps".into()));
    }
    let normed: Vec<Var> = per_step
        .iter()
        .map(|&d| tape.l2_normalize(d, NORM_EPS))
        .collect();
    let mut acc = normed[0];
    for &d in &normed[1..] {
        acc = match mode {
            PoolingMode::Max => tape.maximum(acc, d)?,
            _ => tape.add(acc, d)?,
        };
    }
    Ok(match mode {
        PoolingMode::Max => acc,
        _ => tape.scale(acc, 1.0 / normed.len() as f64),
    })
}

/// Weighted inner-product similarity in `(0, 1)`.
pub fn similarity(tape: &mut Tape, a: Var, b: Var, params: &SimilarityParams<Var>) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(format!(
            "similarity of features with shapes {:?} and {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    if tape.shape(params.v) != tape.shape(a) {
        return Err(Error::dim(format!(
            "weight vector {:?} does not match feature {:?}",
            tape.shape(params.v),
            tape.shape(a)
        )));
    }
    let prod = tape.mul(a, b)?;
    let weighted = tape.mul(params.v, prod)?;
    let dot = tape.sum(weighted);
    let logit = tape.add_scalar(dot, params.c)?;
    Ok(tape.sigmoid(logit))
}

/// Eager [`similarity`] on plain tensors.
pub fn similarity_value(a: &Tensor, b: &Tensor, params: &SimilarityParams) -> Result<f64> {
    let mut tape = Tape::new();
    let p = params.map(|_, t| tape.constant(t.clone()));
    let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let s = similarity(&mut tape, a, b, &p)?;
    Ok(tape.value(s).item())
}

/// Eager [`pool_temporal`].
pub fn pool_temporal_value(per_step: &[Tensor], mode: PoolingMode) -> Result<SequenceFeature> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = per_step.iter().map(|t| tape.constant(t.clone())).collect();
    let out = pool_temporal(&mut tape, &vars, mode)?;
    Ok(SequenceFeature {
        h_bar: tape.value(out).clone(),
        mode,
    })
}

/// Eager [`pool_layers`] over final-step states.
pub fn pool_layers_last_step(states: &[Tensor], projections: Option<&[Tensor]>) -> Result<SequenceFeature> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = states.iter().map(|t| tape.constant(t.clone())).collect();
    let proj: Option<Vec<Var>> =
        projections.map(|p| p.iter().map(|t| tape.constant(t.clone())).collect());
    let out = pool_layers(&mut tape, &vars, proj.as_deref())?;
    Ok(SequenceFeature {
        h_bar: tape.value(out).clone(),
        mode: PoolingMode::Last,
    })
}

/// `D×C` matrix with ones on the leading diagonal.
pub fn identity_projection(d: usize, c: usize) -> Tensor {
    Tensor::from_fn(&[d, c], |k| if k / c == k % c { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(v: &[f64], c: f64) -> SimilarityParams {
        SimilarityParams {
            v: Tensor::vector(v),
            c: Tensor::scalar(c),
        }
    }

    #[test]
    fn zero_feature_gives_half() {
        let p = sim(&[0.3, -2.0], 0.0);
        let z = Tensor::vector(&[0.0, 0.0]);
        let x = Tensor::vector(&[5.0, -1.0]);
        assert_eq!(similarity_value(&z, &x, &p).unwrap(), 0.5);
        assert_eq!(similarity_value(&x, &z, &p).unwrap(), 0.5);
    }

    #[test]
    fn scalar_evaluation() {
        let s = similarity_value(&Tensor::vector(&[2.0]), &Tensor::vector(&[3.0]), &sim(&[1.0], 0.0)).unwrap();
        let expected = 1.0 / (1.0 + (-6.0f64).exp());
        assert_eq!(s, expected);
        assert!((s - 0.99753).abs() < 5e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let p = sim(&[1.0, 1.0], 0.0);
        assert!(matches!(
            similarity_value(&Tensor::vector(&[1.0, 2.0]), &Tensor::vector(&[1.0]), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn temporal_pooling_examples() {
        let one = pool_temporal_value(&[Tensor::vector(&[3.0, 4.0])], PoolingMode::Average).unwrap();
        assert!((one.h_bar.data()[0] - 0.6).abs() < 1e-12);
        assert!((one.h_bar.data()[1] - 0.8).abs() < 1e-12);

        let avg = pool_temporal_value(
            &[Tensor::vector(&[1.0, 0.0]), Tensor::vector(&[0.0, 1.0])],
            PoolingMode::Average,
        )
        .unwrap();
        assert!((avg.h_bar.data()[0] - 0.5).abs() < 1e-12);
        assert!((avg.h_bar.data()[1] - 0.5).abs() < 1e-12);

        // inputs already unit-free after normalisation: compare directions
        let max = pool_temporal_value(
            &[Tensor::vector(&[1.0, 3.0]), Tensor::vector(&[2.0, 1.0])],
            PoolingMode::Max,
        )
        .unwrap();
        let a = [1.0 / 10f64.sqrt(), 3.0 / 10f64.sqrt()];
        let b = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
        assert!((max.h_bar.data()[0] - a[0].max(b[0])).abs() < 1e-12);
        assert!((max.h_bar.data()[1] - a[1].max(b[1])).abs() < 1e-12);
        assert!(pool_temporal_value(&[], PoolingMode::Max).is_err());
    }

    #[test]
    fn layer_pooling_examples() {
        let single = Tensor::new(&[2, 1, 2], vec![1.0, 3.0, -2.0, 0.0]).unwrap();
        let f = pool_layers_last_step(&[single], None).unwrap();
        assert_eq!(f.h_bar.data(), &[2.0, -1.0]);

        let a = Tensor::full(&[3, 2, 2], 0.2);
        let b = Tensor::full(&[3, 1, 1], 0.6);
        let f = pool_layers_last_step(&[a, b], None).unwrap();
        assert!(f.h_bar.data().iter().all(|&x| (x - 0.4).abs() < 1e-15));

        let zero = pool_layers_last_step(&[Tensor::zeros(&[4, 2, 2]), Tensor::zeros(&[4, 1, 1])], None).unwrap();
        assert!(zero.h_bar.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_layers_need_projection() {
        let states = [Tensor::full(&[2, 2, 2], 1.0), Tensor::full(&[3, 1, 1], 1.0)];
        assert!(matches!(pool_layers_last_step(&states, None), Err(Error::Config(_))));
        let proj = [identity_projection(3, 2), identity_projection(3, 3)];
        let f = pool_layers_last_step(&states, Some(&proj)).unwrap();
        assert_eq!(f.h_bar.data(), &[1.0, 1.0, 0.5]);
    }
}

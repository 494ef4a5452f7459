//! Per-frame convolutional encoder.
//!
//! Four 3×3 stride-1 convolution stages, each followed by `tanh`; stages 0–2
//! are followed by stride-2 max pooling. The recurrent stack reads three
//! taps: after pool 0, after pool 1, and after the final convolution.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::{conv2d_output_shape, max_pool2d_output_shape, Tape, Tensor, Var};

pub const STAGES: usize = 4;
pub const TAPS: usize = 3;
pub const KERNEL: usize = 3;
const RGB: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage<T = Tensor> {
    /// `Cout×Cin×3×3`
    pub kernel: T,
    /// `Cout`
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = Tensor> {
    pub stages: Vec<ConvStage<T>>,
}

/// The tapped maps of one frame, finest resolution first.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePyramid<T = Tensor> {
    pub levels: Vec<T>,
}

/// Geometry of the encoder for a given input resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderGeometry {
    pub input: [usize; 3],
    pub channels: usize,
    pub padding: usize,
    pub pool2_window: usize,
    /// Output shape of each conv stage and (for stages 0–2) its pool.
    pub conv_out: [[usize; 3]; STAGES],
    pub pool_out: [[usize; 3]; STAGES - 1],
}

impl EncoderGeometry {
    pub fn new(height: usize, width: usize, channels: usize, padding: usize, pool2_window: usize) -> Result<Self> {
        let kshape = |c_in| [channels, c_in, KERNEL, KERNEL];
        let input = [RGB, height, width];
        let mut conv_out = [[0; 3]; STAGES];
        let mut pool_out = [[0; 3]; STAGES - 1];
        let mut cur = input;
        for s in 0..STAGES {
            let c_in = if s == 0 { RGB } else { channels };
            conv_out[s] = conv2d_output_shape(&cur, &kshape(c_in), 1, padding).map_err(|e| {
                Error::dim(format!("encoder stage {s} cannot run on {cur:?}: {e}"))
            })?;
            cur = conv_out[s];
            if s < STAGES - 1 {
                let win = if s == 2 { pool2_window } else { 2 };
                pool_out[s] = max_pool2d_output_shape(&cur, (win, win), 2).map_err(|e| {
                    Error::dim(format!("encoder pool {s} cannot run on {cur:?}: {e}"))
                })?;
                cur = pool_out[s];
            }
        }
        Ok(Self {
            input,
            channels,
            padding,
            pool2_window,
            conv_out,
            pool_out,
        })
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Self::new(
            cfg.height,
            cfg.width,
            cfg.encoder_channels,
            cfg.encoder_padding,
            cfg.pool2_window,
        )
    }

    /// Shapes of the three tapped maps.
    pub fn taps(&self) -> [[usize; 3]; TAPS] {
        [self.pool_out[0], self.pool_out[1], self.conv_out[3]]
    }

    pub fn param_count(&self) -> usize {
        (0..STAGES)
            .map(|s| {
                let c_in = if s == 0 { RGB } else { self.channels };
                c_in * self.channels * KERNEL * KERNEL + self.channels
            })
            .sum()
    }
}

impl<T> EncoderParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> EncoderParams<U> {
        EncoderParams {
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(s, st)| ConvStage {
                    kernel: f(&format!("enc.s{s}.w"), &st.kernel),
                    bias: f(&format!("enc.s{s}.b"), &st.bias),
                })
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        for (s, st) in self.stages.iter().enumerate() {
            f(format!("enc.s{s}.w"), &st.kernel);
            f(format!("enc.s{s}.b"), &st.bias);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut T)) {
        for (s, st) in self.stages.iter_mut().enumerate() {
            f(format!("enc.s{s}.w"), &mut st.kernel);
            f(format!("enc.s{s}.b"), &mut st.bias);
        }
    }
}

impl EncoderParams<Tensor> {
    /// Builds parameters with `init` filling each kernel and zero biases.
    pub fn with_init(geom: &EncoderGeometry, mut init: impl FnMut(&[usize]) -> Tensor) -> Self {
        let c = geom.channels;
        let stages = (0..STAGES)
            .map(|s| {
                let c_in = if s == 0 { RGB } else { c };
                ConvStage {
                    kernel: init(&[c, c_in, KERNEL, KERNEL]),
                    bias: Tensor::zeros(&[c]),
                }
            })
            .collect();
        Self { stages }
    }

    pub fn check(&self, geom: &EncoderGeometry) -> Result<()> {
        if self.stages.len() != STAGES {
            return Err(Error::config(format!(
                "encoder needs {STAGES} stages, got {}",
                self.stages.len()
            )));
        }
        let mut c_in = RGB;
        for (s, st) in self.stages.iter().enumerate() {
            let expected = [geom.channels, c_in, KERNEL, KERNEL];
            if st.kernel.shape() != expected || st.bias.shape() != [geom.channels] {
                return Err(Error::config(format!(
                    "encoder stage {s}: kernel {:?} / bias {:?}, expected {expected:?} / [{}]",
                    st.kernel.shape(),
                    st.bias.shape(),
                    geom.channels
                )));
            }
            c_in = geom.channels;
        }
        Ok(())
    }

    /// Eager convenience wrapper around [`encode_frame`].
    pub fn encode(&self, frame: &Tensor, geom: &EncoderGeometry) -> Result<FramePyramid> {
        let mut tape = Tape::new();
        let params = self.map(|_, t| tape.constant(t.clone()));
        let x = tape.constant(frame.clone());
        let pyr = encode_frame(&mut tape, x, &params, geom)?;
        Ok(FramePyramid {
            levels: pyr.levels.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }
}

/// Runs one `3×H×W` frame through the encoder and returns its three taps.
pub fn encode_frame(
    tape: &mut Tape,
    frame: Var,
    params: &EncoderParams<Var>,
    geom: &EncoderGeometry,
) -> Result<FramePyramid<Var>> {
    if tape.shape(frame) != geom.input {
        return Err(Error::dim(format!(
            "encoder expects frames of shape {:?} but got {:?}; resize frames during ingestion",
            geom.input,
            tape.shape(frame)
        )));
    }
    if params.stages.len() != STAGES {
        return Err(Error::config(format!(
            "encoder needs {STAGES} stages, got {}",
            params.stages.len()
        )));
    }
    let mut levels = Vec::with_capacity(TAPS);
    let mut x = frame;
    for (s, stage) in params.stages.iter().enumerate() {
        let conv = tape.conv2d(x, stage.kernel, 1, geom.padding)?;
        let biased = tape.add_channel_bias(conv, stage.bias)?;
        x = tape.tanh(biased);
        if s < STAGES - 1 {
            let win = if s == 2 { geom.pool2_window } else { 2 };
            x = tape.max_pool2d(x, (win, win), 2)?;
            if s < 2 {
                levels.push(x);
            }
        }
    }
    levels.push(x);
    Ok(FramePyramid { levels })
}

/// Encodes every frame independently.
pub fn encode_sequence(
    tape: &mut Tape,
    frames: &[Var],
    params: &EncoderParams<Var>,
    geom: &EncoderGeometry,
) -> Result<Vec<FramePyramid<Var>>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("encode_sequence needs at least one frame".into()));
    }
    frames
        .iter()
        .map(|&f| encode_frame(tape, f, params, geom))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_geom() -> EncoderGeometry {
        EncoderGeometry::new(160, 60, 32, 0, 2).unwrap()
    }

    #[test]
    fn full_resolution_shape_chain() {
        let g = full_geom();
        assert_eq!(g.conv_out[0], [32, 158, 58]);
        assert_eq!(g.pool_out[0], [32, 79, 29]);
        assert_eq!(g.conv_out[1], [32, 77, 27]);
        assert_eq!(g.pool_out[1], [32, 38, 13]);
        assert_eq!(g.conv_out[2], [32, 36, 11]);
        assert_eq!(g.pool_out[2], [32, 18, 5]);
        assert_eq!(g.conv_out[3], [32, 16, 3]);
        assert_eq!(g.taps(), [[32, 79, 29], [32, 38, 13], [32, 16, 3]]);
    }

    #[test]
    fn three_by_three_pool2_variant() {
        let g = EncoderGeometry::new(160, 60, 32, 0, 3).unwrap();
        assert_eq!(g.pool_out[2], [32, 17, 5]);
        assert_eq!(g.conv_out[3], [32, 15, 3]);
    }

    #[test]
    fn stage_zero_parameter_count() {
        let g = full_geom();
        assert_eq!(3 * 3 * 3 * 32 + 32, 896);
        let p = EncoderParams::with_init(&g, Tensor::zeros);
        assert_eq!(p.stages[0].kernel.len() + p.stages[0].bias.len(), 896);
        let total: usize = p.stages.iter().map(|s| s.kernel.len() + s.bias.len()).sum();
        assert_eq!(total, g.param_count());
    }

    #[test]
    fn toy_resolution_taps_strictly_shrink() {
        let g = EncoderGeometry::new(32, 16, 8, 1, 2).unwrap();
        let taps = g.taps();
        assert_eq!(taps, [[8, 16, 8], [8, 8, 4], [8, 4, 2]]);
        // the valid-convolution encoder cannot run at this size
        assert!(EncoderGeometry::new(32, 16, 8, 0, 2).is_err());
    }

    #[test]
    fn zero_frame_gives_zero_pyramid() {
        let g = EncoderGeometry::new(32, 16, 8, 1, 2).unwrap();
        let mut k = 0.0;
        let p = EncoderParams::with_init(&g, |s| {
            k += 1.0;
            Tensor::from_fn(s, |i| ((i as f64 + k) * 0.37).sin())
        });
        let pyr = p.encode(&Tensor::zeros(&[3, 32, 16]), &g).unwrap();
        assert_eq!(pyr.levels.len(), TAPS);
        for (lvl, shape) in pyr.levels.iter().zip(g.taps()) {
            assert_eq!(lvl.shape(), shape);
            assert!(lvl.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn wrong_frame_size_is_dimension_error() {
        let g = EncoderGeometry::new(32, 16, 8, 1, 2).unwrap();
        let p = EncoderParams::with_init(&g, Tensor::zeros);
        let err = p.encode(&Tensor::zeros(&[3, 30, 16]), &g).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("resize")), "{err}");
    }
}

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pixel_to_unit, unit_to_pixel, Camera, Dataset, SequenceSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Appearance and motion of one synthetic identity.
#[derive(Clone, Debug)]
struct Persona {
    top: [f64; 3],
    bottom: [f64; 3],
    /// Fraction of the frame height where the top colour ends.
    split: f64,
    freq: f64,
    phase: f64,
}

fn hue_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let c = val * sat;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Renders a walking-figure stand-in: a two-colour rectangle on a grey
/// background that sways horizontally with the person's own rhythm.
/// Camera b sees a global colour cast and a horizontal offset.
fn render(p: &Persona, cam: Camera, t: usize, (h, w): (usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
    let (cast, offset) = match cam {
        Camera::A => ([0.0; 3], 0.0),
        Camera::B => ([0.06, -0.04, 0.05], w as f64 * 0.12),
    };
    let sway = (w as f64 * 0.12) * (TAU * p.freq * t as f64 + p.phase).sin();
    let centre = w as f64 / 2.0 + sway + offset;
    let half_w = w as f64 * 0.28;
    let (top, bottom) = ((h as f64 * 0.08).round() as usize, h - (h as f64 * 0.05).round() as usize);
    let split = top + ((bottom - top) as f64 * p.split) as usize;
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let inside = y >= top && y < bottom && (x as f64 + 0.5 - centre).abs() <= half_w;
            let base = match (inside, y < split) {
                (false, _) => [0.45; 3],
                (true, true) => p.top,
                (true, false) => p.bottom,
            };
            for c in 0..3 {
                let noise = rng.gen_range(-0.03..0.03);
                let v = unit_to_pixel(base[c] + cast[c] + noise);
                data[c * plane + y * w + x] = pixel_to_unit(v);
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("sized above")
}

/// Deterministic synthetic two-camera dataset with `n_persons` identities
/// and `frames` frames per sequence. Person ids are `p000`, `p001`, ...
pub fn synth_generate(n_persons: usize, frames: usize, resolution: (usize, usize), seed: u64) -> Result<Dataset> {
    if n_persons == 0 || frames == 0 {
        return Err(Error::Argument("synthetic data needs at least one person and one frame".into()));
    }
    let (h, w) = resolution;
    if h < 4 || w < 2 {
        return Err(Error::Argument(format!("synthetic frames of {h}×{w} are too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue0: f64 = rng.gen();
    let mut samples = Vec::with_capacity(2 * n_persons);
    for i in 0..n_persons {
        let hue = hue0 + i as f64 / n_persons as f64;
        let persona = Persona {
            top: hue_rgb(hue, rng.gen_range(0.6..1.0), rng.gen_range(0.7..1.0)),
            bottom: hue_rgb(hue + rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.9), rng.gen_range(0.2..0.8)),
            split: rng.gen_range(0.3..0.7),
            freq: rng.gen_range(0.05..0.25),
            phase: rng.gen_range(0.0..TAU),
        };
        for cam in Camera::BOTH {
            let start = rng.gen_range(0..frames.max(1));
            let frames = (0..frames)
                .map(|t| render(&persona, cam, start + t, resolution, &mut rng))
                .collect();
            samples.push(SequenceSample {
                person_id: format!("p{i:03}"),
                camera: cam,
                frames,
            });
        }
    }
    Dataset::new(samples)
}

/// Mean Euclidean distances between time-averaged sequences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separability {
    /// Same person across the two cameras.
    pub intra: f64,
    /// Different persons across the two cameras.
    pub inter: f64,
}

impl Separability {
    pub fn ratio(&self) -> f64 {
        self.inter / self.intra
    }
}

fn mean_frame(s: &SequenceSample) -> Vec<f64> {
    let mut acc = vec![0.0; s.frames[0].len()];
    for f in &s.frames {
        for (a, x) in acc.iter_mut().zip(f.data()) {
            *a += x / s.len() as f64;
        }
    }
    acc
}

pub fn separability(ds: &Dataset) -> Result<Separability> {
    ds.validate()?;
    let persons = ds.persons();
    if persons.len() < 2 {
        return Err(Error::Argument("separability needs at least 2 persons".into()));
    }
    let means = |cam| -> Vec<Vec<f64>> {
        persons
            .iter()
            .map(|p| mean_frame(ds.sequence(p, cam).expect("validated")))
            .collect()
    };
    let (a, b) = (means(Camera::A), means(Camera::B));
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let n = persons.len();
    let (mut intra, mut inter) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let d = dist(&a[i], &b[j]);
            if i == j {
                intra += d / n as f64;
            } else {
                inter += d / (n * (n - 1)) as f64;
            }
        }
    }
    Ok(Separability { intra, inter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_complete() {
        let a = synth_generate(4, 6, (16, 8), 3).unwrap();
        assert_eq!(a, synth_generate(4, 6, (16, 8), 3).unwrap());
        assert_ne!(a, synth_generate(4, 6, (16, 8), 4).unwrap());
        a.validate().unwrap();
        assert_eq!(a.samples.len(), 8);
        assert_eq!(a.samples[0].frames[0].shape(), &[3, 16, 8]);
        assert_eq!(a.persons()[3], "p003");
    }

    #[test]
    fn values_are_quantised() {
        let ds = synth_generate(2, 2, (8, 4), 0).unwrap();
        for s in &ds.samples {
            for f in &s.frames {
                assert!(f.data().iter().all(|&x| pixel_to_unit(unit_to_pixel(x)) == x));
            }
        }
    }

    #[test]
    fn identities_are_separable() {
        let ds = synth_generate(8, 10, (32, 16), 0).unwrap();
        let s = separability(&ds).unwrap();
        assert!(s.ratio() > 1.5, "{s:?}");
    }

    #[test]
    fn frames_move_over_time() {
        let ds = synth_generate(1, 8, (32, 16), 5).unwrap();
        let f = &ds.samples[0].frames;
        assert_ne!(f[0], f[4]);
    }

    #[test]
    fn hue_wheel() {
        assert_eq!(hue_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hue_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-9);
    }
}

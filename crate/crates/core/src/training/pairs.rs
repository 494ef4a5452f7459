use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Camera, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero padding added around each frame before cropping back to size.
pub const CROP_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Similar,
    Dissimilar,
}

impl Label {
    pub fn is_similar(self) -> bool {
        self == Label::Similar
    }
}

/// Two frame sequences and whether they show the same person.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub a: Vec<Tensor>,
    pub b: Vec<Tensor>,
    pub label: Label,
    pub person_a: String,
    pub person_b: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn similar_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_similar()).count()
    }
}

/// One augmentation condition, applied identically to every frame of a
/// sequence: optional horizontal mirror, then a crop whose origin is shifted
/// by `(dy, dx)` inside a zero-padded frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub mirror: bool,
    pub dy: i32,
    pub dx: i32,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        mirror: false,
        dy: 0,
        dx: 0,
    };
    pub const MIRROR: Augmentation = Augmentation {
        mirror: true,
        dy: 0,
        dx: 0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        let m = CROP_MARGIN as i32;
        Self {
            mirror: rng.gen_bool(0.5),
            dy: rng.gen_range(-m..=m),
            dx: rng.gen_range(-m..=m),
        }
    }

    pub fn apply_frame(&self, frame: &Tensor) -> Tensor {
        let s = frame.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = frame.data();
        Tensor::from_fn(s, |k| {
            let (ch, y, x) = (k / (h * w), (k / w) % h, k % w);
            let sy = y as i64 + self.dy as i64;
            let sx = x as i64 + self.dx as i64;
            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                return 0.0;
            }
            let sx = if self.mirror { w - 1 - sx as usize } else { sx as usize };
            debug_assert!(ch < c);
            src[(ch * h + sy as usize) * w + sx]
        })
    }

    pub fn apply(&self, frames: &[Tensor]) -> Vec<Tensor> {
        if *self == Self::IDENTITY {
            return frames.to_vec();
        }
        frames.iter().map(|f| self.apply_frame(f)).collect()
    }
}

/// Draws one augmentation condition and applies it to the whole sequence.
pub fn augment(frames: &[Tensor], rng: &mut impl Rng) -> Vec<Tensor> {
    Augmentation::sample(rng).apply(frames)
}

/// `len` contiguous frames starting at `start`, cycling when the sequence
/// runs out.
pub fn window(frames: &[Tensor], start: usize, len: usize) -> Vec<Tensor> {
    (0..len).map(|i| frames[(start + i) % frames.len()].clone()).collect()
}

/// Uniform start index of a `len`-frame window in a sequence of `available`
/// frames; 0 when the sequence is shorter than the window.
pub fn window_start(available: usize, len: usize, rng: &mut impl Rng) -> usize {
    if available <= len {
        0
    } else {
        rng.gen_range(0..=available - len)
    }
}

fn clip(ds: &Dataset, person: &str, cam: Camera, len: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    let seq = ds
        .sequence(person, cam)
        .ok_or_else(|| Error::Protocol(format!("person {person} has no {cam} sequence")))?;
    let start = window_start(seq.len(), len, rng);
    Ok(window(&seq.frames, start, len))
}

/// Samples a balanced batch: the first `ceil(batch/2)` pairs show one person
/// in both cameras, the rest pair camera a of one person with camera b of
/// another.
pub fn sample_pairs(
    ds: &Dataset,
    ids: &[String],
    batch: usize,
    seq_len: usize,
    augment_frames: bool,
    rng: &mut impl Rng,
) -> Result<PairBatch> {
    if ids.len() < 2 {
        return Err(Error::Argument(format!(
            "pair sampling needs at least 2 identities, got {}",
            ids.len()
        )));
    }
    let n_similar = batch.div_ceil(2);
    let mut pairs = Vec::with_capacity(batch);
    for k in 0..batch {
        let (pa, pb, label) = if k < n_similar {
            let p = ids.choose(rng).expect("non-empty");
            (p, p, Label::Similar)
        } else {
            let i = rng.gen_range(0..ids.len());
            let j = (i + rng.gen_range(1..ids.len())) % ids.len();
            (&ids[i], &ids[j], Label::Dissimilar)
        };
        let mut a = clip(ds, pa, Camera::A, seq_len, rng)?;
        let mut b = clip(ds, pb, Camera::B, seq_len, rng)?;
        if augment_frames {
            a = augment(&a, rng);
            b = augment(&b, rng);
        }
        pairs.push(Pair {
            a,
            b,
            label,
            person_a: pa.clone(),
            person_b: pb.clone(),
        });
    }
    Ok(PairBatch { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[3, h, w], |k| k as f64 + 1.0)
    }

    #[test]
    fn mirror_is_an_involution() {
        let f = ramp(5, 4);
        let m = Augmentation::MIRROR;
        assert_ne!(m.apply_frame(&f), f);
        assert_eq!(m.apply_frame(&m.apply_frame(&f)), f);
    }

    #[test]
    fn zero_offset_crop_is_identity() {
        let f = ramp(6, 4);
        let a = Augmentation::IDENTITY;
        assert_eq!(a.apply_frame(&f), f);
    }

    #[test]
    fn shifted_crop_pads_with_zeros() {
        let f = ramp(3, 3);
        let a = Augmentation { mirror: false, dy: 1, dx: -1 };
        let g = a.apply_frame(&f);
        // output (0,0) reads input (1,-1): padding
        assert_eq!(g.data()[0], 0.0);
        // output (0,1) reads input (1,0)
        assert_eq!(g.data()[1], f.data()[3]);
        // last row reads beyond the bottom
        assert!(g.data()[6..9].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn whole_sequence_shares_one_condition() {
        let frames: Vec<Tensor> = (0..4).map(|_| ramp(6, 5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment(&frames, &mut rng);
            assert!(out.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn short_sequences_wrap() {
        let frames: Vec<Tensor> = (0..3).map(|i| Tensor::scalar(i as f64)).collect();
        let w = window(&frames, 0, 7);
        let v: Vec<f64> = w.iter().map(Tensor::item).collect();
        assert_eq!(v, [0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn start_index_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let starts: std::collections::BTreeSet<usize> =
            (0..500).map(|_| window_start(23, 20, &mut rng)).collect();
        assert_eq!(starts.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let starts: std::collections::BTreeSet<usize> =
            (0..500).map(|_| window_start(25, 20, &mut rng)).collect();
        assert_eq!(starts.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(window_start(4, 20, &mut rng), 0);
    }

    #[test]
    fn balanced_labelled_batches() {
        let ds = synth_generate(2, 6, (8, 4), 1).unwrap();
        let ids = ds.persons();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_pairs(&ds, &ids, 10, 4, true, &mut rng).unwrap();
        assert_eq!((b.len(), b.similar_count()), (10, 5));
        for p in &b.pairs {
            assert_eq!(p.label.is_similar(), p.person_a == p.person_b);
            assert_eq!(p.a.len(), 4);
        }
        let mut again = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_pairs(&ds, &ids, 10, 4, true, &mut again).unwrap(), b);
        assert!(sample_pairs(&ds, &ids[..1], 10, 4, true, &mut rng).is_err());
    }
}

//! Labelled image sequences: on-disk layouts, the synthetic generator, and
//! identity splits.

mod load;
mod packed;
mod split;
mod synth;

pub use load::{load_dataset, load_frame, write_frames};
pub use packed::{load_packed, write_packed, INDEX_FILE};
pub use split::split_identities;
pub use synth::{separability, synth_generate, Separability};

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Camera {
    A,
    B,
}

impl Camera {
    pub const BOTH: [Camera; 2] = [Camera::A, Camera::B];

    pub fn dir_name(self) -> &'static str {
        match self {
            Camera::A => "cam_a",
            Camera::B => "cam_b",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Camera {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam_a" => Ok(Camera::A),
            "cam_b" => Ok(Camera::B),
            _ => Err(Error::Manifest(format!("unknown camera {s:?}"))),
        }
    }
}

/// 8-bit channel value to the `[0, 1]` working range. Every ingestion path
/// goes through this so that pixels survive a disk round trip bit-exactly.
#[inline]
pub fn pixel_to_unit(v: u8) -> f64 {
    (v as f32 / 255.0) as f64
}

#[inline]
pub fn unit_to_pixel(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One person seen by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub person_id: String,
    pub camera: Camera,
    /// `3×H×W` frames in time order.
    pub frames: Vec<Tensor>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// Ordered by person id, then camera.
    pub samples: Vec<SequenceSample>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub person_id: String,
    pub camera: Camera,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// `(height, width)` of every frame.
    pub resolution: (usize, usize),
}

impl Dataset {
    pub fn new(mut samples: Vec<SequenceSample>) -> Result<Self> {
        for s in &samples {
            if s.person_id.is_empty() {
                return Err(Error::Manifest("empty person id".into()));
            }
            let first = s.frames.first().ok_or_else(|| {
                Error::Manifest(format!("{}/{} has no frames", s.person_id, s.camera))
            })?;
            if s.frames.iter().any(|f| f.shape() != first.shape()) {
                return Err(Error::Manifest(format!(
                    "{}/{} mixes frame shapes",
                    s.person_id, s.camera
                )));
            }
        }
        samples.sort_by(|a, b| (&a.person_id, a.camera).cmp(&(&b.person_id, b.camera)));
        Ok(Self { samples })
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted, de-duplicated person ids.
    pub fn persons(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.person_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// First sequence of `person` in `camera`.
    pub fn sequence(&self, person: &str, camera: Camera) -> Option<&SequenceSample> {
        self.samples
            .iter()
            .find(|s| s.person_id == person && s.camera == camera)
    }

    /// Persons missing from at least one camera.
    pub fn incomplete_persons(&self) -> Vec<String> {
        self.persons()
            .into_iter()
            .filter(|p| Camera::BOTH.iter().any(|&c| self.sequence(p, c).is_none()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.incomplete_persons();
        if !bad.is_empty() {
            return Err(Error::Manifest(format!(
                "persons missing a camera: {}",
                bad.join(", ")
            )));
        }
        Ok(())
    }

    /// `(height, width)` of the frames, if any.
    pub fn resolution(&self) -> Option<(usize, usize)> {
        let f = self.samples.first()?.frames.first()?;
        Some((f.shape()[1], f.shape()[2]))
    }

    pub fn manifest(&self, root: &Path) -> DatasetManifest {
        DatasetManifest {
            root: root.to_path_buf(),
            entries: self
                .samples
                .iter()
                .map(|s| ManifestEntry {
                    person_id: s.person_id.clone(),
                    camera: s.camera,
                    frames: s.len(),
                })
                .collect(),
            resolution: self.resolution().unwrap_or((0, 0)),
        }
    }

    pub fn total_frames(&self) -> usize {
        self.samples.iter().map(|s| s.len()).sum()
    }
}

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Camera, Dataset, SequenceSample};
use crate::error::{Error, Result};
use crate::tensor::{read_sqt, write_sqt, Tensor};

pub const INDEX_FILE: &str = "index.tsv";
const HEADER: &str = "person_id\tcamera_id\tpath\tframes";

/// Writes one `T×3×H×W` tensor file per sequence plus a tab-separated index.
pub fn write_packed(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from(HEADER);
    index.push('\n');
    for s in &ds.samples {
        let name = format!("{}_{}.sqt", s.person_id, s.camera.dir_name());
        write_sqt(dir.join(&name), &Tensor::stack(&s.frames)?)?;
        index.push_str(&format!("{}\t{}\t{}\t{}\n", s.person_id, s.camera, name, s.len()));
    }
    let path = dir.join(INDEX_FILE);
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(index.as_bytes()))
        .map_err(|e| Error::io(&path, e))
}

/// Reads a directory written by [`write_packed`].
pub fn load_packed(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::Manifest(format!("{} lacks the expected header", path.display())));
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |why: &str| Error::Manifest(format!("{} line {}: {why}", path.display(), n + 2));
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let camera: Camera = cols[1].parse()?;
        let frames: usize = cols[3].parse().map_err(|_| bad("frame count is not an integer"))?;
        let t = read_sqt(dir.join(cols[2]))?;
        if t.rank() != 4 || t.shape()[0] != frames || t.shape()[1] != 3 {
            return Err(bad(&format!("tensor shape {:?} does not hold {frames} RGB frames", t.shape())));
        }
        samples.push(SequenceSample {
            person_id: cols[0].to_string(),
            camera,
            frames: (0..frames).map(|i| t.slice_outer(i)).collect(),
        });
    }
    Dataset::new(samples)
}

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};

use super::{pixel_to_unit, unit_to_pixel, Camera, Dataset, DatasetManifest, SequenceSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parses `frame_<index>.(png|ppm)`.
fn frame_index(name: &str) -> Option<usize> {
    let stem = name
        .strip_suffix(".png")
        .or_else(|| name.strip_suffix(".ppm"))?;
    stem.strip_prefix("frame_")?.parse().ok()
}

fn sorted_dirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), p));
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes one frame into a `3×height×width` tensor in `[0, 1]`, resizing
/// bilinearly when the stored size differs.
pub fn load_frame(path: &Path, (height, width): (usize, usize)) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * height * width];
    let plane = height * width;
    if (h, w) == (height, width) {
        let rgb = img.to_rgb8();
        for (k, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + k] = pixel_to_unit(px[c]);
            }
        }
    } else {
        let rgb = img.to_rgb32f();
        let resized = image::imageops::resize(&rgb, width as u32, height as u32, FilterType::Triangle);
        for (k, px) in resized.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + k] = (px[c] as f64).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, height, width], data)
}

/// Loads `root/<person>/<cam_a|cam_b>/frame_<n>.(png|ppm)`, ordering by
/// person, camera and numeric frame index.
pub fn load_dataset(root: impl AsRef<Path>, resolution: (usize, usize)) -> Result<(DatasetManifest, Dataset)> {
    let root = root.as_ref();
    let mut samples = Vec::new();
    let mut missing = Vec::new();
    for (person, pdir) in sorted_dirs(root)? {
        for cam in Camera::BOTH {
            let cdir = pdir.join(cam.dir_name());
            if !cdir.is_dir() {
                missing.push(format!("{person}/{cam}"));
                continue;
            }
            let mut frames: Vec<(usize, PathBuf)> = Vec::new();
            for entry in fs::read_dir(&cdir).map_err(|e| Error::io(&cdir, e))? {
                let entry = entry.map_err(|e| Error::io(&cdir, e))?;
                if let Some(i) = frame_index(&entry.file_name().to_string_lossy()) {
                    frames.push((i, entry.path()));
                }
            }
            frames.sort();
            if frames.is_empty() {
                missing.push(format!("{person}/{cam} (no frames)"));
                continue;
            }
            let frames = frames
                .iter()
                .map(|(_, p)| load_frame(p, resolution))
                .collect::<Result<Vec<_>>>()?;
            samples.push(SequenceSample {
                person_id: person.clone(),
                camera: cam,
                frames,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!(
            "incomplete identities under {}: {}",
            root.display(),
            missing.join(", ")
        )));
    }
    let ds = Dataset::new(samples)?;
    let mut manifest = ds.manifest(root);
    manifest.resolution = resolution;
    Ok((manifest, ds))
}

/// Writes every frame as an 8-bit PNG in the directory layout read by
/// [`load_dataset`].
pub fn write_frames(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for s in &ds.samples {
        let dir = root.join(&s.person_id).join(s.camera.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, f) in s.frames.iter().enumerate() {
            let (_, h, w) = f.chw()?;
            let plane = h * w;
            let d = f.data();
            let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let k = y as usize * w + x as usize;
                Rgb([
                    unit_to_pixel(d[k]),
                    unit_to_pixel(d[plane + k]),
                    unit_to_pixel(d[2 * plane + k]),
                ])
            });
            let path = dir.join(format!("frame_{i:05}.png"));
            img.save(&path).map_err(|source| Error::Image { path, source })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_names() {
        assert_eq!(frame_index("frame_00012.png"), Some(12));
        assert_eq!(frame_index("frame_3.ppm"), Some(3));
        assert_eq!(frame_index("frame_x.png"), None);
        assert_eq!(frame_index("thumb_00001.png"), None);
    }

    #[test]
    fn empty_root_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, ds) = load_dataset(dir.path(), (4, 2)).unwrap();
        assert!(ds.is_empty());
        assert!(manifest.entries.is_empty());
    }

    #[test]
    fn numeric_order_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        for p in ["p1", "p2"] {
            for cam in ["cam_a", "cam_b"] {
                let d = dir.path().join(p).join(cam);
                fs::create_dir_all(&d).unwrap();
                // written in scrambled order; value encodes the index
                for i in [3usize, 10, 0, 2, 1] {
                    let img: RgbImage = ImageBuffer::from_pixel(2, 4, Rgb([i as u8 * 20, 0, 0]));
                    img.save(d.join(format!("frame_{i}.png"))).unwrap();
                }
            }
        }
        let (manifest, ds) = load_dataset(dir.path(), (4, 2)).unwrap();
        assert_eq!(manifest.entries.len(), 4);
        assert_eq!(ds.total_frames(), 20);
        let firsts: Vec<f64> = ds.samples[0].frames.iter().map(|f| f.data()[0]).collect();
        let expected: Vec<f64> = [0u8, 1, 2, 3, 10].iter().map(|&i| pixel_to_unit(i * 20)).collect();
        assert_eq!(firsts, expected);
    }

    #[test]
    fn missing_camera_is_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("solo").join("cam_a");
        fs::create_dir_all(&d).unwrap();
        let img: RgbImage = ImageBuffer::from_pixel(2, 2, Rgb([1, 2, 3]));
        img.save(d.join("frame_00000.png")).unwrap();
        let err = load_dataset(dir.path(), (2, 2)).unwrap_err();
        assert!(matches!(err, Error::Manifest(ref m) if m.contains("solo/cam_b")), "{err}");
    }

    #[test]
    fn unreadable_frame_names_path() {
        let dir = tempfile::tempdir().unwrap();
        for cam in ["cam_a", "cam_b"] {
            let d = dir.path().join("p").join(cam);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("frame_00000.png"), b"not a png").unwrap();
        }
        let err = load_dataset(dir.path(), (2, 2)).unwrap_err();
        assert!(err.to_string().contains("frame_00000.png"), "{err}");
    }

    #[test]
    fn resizes_to_requested_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.png");
        let img: RgbImage = ImageBuffer::from_pixel(8, 16, Rgb([255, 128, 0]));
        img.save(&path).unwrap();
        let t = load_frame(&path, (4, 2)).unwrap();
        assert_eq!(t.shape(), &[3, 4, 2]);
        assert!(t.data()[..8].iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }
}

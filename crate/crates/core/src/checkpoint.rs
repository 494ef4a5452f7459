//! Parameter snapshots: a directory holding one tensor file per parameter,
//! a `manifest.tsv` listing name, shape and file, and the `config.txt` the
//! parameters were trained with.

use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::tensor::{read_sqt, write_sqt, Tensor};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CONFIG_FILE: &str = "config.txt";
const HEADER: &str = "name\tshape\tfile";

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save(dir: impl AsRef<Path>, config: &Config, params: &ModelParams) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{HEADER}\n");
    for (name, t) in params.named() {
        let file = format!("{name}.sqt");
        write_sqt(dir.join(&file), t)?;
        manifest.push_str(&format!("{name}\t{}\t{file}\n", shape_text(t.shape())));
    }
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(MANIFEST_FILE, &manifest)?;
    write(CONFIG_FILE, &config.to_text())
}

/// Loads a snapshot and checks it against the architecture of its stored
/// configuration.
pub fn load(dir: impl AsRef<Path>) -> Result<(Config, ModelParams)> {
    let dir = dir.as_ref();
    let config = Config::load(dir.join(CONFIG_FILE))?;
    let arch = Architecture::new(&config)?;
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Manifest(format!("{} lacks the expected header", mp.display())));
    }
    let mut tensors = std::collections::HashMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Manifest(format!("{}: malformed line {line:?}", mp.display())));
        }
        let t = read_sqt(dir.join(cols[2]))?;
        if shape_text(t.shape()) != cols[1] {
            return Err(Error::Manifest(format!(
                "{} has shape {:?} but the manifest says {}",
                cols[2],
                t.shape(),
                cols[1]
            )));
        }
        tensors.insert(cols[0].to_string(), t);
    }
    let template = arch.build_params(&mut |s| Tensor::zeros(s));
    let mut missing = Vec::new();
    let params = template.map(|name, t| match tensors.remove(name) {
        Some(v) => v,
        None => {
            missing.push(name.to_string());
            t.clone()
        }
    });
    if !missing.is_empty() || !tensors.is_empty() {
        let mut extra: Vec<_> = tensors.into_keys().collect();
        extra.sort();
        return Err(Error::Manifest(format!(
            "checkpoint does not match its configuration; missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    arch.check(&params)?;
    Ok((config, params))
}

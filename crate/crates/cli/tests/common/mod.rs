#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tprm_core::format::save_tensor;
use tprm_core::sim::gen_phantom_2d;
use tprm_core::{stack_subjects, DenseTensor};

pub fn tprm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tprm")).args(args).output().expect("binary runs")
}

pub fn tprm_ok(args: &[&str]) -> Output {
    let out = tprm(args);
    assert!(
        out.status.success(),
        "tprm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_response(path: &Path, y: &[f64]) {
    let mut text = String::from("y\n");
    for v in y {
        text += &format!("{v}\n");
    }
    fs::write(path, text).unwrap();
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

/// Phantom images stacked along a trailing subject mode, with responses.
pub struct Toy {
    pub tensor: PathBuf,
    pub response: PathBuf,
    pub config: PathBuf,
    pub y: Vec<f64>,
    pub x: DenseTensor,
}

pub fn toy(dir: &Path, n: usize, seed: u64) -> Toy {
    let data = gen_phantom_2d(n, 1.0, seed).unwrap();
    let x = stack_subjects(&data.images).unwrap();
    let tensor = dir.join("x.tprm");
    save_tensor(&tensor, &x).unwrap();
    let response = dir.join("y.csv");
    write_response(&response, &data.y);
    let config = dir.join("cfg.toml");
    fs::write(
        &config,
        "block_dims = [16, 16]\nfactor_model = false\niters = 300\nburn_in = 150\nthin = 2\nseed = 5\n\n[cp]\nrank = 2\n",
    )
    .unwrap();
    Toy { tensor, response, config, y: data.y, x }
}

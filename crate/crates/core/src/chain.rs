//! Storage for retained MCMC draws.
//!
//! A chain is a set of named parameter streams. Every stream holds one
//! fixed-width record per retained draw. On disk a chain is a directory with
//! one `<name>.f64` file per stream (little-endian `f64`, records back to back)
//! and a `manifest.json` carrying [`ChainMeta`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, param_err, shape_err, Result};
use crate::partition::PartitionGrid;
use crate::probit::RegressionState;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub config_hash: String,
    pub seed: u64,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: usize,
    /// Grid over the full stacked tensor (subject mode last).
    pub grid: PartitionGrid,
    pub rank: usize,
    /// Partition ids kept by screening, ascending.
    pub survivors: Vec<usize>,
    pub factor_model: bool,
    pub k: usize,
    pub n_train: usize,
    /// Covariate columns supplied by the user (the intercept excluded).
    pub covariates: usize,
    pub intercept: bool,
    /// Record width of every stream.
    pub widths: BTreeMap<String, usize>,
}

impl ChainMeta {
    /// Expected number of retained draws.
    pub fn retained(iters: usize, burn_in: usize, thin: usize) -> usize {
        (iters - burn_in) / thin
    }

    pub fn feature_count(&self) -> usize {
        self.survivors.len() * self.rank
    }
}

/// Receives draws as they are produced.
pub trait DrawSink {
    fn push(&mut self, name: &str, values: &[f64]) -> Result<()>;
}

/// In-memory chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStore {
    pub meta: ChainMeta,
    streams: BTreeMap<String, Vec<f64>>,
}

/// Posterior summary of one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Collects draws in memory; turned into a [`ChainStore`] once the meta is known.
#[derive(Debug, Default)]
pub struct MemorySink {
    widths: BTreeMap<String, usize>,
    streams: BTreeMap<String, Vec<f64>>,
}

impl DrawSink for MemorySink {
    fn push(&mut self, name: &str, values: &[f64]) -> Result<()> {
        check_width(&mut self.widths, name, values.len())?;
        self.streams.entry(name.to_string()).or_default().extend_from_slice(values);
        Ok(())
    }
}

impl MemorySink {
    pub fn into_store(self, mut meta: ChainMeta) -> Result<ChainStore> {
        meta.widths = self.widths;
        let store = ChainStore { meta, streams: self.streams };
        store.validate()?;
        Ok(store)
    }
}

fn check_width(widths: &mut BTreeMap<String, usize>, name: &str, w: usize) -> Result<()> {
    match widths.get(name) {
        Some(&old) if old != w => Err(shape_err!("stream {name} changed width from {old} to {w}")),
        Some(_) => Ok(()),
        None => {
            widths.insert(name.to_string(), w);
            Ok(())
        }
    }
}

/// Writes each stream straight to its file; memory use does not grow with
/// the chain length.
#[derive(Debug)]
pub struct DirectorySink {
    dir: PathBuf,
    widths: BTreeMap<String, usize>,
    files: BTreeMap<String, BufWriter<File>>,
}

impl DirectorySink {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, widths: BTreeMap::new(), files: BTreeMap::new() })
    }

    /// Flushes the streams and writes the manifest atomically.
    pub fn finish(mut self, mut meta: ChainMeta) -> Result<ChainMeta> {
        for f in self.files.values_mut() {
            f.flush()?;
        }
        meta.widths = std::mem::take(&mut self.widths);
        write_manifest(&self.dir, &meta)?;
        Ok(meta)
    }
}

impl DrawSink for DirectorySink {
    fn push(&mut self, name: &str, values: &[f64]) -> Result<()> {
        check_width(&mut self.widths, name, values.len())?;
        if !self.files.contains_key(name) {
            let f = File::create(self.dir.join(format!("{name}.f64")))?;
            self.files.insert(name.to_string(), BufWriter::new(f));
        }
        let w = self.files.get_mut(name).expect("inserted above");
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn write_manifest(dir: &Path, meta: &ChainMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta).map_err(|e| format_err!("manifest: {e}"))?;
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    fs::write(&tmp, json + "\n")?;
    fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

impl ChainStore {
    fn validate(&self) -> Result<()> {
        for (name, w) in &self.meta.widths {
            let len = self.streams.get(name).map_or(0, Vec::len);
            if len != w * self.meta.draws {
                return Err(shape_err!(
                    "stream {name} holds {len} values, expected {} draws of width {w}",
                    self.meta.draws
                ));
            }
        }
        Ok(())
    }

    pub fn draws(&self) -> usize {
        self.meta.draws
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(String::as_str)
    }

    pub fn has(&self, name: &str) -> bool {
        self.streams.contains_key(name)
    }

    pub fn width(&self, name: &str) -> Result<usize> {
        self.meta
            .widths
            .get(name)
            .copied()
            .ok_or_else(|| param_err!("chain has no stream {name}"))
    }

    /// Record `t` of stream `name`.
    pub fn draw(&self, name: &str, t: usize) -> Result<&[f64]> {
        let w = self.width(name)?;
        if t >= self.meta.draws {
            return Err(param_err!("draw {t} out of range {}", self.meta.draws));
        }
        Ok(&self.streams[name][t * w..(t + 1) * w])
    }

    /// Per-component posterior mean and equal-tailed 95% interval.
    pub fn summarize(&self, name: &str) -> Result<Vec<Summary>> {
        let w = self.width(name)?;
        let n = self.meta.draws;
        if n == 0 {
            return Err(param_err!("chain has no draws"));
        }
        let data = &self.streams[name];
        let mut col = vec![0.0; n];
        Ok((0..w)
            .map(|j| {
                for (t, c) in col.iter_mut().enumerate() {
                    *c = data[t * w + j];
                }
                summarize_samples(&mut col)
            })
            .collect())
    }

    /// Posterior means of one stream.
    pub fn mean(&self, name: &str) -> Result<Vec<f64>> {
        let w = self.width(name)?;
        let n = self.meta.draws.max(1) as f64;
        let mut acc = vec![0.0; w];
        for rec in self.streams[name].chunks_exact(w.max(1)) {
            for (a, v) in acc.iter_mut().zip(rec) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// `P(delta_k = 1 | data)` for every coefficient.
    pub fn inclusion_probabilities(&self) -> Result<Vec<f64>> {
        self.mean("delta")
    }

    /// Regression part of each retained draw (`w` is not stored and left empty).
    pub fn regression_states(&self) -> Result<Vec<RegressionState>> {
        let q = self.meta.covariates + usize::from(self.meta.intercept);
        (0..self.meta.draws)
            .map(|t| {
                let b = self.draw("b", t)?;
                let gamma = if q > 0 { self.draw("gamma", t)?.to_vec() } else { Vec::new() };
                Ok(RegressionState {
                    w: DVector::zeros(0),
                    b: DVector::from_column_slice(b),
                    delta: self.draw("delta", t)?.iter().map(|d| *d != 0.0).collect(),
                    pi: self.draw("pi", t)?[0],
                    gamma: DVector::from_vec(gamma),
                    upsilon: self.draw("upsilon", t)?[0],
                })
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut sink = DirectorySink::create(dir)?;
        for (name, data) in &self.streams {
            sink.push_raw(name, self.meta.widths[name], data)?;
        }
        sink.finish(self.meta.clone())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let meta: ChainMeta = serde_json::from_str(&text).map_err(|e| format_err!("manifest: {e}"))?;
        let mut streams = BTreeMap::new();
        for name in meta.widths.keys() {
            let mut bytes = Vec::new();
            File::open(dir.join(format!("{name}.f64")))?.read_to_end(&mut bytes)?;
            if bytes.len() % 8 != 0 {
                return Err(format_err!("stream {name} is not a whole number of f64 values"));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            streams.insert(name.clone(), data);
        }
        let store = Self { meta, streams };
        store.validate()?;
        Ok(store)
    }
}

impl DirectorySink {
    fn push_raw(&mut self, name: &str, width: usize, data: &[f64]) -> Result<()> {
        check_width(&mut self.widths, name, width)?;
        let f = File::create(self.dir.join(format!("{name}.f64")))?;
        let mut w = BufWriter::new(f);
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
        self.files.insert(name.to_string(), w);
        Ok(())
    }
}

/// Mean and equal-tailed 95% interval; reorders `samples`.
pub fn summarize_samples(samples: &mut [f64]) -> Summary {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    Summary { mean, lower: quantile_sorted(samples, 0.025), upper: quantile_sorted(samples, 0.975) }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(draws: usize) -> ChainMeta {
        ChainMeta {
            config_hash: "abc".into(),
            seed: 7,
            iters: 10,
            burn_in: 5,
            thin: 1,
            draws,
            grid: PartitionGrid::new(&[2, 2, 3], &[1, 2, 3]).unwrap(),
            rank: 1,
            survivors: vec![0, 1],
            factor_model: false,
            k: 0,
            n_train: 3,
            covariates: 0,
            intercept: true,
            widths: BTreeMap::new(),
        }
    }

    fn sample_store() -> ChainStore {
        let mut sink = MemorySink::default();
        for t in 0..5 {
            let t = t as f64;
            sink.push("b", &[t, -t]).unwrap();
            sink.push("delta", &[1.0, if t > 2.0 { 1.0 } else { 0.0 }]).unwrap();
            sink.push("pi", &[0.5]).unwrap();
            sink.push("gamma", &[0.1 * t]).unwrap();
            sink.push("upsilon", &[1.0]).unwrap();
        }
        sink.into_store(meta(5)).unwrap()
    }

    #[test]
    fn widths_are_enforced() {
        let mut sink = MemorySink::default();
        sink.push("x", &[1.0, 2.0]).unwrap();
        assert!(sink.push("x", &[1.0]).is_err());
        let mut sink = MemorySink::default();
        sink.push("x", &[1.0]).unwrap();
        assert!(sink.into_store(meta(2)).is_err());
    }

    #[test]
    fn summaries_and_inclusion() {
        let s = sample_store();
        let b = s.summarize("b").unwrap();
        assert_eq!(b[0].mean, 2.0);
        assert!((b[0].lower - 0.1).abs() < 1e-12);
        assert!((b[0].upper - 3.9).abs() < 1e-12);
        assert_eq!(s.inclusion_probabilities().unwrap(), vec![1.0, 0.4]);
        let regs = s.regression_states().unwrap();
        assert_eq!(regs.len(), 5);
        assert_eq!(regs[3].delta, vec![true, true]);
        assert_eq!(regs[4].gamma[0], 0.4);
    }

    #[test]
    fn directory_round_trip_is_exact() {
        let s = sample_store();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = ChainStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("\"config_hash\": \"abc\""));
    }

    #[test]
    fn streaming_sink_matches_memory_sink() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = DirectorySink::create(dir.path()).unwrap();
        let mut mem = MemorySink::default();
        for t in 0..3 {
            let v = [t as f64, 0.5];
            sink.push("v", &v).unwrap();
            mem.push("v", &v).unwrap();
        }
        sink.finish(meta(3)).unwrap();
        assert_eq!(ChainStore::load(dir.path()).unwrap(), mem.into_store(meta(3)).unwrap());
    }

    #[test]
    fn interval_excluding_zero() {
        let mut v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let s = summarize_samples(&mut v);
        assert!(s.excludes_zero());
        let mut v: Vec<f64> = (-50..=50).map(|i| i as f64).collect();
        assert!(!summarize_samples(&mut v).excludes_zero());
    }
}

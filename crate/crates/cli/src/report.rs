//! Run artifacts: the per-sample CSV schema, image/spike dumps, the JSON
//! summary, and the reproducibility manifest. Nothing here writes a
//! timestamp; a seed-fixed rerun must produce byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spikeleak::codec::{ImageTensor, SpikeTensor};
use spikeleak::models::ModelInput;

use crate::CliError;

/// One CSV line per attacked sample; the fixed external schema.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub sample_id: usize,
    pub attack: String,
    pub model_kind: String,
    pub dataset: String,
    pub tau: f64,
    pub strategy: String,
    pub status: String,
    pub final_loss: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub l2: f64,
    pub judge_pred: usize,
    pub true_label: usize,
    pub iterations_run: usize,
    pub wall_ms: u64,
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::data(format!("csv serialize: {e}")))?;
    }
    let bytes =
        w.into_inner().map_err(|e| CliError::data(format!("csv flush: {e}")))?;
    write_file(path, &bytes)
}

/// Aggregates over completed rows, Table-style.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub attack: String,
    pub model_kind: String,
    pub dataset: String,
    pub samples: usize,
    pub completed: usize,
    pub diverged: usize,
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_l2: f64,
    pub asr: f64,
}

impl Summary {
    /// Diverged rows are counted but excluded from the aggregates.
    pub fn from_rows(rows: &[ResultRow]) -> Summary {
        let done: Vec<&ResultRow> = rows.iter().filter(|r| r.status == "completed").collect();
        let n = done.len().max(1) as f64;
        let mean = |f: fn(&ResultRow) -> f64| done.iter().map(|r| f(r)).sum::<f64>() / n;
        Summary {
            attack: rows.first().map(|r| r.attack.clone()).unwrap_or_default(),
            model_kind: rows.first().map(|r| r.model_kind.clone()).unwrap_or_default(),
            dataset: rows.first().map(|r| r.dataset.clone()).unwrap_or_default(),
            samples: rows.len(),
            completed: done.len(),
            diverged: rows.iter().filter(|r| r.status == "diverged").count(),
            mean_mse: mean(|r| r.mse),
            mean_psnr: mean(|r| r.psnr),
            mean_ssim: mean(|r| r.ssim),
            mean_l2: mean(|r| r.l2),
            asr: 100.0 * done.iter().filter(|r| r.judge_pred == r.true_label).count() as f64 / n,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::data(format!("json serialize: {e}")))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// P5 grayscale dump, maxval 255; values are clamped to [0,1] first.
pub fn write_pgm(path: &Path, img: &ImageTensor) -> Result<(), CliError> {
    if img.b != 1 || img.c != 1 {
        return Err(CliError::data(format!(
            "pgm wants a single grayscale image, got b={} c={}",
            img.b, img.c
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend(img.data.iter().map(quantize));
    write_file(path, &out)
}

/// P6 color dump from a [1,3,H,W] tensor (planar in, interleaved out).
pub fn write_ppm(path: &Path, img: &ImageTensor) -> Result<(), CliError> {
    if img.b != 1 || img.c != 3 {
        return Err(CliError::data(format!(
            "ppm wants a single rgb image, got b={} c={}",
            img.b, img.c
        )));
    }
    let plane = img.h * img.w;
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(&img.data[c * plane + i]));
        }
    }
    write_file(path, &out)
}

fn quantize(v: &f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Dump a model input next to its reconstruction: PGM for grayscale, PPM for
/// color, SPKT for spike trains. Returns the path written.
pub fn dump_input(dir: &Path, stem: &str, input: &ModelInput) -> Result<PathBuf, CliError> {
    match input {
        ModelInput::Image(img) if img.c == 1 => {
            let p = dir.join(format!("{stem}.pgm"));
            write_pgm(&p, img)?;
            Ok(p)
        }
        ModelInput::Image(img) if img.c == 3 => {
            let p = dir.join(format!("{stem}.ppm"));
            write_ppm(&p, img)?;
            Ok(p)
        }
        ModelInput::Image(img) => Err(CliError::data(format!(
            "no dump format for {}-channel images",
            img.c
        ))),
        ModelInput::Spikes(st) => {
            let p = dir.join(format!("{stem}.spkt"));
            write_spkt(&p, st)?;
            Ok(p)
        }
    }
}

pub fn write_spkt(path: &Path, st: &SpikeTensor) -> Result<PathBuf, CliError> {
    write_file(path, &spikeleak::data::write_spike_tensor(st))?;
    Ok(path.to_path_buf())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::data(format!("mkdir {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("write {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Reproducibility record: resolved config, seed, and content hashes of every
/// input and output file. Enough to detect any drift between reruns.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, seed: u64, config: &'a C) -> Self {
        Manifest { command, seed, config, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

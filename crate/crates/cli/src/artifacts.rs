//! Artifact I/O: deterministic CSV and JSON writers, flat binary caches,
//! standalone SVG plots, content hashing, the run manifest, the output
//! directory lock, and the on-disk objective cache.
//!
//! Floats are written with Rust's shortest round-trip formatting and the
//! `-inf` sentinel for blocked points, so identical runs produce byte
//! identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emschart::channel::ChannelMatrix;
use emschart::features::DissimilarityMatrix;
use emschart::optimizer::ObjectiveCache;
use sha2::{Digest, Sha256};

/// Shortest round-trip decimal for a float; `-inf` / `inf` sentinels.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a file and records it in the manifest builder.
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    /// Manifest JSON listing every artifact with its content hash.
    pub fn finish_manifest(self, config_hash: &str, timings_s: &[(String, f64)]) -> Result<PathBuf> {
        let artifacts: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|(name, hash)| serde_json::json!({ "path": name, "sha256": hash }))
            .collect();
        let timing_map: serde_json::Map<String, serde_json::Value> = timings_s
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        let manifest = serde_json::json!({
            "config_hash": config_hash,
            "artifacts": artifacts,
            "timings_s": timing_map,
        });
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Rejects concurrent runs on one output directory.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".emschart.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutDirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).context("acquiring output lock"),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Binary formats
// ---------------------------------------------------------------------------

/// Dissimilarity file: `u64` point count, then row-major `f64` entries,
/// all little-endian.
pub fn dissimilarity_to_bytes(d: &DissimilarityMatrix) -> Vec<u8> {
    let n = d.len();
    let mut out = Vec::with_capacity(8 + 8 * n * n);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in d.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn dissimilarity_from_bytes(bytes: &[u8]) -> Result<DissimilarityMatrix> {
    if bytes.len() < 8 {
        bail!("dissimilarity file too short");
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let want = 8 + 8 * n * n;
    if bytes.len() != want {
        bail!("dissimilarity file: expected {want} bytes for n = {n}, got {}", bytes.len());
    }
    let mut data = Vec::with_capacity(n * n);
    for chunk in bytes[8..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    DissimilarityMatrix::from_rows(n, data).map_err(|e| anyhow::anyhow!("{e}"))
}

const COV_MAGIC: &[u8; 8] = b"EMSCOV01";

/// Covariance cache: magic, point count, matrix dimension, then per point
/// the row-major `(re, im)` pairs, all little-endian.
pub fn covariances_to_bytes(covs: &[ChannelMatrix]) -> Vec<u8> {
    let n = covs.len();
    let dim = covs.first().map_or(0, |c| c.nrows());
    let mut out = Vec::with_capacity(16 + 8 + n * dim * dim * 16);
    out.extend_from_slice(COV_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for c in covs {
        for r in 0..dim {
            for col in 0..dim {
                out.extend_from_slice(&c[(r, col)].re.to_le_bytes());
                out.extend_from_slice(&c[(r, col)].im.to_le_bytes());
            }
        }
    }
    out
}

pub fn covariances_from_bytes(bytes: &[u8]) -> Result<Vec<ChannelMatrix>> {
    if bytes.len() < 24 || &bytes[..8] != COV_MAGIC {
        bail!("covariance cache: bad header");
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let want = 24 + n * dim * dim * 16;
    if bytes.len() != want {
        bail!("covariance cache: expected {want} bytes, got {}", bytes.len());
    }
    let mut covs = Vec::with_capacity(n);
    let mut off = 24;
    for _ in 0..n {
        let mut m = ChannelMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
                m[(r, c)] = num_complex_new(re, im);
                off += 16;
            }
        }
        covs.push(m);
    }
    Ok(covs)
}

fn num_complex_new(re: f64, im: f64) -> num_complex::Complex<f64> {
    num_complex::Complex::new(re, im)
}

use emschart::num_complex;

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 50.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        SVG_W / 2.0
    )
}

const SERIES_COLORS: [&str; 8] =
    ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Empirical-CDF plot: one nondecreasing step polyline per series from
/// probability 0 to 1.
pub fn cdf_svg(title: &str, x_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut all: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    all.sort_by(f64::total_cmp);
    let (x_min, x_max) = match (all.first(), all.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 1.0, a + 1.0),
        _ => (0.0, 1.0),
    };
    let to_px = |x: f64, p: f64| -> (f64, f64) {
        let px = MARGIN + (x - x_min) / (x_max - x_min) * (SVG_W - 2.0 * MARGIN);
        let py = SVG_H - MARGIN - p * (SVG_H - 2.0 * MARGIN);
        (px, py)
    };
    let mut svg = svg_header(title);
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lb}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
        t = MARGIN,
        cx = SVG_W / 2.0,
        lb = SVG_H - 12.0,
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 0.9, 1.0] {
        let (_, py) = to_px(x_min, frac);
        svg.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{py}\" x2=\"{r}\" y2=\"{py}\" stroke=\"#dddddd\"/>\
             <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{frac}</text>\n",
            m = MARGIN,
            r = SVG_W - MARGIN,
            tx = MARGIN - 4.0,
            ty = py + 3.0,
        ));
    }
    for (si, (label, values)) in series.iter().enumerate() {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            continue;
        }
        let n = sorted.len() as f64;
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let mut pts = Vec::new();
        let (x0, y0) = to_px(sorted[0], 0.0);
        pts.push(format!("{x0:.2},{y0:.2}"));
        for (i, &v) in sorted.iter().enumerate() {
            let p_prev = i as f64 / n;
            let p = (i + 1) as f64 / n;
            let (px, py_prev) = to_px(v, p_prev);
            let (_, py) = to_px(v, p);
            pts.push(format!("{px:.2},{py_prev:.2}"));
            pts.push(format!("{px:.2},{py:.2}"));
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            SVG_W - MARGIN - 180.0,
            MARGIN + 16.0 * (si as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Trajectory overlay: obstacles in gray, ground truth as a polyline,
/// estimates as circles colored by the dropout threshold.
pub fn trajectory_svg(
    title: &str,
    region: (f64, f64, f64, f64),
    obstacles: &[(f64, f64, f64, f64)],
    truth: &[[f64; 2]],
    estimates: &[[f64; 2]],
    exceeds: &[bool],
) -> String {
    let (x_min, y_min, x_max, y_max) = region;
    let sx = (SVG_W - 2.0 * MARGIN) / (x_max - x_min);
    let sy = (SVG_H - 2.0 * MARGIN) / (y_max - y_min);
    let s = sx.min(sy);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (MARGIN + (x - x_min) * s, SVG_H - MARGIN - (y - y_min) * s)
    };
    let mut svg = svg_header(title);
    for &(ox0, oy0, ox1, oy1) in obstacles {
        let (px0, py1) = to_px(ox0, oy0);
        let (px1, py0) = to_px(ox1, oy1);
        svg.push_str(&format!(
            "<rect x=\"{px0:.2}\" y=\"{py0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#cccccc\"/>\n",
            px1 - px0,
            py1 - py0
        ));
    }
    let pts: Vec<String> = truth
        .iter()
        .map(|p| {
            let (px, py) = to_px(p[0], p[1]);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.join(" ")
    ));
    for (i, e) in estimates.iter().enumerate() {
        let (px, py) = to_px(e[0], e[1]);
        let color = if exceeds[i] { "#d62728" } else { "#2ca02c" };
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"none\" stroke=\"{color}\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// On-disk objective cache
// ---------------------------------------------------------------------------

/// File-backed objective cache; one JSON file per key, written atomically
/// via a temp file and rename.
pub struct FsObjectiveCache {
    dir: PathBuf,
}

impl FsObjectiveCache {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(FsObjectiveCache { dir: dir.to_path_buf() })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sha256_hex(key.as_bytes())))
    }
}

impl ObjectiveCache for FsObjectiveCache {
    fn get(&self, key: &str) -> Option<f64> {
        let text = fs::read_to_string(self.path_for(key)).ok()?;
        let v: serde_json::Value = serde_json::from_str(&text).ok()?;
        if v.get("key")?.as_str()? != key {
            return None;
        }
        v.get("objective")?.as_f64()
    }

    fn put(&self, key: &str, value: f64) {
        let body = serde_json::json!({ "key": key, "objective": value }).to_string();
        let path = self.path_for(key);
        let tmp = path.with_extension("tmp");
        if fs::write(&tmp, body).is_ok() {
            let _ = fs::rename(&tmp, &path);
        }
    }
}

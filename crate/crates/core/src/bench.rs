//! Latency measurement: warmup, repeated timed forwards, order statistics.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::blocks::Mode;
use crate::error::{Error, Result};
use crate::init::random_tensor;
use crate::threads::current_threads;
use crate::zoo::Model;

pub const DEFAULT_SIZES: [usize; 6] = [224, 256, 384, 512, 768, 1024];
pub const CSV_HEADER: &str = "model,mode,size,batch,iters,median_ms,p10_ms,p90_ms,threads";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    pub warmup: usize,
    pub iters: usize,
    pub batch: usize,
    /// Seed of the input tensor reused by every iteration.
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 20,
            iters: 100,
            batch: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub model: String,
    pub mode: Mode,
    pub input: [usize; 4],
    pub warmup: usize,
    pub iters: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub threads: usize,
    pub host: String,
}

impl BenchResult {
    pub fn size(&self) -> usize {
        self.input[2]
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4},{:.4},{}",
            self.model,
            mode_str(self.mode),
            self.size(),
            self.input[0],
            self.iters,
            self.median_ms,
            self.p10_ms,
            self.p90_ms,
            self.threads
        )
    }
}

pub fn mode_str(mode: Mode) -> &'static str {
    match mode {
        Mode::Train => "train",
        Mode::Inference => "inference",
    }
}

/// `os/arch, N cpus` of the machine running the benchmark.
pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}/{}, {cpus} cpus", std::env::consts::OS, std::env::consts::ARCH)
}

/// Linearly interpolated quantile of an unsorted sample, `q` in [0, 1].
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Bench("empty sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(samples: &[f64]) -> Result<f64> {
    quantile(samples, 0.5)
}

/// Times `iters` forwards of one fixed random input after `warmup` untimed ones.
pub fn measure(model: &Model, input_hw: (usize, usize), opts: &BenchOptions) -> Result<BenchResult> {
    if opts.iters == 0 {
        return Err(Error::Bench("empty sample".into()));
    }
    let dims = [opts.batch, model.config.in_channels, input_hw.0, input_hw.1];
    model.check_input(dims)?;
    let x = random_tensor(dims, opts.seed);
    for _ in 0..opts.warmup {
        std::hint::black_box(model.forward(&x)?);
    }
    let mut samples_ms = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        let t = Instant::now();
        let y = model.forward(&x)?;
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(y);
    }
    Ok(BenchResult {
        model: model.config.name.clone(),
        mode: model.mode,
        input: dims,
        warmup: opts.warmup,
        iters: opts.iters,
        median_ms: median(&samples_ms)?,
        p10_ms: quantile(&samples_ms, 0.1)?,
        p90_ms: quantile(&samples_ms, 0.9)?,
        samples_ms,
        threads: current_threads(),
        host: host_descriptor(),
    })
}

/// One (model, size) cell of a sweep; failures are kept, not fatal.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub model: String,
    pub mode: Mode,
    pub size: usize,
    pub result: std::result::Result<BenchResult, String>,
}

/// Measures every model at every square size.
pub fn resolution_sweep(models: &[&Model], sizes: &[usize], opts: &BenchOptions) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(models.len() * sizes.len());
    for m in models {
        for &size in sizes {
            cells.push(SweepCell {
                model: m.config.name.clone(),
                mode: m.mode,
                size,
                result: measure(m, (size, size), opts).map_err(|e| e.to_string()),
            });
        }
    }
    cells
}

/// Per-size median ratio `numerator / denominator` between two swept models.
pub fn relative_latency(cells: &[SweepCell], numerator: &str, denominator: &str) -> Vec<(usize, f64)> {
    let find = |model: &str, size: usize| {
        cells
            .iter()
            .find(|c| c.model == model && c.size == size)
            .and_then(|c| c.result.as_ref().ok())
            .map(|r| r.median_ms)
    };
    let mut sizes: Vec<usize> = Vec::new();
    for c in cells {
        if !sizes.contains(&c.size) {
            sizes.push(c.size);
        }
    }
    sizes
        .into_iter()
        .filter_map(|s| Some((s, find(numerator, s)? / find(denominator, s)?)))
        .collect()
}

/// True if medians never drop by more than `slack` (relative) as the input
/// area grows, for every (model, mode) in the sweep.
pub fn is_monotone_in_area(cells: &[SweepCell], slack: f64) -> bool {
    let mut keys: Vec<(&str, Mode)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.model.as_str(), c.mode)) {
            keys.push((c.model.as_str(), c.mode));
        }
    }
    keys.into_iter().all(|(m, mode)| {
        let mut pts: Vec<(usize, f64)> = cells
            .iter()
            .filter(|c| c.model == m && c.mode == mode)
            .filter_map(|c| Some((c.size, c.result.as_ref().ok()?.median_ms)))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - slack))
    })
}

/// Text table keyed by (model, size), with a ratio column when `ratio` names
/// a (numerator, denominator) pair of models.
pub fn sweep_table(cells: &[SweepCell], ratio: Option<(&str, &str)>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>6} {:>12} {:>12} {:>12}", "model", "size", "median_ms", "p10_ms", "p90_ms");
    for c in cells {
        match &c.result {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{:<28} {:>6} {:>12.3} {:>12.3} {:>12.3}",
                    c.model, c.size, r.median_ms, r.p10_ms, r.p90_ms
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{:<28} {:>6} error: {e}", c.model, c.size);
            }
        }
    }
    if let Some((num, den)) = ratio {
        let _ = writeln!(s, "\n{:>6} {:>12}", "size", format!("{num}/{den}"));
        for (size, r) in relative_latency(cells, num, den) {
            let _ = writeln!(s, "{size:>6} {r:>12.3}");
        }
    }
    s
}

/// Writes through a temp file in the same directory, then renames.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Writes the summary CSV at `path` and the raw samples next to it
/// (`<path>.samples.csv`, one row per timed iteration).
pub fn write_csv(path: &Path, results: &[BenchResult]) -> Result<()> {
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut raw = String::from("model,mode,size,batch,iter,ms\n");
    for r in results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        for (i, ms) in r.samples_ms.iter().enumerate() {
            let _ = writeln!(raw, "{},{},{},{},{i},{ms:.6}", r.model, mode_str(r.mode), r.size(), r.input[0]);
        }
    }
    write_atomic(path, csv.as_bytes())?;
    write_atomic(&samples_path(path), raw.as_bytes())
}

pub fn samples_path(csv: &Path) -> std::path::PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".samples.csv");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_three() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn even_median_is_mean_of_middles() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn empty_sample() {
        assert_eq!(median(&[]).unwrap_err().to_string(), "empty sample");
    }

    #[test]
    fn quantile_endpoints() {
        let s = [5.0, 1.0, 9.0];
        assert_eq!(quantile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&s, 1.0).unwrap(), 9.0);
    }
}

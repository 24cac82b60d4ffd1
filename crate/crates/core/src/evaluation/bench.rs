use std::fmt::Write;
use std::time::Instant;

use crate::auxiliary::PyramidSpec;
use crate::error::{Error, Result};
use crate::model::{AuxModelPair, Factor, PyramidModel};
use crate::sampling::{image_seed, sample_pair, sample_pyramid, sample_rgb, SampleConfig};
use crate::tensor::Element;

/// Model whose full-image sampling time is measured.
pub enum BenchTarget<'a, T: Element> {
    Flat(&'a Factor<T>),
    Pair(&'a AuxModelPair<T>),
    Pyramid(&'a PyramidModel<T>),
}

impl<T: Element> BenchTarget<'_, T> {
    fn tag(&self) -> &'static str {
        match self {
            BenchTarget::Flat(_) => "flat",
            BenchTarget::Pair(_) => "grayscale-aux",
            BenchTarget::Pyramid(_) => "pyramid",
        }
    }

    fn sample_once(&self, height: usize, width: usize, cfg: &SampleConfig) -> Result<()> {
        match self {
            BenchTarget::Flat(f) => sample_rgb(f, height, width, cfg).map(drop),
            BenchTarget::Pair(p) => sample_pair(p, height, width, cfg).map(drop),
            BenchTarget::Pyramid(m) => {
                let spec = PyramidSpec::new(m.spec.levels(), height, width)?;
                if spec != m.spec {
                    return Err(Error::InvalidArgument(format!(
                        "pyramid is built for {:?}, bench asked for {height}x{width}",
                        m.spec.resolution(0)
                    )));
                }
                sample_pyramid(m, cfg).map(drop)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub runs: usize,
    pub threads: usize,
    pub median_s_per_pixel: f64,
    pub p10_s_per_pixel: f64,
    pub p90_s_per_pixel: f64,
    pub run_seconds: Vec<f64>,
}

pub const BENCH_CSV_HEADER: &str = "model,height,width,runs,threads,median_s_per_pixel,p10_s_per_pixel,p90_s_per_pixel";

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BenchReport {
    pub fn from_runs(model: &str, height: usize, width: usize, run_seconds: Vec<f64>) -> Result<Self> {
        if run_seconds.len() < 3 {
            return Err(Error::Config(format!(
                "bench needs at least 3 runs, got {}",
                run_seconds.len()
            )));
        }
        let pixels = (height * width) as f64;
        let mut per_pixel: Vec<f64> = run_seconds.iter().map(|s| s / pixels).collect();
        per_pixel.sort_by(f64::total_cmp);
        Ok(Self {
            model: model.into(),
            height,
            width,
            runs: run_seconds.len(),
            threads: 1,
            median_s_per_pixel: quantile(&per_pixel, 0.5),
            p10_s_per_pixel: quantile(&per_pixel, 0.1),
            p90_s_per_pixel: quantile(&per_pixel, 0.9),
            run_seconds,
        })
    }

    pub fn median_total_seconds(&self) -> f64 {
        self.median_s_per_pixel * (self.height * self.width) as f64
    }

    pub fn to_key_value(&self) -> String {
        let mut s = format!(
            "model={}\nheight={}\nwidth={}\nruns={}\nthreads={}\nmedian_s_per_pixel={:e}\np10_s_per_pixel={:e}\np90_s_per_pixel={:e}\n",
            self.model,
            self.height,
            self.width,
            self.runs,
            self.threads,
            self.median_s_per_pixel,
            self.p10_s_per_pixel,
            self.p90_s_per_pixel
        );
        for (i, r) in self.run_seconds.iter().enumerate() {
            let _ = writeln!(s, "run{i}_seconds={r:e}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{BENCH_CSV_HEADER}\n{},{},{},{},{},{:e},{:e},{:e}\n",
            self.model,
            self.height,
            self.width,
            self.runs,
            self.threads,
            self.median_s_per_pixel,
            self.p10_s_per_pixel,
            self.p90_s_per_pixel
        )
    }
}

/// Times `runs` full-image samples on the calling thread after one untimed
/// warm-up sample. Per-pixel time is wall time over the output `H * W`.
pub fn bench_sampling<T: Element>(
    target: &BenchTarget<'_, T>,
    height: usize,
    width: usize,
    runs: usize,
    cfg: &SampleConfig,
) -> Result<BenchReport> {
    if runs < 3 {
        return Err(Error::Config(format!("bench needs at least 3 runs, got {runs}")));
    }
    target.sample_once(height, width, cfg)?;
    let mut seconds = Vec::with_capacity(runs);
    for r in 0..runs {
        let c = cfg.with_seed(image_seed(cfg.seed, r as u64));
        let start = Instant::now();
        target.sample_once(height, width, &c)?;
        seconds.push(start.elapsed().as_secs_f64());
    }
    BenchReport::from_runs(target.tag(), height, width, seconds)
}

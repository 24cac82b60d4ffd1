//! End-to-end runs (train, sample, evaluate) over a [`RunConfig`], shared by
//! the command-line tool and the acceptance tests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::auxiliary::{GrayImage4, ImageU8};
use crate::error::{Error, Result};
use crate::evaluation::{bound_report, flat_report, pyramid_report, BpdReport, PerImageNll};
use crate::io::{png, write_file, write_repro, ModelKind, RunConfig};
use crate::model::{AuxModelPair, Factor, FactorKind, PyramidModel};
use crate::sampling::{colorize, image_seed, sample_pair, sample_pyramid, sample_rgb, superres, SampleConfig};
use crate::training::{train_pair, train_pyramid, Checkpoint, EpochHook, EpochRecord, TrainOptions, TrainReport};

/// A model of any supported kind, in `f32`.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Pair(AuxModelPair<f32>),
    Pyramid(PyramidModel<f32>),
    Flat(Factor<f32>),
}

/// Name of a factor in file names, and the record prefixes of its two nets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorNames {
    pub tag: String,
    pub net_prefix: String,
    pub embed_prefix: String,
}

impl FactorNames {
    fn new(tag: &str, net: &str, embed: &str) -> Self {
        Self {
            tag: tag.into(),
            net_prefix: net.into(),
            embed_prefix: embed.into(),
        }
    }
}

impl Model {
    /// Randomly initialized model; the initialization draws from `cfg.train.seed`.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        Ok(match cfg.model {
            ModelKind::GrayscaleAux => Model::Pair(AuxModelPair::new(&cfg.arch, &mut rng)?),
            ModelKind::Pyramid => Model::Pyramid(PyramidModel::new(cfg.pyramid_spec()?, &cfg.arch, &mut rng)?),
            ModelKind::Flat => Model::Flat(Factor::new(FactorKind::Rgb, &cfg.arch, &mut rng)?),
        })
    }

    pub fn uninitialized(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.model {
            ModelKind::GrayscaleAux => Model::Pair(AuxModelPair {
                aux: Factor::uninitialized(FactorKind::GrayAux, &cfg.arch)?,
                cond: Factor::uninitialized(FactorKind::ColorFromGray, &cfg.arch)?,
            }),
            ModelKind::Pyramid => {
                let spec = cfg.pyramid_spec()?;
                Model::Pyramid(PyramidModel {
                    spec,
                    levels: (0..spec.levels())
                        .map(|l| Factor::uninitialized(PyramidModel::<f32>::level_kind(spec, l), &cfg.arch))
                        .collect::<Result<_>>()?,
                })
            }
            ModelKind::Flat => Model::Flat(Factor::uninitialized(FactorKind::Rgb, &cfg.arch)?),
        })
    }

    pub fn factor_names(&self) -> Vec<FactorNames> {
        match self {
            Model::Pair(_) => vec![
                FactorNames::new("aux", "aux_model.", "aux_embed."),
                FactorNames::new("cond", "cond_model.", "embed_net."),
            ],
            Model::Pyramid(m) => (0..m.levels.len())
                .map(|l| {
                    FactorNames::new(
                        &format!("level{l}"),
                        &format!("level{l}.net."),
                        &format!("level{l}.embed."),
                    )
                })
                .collect(),
            Model::Flat(_) => vec![FactorNames::new("model", "model.", "embed.")],
        }
    }

    pub fn factors(&self) -> Vec<&Factor<f32>> {
        match self {
            Model::Pair(p) => vec![&p.aux, &p.cond],
            Model::Pyramid(m) => m.levels.iter().collect(),
            Model::Flat(f) => vec![f],
        }
    }

    fn factors_mut(&mut self) -> Vec<&mut Factor<f32>> {
        match self {
            Model::Pair(p) => vec![&mut p.aux, &mut p.cond],
            Model::Pyramid(m) => m.levels.iter_mut().collect(),
            Model::Flat(f) => vec![f],
        }
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        let mut c = Checkpoint::new(cfg.to_text());
        for (names, f) in self.factor_names().iter().zip(self.factors()) {
            c.push_factor(&names.net_prefix, &names.embed_prefix, f);
        }
        c
    }

    /// Rebuilds the architecture from the checkpoint's config echo and loads it.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, Self)> {
        let cfg = RunConfig::from_text(&ckpt.config)?;
        let mut model = Self::uninitialized(&cfg)?;
        let names = model.factor_names();
        for (n, f) in names.iter().zip(model.factors_mut()) {
            ckpt.load_factor(&n.net_prefix, &n.embed_prefix, f)?;
        }
        Ok((cfg, model))
    }

    pub fn load(path: &Path) -> Result<(RunConfig, Self)> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    pub fn evaluate(&self, images: &[ImageU8], split: &str, batch_size: usize) -> Result<(BpdReport, PerImageNll)> {
        match self {
            Model::Pair(p) => bound_report(p, images, split, batch_size),
            Model::Pyramid(m) => pyramid_report(m, images, split, batch_size),
            Model::Flat(f) => flat_report(f, images, split, batch_size),
        }
    }
}

/// One generated sample and its intermediate views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutput {
    pub image: ImageU8,
    /// Grayscale view (pair models).
    pub gray: Option<GrayImage4>,
    /// All levels, finest first (pyramid models).
    pub levels: Vec<ImageU8>,
}

/// Draws `count` samples; sample `i` uses seed `image_seed(cfg.seed, i)`.
pub fn sample_images(model: &Model, run: &RunConfig, cfg: &SampleConfig, count: usize) -> Result<Vec<SampleOutput>> {
    (0..count)
        .map(|i| {
            let c = cfg.with_seed(image_seed(cfg.seed, i as u64));
            Ok(match model {
                Model::Pair(p) => {
                    let (gray, image) = sample_pair(p, run.height, run.width, &c)?;
                    SampleOutput {
                        image,
                        gray: Some(gray),
                        levels: Vec::new(),
                    }
                }
                Model::Pyramid(m) => {
                    let levels = sample_pyramid(m, &c)?;
                    SampleOutput {
                        image: levels[0].clone(),
                        gray: None,
                        levels,
                    }
                }
                Model::Flat(f) => SampleOutput {
                    image: sample_rgb(f, run.height, run.width, &c)?,
                    gray: None,
                    levels: Vec::new(),
                },
            })
        })
        .collect()
}

/// Colorizations of `gray`, one per seed `image_seed(cfg.seed, i)`.
pub fn colorize_images(model: &Model, gray: &GrayImage4, cfg: &SampleConfig, count: usize) -> Result<Vec<ImageU8>> {
    let Model::Pair(p) = model else {
        return Err(Error::Config("colorize needs a grayscale-aux checkpoint".into()));
    };
    (0..count)
        .map(|i| colorize(&p.cond, gray, &cfg.with_seed(image_seed(cfg.seed, i as u64))))
        .collect()
}

/// Upsampled versions of `lowres`, which must match one pyramid level's resolution.
pub fn superres_images(model: &Model, lowres: &ImageU8, cfg: &SampleConfig, count: usize) -> Result<Vec<Vec<ImageU8>>> {
    let Model::Pyramid(m) = model else {
        return Err(Error::Config("superres needs a pyramid checkpoint".into()));
    };
    let level = (0..m.spec.levels())
        .find(|&l| m.spec.resolution(l) == (lowres.height(), lowres.width()))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "input is {}x{}, pyramid levels are {:?}",
                lowres.height(),
                lowres.width(),
                m.spec.resolutions()
            ))
        })?;
    (0..count)
        .map(|i| superres(m, lowres, level, &cfg.with_seed(image_seed(cfg.seed, i as u64))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub reports: Vec<(String, TrainReport)>,
    pub checkpoint: PathBuf,
}

fn epoch_hook<'a>(out: &'a Path, names: FactorNames, config: Arc<String>) -> EpochHook<'a, f32> {
    Box::new(move |rec: &EpochRecord, f: &Factor<f32>| {
        let mut c = Checkpoint::new(config.as_str());
        c.push_factor(&names.net_prefix, &names.embed_prefix, f);
        c.write(&out.join(format!("{}_latest.ckpt", names.tag)))?;
        if rec.is_best {
            c.write(&out.join(format!("{}_best.ckpt", names.tag)))?;
        }
        Ok(())
    })
}

/// Trains every factor of the configured model on `images` and writes into
/// `out`: per-factor latest/best checkpoints each epoch, a loss CSV per
/// factor, the final `model.ckpt` and `repro.txt`.
pub fn train_run(
    cfg: &RunConfig,
    images: &[ImageU8],
    validation: &[ImageU8],
    out: &Path,
    parallel: bool,
) -> Result<TrainRun> {
    cfg.validate()?;
    if let Some(img) = images
        .iter()
        .find(|i| (i.height(), i.width()) != (cfg.height, cfg.width))
    {
        return Err(Error::Config(format!(
            "dataset images are {}x{}, config expects {}x{}",
            img.height(),
            img.width(),
            cfg.height,
            cfg.width
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_repro(out, cfg.train.seed, cfg)?;
    let mut model = Model::new(cfg)?;
    let names = model.factor_names();
    let text = Arc::new(cfg.to_text());
    let opts = |n: &FactorNames, validation: Vec<ImageU8>| TrainOptions {
        validation,
        on_epoch: Some(epoch_hook(out, n.clone(), text.clone())),
        ..TrainOptions::default()
    };
    let reports = match &mut model {
        Model::Pair(p) => {
            let (a, c) = train_pair(
                p,
                images,
                &cfg.train,
                parallel,
                opts(&names[0], validation.to_vec()),
                opts(&names[1], validation.to_vec()),
            )?;
            vec![a, c]
        }
        Model::Pyramid(m) => {
            let pyramids = validation
                .iter()
                .map(|v| crate::auxiliary::build_pyramid(v, cfg.levels))
                .collect::<Result<Vec<_>>>()?;
            let o = names
                .iter()
                .enumerate()
                .map(|(l, n)| opts(n, pyramids.iter().map(|p| p[l].clone()).collect()))
                .collect();
            train_pyramid(m, images, &cfg.train, parallel, o)?
        }
        Model::Flat(f) => {
            let train_cfg = crate::training::TrainConfig {
                seed: crate::training::factor_seed(cfg.train.seed, 0),
                ..cfg.train.clone()
            };
            vec![crate::training::train_factor(
                f,
                images,
                &train_cfg,
                opts(&names[0], validation.to_vec()),
            )?]
        }
    };
    let reports: Vec<_> = names.iter().map(|n| n.tag.clone()).zip(reports).collect();
    for (tag, r) in &reports {
        write_file(&out.join(format!("{tag}_loss.csv")), r.loss_csv())?;
    }
    let checkpoint = out.join("model.ckpt");
    model.to_checkpoint(cfg).write(&checkpoint)?;
    Ok(TrainRun {
        model,
        reports,
        checkpoint,
    })
}

/// Writes `samples.png` (a `rows x cols` grid), plus `aux.png` for pair
/// models and `levels.png` (per-sample level panels) for pyramids.
pub fn write_sample_grids(samples: &[SampleOutput], rows: usize, cols: usize, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let p = out.join("samples.png");
    png::write_rgb(&p, &png::grid(&images, rows, cols)?)?;
    written.push(p);
    let grays: Vec<_> = samples
        .iter()
        .filter_map(|s| s.gray.as_ref())
        .map(|g| {
            let v = g.to_gray8();
            ImageU8::new(g.height(), g.width(), v.iter().flat_map(|&x| [x, x, x]).collect())
        })
        .collect::<Result<_>>()?;
    if !grays.is_empty() {
        let p = out.join("aux.png");
        png::write_rgb(&p, &png::grid(&grays, rows, cols)?)?;
        written.push(p);
    }
    if samples.iter().all(|s| !s.levels.is_empty()) && !samples.is_empty() {
        let panels = samples
            .iter()
            .map(|s| png::level_panel(&s.levels))
            .collect::<Result<Vec<_>>>()?;
        let p = out.join("levels.png");
        png::write_rgb(&p, &png::grid(&panels, rows, cols)?)?;
        written.push(p);
    }
    Ok(written)
}

/// Settings of the flat-versus-pyramid sampling benchmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchSetup {
    pub size: usize,
    pub flat_blocks: usize,
    pub pyramid_blocks: usize,
    pub levels: usize,
    pub filters: usize,
    pub components: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchSetup {
    fn default() -> Self {
        Self {
            size: 32,
            flat_blocks: 24,
            pyramid_blocks: 3,
            levels: 3,
            filters: 16,
            components: 10,
            runs: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchComparison {
    pub flat: crate::evaluation::BenchReport,
    pub pyramid: crate::evaluation::BenchReport,
}

impl BenchComparison {
    /// Flat per-pixel time over pyramid per-pixel time (medians).
    pub fn speed_ratio(&self) -> f64 {
        self.flat.median_s_per_pixel / self.pyramid.median_s_per_pixel
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "{}\n{}\nspeed_ratio={}\n",
            self.flat.to_key_value(),
            self.pyramid.to_key_value(),
            self.speed_ratio()
        )
    }

    pub fn to_csv(&self) -> String {
        let p = self.pyramid.to_csv();
        format!(
            "{}{}",
            self.flat.to_csv(),
            p.lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default()
        )
    }
}

/// Times cached ancestral sampling of a randomly initialized flat model and
/// pyramid of equal width. Sampling cost does not depend on the weights.
pub fn bench_flat_vs_pyramid(setup: &BenchSetup) -> Result<BenchComparison> {
    use crate::evaluation::{bench_sampling, BenchTarget};
    let arch = |blocks| crate::model::ArchConfig {
        blocks,
        filters: setup.filters,
        components: setup.components,
        embed_filters: setup.filters,
        embed_blocks: 1,
        embed_up: vec![1],
        ..crate::model::ArchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let flat = Factor::<f32>::new(FactorKind::Rgb, &arch(setup.flat_blocks), &mut rng)?;
    let spec = crate::auxiliary::PyramidSpec::new(setup.levels, setup.size, setup.size)?;
    let pyramid = PyramidModel::<f32>::new(spec, &arch(setup.pyramid_blocks), &mut rng)?;
    let sc = SampleConfig::new(crate::sampling::SampleMode::Ancestral, setup.seed);
    Ok(BenchComparison {
        flat: bench_sampling(&BenchTarget::Flat(&flat), setup.size, setup.size, setup.runs, &sc)?,
        pyramid: bench_sampling(&BenchTarget::Pyramid(&pyramid), setup.size, setup.size, setup.runs, &sc)?,
    })
}

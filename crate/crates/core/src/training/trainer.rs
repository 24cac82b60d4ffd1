use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::auxiliary::{build_pyramid, ImageU8};
use crate::error::{Error, Result};
use crate::model::{AuxModelPair, Factor, FactorBatch, PyramidModel};
use crate::nn::{DropoutCtx, ParamSet};
use crate::tensor::{Element, Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    /// Multiplier applied to the learning rate after every step.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, training stops after this many steps and `epochs` is ignored.
    pub max_steps: Option<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            lr_decay: 0.99999,
            batch_size: 64,
            epochs: 1,
            max_steps: None,
            dropout_rate: 0.5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!(
                "lr_init must be finite and >= 0, got {}",
                self.lr_init
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean NLL per image of the batch, in nats.
    pub nll_nats: f64,
    pub bpd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the epoch's batch losses, nats per image.
    pub train_nll: f64,
    /// Mean validation NLL per image, in nats.
    pub val_nll: Option<f64>,
    /// Whether this epoch has the lowest validation NLL so far.
    pub is_best: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn initial_nll(&self) -> Option<f64> {
        self.steps.first().map(|s| s.nll_nats)
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.steps.last().map(|s| s.nll_nats)
    }

    /// `step,nll_nats,bpd` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,nll_nats,bpd\n");
        for r in &self.steps {
            s.push_str(&format!("{},{:.17e},{:.17e}\n", r.step, r.nll_nats, r.bpd));
        }
        s
    }
}

/// Called at the end of every epoch with the current parameters.
pub type EpochHook<'a, T> = Box<dyn FnMut(&EpochRecord, &Factor<T>) -> Result<()> + Send + 'a>;

pub struct TrainOptions<'a, T: Element> {
    /// Keep the embedding net fixed (its parameters get no updates).
    pub freeze_embedding: bool,
    /// Held-out images at the factor's resolution.
    pub validation: Vec<ImageU8>,
    pub on_epoch: Option<EpochHook<'a, T>>,
}

impl<T: Element> Default for TrainOptions<'_, T> {
    fn default() -> Self {
        Self {
            freeze_embedding: false,
            validation: Vec::new(),
            on_epoch: None,
        }
    }
}

/// Seed of factor `index` derived from a run seed.
pub fn factor_seed(seed: u64, index: u64) -> u64 {
    crate::sampling::image_seed(seed ^ 0x7261_696e, index)
}

fn grads_for<T: Element>(grads: &Gradients<T>, vars: &[Var], params: &ParamSet<T>) -> Vec<Tensor<T>> {
    vars.iter()
        .zip(params.tensors())
        .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

struct Optimizer {
    net: AdamState,
    embed: Option<AdamState>,
    lr: f64,
}

fn train_step<T: Element>(
    factor: &mut Factor<T>,
    batch: &FactorBatch<T>,
    cfg: &TrainConfig,
    freeze_embedding: bool,
    opt: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let net_vars = factor.net.params().bind(&mut tape, true);
    let train_embed = !freeze_embedding;
    let embed_vars = factor.embed.as_ref().map(|e| e.params().bind(&mut tape, train_embed));
    let mut ctx = DropoutCtx {
        rate: cfg.dropout_rate,
        rng,
    };
    let dropout = (cfg.dropout_rate > 0.0).then_some(&mut ctx);
    let nll = factor.nll_on_tape(&mut tape, &net_vars, embed_vars.as_deref(), batch, dropout)?;
    let total = tape.value(nll).item().as_f64();
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let dims = (batch.n_images * batch.color_dims()) as f64;
    let objective = tape.scale(nll, T::from_f64(1.0 / dims))?;
    let grads = tape.backward(objective)?;
    let g = grads_for(&grads, &net_vars, factor.net.params());
    adam_step(
        factor.net.params_mut().tensors_mut(),
        &g,
        &mut opt.net,
        opt.lr,
        &cfg.adam,
    )?;
    if let (Some(e), Some(vars), Some(state), true) =
        (factor.embed.as_mut(), &embed_vars, opt.embed.as_mut(), train_embed)
    {
        let g = grads_for(&grads, vars, e.params());
        adam_step(e.params_mut().tensors_mut(), &g, state, opt.lr, &cfg.adam)?;
    }
    opt.lr *= cfg.lr_decay;
    Ok(total)
}

fn mean_nll<T: Element>(factor: &Factor<T>, images: &[ImageU8], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in images.chunks(batch_size) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = FactorBatch::from_images(factor.kind, &refs)?;
        sum += factor.nll_per_image(&batch)?.iter().sum::<f64>();
    }
    Ok(sum / images.len() as f64)
}

/// Trains one factor on images at its own resolution. The auxiliary view of
/// each image is derived on the fly from the factor kind.
pub fn train_factor<T: Element>(
    factor: &mut Factor<T>,
    images: &[ImageU8],
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_, T>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer {
        net: AdamState::zeros(factor.net.params().tensors()),
        embed: factor.embed.as_ref().map(|e| AdamState::zeros(e.params().tensors())),
        lr: cfg.lr_init,
    };
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    let epochs = if cfg.max_steps.is_some() {
        usize::MAX
    } else {
        cfg.epochs
    };
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    let mut step = 0;
    let mut epoch = 0;
    while epoch < epochs && step < limit {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= limit {
                break;
            }
            let refs: Vec<_> = chunk.iter().map(|&i| &images[i]).collect();
            let batch = FactorBatch::from_images(factor.kind, &refs)?;
            let total = train_step(factor, &batch, cfg, opts.freeze_embedding, &mut opt, &mut rng)?;
            let n = batch.n_images as f64;
            let rec = StepRecord {
                step,
                epoch,
                nll_nats: total / n,
                bpd: total / (n * batch.color_dims() as f64 * std::f64::consts::LN_2),
            };
            sum += rec.nll_nats;
            count += 1;
            report.steps.push(rec);
            step += 1;
        }
        let val_nll = if opts.validation.is_empty() {
            None
        } else {
            Some(mean_nll(factor, &opts.validation, cfg.batch_size)?)
        };
        let is_best = val_nll.is_some_and(|v| v < best);
        if is_best {
            best = val_nll.unwrap_or(best);
        }
        let rec = EpochRecord {
            epoch,
            steps: count,
            train_nll: sum / count.max(1) as f64,
            val_nll,
            is_best,
        };
        report.epochs.push(rec);
        if let Some(hook) = opts.on_epoch.as_mut() {
            hook(&rec, factor)?;
        }
        epoch += 1;
    }
    Ok(report)
}

/// Trains the grayscale model `p(ψ(X))`.
pub fn train_aux<T: Element>(
    pair: &mut AuxModelPair<T>,
    images: &[ImageU8],
    cfg: &TrainConfig,
    opts: TrainOptions<'_, T>,
) -> Result<TrainReport> {
    train_factor(&mut pair.aux, images, cfg, opts)
}

/// Trains the colorization model `p(X | ψ(X))` and its embedding net.
pub fn train_cond<T: Element>(
    pair: &mut AuxModelPair<T>,
    images: &[ImageU8],
    cfg: &TrainConfig,
    opts: TrainOptions<'_, T>,
) -> Result<TrainReport> {
    train_factor(&mut pair.cond, images, cfg, opts)
}

type Job<'a, T> = (&'a mut Factor<T>, Vec<ImageU8>, TrainConfig, TrainOptions<'a, T>);

fn run_jobs<'a, T: Element>(jobs: Vec<Job<'a, T>>, parallel: bool) -> Result<Vec<TrainReport>> {
    if !parallel {
        return jobs
            .into_iter()
            .map(|(f, imgs, cfg, opts)| train_factor(f, &imgs, &cfg, opts))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(f, imgs, cfg, opts)| s.spawn(move || train_factor(f, &imgs, &cfg, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

/// Trains both factors of a pair, each with its own derived seed, either one
/// after the other or on two threads. Returns `(aux, cond)` reports.
pub fn train_pair<'a, T: Element>(
    pair: &'a mut AuxModelPair<T>,
    images: &[ImageU8],
    cfg: &TrainConfig,
    parallel: bool,
    aux_opts: TrainOptions<'a, T>,
    cond_opts: TrainOptions<'a, T>,
) -> Result<(TrainReport, TrainReport)> {
    let with_seed = |i| TrainConfig {
        seed: factor_seed(cfg.seed, i),
        ..cfg.clone()
    };
    let AuxModelPair { aux, cond } = pair;
    let jobs = vec![
        (aux, images.to_vec(), with_seed(1), aux_opts),
        (cond, images.to_vec(), with_seed(0), cond_opts),
    ];
    let mut reports = run_jobs(jobs, parallel)?;
    let cond = reports.pop().expect("two reports");
    let aux = reports.pop().expect("two reports");
    Ok((aux, cond))
}

/// Trains every pyramid level on its own view of `images` (given at the
/// finest resolution). `opts` holds one entry per level, or is empty.
pub fn train_pyramid<'a, T: Element>(
    model: &'a mut PyramidModel<T>,
    images: &[ImageU8],
    cfg: &TrainConfig,
    parallel: bool,
    mut opts: Vec<TrainOptions<'a, T>>,
) -> Result<Vec<TrainReport>> {
    let levels = model.spec.levels();
    if opts.is_empty() {
        opts = (0..levels).map(|_| TrainOptions::default()).collect();
    }
    if opts.len() != levels {
        return Err(Error::InvalidArgument(format!(
            "{} option sets for {levels} levels",
            opts.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let pyramids = images
        .iter()
        .map(|i| build_pyramid(i, levels))
        .collect::<Result<Vec<_>>>()?;
    let jobs = model
        .levels
        .iter_mut()
        .zip(opts)
        .enumerate()
        .map(|(l, (factor, o))| {
            let imgs = pyramids.iter().map(|p| p[l].clone()).collect();
            let cfg = TrainConfig {
                seed: factor_seed(cfg.seed, l as u64),
                ..cfg.clone()
            };
            (factor, imgs, cfg, o)
        })
        .collect();
    run_jobs(jobs, parallel)
}

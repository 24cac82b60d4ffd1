//! Gradient checks against central finite differences in f64, shared by
//! the gradient tests and the acceptance run.

use auxpixel::auxiliary::ImageU8;
use auxpixel::likelihood::{categorical, dmol};
use auxpixel::model::{ArchConfig, Factor, FactorBatch, FactorKind};
use auxpixel::nn::{MaskKind, ParamSet, ResidualBlock};
use auxpixel::tensor::kernels::ConvGeometry;
use auxpixel::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{flatten, numeric_grad, rel_error, unflatten};

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-6;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Worst error over a plain, a strided and a masked convolution.
pub fn conv2d_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (stride, masked) in [(1, false), (2, false), (1, true)] {
        let x = uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
        let w = uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let b = uniform(&[4], -1.0, 1.0, &mut rng);
        let mut geom = ConvGeometry::dense(3, stride, 1);
        if masked {
            geom.taps.retain(|&t| MaskKind::B.allows(t / 3, t % 3, 3));
        }
        let ho = geom.output_extent(5, 2).unwrap();
        let wo = geom.output_extent(6, 3).unwrap();
        let r = uniform(&[2, 4, ho, wo], -1.0, 1.0, &mut rng);
        let loss = |params: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let y = tape.conv2d(vars[0], vars[1], Some(vars[2]), &geom).unwrap();
            let rv = tape.constant(r.clone());
            let p = tape.mul(y, rv).unwrap();
            let s = tape.sum(p).unwrap();
            (tape.value(s).item(), tape, vars, s)
        };
        let params = vec![x, w, b];
        let (_, mut tape, vars, s) = loss(&params);
        let g = tape.backward(s).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|v| g.get(*v).unwrap().data().to_vec()).collect();
        let numeric = numeric_grad(|f| loss(&unflatten(f, &params)).0, &flatten(&params), EPS);
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

pub fn gated_block_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamSet::<f64>::default();
    let block = ResidualBlock::new(&mut params, "b", 3, 3, Some(MaskKind::B), Some(2), &mut rng);
    for t in params.tensors_mut() {
        *t = uniform(t.shape(), -0.5, 0.5, &mut rng);
    }
    let x = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    let e = uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
    let r = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    let mut all = params.tensors().to_vec();
    all.push(x);
    all.push(e);
    let n = params.len();
    let eval = |ts: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<_> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = block
            .forward(&mut tape, &vars[..n], vars[n], Some(vars[n + 1]), None)
            .unwrap();
        let rv = tape.constant(r.clone());
        let p = tape.mul(y, rv).unwrap();
        let s = tape.sum(p).unwrap();
        (tape.value(s).item(), tape, vars, s)
    };
    let (_, mut tape, vars, s) = eval(&all);
    let g = tape.backward(s).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .zip(&all)
        .flat_map(|(v, t)| {
            g.get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
                .into_data()
        })
        .collect();
    let numeric = numeric_grad(|f| eval(&unflatten(f, &all)).0, &flatten(&all), EPS);
    rel_error(&analytic, &numeric)
}

pub fn dmol_case(ls_lo: f64, seed: u64) -> (Tensor<f64>, Vec<u8>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let (n, h, w) = (2, 2, 3);
    let mut p = uniform(&[n, 10 * k, h, w], -1.0, 1.0, &mut rng);
    // log-scales stay clear of the floor, where the gradient has a kink
    for ni in 0..n {
        for c in 4 * k..7 * k {
            for j in 0..h * w {
                p.data_mut()[(ni * 10 * k + c) * h * w + j] = rng.random_range(ls_lo..0.5);
            }
        }
    }
    let targets: Vec<u8> = (0..n * 3 * h * w).map(|_| rng.random()).collect();
    (p, targets, k)
}

pub fn dmol_error(p: &Tensor<f64>, targets: &[u8], k: usize, eps: f64) -> f64 {
    let (_, grad) = dmol::dmol_nll_per_image(p, targets, k, true).unwrap();
    let numeric = numeric_grad(
        |f| {
            let t = Tensor::new(p.shape().to_vec(), f.to_vec()).unwrap();
            dmol::dmol_nll(&t, targets, k).unwrap()
        },
        p.data(),
        eps,
    );
    rel_error(grad.unwrap().data(), &numeric)
}

/// Worst error over three draws with log-scales in the initialization range.
pub fn dmol_nll_error() -> f64 {
    (0..3)
        .map(|seed| {
            let (p, t, k) = dmol_case(-1.5, seed);
            dmol_error(&p, &t, k, EPS)
        })
        .fold(0.0, f64::max)
}

pub fn categorical_nll_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = uniform(&[2, 16, 3, 3], -2.0, 2.0, &mut rng);
    let targets: Vec<u8> = (0..18).map(|_| rng.random_range(0..16)).collect();
    let (_, grad) = categorical::categorical_nll_per_image(&p, &targets, true).unwrap();
    let numeric = numeric_grad(
        |f| {
            let t = Tensor::new(p.shape().to_vec(), f.to_vec()).unwrap();
            categorical::categorical16_nll(&t, &targets).unwrap()
        },
        p.data(),
        EPS,
    );
    rel_error(grad.unwrap().data(), &numeric)
}

/// Two-block conditional model with its embedding net.
pub fn full_model_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arch = ArchConfig {
        blocks: 2,
        filters: 4,
        components: 2,
        embed_blocks: 1,
        embed_filters: 3,
        ..ArchConfig::default()
    };
    let mut factor = Factor::<f64>::new(FactorKind::ColorFromGray, &arch, &mut rng).unwrap();
    for t in factor.net.params_mut().tensors_mut() {
        *t = uniform(t.shape(), -0.3, 0.3, &mut rng);
    }
    for t in factor.embed.as_mut().unwrap().params_mut().tensors_mut() {
        *t = uniform(t.shape(), -0.3, 0.3, &mut rng);
    }
    let images: Vec<_> = (0..2)
        .map(|_| ImageU8::new(4, 4, (0..48).map(|_| rng.random()).collect()).unwrap())
        .collect();
    let batch = FactorBatch::<f64>::from_images(FactorKind::ColorFromGray, &images.iter().collect::<Vec<_>>()).unwrap();
    let net_len = factor.net.params().len();
    let mut all = factor.net.params().tensors().to_vec();
    all.extend(factor.embed.as_ref().unwrap().params().tensors().iter().cloned());
    let eval = |ts: &[Tensor<f64>], factor: &Factor<f64>| {
        let mut tape = Tape::new();
        let vars: Vec<_> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let nll = factor
            .nll_on_tape(&mut tape, &vars[..net_len], Some(&vars[net_len..]), &batch, None)
            .unwrap();
        (tape.value(nll).item(), tape, vars, nll)
    };
    let (_, mut tape, vars, nll) = eval(&all, &factor);
    let g = tape.backward(nll).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .zip(&all)
        .flat_map(|(v, t)| {
            g.get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
                .into_data()
        })
        .collect();
    let numeric = numeric_grad(|f| eval(&unflatten(f, &all), &factor).0, &flatten(&all), EPS);
    rel_error(&analytic, &numeric)
}

use rand::Rng;

use super::{gather_pixel, SampleMode};
use crate::error::{Error, Result};
use crate::tensor::{kernels::softplus, Element, Tape, Tensor, Var};

/// Numeric floor applied to predicted log-scales.
pub const LOG_SCALE_MIN: f64 = -7.0;
/// Half the bin width of a pixel value on the `[-1, 1]` grid.
pub const HALF_BIN: f64 = 1.0 / 255.0;
pub const DEFAULT_COMPONENTS: usize = 10;

/// Logits, three means, three log-scales and three channel coefficients per component.
pub fn params_per_pixel(components: usize) -> usize {
    10 * components
}

#[inline]
pub fn to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

#[inline]
pub fn from_unit(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Mixture parameters of a single pixel.
///
/// Flat layout, `K` components: `[logits(K), means(3K), log_scales(3K),
/// coeffs(3K)]`, each block channel-major (`c * K + k`). The coefficients are
/// raw (pre-`tanh`) and ordered `(r→g, r→b, g→b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    k: usize,
    raw: Vec<f64>,
}

impl MixtureParams {
    pub fn from_slice(raw: &[f64], k: usize) -> Self {
        assert_eq!(raw.len(), params_per_pixel(k), "mixture parameter count");
        Self { k, raw: raw.to_vec() }
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.raw
    }

    pub fn logit(&self, k: usize) -> f64 {
        self.raw[k]
    }

    pub fn mean(&self, c: usize, k: usize) -> f64 {
        self.raw[self.k + c * self.k + k]
    }

    /// Log-scale after the numeric floor.
    pub fn log_scale(&self, c: usize, k: usize) -> f64 {
        self.raw[4 * self.k + c * self.k + k].max(LOG_SCALE_MIN)
    }

    /// Squashed channel coefficient `j` of component `k`.
    pub fn coeff(&self, j: usize, k: usize) -> f64 {
        self.raw[7 * self.k + j * self.k + k].tanh()
    }

    /// Channel means of component `k` after the linear R→G→B shifts, given
    /// the (normalized) values of the preceding channels.
    pub fn shifted_mean(&self, c: usize, k: usize, prev: [f64; 2]) -> f64 {
        match c {
            0 => self.mean(0, k),
            1 => self.mean(1, k) + self.coeff(0, k) * prev[0],
            _ => self.mean(2, k) + self.coeff(1, k) * prev[0] + self.coeff(2, k) * prev[1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.raw.iter().all(|v| v.is_finite())
    }

    pub fn mixture_weights(&self) -> Vec<f64> {
        let m = (0..self.k).map(|k| self.logit(k)).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = (0..self.k).map(|k| (self.logit(k) - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// Log-probability of discrete value `v` under one logistic with the given
/// mean and floored log-scale, plus its derivatives `(d/dmean, d/dlog_scale)`.
pub fn channel_log_prob(v: u8, mean: f64, log_scale: f64) -> (f64, f64, f64) {
    let inv = (-log_scale).exp();
    let centered = to_unit(v) - mean;
    match v {
        0 => {
            let a = inv * (centered + HALF_BIN);
            let da = crate::tensor::kernels::sigmoid(-a);
            (-softplus(-a), -inv * da, -a * da)
        }
        255 => {
            let b = inv * (centered - HALF_BIN);
            let db = -crate::tensor::kernels::sigmoid(b);
            (-softplus(b), -inv * db, -b * db)
        }
        _ => {
            let a = inv * (centered + HALF_BIN);
            let b = inv * (centered - HALF_BIN);
            let d = 2.0 * HALF_BIN * inv;
            let lp = -softplus(-a) - softplus(b) + (-(-d).exp_m1()).ln();
            let from_gap = 1.0 / d.exp_m1();
            let da = crate::tensor::kernels::sigmoid(-a) + from_gap;
            let db = -crate::tensor::kernels::sigmoid(b) - from_gap;
            (lp, -inv * (da + db), -(a * da + b * db))
        }
    }
}

/// Log-probability of an RGB pixel. When `grad` is given it receives
/// `d log p / d raw` in the [`MixtureParams`] layout.
pub fn log_prob(p: &MixtureParams, pixel: [u8; 3], grad: Option<&mut [f64]>) -> f64 {
    let k = p.k;
    let xr = to_unit(pixel[0]);
    let xg = to_unit(pixel[1]);
    let mut comp = vec![0.0; k];
    // per component, per channel: (d/dmean, d/dls)
    let mut local = vec![[0.0; 6]; k];
    for (j, (lpk, loc)) in comp.iter_mut().zip(local.iter_mut()).enumerate() {
        let mut total = p.logit(j);
        for c in 0..3 {
            let m = p.shifted_mean(c, j, [xr, xg]);
            let (lp, dm, dls) = channel_log_prob(pixel[c], m, p.log_scale(c, j));
            total += lp;
            loc[2 * c] = dm;
            loc[2 * c + 1] = dls;
        }
        *lpk = total;
    }
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let logits: Vec<f64> = (0..k).map(|j| p.logit(j)).collect();
    let lse_joint = lse(&comp);
    let lse_prior = lse(&logits);
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..k {
            let resp = (comp[j] - lse_joint).exp();
            let prior = (logits[j] - lse_prior).exp();
            g[j] = resp - prior;
            let loc = local[j];
            for c in 0..3 {
                g[k + c * k + j] = resp * loc[2 * c];
                if p.raw[4 * k + c * k + j] >= LOG_SCALE_MIN {
                    g[4 * k + c * k + j] = resp * loc[2 * c + 1];
                }
            }
            let sq = |i: usize| 1.0 - p.coeff(i, j).powi(2);
            g[7 * k + j] = resp * loc[2] * sq(0) * xr;
            g[8 * k + j] = resp * loc[4] * sq(1) * xr;
            g[9 * k + j] = resp * loc[4] * sq(2) * xg;
        }
    }
    lse_joint - lse_prior
}

/// Bin probabilities of channel `c` under component `k` for all 256 values,
/// computed directly as logistic CDF differences with open edge bins.
pub fn channel_bin_probs(p: &MixtureParams, c: usize, k: usize, prev: [u8; 2]) -> Vec<f64> {
    let m = p.shifted_mean(c, k, [to_unit(prev[0]), to_unit(prev[1])]);
    let s = p.log_scale(c, k).exp();
    let cdf = |x: f64| 1.0 / (1.0 + (-(x - m) / s).exp());
    (0..=255u8)
        .map(|v| {
            let x = to_unit(v);
            let hi = if v == 255 { 1.0 } else { cdf(x + HALF_BIN) };
            let lo = if v == 0 { 0.0 } else { cdf(x - HALF_BIN) };
            hi - lo
        })
        .collect()
}

fn check_targets(dims: (usize, usize, usize, usize), targets: &[u8]) -> Result<()> {
    let (n, _, h, w) = dims;
    if targets.len() != n * 3 * h * w {
        return Err(Error::ShapeMismatch {
            op: "dmol_nll targets",
            axis: 0,
            expected: n * 3 * h * w,
            got: targets.len(),
        });
    }
    Ok(())
}

/// Per-image negative log-likelihoods (nats) of `targets` (`[N, 3, H, W]`
/// bytes) and, optionally, the gradient of their sum.
pub fn dmol_nll_per_image<T: Element>(
    params: &Tensor<T>,
    targets: &[u8],
    components: usize,
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor<T>>)> {
    let dims = params.dims4("dmol_nll")?;
    let (n, pc, h, w) = dims;
    if pc != params_per_pixel(components) {
        return Err(Error::ShapeMismatch {
            op: "dmol_nll",
            axis: 1,
            expected: params_per_pixel(components),
            got: pc,
        });
    }
    check_targets(dims, targets)?;
    let data = params.data();
    let mut grad = want_grad.then(|| vec![T::zero(); data.len()]);
    let mut buf = Vec::with_capacity(pc);
    let mut g = vec![0.0; pc];
    let mut per_image = vec![0.0; n];
    for (ni, total) in per_image.iter_mut().enumerate() {
        for y in 0..h {
            for x in 0..w {
                gather_pixel(data, dims, ni, y, x, &mut buf);
                let mp = MixtureParams {
                    k: components,
                    raw: std::mem::take(&mut buf),
                };
                if !mp.is_finite() {
                    return Err(Error::NonFinite("mixture parameters"));
                }
                let t = |c: usize| targets[((ni * 3 + c) * h + y) * w + x];
                let px = [t(0), t(1), t(2)];
                let lp = log_prob(&mp, px, grad.is_some().then_some(&mut g[..]));
                *total -= lp;
                if let Some(gr) = grad.as_mut() {
                    let base = ni * pc * h * w + y * w + x;
                    for (c, gv) in g.iter().enumerate() {
                        gr[base + c * h * w] = T::from_f64(-gv);
                    }
                }
                buf = mp.raw;
            }
        }
    }
    let grad = grad.map(|g| Tensor::new(params.shape().to_vec(), g)).transpose()?;
    Ok((per_image, grad))
}

/// Summed negative log-likelihood in nats.
pub fn dmol_nll<T: Element>(params: &Tensor<T>, targets: &[u8], components: usize) -> Result<f64> {
    let (per_image, _) = dmol_nll_per_image(params, targets, components, false)?;
    Ok(per_image.iter().sum())
}

/// Records the summed DMOL negative log-likelihood on the tape.
pub fn dmol_nll_on_tape<T: Element>(tape: &mut Tape<T>, params: Var, targets: &[u8], components: usize) -> Result<Var> {
    let (per_image, grad) = dmol_nll_per_image(tape.value(params), targets, components, true)?;
    let total: f64 = per_image.iter().sum();
    tape.fused_scalar(params, T::from_f64(total), grad.expect("gradient requested"))
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Draws one RGB pixel. The component is always drawn from the first uniform
/// of `rng`, so modes fed identically seeded streams pick the same component.
pub fn dmol_sample(p: &MixtureParams, mode: SampleMode, rng: &mut impl Rng) -> [u8; 3] {
    let k = pick_component(&p.mixture_weights(), rng.random::<f64>());
    let mut out = [0u8; 3];
    let mut prev = [0.0; 2];
    for c in 0..3 {
        let m = p.shifted_mean(c, k, prev);
        let x = match mode {
            SampleMode::Map => m,
            SampleMode::Ancestral | SampleMode::Reduced(_) => {
                let ls = p.log_scale(c, k) - mode.lambda();
                let u = rng.random::<f64>().clamp(1e-5, 1.0 - 1e-5);
                m + ls.exp() * (u.ln() - (1.0 - u).ln())
            }
        };
        out[c] = from_unit(x);
        if c < 2 {
            prev[c] = to_unit(out[c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(k: usize, rng: &mut ChaCha8Rng) -> MixtureParams {
        let mut raw = vec![0.0; params_per_pixel(k)];
        for (i, v) in raw.iter_mut().enumerate() {
            *v = if i < k {
                rng.random_range(-2.0..2.0)
            } else if i < 4 * k {
                rng.random_range(-1.0..1.0)
            } else if i < 7 * k {
                rng.random_range(-4.0..0.5)
            } else {
                rng.random_range(-1.5..1.5)
            };
        }
        MixtureParams::from_slice(&raw, k)
    }

    fn single(mean: [f64; 3], ls: f64) -> MixtureParams {
        let mut raw = vec![0.0; 10];
        raw[1..4].copy_from_slice(&mean);
        raw[4..7].copy_from_slice(&[ls; 3]);
        MixtureParams::from_slice(&raw, 1)
    }

    #[test]
    fn peaked_component_captures_bin() {
        // At the floor the interior bin holds tanh(HALF_BIN * e^7 / 2) ~ 0.973
        // of the mass, so the per-channel NLL is ~0.027 nats, not ~0.
        let px = [17u8, 128, 250];
        let p = single([to_unit(17), to_unit(128), to_unit(250)], -7.0);
        let per_channel = -(HALF_BIN * 7f64.exp() / 2.0).tanh().ln();
        let nll = -log_prob(&p, px, None);
        assert!((nll - 3.0 * per_channel).abs() < 1e-12, "nll {nll}");
        assert!(per_channel < 0.03);
        // Lowering the log-scale below the floor changes nothing.
        let q = single([to_unit(17), to_unit(128), to_unit(250)], -12.0);
        assert_eq!(log_prob(&q, px, None), log_prob(&p, px, None));
    }

    #[test]
    fn brute_force_normalization_wide_scale() {
        let p = single([0.1, -0.3, 0.7], 10.0);
        for c in 0..3 {
            let s: f64 = channel_bin_probs(&p, c, 0, [0, 0]).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let s: f64 = (0..=255u8).map(|v| channel_log_prob(v, 0.1, 10.0).0.exp()).sum();
        assert!((s - 1.0).abs() < 1e-5, "{s}");
    }

    #[test]
    fn log_formula_matches_cdf_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_params(3, &mut rng);
            let prev = [rng.random::<u8>(), rng.random::<u8>()];
            for c in 0..3 {
                for k in 0..3 {
                    let probs = channel_bin_probs(&p, c, k, prev);
                    let m = p.shifted_mean(c, k, [to_unit(prev[0]), to_unit(prev[1])]);
                    for v in (0..=255u8).step_by(17).chain([1, 254, 255]) {
                        let (lp, _, _) = channel_log_prob(v, m, p.log_scale(c, k));
                        let want = probs[v as usize];
                        if want > 1e-12 {
                            assert!((lp.exp() - want).abs() < 1e-9 * want.max(1e-3));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn duplicated_component_is_degenerate() {
        let one = single([0.2, -0.1, 0.4], -2.0);
        let mut raw = vec![0.0; 20];
        for blk in 0..10 {
            raw[2 * blk] = one.as_slice()[blk];
            raw[2 * blk + 1] = one.as_slice()[blk];
        }
        let two = MixtureParams::from_slice(&raw, 2);
        for px in [[0u8, 0, 0], [140, 100, 180], [255, 255, 3]] {
            assert!((log_prob(&one, px, None) - log_prob(&two, px, None)).abs() < 1e-6);
        }
    }

    #[test]
    fn map_returns_mode_of_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ls in [-7.0, 0.0, 3.0] {
            let p = single([to_unit(40), to_unit(41), to_unit(200)], ls);
            assert_eq!(dmol_sample(&p, SampleMode::Map, &mut rng), [40, 41, 200]);
        }
    }

    #[test]
    fn strong_reduction_matches_map_under_coupled_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in 0..200u64 {
            let p = random_params(4, &mut rng);
            let a = dmol_sample(&p, SampleMode::Reduced(20.0), &mut ChaCha8Rng::seed_from_u64(s));
            let b = dmol_sample(&p, SampleMode::Map, &mut ChaCha8Rng::seed_from_u64(s));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn floor_scale_ancestral_stays_at_mode() {
        // At the log-scale floor a logistic draw moves at most
        // e^-7 * logit(1 - 1e-5) ~ 0.0105 on the unit grid, i.e. one or two
        // pixel levels; most draws land in the mode's own bin.
        let p = single([to_unit(90), to_unit(10), to_unit(220)], -7.0);
        let mut same = 0;
        for s in 0..500u64 {
            let a = dmol_sample(&p, SampleMode::Ancestral, &mut ChaCha8Rng::seed_from_u64(s));
            let b = dmol_sample(&p, SampleMode::Map, &mut ChaCha8Rng::seed_from_u64(s));
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 2);
            }
            same += (a == b) as usize;
        }
        assert!(same > 400, "{same}");
    }

    #[test]
    fn variance_reduction_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_params(3, &mut rng);
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let lambda = step as f64 / 10.0;
            let mut dev = 0.0;
            for s in 0..10_000u64 {
                let a = dmol_sample(&p, SampleMode::Reduced(lambda), &mut ChaCha8Rng::seed_from_u64(s));
                let m = dmol_sample(&p, SampleMode::Map, &mut ChaCha8Rng::seed_from_u64(s));
                dev += (0..3).map(|c| (a[c] as f64 - m[c] as f64).abs()).sum::<f64>();
            }
            assert!(dev <= last, "lambda {lambda}: {dev} > {last}");
            last = dev;
        }
    }

    #[test]
    fn per_pixel_probability_never_exceeds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = random_params(5, &mut rng);
            let px = [rng.random(), rng.random(), rng.random()];
            assert!(log_prob(&p, px, None) <= 1e-12);
        }
    }

    #[test]
    fn non_finite_params_are_rejected() {
        let mut t = Tensor::<f64>::zeros(&[1, 10, 1, 1]);
        t.data_mut()[3] = f64::NAN;
        assert!(matches!(dmol_nll(&t, &[0, 0, 0], 1), Err(Error::NonFinite(_))));
    }
}

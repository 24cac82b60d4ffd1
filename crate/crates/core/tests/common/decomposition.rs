//! The joint objective of a grayscale pair against its two factor objectives.

use auxpixel::io::toy::toy_images;
use auxpixel::model::{ArchConfig, AuxModelPair, Factor, FactorBatch, FactorKind};
use auxpixel::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct JointSplit {
    pub total: f64,
    pub aux: f64,
    pub cond: f64,
    /// `total == aux + cond` exactly.
    pub value_exact: bool,
    /// Gradients of the joint objective equal each factor's own gradients exactly.
    pub grads_exact: bool,
}

fn factor_objective(factor: &Factor<f64>, batch: &FactorBatch<f64>) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let mut vars = factor.net.params().bind(&mut tape, true);
    let embed = factor.embed.as_ref().map(|e| e.params().bind(&mut tape, true));
    let nll = factor
        .nll_on_tape(&mut tape, &vars, embed.as_deref(), batch, None)
        .unwrap();
    let value = tape.value(nll).item();
    let grads = tape.backward(nll).unwrap();
    vars.extend(embed.unwrap_or_default());
    (value, vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect())
}

/// Scores `n_images` toy images under a pair seeded with `seed`, once on a
/// single tape holding both factors and once per factor.
pub fn joint_objective_split(n_images: usize, seed: u64) -> JointSplit {
    let images = toy_images(8).unwrap();
    let refs: Vec<_> = images[..n_images].iter().collect();
    let arch = ArchConfig {
        blocks: 2,
        filters: 8,
        components: 3,
        embed_blocks: 1,
        embed_filters: 8,
        ..ArchConfig::default()
    };
    let pair = AuxModelPair::<f64>::new(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let aux_batch = FactorBatch::from_images(FactorKind::GrayAux, &refs).unwrap();
    let cond_batch = FactorBatch::from_images(FactorKind::ColorFromGray, &refs).unwrap();
    let (aux, aux_grads) = factor_objective(&pair.aux, &aux_batch);
    let (cond, cond_grads) = factor_objective(&pair.cond, &cond_batch);

    let mut tape = Tape::new();
    let aux_vars = pair.aux.net.params().bind(&mut tape, true);
    let mut cond_vars = pair.cond.net.params().bind(&mut tape, true);
    let embed_vars = pair.cond.embed.as_ref().unwrap().params().bind(&mut tape, true);
    let a = pair
        .aux
        .nll_on_tape(&mut tape, &aux_vars, None, &aux_batch, None)
        .unwrap();
    let c = pair
        .cond
        .nll_on_tape(&mut tape, &cond_vars, Some(&embed_vars), &cond_batch, None)
        .unwrap();
    let joint = tape.add(a, c).unwrap();
    let total = tape.value(joint).item();
    let grads = tape.backward(joint).unwrap();
    cond_vars.extend(embed_vars);
    let same = |vars: &[auxpixel::tensor::Var], expect: &[Tensor<f64>]| {
        vars.len() == expect.len()
            && vars
                .iter()
                .zip(expect)
                .all(|(v, g)| grads.get(*v).is_some_and(|j| j.data() == g.data()))
    };
    JointSplit {
        total,
        aux,
        cond,
        value_exact: total == aux + cond,
        grads_exact: same(&aux_vars, &aux_grads) && same(&cond_vars, &cond_grads),
    }
}

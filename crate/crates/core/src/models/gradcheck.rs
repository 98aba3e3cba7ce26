//! Central finite-difference verification of the recurrent model's gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::recurrent::RecurrentChunkModel;
use crate::error::Result;

pub const FD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter block.
    pub per_block: Vec<(&'static str, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the loss at every parameter.
pub fn gradient_check_with(model: &RecurrentChunkModel, inputs: &[f64], label: u8, analytic: &[f64]) -> Result<GradCheckReport> {
    let layout = model.layout();
    let mut probe = model.clone();
    let mut per_block = Vec::with_capacity(layout.blocks.len());
    let mut max_rel_error: f64 = 0.0;
    for block in &layout.blocks {
        let mut worst: f64 = 0.0;
        for i in block.offset..block.offset + block.len {
            let original = probe.params()[i];
            probe.params_mut()[i] = original + FD_EPSILON;
            let plus = probe.loss(inputs, label, 1.0)?;
            probe.params_mut()[i] = original - FD_EPSILON;
            let minus = probe.loss(inputs, label, 1.0)?;
            probe.params_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        max_rel_error = max_rel_error.max(worst);
        per_block.push((block.name, worst));
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_block,
        checked: layout.total,
    })
}

/// Random model and random 3-step sequence, analytic gradients from backprop.
///
/// Parameters are drawn from `uniform(-0.5, 0.5)` rather than the training
/// init so that every block carries gradients well above round-off.
pub fn gradient_check(input_dim: usize, hidden_dim: usize, attention: bool, seed: u64) -> Result<GradCheckReport> {
    let (model, inputs, label) = check_fixture(input_dim, hidden_dim, attention, seed)?;
    let (_, analytic) = model.loss_and_grad(&inputs, label, 1.0)?;
    gradient_check_with(&model, &inputs, label, &analytic)
}

/// The model, inputs and label used by [`gradient_check`].
pub fn check_fixture(input_dim: usize, hidden_dim: usize, attention: bool, seed: u64) -> Result<(RecurrentChunkModel, Vec<f64>, u8)> {
    let model = RecurrentChunkModel::with_init_range(input_dim, hidden_dim, attention, seed, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let inputs = (0..3 * input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let label = rng.gen_range(0..2u8);
    Ok((model, inputs, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backprop_matches_finite_differences() {
        for attention in [false, true] {
            for seed in 0..3 {
                let r = gradient_check(5, 4, attention, seed).unwrap();
                assert!(r.max_rel_error <= 1e-4, "attention={attention} seed={seed}: {:?}", r.per_block);
            }
        }
    }

    #[test]
    fn sign_flipped_gradient_is_caught() {
        let (model, inputs, label) = check_fixture(5, 4, true, 1).unwrap();
        let (_, mut g) = model.loss_and_grad(&inputs, label, 1.0).unwrap();
        g.iter_mut().for_each(|v| *v = -*v);
        let r = gradient_check_with(&model, &inputs, label, &g).unwrap();
        assert!(r.max_rel_error > 1e-2);
    }
}

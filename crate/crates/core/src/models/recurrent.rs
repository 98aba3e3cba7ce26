//! Bidirectional LSTM chunk classifier with optional dot-product attention.
//!
//! Cell (per direction), gate order `i, f, g, o`:
//!
//! ```text
//! z   = W x_t + U h_{t-1} + b
//! i   = sigmoid(z_i)   f = sigmoid(z_f)   g = tanh(z_g)   o = sigmoid(z_o)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! The forward cell reads the chunk left to right, the backward cell right
//! to left. Readout is either `[h_fwd(last); h_bwd(first)]` or, with
//! attention, `sum_t softmax(H_t . w_att)_t * H_t` where
//! `H_t = [h_fwd(t); h_bwd(t)]`. Output is `sigmoid(w_out . r + b_out)`.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(input_dim: usize, hidden_dim: usize, attention: bool) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        let mut sizes = vec![
            ("fwd.input", 4 * h * d),
            ("fwd.recurrent", 4 * h * h),
            ("fwd.bias", 4 * h),
            ("bwd.input", 4 * h * d),
            ("bwd.recurrent", 4 * h * h),
            ("bwd.bias", 4 * h),
        ];
        if attention {
            sizes.push(("attention", 2 * h));
        }
        sizes.push(("out.weight", 2 * h));
        sizes.push(("out.bias", 1));
        let mut offset = 0;
        let blocks = sizes
            .into_iter()
            .map(|(name, len)| {
                let b = ParamBlock { name, offset, len };
                offset += len;
                b
            })
            .collect();
        ParamLayout {
            blocks,
            total: offset,
        }
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn range(&self, name: &str) -> std::ops::Range<usize> {
        let b = self.block(name).expect("known block");
        b.offset..b.offset + b.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentChunkModel {
    input_dim: usize,
    hidden_dim: usize,
    attention: bool,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

/// Activations of one direction, indexed by processing step.
#[derive(Debug, Clone)]
struct DirTrace {
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    steps: usize,
    fwd: DirTrace,
    bwd: DirTrace,
    /// Attention weights per position (empty without attention).
    pub attention: Vec<f64>,
    pub readout: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit.
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    let y = f64::from(label);
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl RecurrentChunkModel {
    /// Parameters drawn from `uniform(-0.08, 0.08)` with a seeded generator.
    pub fn new(input_dim: usize, hidden_dim: usize, attention: bool, seed: u64) -> Result<Self> {
        Self::with_init_range(input_dim, hidden_dim, attention, seed, INIT_RANGE)
    }

    pub fn with_init_range(input_dim: usize, hidden_dim: usize, attention: bool, seed: u64, range: f64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("input and hidden dimensions must be positive"));
        }
        let layout = ParamLayout::new(input_dim, hidden_dim, attention);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..layout.total).map(|_| rng.gen_range(-range..range)).collect();
        Ok(RecurrentChunkModel {
            input_dim,
            hidden_dim,
            attention,
            params,
        })
    }

    /// Rebuilds a model from raw parameters; length must match the layout.
    pub fn from_params(input_dim: usize, hidden_dim: usize, attention: bool, params: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(input_dim, hidden_dim, attention);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch {
                expected: layout.total,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(RecurrentChunkModel {
            input_dim,
            hidden_dim,
            attention,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn has_attention(&self) -> bool {
        self.attention
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.input_dim, self.hidden_dim, self.attention)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Hex SHA-256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<usize> {
        if inputs.is_empty() || inputs.len() % self.input_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: if inputs.is_empty() { 0 } else { inputs.len() % self.input_dim },
            });
        }
        Ok(inputs.len() / self.input_dim)
    }

    fn run_direction(&self, dir: Direction, inputs: &[f64], steps: usize) -> DirTrace {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let layout = self.layout();
        let w = &self.params[layout.range(&format!("{}.input", dir.prefix()))];
        let u = &self.params[layout.range(&format!("{}.recurrent", dir.prefix()))];
        let b = &self.params[layout.range(&format!("{}.bias", dir.prefix()))];

        let mut trace = DirTrace {
            gates: vec![0.0; steps * 4 * h],
            cells: vec![0.0; steps * h],
            tanh_cells: vec![0.0; steps * h],
            hidden: vec![0.0; steps * h],
        };
        let mut z = vec![0.0; 4 * h];
        for s in 0..steps {
            let pos = match dir {
                Direction::Forward => s,
                Direction::Backward => steps - 1 - s,
            };
            let x = &inputs[pos * d..(pos + 1) * d];
            z.copy_from_slice(b);
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * d..(r + 1) * d];
                *zr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if s > 0 {
                let h_prev = &trace.hidden[(s - 1) * h..s * h];
                for (r, zr) in z.iter_mut().enumerate() {
                    let row = &u[r * h..(r + 1) * h];
                    *zr += row.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let gates = &mut trace.gates[s * 4 * h..(s + 1) * 4 * h];
            for k in 0..h {
                gates[k] = sigmoid(z[k]);
                gates[h + k] = sigmoid(z[h + k]);
                gates[2 * h + k] = z[2 * h + k].tanh();
                gates[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            for k in 0..h {
                let c_prev = if s > 0 { trace.cells[(s - 1) * h + k] } else { 0.0 };
                let c = gates[h + k] * c_prev + gates[k] * gates[2 * h + k];
                let tc = c.tanh();
                trace.cells[s * h + k] = c;
                trace.tanh_cells[s * h + k] = tc;
                trace.hidden[s * h + k] = gates[3 * h + k] * tc;
            }
        }
        trace
    }

    /// Concatenated hidden state `[h_fwd(pos); h_bwd(pos)]`.
    fn state_at(&self, trace: &ForwardTrace, pos: usize) -> Vec<f64> {
        let h = self.hidden_dim;
        let bstep = trace.steps - 1 - pos;
        let mut out = Vec::with_capacity(2 * h);
        out.extend_from_slice(&trace.fwd.hidden[pos * h..(pos + 1) * h]);
        out.extend_from_slice(&trace.bwd.hidden[bstep * h..(bstep + 1) * h]);
        out
    }

    /// Runs the network over `inputs`, a row-major `steps x input_dim` matrix.
    pub fn forward(&self, inputs: &[f64]) -> Result<ForwardTrace> {
        let steps = self.check_inputs(inputs)?;
        let h = self.hidden_dim;
        let fwd = self.run_direction(Direction::Forward, inputs, steps);
        let bwd = self.run_direction(Direction::Backward, inputs, steps);
        let mut trace = ForwardTrace {
            steps,
            fwd,
            bwd,
            attention: Vec::new(),
            readout: Vec::new(),
            logit: 0.0,
            probability: 0.0,
        };
        let layout = self.layout();
        let readout = if self.attention {
            let w_att = &self.params[layout.range("attention")];
            let states: Vec<Vec<f64>> = (0..steps).map(|t| self.state_at(&trace, t)).collect();
            let scores: Vec<f64> = states
                .iter()
                .map(|s| s.iter().zip(w_att).map(|(a, b)| a * b).sum())
                .collect();
            let alpha = softmax(&scores);
            let mut r = vec![0.0; 2 * h];
            for (a, s) in alpha.iter().zip(&states) {
                for (ri, si) in r.iter_mut().zip(s) {
                    *ri += a * si;
                }
            }
            trace.attention = alpha;
            r
        } else {
            let mut r = Vec::with_capacity(2 * h);
            r.extend_from_slice(&trace.fwd.hidden[(steps - 1) * h..steps * h]);
            r.extend_from_slice(&trace.bwd.hidden[(steps - 1) * h..steps * h]);
            r
        };
        let w_out = &self.params[layout.range("out.weight")];
        let b_out = self.params[layout.range("out.bias")][0];
        trace.logit = b_out + w_out.iter().zip(&readout).map(|(a, b)| a * b).sum::<f64>();
        trace.probability = sigmoid(trace.logit);
        trace.readout = readout;
        Ok(trace)
    }

    /// Probability of class 1 for one chunk.
    pub fn predict_proba(&self, inputs: &[f64]) -> Result<f64> {
        Ok(self.forward(inputs)?.probability)
    }

    /// Weighted cross-entropy of one example.
    pub fn loss(&self, inputs: &[f64], label: u8, weight: f64) -> Result<f64> {
        Ok(weight * bce_with_logit(self.forward(inputs)?.logit, label))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &[f64], label: u8, weight: f64) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward(inputs)?;
        let loss = weight * bce_with_logit(trace.logit, label);
        let dlogit = weight * (trace.probability - f64::from(label));
        Ok((loss, self.backward(inputs, &trace, dlogit)))
    }

    /// Backpropagation through time given `d loss / d logit`.
    pub fn backward(&self, inputs: &[f64], trace: &ForwardTrace, dlogit: f64) -> Vec<f64> {
        let h = self.hidden_dim;
        let steps = trace.steps;
        let layout = self.layout();
        let mut grad = vec![0.0; layout.total];

        let w_out = &self.params[layout.range("out.weight")];
        for (g, r) in grad[layout.range("out.weight")].iter_mut().zip(&trace.readout) {
            *g = dlogit * r;
        }
        grad[layout.range("out.bias")][0] = dlogit;
        let dr: Vec<f64> = w_out.iter().map(|w| dlogit * w).collect();

        // external gradients on hidden states, by processing step
        let mut dh_fwd = vec![0.0; steps * h];
        let mut dh_bwd = vec![0.0; steps * h];
        if self.attention {
            let w_att = &self.params[layout.range("attention")];
            let states: Vec<Vec<f64>> = (0..steps).map(|t| self.state_at(trace, t)).collect();
            let alpha = &trace.attention;
            let dalpha: Vec<f64> = states
                .iter()
                .map(|s| s.iter().zip(&dr).map(|(a, b)| a * b).sum())
                .collect();
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            let mut datt = vec![0.0; 2 * h];
            for t in 0..steps {
                let ds = alpha[t] * (dalpha[t] - mean);
                let bstep = steps - 1 - t;
                for k in 0..2 * h {
                    datt[k] += ds * states[t][k];
                    let dstate = alpha[t] * dr[k] + ds * w_att[k];
                    if k < h {
                        dh_fwd[t * h + k] += dstate;
                    } else {
                        dh_bwd[bstep * h + (k - h)] += dstate;
                    }
                }
            }
            grad[layout.range("attention")].copy_from_slice(&datt);
        } else {
            dh_fwd[(steps - 1) * h..steps * h].copy_from_slice(&dr[..h]);
            dh_bwd[(steps - 1) * h..steps * h].copy_from_slice(&dr[h..]);
        }

        self.backward_direction(Direction::Forward, inputs, &trace.fwd, &dh_fwd, &layout, &mut grad);
        self.backward_direction(Direction::Backward, inputs, &trace.bwd, &dh_bwd, &layout, &mut grad);
        grad
    }

    fn backward_direction(
        &self,
        dir: Direction,
        inputs: &[f64],
        trace: &DirTrace,
        dh_ext: &[f64],
        layout: &ParamLayout,
        grad: &mut [f64],
    ) {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let steps = dh_ext.len() / h;
        let w_range = layout.range(&format!("{}.input", dir.prefix()));
        let u_range = layout.range(&format!("{}.recurrent", dir.prefix()));
        let b_range = layout.range(&format!("{}.bias", dir.prefix()));
        let u = &self.params[u_range.clone()];

        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for s in (0..steps).rev() {
            let pos = match dir {
                Direction::Forward => s,
                Direction::Backward => steps - 1 - s,
            };
            let gates = &trace.gates[s * 4 * h..(s + 1) * 4 * h];
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let tc = trace.tanh_cells[s * h + k];
                let c_prev = if s > 0 { trace.cells[(s - 1) * h + k] } else { 0.0 };
                let dh = dh_ext[s * h + k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let x = &inputs[pos * d..(pos + 1) * d];
            {
                let gw = &mut grad[w_range.clone()];
                for (r, &dzr) in dz.iter().enumerate() {
                    if dzr != 0.0 {
                        for (g, xj) in gw[r * d..(r + 1) * d].iter_mut().zip(x) {
                            *g += dzr * xj;
                        }
                    }
                }
            }
            for (g, dzr) in grad[b_range.clone()].iter_mut().zip(&dz) {
                *g += dzr;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if s > 0 {
                let h_prev = &trace.hidden[(s - 1) * h..s * h];
                let gu = &mut grad[u_range.clone()];
                for (r, &dzr) in dz.iter().enumerate() {
                    for (g, hp) in gu[r * h..(r + 1) * h].iter_mut().zip(h_prev) {
                        *g += dzr * hp;
                    }
                    for (dn, uk) in dh_next.iter_mut().zip(&u[r * h..(r + 1) * h]) {
                        *dn += dzr * uk;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn random_inputs(steps: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_count_is_a_function_of_dims() {
        let (d, h) = (5, 4);
        let base = 2 * (4 * h * d + 4 * h * h + 4 * h) + 2 * h + 1;
        assert_eq!(RecurrentChunkModel::new(d, h, false, 0).unwrap().param_count(), base);
        assert_eq!(RecurrentChunkModel::new(d, h, true, 9).unwrap().param_count(), base + 2 * h);
    }

    #[test]
    fn output_is_a_probability_and_length_one_is_legal() {
        let m = RecurrentChunkModel::new(6, 3, true, 1).unwrap();
        let p = m.predict_proba(&random_inputs(1, 6, 2)).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let t = m.forward(&random_inputs(1, 6, 3)).unwrap();
        assert_eq!(t.attention, vec![1.0]);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let m = RecurrentChunkModel::new(4, 3, false, 1).unwrap();
        assert!(matches!(m.forward(&[0.0; 6]), Err(Error::DimensionMismatch { .. })));
        assert!(m.forward(&[]).is_err());
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let m = RecurrentChunkModel::with_init_range(5, 4, true, 3, 1.0).unwrap();
        let t = m.forward(&random_inputs(7, 5, 4)).unwrap();
        let sum: f64 = t.attention.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let s = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = s.iter().map(|x| x + 17.25).collect();
        for (a, b) in softmax(&s).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_cross_entropy() {
        assert!((bce_with_logit(0.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1) < 1e-300 + 1e-12);
        assert!((bce_with_logit(800.0, 0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn from_params_checks_shape() {
        let m = RecurrentChunkModel::new(3, 2, false, 0).unwrap();
        let p = m.params().to_vec();
        assert_eq!(RecurrentChunkModel::from_params(3, 2, false, p.clone()).unwrap(), m);
        assert!(RecurrentChunkModel::from_params(3, 2, true, p).is_err());
    }

    proptest! {
        #[test]
        fn reversal_changes_the_score(seed in 0u64..500, steps in 2usize..6, attention in any::<bool>()) {
            let m = RecurrentChunkModel::with_init_range(4, 3, attention, seed, 0.5).unwrap();
            let x = random_inputs(steps, 4, seed + 1000);
            let mut rev = Vec::with_capacity(x.len());
            for t in (0..steps).rev() {
                rev.extend_from_slice(&x[t * 4..(t + 1) * 4]);
            }
            let a = m.forward(&x).unwrap().logit;
            let b = m.forward(&rev).unwrap().logit;
            prop_assert!((a - b).abs() > 1e-12);
        }
    }
}

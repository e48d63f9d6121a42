//! Parameterized layers built on the tape.

use rand::Rng;

use crate::tensor::{Groups, ParamId, ParamStore, Tape, TensorError, Var};

/// Slope of the leaky rectifier used after every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn act(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    tape.leaky_relu(x, LEAKY_SLOPE)
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[out_dim, in_dim], in_dim, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), &[out_dim], in_dim, rng));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }

    /// `act(x · wᵀ + b)`.
    pub fn forward_act(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let y = self.forward(tape, x)?;
        act(tape, y)
    }
}

/// Per-sequence 1-D convolution over packed rows.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[cout, cin, kernel], cin * kernel, rng);
        let b = store.add_uniform(format!("{name}.b"), &[cout], cin * kernel, rng);
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, lens: &[usize]) -> Result<(Var, Vec<usize>), TensorError> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv1d(x, w, Some(b), lens, self.stride, self.pad)
    }
}

/// Per-sequence 1-D transpose convolution over packed rows.
#[derive(Debug, Clone)]
pub struct TConv1d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
}

impl TConv1d {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[cin, cout, kernel], cin, rng);
        let b = store.add_uniform(format!("{name}.b"), &[cout], cin, rng);
        Self { w, b, stride }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, lens: &[usize], out_lens: &[usize]) -> Result<Var, TensorError> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.tconv1d(x, w, Some(b), lens, self.stride, out_lens)
    }
}

/// `y_i = max_{j ∈ N(i)} act(MLP([c_i ‖ o_j − c_i]))` for a single linear
/// MLP layer.
///
/// The layer `W₁c + W₂(o − c) + b` is held as `A c + B o + b` with
/// `A = W₁ − W₂`, `B = W₂`, a bijective reparameterization. Because the
/// activation is monotone and `A c_i + b` does not depend on `j`, the
/// neighbour maximum commutes inside it: `y_i = act(A c_i + b + max_j B o_j)`.
/// This avoids materializing one row per edge.
#[derive(Debug, Clone)]
pub struct PairMlp {
    center: Linear,
    other: Linear,
}

impl PairMlp {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let center = Linear::new(store, &format!("{name}.center"), in_dim, out_dim, true, rng);
        let other = Linear::new(store, &format!("{name}.other"), in_dim, out_dim, false, rng);
        Self { center, other }
    }

    pub fn out_dim(&self) -> usize {
        self.center.out_dim
    }

    /// Group `i` of `groups` lists the rows of `others` that are neighbours
    /// of row `i` of `centers`.
    pub fn forward(&self, tape: &mut Tape, centers: Var, others: Var, groups: &Groups) -> Result<Var, TensorError> {
        let u = self.center.forward(tape, centers)?;
        let v = self.other.forward(tape, others)?;
        let m = tape.max_gather(v, groups)?;
        let s = tape.add(u, m)?;
        act(tape, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The factored pair layer equals the per-edge definition.
    #[test]
    fn pair_mlp_matches_edge_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = PairMlp::new(&mut store, "e", 3, 4, &mut rng);
        let h: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let groups = Groups::from_lists([vec![0, 1], vec![1, 4, 2], vec![2], vec![3, 0], vec![4, 3, 2]]);
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(Tensor::matrix(5, 3, h.clone()).unwrap());
        let y = layer.forward(&mut tape, x, x, &groups).unwrap();
        let got = tape.value(y).data().to_vec();

        let a = &store.get(store.id("e.center.w").unwrap()).value;
        let b = &store.get(store.id("e.other.w").unwrap()).value;
        let bias = store.get(store.id("e.center.b").unwrap()).value.data().to_vec();
        // W₁ = A + B acts on the centre, W₂ = B on the difference.
        for (i, g) in groups.iter().enumerate() {
            for o in 0..4 {
                let mut best = f64::NEG_INFINITY;
                for &j in g {
                    let mut s = bias[o];
                    for c in 0..3 {
                        let w1 = a.row(o)[c] + b.row(o)[c];
                        let w2 = b.row(o)[c];
                        s += w1 * h[i * 3 + c] + w2 * (h[j * 3 + c] - h[i * 3 + c]);
                    }
                    let s = if s > 0.0 { s } else { LEAKY_SLOPE * s };
                    best = best.max(s);
                }
                assert!((got[i * 4 + o] - best).abs() < 1e-12);
            }
        }
    }
}

//! GCN encoders, the per-edge probability head and the pooled classifier,
//! all built on tape values so gradients reach adjacency entries as well as
//! parameters.

use rand::Rng;

use crate::diffmath::{Bound, DiffError, NumArray, ParamId, ParamStore, Tape, Value};
use crate::noise::NoiseSource;

/// Edge probabilities are clamped into this interval before any log.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_glorot(format!("{prefix}/weight"), fan_in, fan_out, rng);
        let bias = store.add_zeros(format!("{prefix}/bias"), &[fan_out]);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Value) -> Result<Value, DiffError> {
        let xw = tape.matmul(x, bound.var(self.weight))?;
        tape.add_row(xw, bound.var(self.bias))
    }
}

fn maybe_dropout(
    tape: &mut Tape,
    v: Value,
    rate: f64,
    noise: Option<&mut dyn NoiseSource>,
) -> Result<Value, DiffError> {
    match noise {
        Some(n) if rate > 0.0 => tape.dropout(v, rate, || n.uniform()),
        _ => Ok(v),
    }
}

/// Stack of symmetric-normalized graph convolutions with self loops.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<Linear>,
    /// Inverted-dropout rate between layers; 0 disables it.
    pub dropout: f64,
}

impl GnnParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| Linear::new(store, &format!("{prefix}/gnn{l}"), if l == 0 { in_dim } else { hidden }, hidden, rng))
            .collect();
        Self { layers, dropout: 0.0 }
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        self.layers.last().map_or(0, |l| store.get(l.bias).len())
    }
}

/// Two-layer perceptron `W₂·ReLU(W₁x + b₁) + b₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl MlpParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{prefix}/mlp0"), in_dim, hidden, rng),
            out: Linear::new(store, &format!("{prefix}/mlp1"), hidden, out_dim, rng),
            dropout: 0.0,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Value,
        noise: Option<&mut dyn NoiseSource>,
    ) -> Result<Value, DiffError> {
        let h = self.hidden.forward(tape, bound, x)?;
        let h = tape.relu(h)?;
        let h = maybe_dropout(tape, h, self.dropout, noise)?;
        self.out.forward(tape, bound, h)
    }
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` with D̃ the row sums of `A+I`.
pub fn normalized_adjacency(tape: &mut Tape, adj: Value) -> Result<Value, DiffError> {
    let shape = tape.value(adj).shape().to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(DiffError::Dimension { op: "normalized_adjacency", detail: format!("{shape:?} is not square") });
    }
    let n = shape[0];
    let eye = tape.constant(NumArray::identity(n));
    let looped = tape.add(adj, eye)?;
    let deg = tape.sum(looped, Some(1))?;
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let col = tape.reshape(inv_sqrt, &[n, 1])?;
    let row = tape.reshape(inv_sqrt, &[1, n])?;
    let scale = tape.matmul(col, row)?;
    tape.mul(looped, scale)
}

/// L rounds of `H ← ReLU(Â·H·W + b)`.
pub fn gcn_forward(
    tape: &mut Tape,
    bound: &Bound,
    params: &GnnParams,
    adj: Value,
    x: Value,
    mut noise: Option<&mut dyn NoiseSource>,
) -> Result<Value, DiffError> {
    let n = tape.value(adj).rows();
    if tape.value(x).rank() != 2 || tape.value(x).rows() != n {
        return Err(DiffError::Dimension {
            op: "gcn_forward",
            detail: format!("features {:?} for {n} nodes", tape.value(x).shape()),
        });
    }
    let a_hat = normalized_adjacency(tape, adj)?;
    let mut h = x;
    for (l, layer) in params.layers.iter().enumerate() {
        let hw = tape.matmul(h, bound.var(layer.weight))?;
        let agg = tape.matmul(a_hat, hw)?;
        let z = tape.add_row(agg, bound.var(layer.bias))?;
        h = tape.relu(z)?;
        if l + 1 < params.layers.len() {
            h = maybe_dropout(tape, h, params.dropout, crate::noise::reborrow(&mut noise))?;
        }
    }
    Ok(h)
}

/// `p_ij = σ(MLP([z_i, z_j]))` per canonical edge, or with edge features
/// `σ(MLP([z_i + e_ij, z_j + e_ij]))`. Output shape `[|E|]`, values clamped
/// into `[PROB_FLOOR, 1 − PROB_FLOOR]`.
pub fn edge_prob(
    tape: &mut Tape,
    bound: &Bound,
    params: &MlpParams,
    z: Value,
    edges: &[(usize, usize)],
    edge_feat: Option<Value>,
    noise: Option<&mut dyn NoiseSource>,
) -> Result<Value, DiffError> {
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let mut zi = tape.gather_rows(z, &src)?;
    let mut zj = tape.gather_rows(z, &dst)?;
    if let Some(ef) = edge_feat {
        if tape.value(ef).shape() != tape.value(zi).shape() {
            return Err(DiffError::Dimension {
                op: "edge_prob",
                detail: format!(
                    "edge features {:?} vs node embeddings {:?}",
                    tape.value(ef).shape(),
                    tape.value(zi).shape()
                ),
            });
        }
        zi = tape.add(zi, ef)?;
        zj = tape.add(zj, ef)?;
    }
    let pair = tape.concat(zi, zj, 1)?;
    let logits = params.forward(tape, bound, pair, noise)?;
    let flat = tape.reshape(logits, &[edges.len()])?;
    let p = tape.sigmoid(flat)?;
    tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean-pooled GCN embedding mapped through the head: logits `[1×C]`
/// (or `[1×1]` for regression).
pub fn readout_classify(
    tape: &mut Tape,
    bound: &Bound,
    feat: &GnnParams,
    head: &MlpParams,
    adj: Value,
    x: Value,
    mut noise: Option<&mut dyn NoiseSource>,
) -> Result<Value, DiffError> {
    if tape.value(adj).rows() == 0 {
        return Err(DiffError::Domain { op: "readout_classify", detail: "graph has no nodes".into() });
    }
    let h = gcn_forward(tape, bound, feat, adj, x, crate::noise::reborrow(&mut noise))?;
    let pooled = tape.mean(h, Some(0))?;
    let d = tape.value(pooled).len();
    let row = tape.reshape(pooled, &[1, d])?;
    head.forward(tape, bound, row, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn edgeless_zero_weights_give_relu_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gnn = GnnParams::new(&mut store, "g", 1, 3, 2, &mut rng);
        for l in &gnn.layers {
            store.get_mut(l.weight).fill(0.0);
        }
        *store.get_mut(gnn.layers[1].bias) = NumArray::vector(vec![0.5, -1.0, 2.0]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let adj = tape.constant(NumArray::zeros(&[4, 4]));
        let x = tape.constant(NumArray::matrix(4, 1, vec![1.0; 4]).unwrap());
        let h = gcn_forward(&mut tape, &bound, &gnn, adj, x, None).unwrap();
        for r in 0..4 {
            assert_eq!(
                &tape.value(h).data()[r * 3..r * 3 + 3],
                &[0.5, 0.0, 2.0]
            );
        }
    }

    #[test]
    fn zero_head_gives_half_probability() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = MlpParams::new(&mut store, "m", 4, 5, 1, &mut rng);
        store.get_mut(head.out.weight).fill(0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let z = tape.constant(NumArray::matrix(3, 2, vec![0.3, -1.0, 2.0, 0.1, 0.0, 4.0]).unwrap());
        let p = edge_prob(&mut tape, &bound, &head, z, &[(0, 1), (1, 2)], None, None).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn edge_feature_width_must_match() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = MlpParams::new(&mut store, "m", 4, 5, 1, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let z = tape.constant(NumArray::zeros(&[3, 2]));
        let ef = tape.constant(NumArray::zeros(&[1, 3]));
        assert!(edge_prob(&mut tape, &bound, &head, z, &[(0, 1)], Some(ef), None).is_err());
    }
}

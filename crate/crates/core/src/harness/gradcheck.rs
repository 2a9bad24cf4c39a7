//! Finite-difference checks of every differentiable operation and of the
//! full collection objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffmath::{finite_diff_grad, max_relative_error, DiffError, NumArray, Tape, Value};
use crate::dive::{graph_objective, Collection, DiveError, ModelConfig, Mode};
use crate::graphdata::{Graph, Label, Task};
use crate::noise::{FrozenNoise, NoiseSource, RngNoise};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of scalar coordinates compared.
    pub coords: usize,
}

type OpFn = Box<dyn Fn(&mut Tape, &[Value]) -> Result<Value, DiffError>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> NumArray {
    let n = shape.iter().product();
    NumArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Uniform values whose magnitude is at least `gap`, with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> NumArray {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x = rng.gen_range(gap..1.0);
            if rng.gen::<bool>() {
                x
            } else {
                -x
            }
        })
        .collect();
    NumArray::new(shape.to_vec(), data).expect("shape")
}

/// `Σ w ⊙ out` with fixed pseudo-random weights, turning any output into a scalar.
fn weighted_sum(tape: &mut Tape, out: Value) -> Result<Value, DiffError> {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = NumArray::new(shape, (0..n).map(|i| 0.3 + 0.7 * ((i * 7 + 3) % 11) as f64 / 11.0).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod, None)
}

/// Compares backward gradients of `f` at `inputs` with central differences,
/// replaying frozen constants so both sides see the same piecewise branch.
pub fn check_function(
    name: &str,
    inputs: &[NumArray],
    f: &dyn Fn(&mut Tape, &[Value]) -> Result<Value, DiffError>,
) -> Result<CheckResult, DiffError> {
    let mut tape = Tape::recording();
    let vars: Vec<Value> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let root = weighted_sum(&mut tape, out)?;
    tape.backward(root)?;
    let constants = tape.take_recorded();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).cloned().unwrap_or_else(|| NumArray::zeros(x.shape()));
        let numeric = finite_diff_grad(
            |probe| {
                let mut t = Tape::replaying(constants.clone());
                let vs: Vec<Value> =
                    inputs.iter().enumerate().map(|(j, v)| t.param(if j == i { probe.clone() } else { v.clone() })).collect();
                let o = f(&mut t, &vs)?;
                let r = weighted_sum(&mut t, o)?;
                Ok(t.scalar(r))
            },
            x,
            FD_STEP,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR));
        coords += x.len();
    }
    Ok(CheckResult { name: name.to_string(), max_rel_error: worst, coords })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<NumArray>, OpFn)> {
    let m34 = uniform(rng, &[3, 4], -1.0, 1.0);
    let m45 = uniform(rng, &[4, 5], -1.0, 1.0);
    let m34b = uniform(rng, &[3, 4], -1.0, 1.0);
    let pos = uniform(rng, &[3, 4], 0.5, 2.0);
    let kinked = away_from_zero(rng, &[3, 4], 0.1);
    let s = uniform(rng, &[1], 0.5, 1.5);
    let row = uniform(rng, &[4], -1.0, 1.0);
    let edges = uniform(rng, &[3], -1.0, 1.0);
    let mut cases: Vec<(&'static str, Vec<NumArray>, OpFn)> = vec![
        ("matmul", vec![m34.clone(), m45], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![m34.clone(), m34b.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_broadcast", vec![m34.clone(), s.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![m34.clone(), m34b.clone()], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![m34.clone(), m34b.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul_broadcast", vec![s.clone(), m34.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("div", vec![m34.clone(), pos.clone()], Box::new(|t, v| t.div(v[0], v[1]))),
        ("div_broadcast", vec![m34.clone(), s.clone()], Box::new(|t, v| t.div(v[0], v[1]))),
        ("neg", vec![m34.clone()], Box::new(|t, v| t.neg(v[0]))),
        ("add_scalar", vec![m34.clone()], Box::new(|t, v| t.add_scalar(v[0], 0.7))),
        ("mul_scalar", vec![m34.clone()], Box::new(|t, v| t.mul_scalar(v[0], -1.3))),
        ("log", vec![pos.clone()], Box::new(|t, v| t.log(v[0]))),
        ("exp", vec![m34.clone()], Box::new(|t, v| t.exp(v[0]))),
        ("sigmoid", vec![m34.clone()], Box::new(|t, v| t.sigmoid(v[0]))),
        ("relu", vec![kinked.clone()], Box::new(|t, v| t.relu(v[0]))),
        ("clamp", vec![kinked.clone()], Box::new(|t, v| t.clamp(v[0], -0.05, 0.05))),
        ("powf", vec![pos.clone()], Box::new(|t, v| t.powf(v[0], -0.5))),
        (
            "stop_gradient",
            vec![m34.clone()],
            Box::new(|t, v| {
                let c = t.stop_gradient(v[0])?;
                t.mul(v[0], c)
            }),
        ),
        (
            "step",
            vec![m34.clone()],
            Box::new(|t, v| {
                let c = t.step(v[0], 0.0)?;
                t.mul(v[0], c)
            }),
        ),
        (
            "dropout",
            vec![m34.clone()],
            Box::new(|t, v| {
                let mut k = 0u64;
                t.dropout(v[0], 0.4, move || {
                    k += 1;
                    (k * 37 % 100) as f64 / 100.0
                })
            }),
        ),
        ("sum_all", vec![m34.clone()], Box::new(|t, v| t.sum(v[0], None))),
        ("sum_axis0", vec![m34.clone()], Box::new(|t, v| t.sum(v[0], Some(0)))),
        ("sum_axis1", vec![m34.clone()], Box::new(|t, v| t.sum(v[0], Some(1)))),
        ("mean_all", vec![m34.clone()], Box::new(|t, v| t.mean(v[0], None))),
        ("mean_axis0", vec![m34.clone()], Box::new(|t, v| t.mean(v[0], Some(0)))),
        ("concat_axis0", vec![m34.clone(), m34b.clone()], Box::new(|t, v| t.concat(v[0], v[1], 0))),
        ("concat_axis1", vec![m34.clone(), m34b.clone()], Box::new(|t, v| t.concat(v[0], v[1], 1))),
        ("add_row", vec![m34.clone(), row], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("reshape", vec![m34.clone()], Box::new(|t, v| t.reshape(v[0], &[2, 6]))),
        ("gather_rows", vec![m34.clone()], Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2]))),
        (
            "scatter_symmetric",
            vec![edges],
            Box::new(|t, v| t.scatter_symmetric(v[0], &[(0, 1), (1, 3), (2, 3)], 4)),
        ),
        ("cross_entropy", vec![m34.clone()], Box::new(|t, v| t.cross_entropy(v[0], &[1, 3, 0]))),
    ];
    let target = m34b;
    cases.push(("mse", vec![m34], Box::new(move |t, v| t.mse(v[0], &target))));
    cases
}

/// Every differentiable tape operation on random inputs.
pub fn check_ops(seed: u64) -> Result<Vec<CheckResult>, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases(&mut rng).into_iter().map(|(name, inputs, f)| check_function(name, &inputs, f.as_ref())).collect()
}

/// A 6-node graph: a triangle and a square sharing one node, plus a tail.
pub fn six_node_fixture(label: usize) -> Graph {
    let edges = vec![(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (2, 5)];
    let feats = NumArray::new(vec![6, 2], (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect()).expect("shape");
    let gt = vec![true, true, true, false, false, false, false];
    Graph::new(6, edges, feats, None, Label::Class(label), Some(gt), "fixture").expect("valid fixture")
}

/// Gradient of the collection objective with respect to every parameter, on
/// one graph with frozen Gumbel noise.
pub fn check_collection_loss(
    coll: &Collection,
    g: &Graph,
    noise_seed: u64,
) -> Result<Vec<CheckResult>, DiveError> {
    let draws = coll.size() * g.num_edges();
    let frozen = FrozenNoise::capture(&mut RngNoise(ChaCha8Rng::seed_from_u64(noise_seed)), draws);

    let mut tape = Tape::recording();
    let bound = coll.params.bind(&mut tape, true);
    let mut noise = frozen.clone();
    let terms = graph_objective(&mut tape, &bound, coll, g, Some(&mut noise as &mut dyn NoiseSource), Mode::Train)?;
    tape.backward(terms.total)?;
    let analytic = bound.grads(&tape);
    let constants = tape.take_recorded();

    let mut out = Vec::with_capacity(coll.params.len());
    for (j, value) in coll.params.values().iter().enumerate() {
        let mut probe_coll = coll.clone();
        let numeric = finite_diff_grad(
            |probe| {
                probe_coll.params.values_mut()[j] = probe.clone();
                let mut t = Tape::replaying(constants.clone());
                let b = probe_coll.params.bind(&mut t, true);
                let mut n = frozen.clone();
                let terms = graph_objective(&mut t, &b, &probe_coll, g, Some(&mut n as &mut dyn NoiseSource), Mode::Train)
                    .map_err(|e| match e {
                        DiveError::Diff(d) => d,
                        other => DiffError::Usage(other.to_string()),
                    })?;
                Ok(t.scalar(terms.total))
            },
            value,
            FD_STEP,
        )?;
        out.push(CheckResult {
            name: coll.params.names()[j].clone(),
            max_rel_error: max_relative_error(&analytic[j], &numeric, FD_FLOOR),
            coords: value.len(),
        });
    }
    Ok(out)
}

/// The op suite plus the objective of a two-member collection on the
/// six-node fixture.
pub fn run_suite(seed: u64, hidden: usize) -> Result<Vec<CheckResult>, DiveError> {
    let mut results = check_ops(seed)?;
    let model = ModelConfig { hidden, layers: 2, mlp_hidden: hidden, ..ModelConfig::default() };
    let coll = Collection::new(Task::Classification { num_classes: 3 }, 2, 2, 0.5, 1.0, model, seed)?;
    for r in check_collection_loss(&coll, &six_node_fixture(1), seed ^ 0x5eed)? {
        results.push(CheckResult { name: format!("loss:{}", r.name), ..r });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes() {
        for r in check_ops(3).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn frozen_constants_keep_both_sides_on_one_branch() {
        let x = NumArray::vector(vec![0.3, -0.2]);
        let r = check_function("x_stop_x", &[x], &|t, v| {
            let c = t.stop_gradient(v[0])?;
            t.mul(v[0], c)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn collection_loss_passes() {
        for r in run_suite(5, 4).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
        }
    }
}

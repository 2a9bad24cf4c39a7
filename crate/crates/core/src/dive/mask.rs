use crate::diffmath::{NumArray, Tape, Value};
use crate::graphdata::{adjacency, Graph};
use crate::noise::NoiseSource;

use super::{DiveError, Mode};

/// Edge probabilities, their straight-through samples and the masked adjacency.
#[derive(Clone, Copy, Debug)]
pub struct EdgeMaskResult {
    /// `[|E|]` probabilities.
    pub p: Value,
    /// `[|E|]` mask values, each 0 or 1 in the forward pass.
    pub m: Value,
    /// `[n×n]` adjacency restricted to the kept edges.
    pub a_p: Value,
}

/// Samples a hard edge mask from probabilities `p`.
///
/// Train mode: `q = σ((ln p + G)/τ)`, `q' = 1[q > 0.5]` and
/// `m = q' + p − stop(p)`, so `m` carries the value of `q'` and a unit
/// derivative with respect to `p`. Since `q > 0.5 ⟺ G > −ln p`, an edge is
/// kept with probability `1 − e^{−p}` whatever τ is.
///
/// Eval mode: `m = 1[p > 0.5]` with no noise and no gradient.
pub fn gumbel_sigmoid_mask(
    tape: &mut Tape,
    p: Value,
    tau: f64,
    noise: Option<&mut dyn NoiseSource>,
    mode: Mode,
) -> Result<Value, DiveError> {
    if !(tau > 0.0) {
        return Err(DiveError::Parameter(format!("temperature must be positive, got {tau}")));
    }
    match mode {
        Mode::Eval => Ok(tape.step(p, 0.5)?),
        Mode::Train => {
            let noise = noise.ok_or_else(|| DiveError::Usage("training-mode masks need a noise source".into()))?;
            let n = tape.value(p).len();
            let g = tape.constant(NumArray::vector((0..n).map(|_| noise.gumbel()).collect()));
            let log_p = tape.log(p)?;
            let shifted = tape.add(log_p, g)?;
            let scaled = tape.mul_scalar(shifted, 1.0 / tau)?;
            let q = tape.sigmoid(scaled)?;
            let hard = tape.step(q, 0.5)?;
            let frozen_p = tape.stop_gradient(p)?;
            let through = tape.sub(p, frozen_p)?;
            Ok(tape.add(hard, through)?)
        }
    }
}

/// Scatters per-edge mask values symmetrically and multiplies by `A`.
pub fn masked_adjacency(tape: &mut Tape, g: &Graph, m: Value) -> Result<Value, DiveError> {
    let scattered = tape.scatter_symmetric(m, g.edges(), g.num_nodes())?;
    let a = tape.constant(adjacency(g));
    Ok(tape.mul(scattered, a)?)
}

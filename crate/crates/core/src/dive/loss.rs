use crate::diffmath::{Bound, Tape, Value};
use crate::graphdata::Graph;
use crate::noise::NoiseSource;

use super::mask::EdgeMaskResult;
use super::model::{forward_one, task_loss, Collection};
use super::{DiveError, Mode};

/// Unions smaller than this count as empty and contribute zero overlap.
pub const UNION_GUARD: f64 = 1e-9;

/// `Σ mᵢmⱼ / (Σ mᵢ + Σ mⱼ − Σ mᵢmⱼ)`, or 0 when the union is empty.
pub fn jaccard_pair(tape: &mut Tape, a: Value, b: Value) -> Result<Value, DiveError> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(DiveError::Parameter(format!(
            "mask lengths differ: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    let prod = tape.mul(a, b)?;
    let inter = tape.sum(prod, None)?;
    let sa = tape.sum(a, None)?;
    let sb = tape.sum(b, None)?;
    let both = tape.add(sa, sb)?;
    let union = tape.sub(both, inter)?;
    if tape.scalar(union) < UNION_GUARD {
        return Ok(tape.scalar_const(0.0));
    }
    Ok(tape.div(inter, union)?)
}

/// Mean Jaccard overlap over unordered pairs of one graph's masks.
pub fn jaccard_diversity(tape: &mut Tape, masks: &[Value]) -> Result<Value, DiveError> {
    if masks.len() < 2 {
        return Err(DiveError::Parameter(format!("diversity needs at least two masks, got {}", masks.len())));
    }
    let mut acc: Option<Value> = None;
    let mut pairs = 0usize;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let term = jaccard_pair(tape, masks[i], masks[j])?;
            acc = Some(match acc {
                Some(s) => tape.add(s, term)?,
                None => term,
            });
            pairs += 1;
        }
    }
    Ok(tape.mul_scalar(acc.expect("at least one pair"), 1.0 / pairs as f64)?)
}

/// Every term of the objective for a single graph.
#[derive(Clone, Debug)]
pub struct GraphTerms {
    /// `(1/m)·Σ main + λ·diversity` (just the mean main loss when m = 1).
    pub total: Value,
    pub main: Vec<Value>,
    pub diversity: Option<Value>,
    pub logits: Vec<Value>,
    pub masks: Vec<EdgeMaskResult>,
}

/// Runs every member on `g` and assembles its share of the objective.
/// Noise is drawn member by member, edge by edge.
pub fn graph_objective(
    tape: &mut Tape,
    bound: &Bound,
    coll: &Collection,
    g: &Graph,
    mut noise: Option<&mut dyn NoiseSource>,
    mode: Mode,
) -> Result<GraphTerms, DiveError> {
    let mut main = Vec::with_capacity(coll.size());
    let mut logits = Vec::with_capacity(coll.size());
    let mut masks = Vec::with_capacity(coll.size());
    for pred in &coll.predictors {
        let (lg, mask) = forward_one(tape, bound, pred, g, coll.tau, crate::noise::reborrow(&mut noise), mode)?;
        main.push(task_loss(tape, lg, g, coll.task)?);
        logits.push(lg);
        masks.push(mask);
    }
    let mut sum = main[0];
    for &l in &main[1..] {
        sum = tape.add(sum, l)?;
    }
    let mean_main = tape.mul_scalar(sum, 1.0 / coll.size() as f64)?;
    let (total, diversity) = if coll.size() >= 2 {
        let ms: Vec<Value> = masks.iter().map(|m| m.m).collect();
        let ld = jaccard_diversity(tape, &ms)?;
        let weighted = tape.mul_scalar(ld, coll.lambda)?;
        (tape.add(mean_main, weighted)?, Some(ld))
    } else {
        (mean_main, None)
    };
    Ok(GraphTerms { total, main, diversity, logits, masks })
}

/// The collection objective over a batch, with its parts.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Value,
    /// Batch-mean task loss of each member.
    pub main: Vec<f64>,
    /// Batch-mean diversity term; `None` for a single-member collection.
    pub diversity: Option<f64>,
}

/// `L = (1/m)·Σᵢ L_mainⁱ + λ·L_d` over a batch on one tape, where each part is
/// a mean over the batch's graphs.
pub fn total_loss(
    tape: &mut Tape,
    bound: &Bound,
    coll: &Collection,
    batch: &[&Graph],
    mut noise: Option<&mut dyn NoiseSource>,
    mode: Mode,
) -> Result<LossParts, DiveError> {
    if batch.is_empty() {
        return Err(DiveError::Usage("total_loss needs a nonempty batch".into()));
    }
    let b = batch.len() as f64;
    let mut acc: Option<Value> = None;
    let mut main = vec![0.0; coll.size()];
    let mut diversity = coll.size().ge(&2).then_some(0.0);
    for g in batch {
        let terms = graph_objective(tape, bound, coll, g, crate::noise::reborrow(&mut noise), mode)?;
        for (slot, &v) in main.iter_mut().zip(&terms.main) {
            *slot += tape.scalar(v) / b;
        }
        if let (Some(d), Some(v)) = (diversity.as_mut(), terms.diversity) {
            *d += tape.scalar(v) / b;
        }
        acc = Some(match acc {
            Some(s) => tape.add(s, terms.total)?,
            None => terms.total,
        });
    }
    let total = tape.mul_scalar(acc.expect("nonempty batch"), 1.0 / b)?;
    Ok(LossParts { total, main, diversity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::NumArray;

    fn mask(tape: &mut Tape, bits: &[f64]) -> Value {
        tape.param(NumArray::vector(bits.to_vec()))
    }

    #[test]
    fn jaccard_identities() {
        let mut t = Tape::new();
        let a = mask(&mut t, &[1.0, 1.0, 1.0, 0.0]);
        let b = mask(&mut t, &[0.0, 1.0, 1.0, 1.0]);
        let c = mask(&mut t, &[0.0, 0.0, 0.0, 1.0]);
        let e = mask(&mut t, &[0.0; 4]);
        let j = jaccard_pair(&mut t, a, a).unwrap();
        assert_eq!(t.scalar(j), 1.0);
        let j = jaccard_pair(&mut t, a, c).unwrap();
        assert_eq!(t.scalar(j), 0.0);
        let j = jaccard_pair(&mut t, a, b).unwrap();
        assert_eq!(t.scalar(j), 0.5);
        let j = jaccard_pair(&mut t, e, e).unwrap();
        assert_eq!(t.scalar(j), 0.0);
    }

    #[test]
    fn diversity_needs_two_masks() {
        let mut t = Tape::new();
        let a = mask(&mut t, &[1.0]);
        assert!(matches!(jaccard_diversity(&mut t, &[a]), Err(DiveError::Parameter(_))));
    }

    #[test]
    fn diversity_averages_pairs() {
        let mut t = Tape::new();
        let a = mask(&mut t, &[1.0, 1.0, 0.0]);
        let b = mask(&mut t, &[1.0, 1.0, 0.0]);
        let c = mask(&mut t, &[0.0, 0.0, 1.0]);
        // pairs: (a,b)=1, (a,c)=0, (b,c)=0
        let d = jaccard_diversity(&mut t, &[a, b, c]).unwrap();
        assert!((t.scalar(d) - 1.0 / 3.0).abs() < 1e-15);
    }
}

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_prunable, ModelParams};
use crate::numerics::Real;

/// Which scalars of each prunable tensor were zeroed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMask {
    pub name: String,
    pub pruned: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub tensors: Vec<TensorMask>,
    pub sparsity: f64,
    /// Scalars eligible for pruning (weights outside the style layer).
    pub prunable: usize,
    pub pruned: usize,
}

/// A [`PruneMask`] re-indexed by position in a parameter list.
pub(crate) struct AlignedMask {
    per_param: Vec<Option<Vec<bool>>>,
}

impl AlignedMask {
    pub(crate) fn zero_masked<T: Real>(&self, index: usize, data: &mut [T]) {
        if let Some(Some(mask)) = self.per_param.get(index) {
            for (v, &m) in data.iter_mut().zip(mask) {
                if m {
                    *v = T::zero();
                }
            }
        }
    }
}

impl PruneMask {
    pub(crate) fn aligned_with<T: Real>(&self, params: &ModelParams<T>) -> Result<AlignedMask> {
        let mut per_param = vec![None; params.params.len()];
        for tm in &self.tensors {
            let (i, p) = params
                .params
                .iter()
                .enumerate()
                .find(|(_, p)| p.name == tm.name)
                .ok_or_else(|| Error::config(format!("prune mask names unknown tensor {}", tm.name)))?;
            if p.value.numel() != tm.pruned.len() {
                return Err(Error::dim(format!(
                    "prune mask for {} covers {} entries, tensor has {}",
                    tm.name,
                    tm.pruned.len(),
                    p.value.numel()
                )));
            }
            per_param[i] = Some(tm.pruned.clone());
        }
        Ok(AlignedMask { per_param })
    }
}

/// Zero the `floor(sparsity * P)` smallest-magnitude prunable weights across the
/// whole model. Ties go to the lexicographically smaller `(tensor name, flat index)`.
pub fn prune_global<T: Real>(params: &ModelParams<T>, sparsity: f64) -> Result<(ModelParams<T>, PruneMask)> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::config(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    let candidates: Vec<usize> =
        params.params.iter().enumerate().filter(|(_, p)| is_prunable(&p.name)).map(|(i, _)| i).collect();
    let prunable: usize = candidates.iter().map(|&i| params.params[i].value.numel()).sum();
    let k = (sparsity * prunable as f64).floor() as usize;

    let mut entries: Vec<(f64, &str, usize, usize)> = Vec::with_capacity(prunable);
    for &i in &candidates {
        let p = &params.params[i];
        entries.extend(p.value.data().iter().enumerate().map(|(j, v)| (v.as_f64().abs(), p.name.as_str(), i, j)));
    }
    let order = |a: &(f64, &str, usize, usize), b: &(f64, &str, usize, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.3.cmp(&b.3))
    };
    if k > 0 && k < entries.len() {
        entries.select_nth_unstable_by(k - 1, order);
    }
    let mut out = params.clone();
    let mut masks: Vec<Vec<bool>> = candidates.iter().map(|&i| vec![false; params.params[i].value.numel()]).collect();
    for &(_, _, i, j) in entries.iter().take(k) {
        out.params[i].value.data_mut()[j] = T::zero();
        let slot = candidates.iter().position(|&c| c == i).expect("candidate index");
        masks[slot][j] = true;
    }
    let tensors = candidates
        .iter()
        .zip(masks)
        .map(|(&i, pruned)| TensorMask { name: params.params[i].name.clone(), pruned })
        .collect();
    Ok((out, PruneMask { tensors, sparsity, prunable, pruned: k }))
}

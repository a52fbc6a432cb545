//! Finite-difference verification of analytic gradients.
//!
//! The checker re-evaluates a scalar loss with each parameter component
//! perturbed by ±eps and compares the central difference against the
//! tape's gradient. It is deliberately independent of the backward pass:
//! it only calls the loss as a black box.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// Central-difference gradients of `loss` with respect to every component of
/// every parameter. `loss` must be a pure function of the parameter map.
pub fn central_difference<F>(
    params: &BTreeMap<String, Tensor>,
    eps: f64,
    mut loss: F,
) -> BTreeMap<String, Tensor>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> f64,
{
    let mut out = BTreeMap::new();
    let mut work = params.clone();
    for (name, tensor) in params {
        let mut grad = vec![0.0; tensor.numel()];
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            grad[i] = (up - down) / (2.0 * eps);
        }
        out.insert(name.clone(), Tensor::new(tensor.shape().to_vec(), grad).unwrap());
    }
    out
}

/// Result of comparing analytic against numeric gradients.
pub struct CompareReport {
    pub worst_rel: f64,
    pub worst_at: String,
    pub tolerance: f64,
    pub components: usize,
}

impl CompareReport {
    pub fn ok(&self) -> bool {
        self.worst_rel <= self.tolerance
    }
}

/// Relative error with an absolute floor: components where both sides are
/// below `floor` are treated as matching (finite differences are pure noise
/// there).
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compare two gradient maps component by component.
pub fn compare(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
    tolerance: f64,
    floor: f64,
) -> CompareReport {
    let mut worst_rel = 0.0;
    let mut worst_at = String::from("-");
    let mut components = 0;
    for (name, a) in analytic {
        let n = &numeric[name];
        for (i, (av, nv)) in a.data().iter().zip(n.data()).enumerate() {
            components += 1;
            let rel = relative_error(*av, *nv, floor);
            if rel > worst_rel {
                worst_rel = rel;
                worst_at = format!("{name}[{i}] analytic={av:.3e} numeric={nv:.3e}");
            }
        }
    }
    CompareReport { worst_rel, worst_at, tolerance, components }
}

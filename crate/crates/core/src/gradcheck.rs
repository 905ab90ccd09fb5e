//! Central finite-difference gradient checking, used by the test suites to
//! validate every primitive op and the end-to-end frame loss. Kept out of
//! test code so integration tests and unit tests share one checker.

use crate::error::Result;
use crate::tensor::{Graph, NodeId, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds a scalar loss from leaves that were inserted for `inputs`.
pub type LossBuilder<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn eval(build: &LossBuilder, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| g.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &ids)?;
    g.value(loss).item()
}

/// Compare analytic gradients of `build` against central finite differences
/// at the given input point. `components`: None checks every component,
/// Some(k) checks a deterministic stride-spread subset of k per input.
pub fn check_gradients(
    build: &LossBuilder,
    inputs: &[Tensor],
    step: f64,
    rel_tol: f64,
    components: Option<usize>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = true;
            g.leaf(t)
        })
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(id).len()]))
        .collect();

    let mut max_rel = 0.0_f64;
    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        let n = t.len();
        let picks: Vec<usize> = match components {
            Some(k) if k < n => {
                let stride = (n / k).max(1);
                (0..n).step_by(stride).take(k).collect()
            }
            _ => (0..n).collect(),
        };
        for j in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            let fd = (eval(build, &plus)? - eval(build, &minus)?) / (2.0 * step);
            let a = analytic[i][j];
            let denom = a.abs().max(fd.abs());
            let err = (a - fd).abs();
            // The absolute term absorbs the finite-difference noise floor
            // (cancellation + truncation at this step size).
            let budget = rel_tol * denom + 1e-9;
            let rel = if denom > 0.0 { err / denom } else { 0.0 };
            if rel > max_rel && err > 1e-9 {
                max_rel = rel;
            }
            checked += 1;
            if err > budget {
                return Err(crate::error::Error::Contract(format!(
                    "gradient mismatch at input {i} component {j}: analytic {a:.9e}, finite-diff {fd:.9e}, rel err {rel:.3e} > {rel_tol:.1e}"
                )));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        checked,
    })
}

//! Central finite-difference checks of analytic gradients.
//!
//! Only forward evaluations feed the numerical estimate, so the check stays
//! independent of the backward kernels it verifies.

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
    pub max_rel_err: f64,
    /// Tensor that produced `max_rel_err`.
    pub worst: String,
    /// Number of scalar entries probed.
    pub probed: usize,
    /// Per-tensor `(name, relative error)`.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Entries probed per tensor, spread evenly across the tensor.
    pub max_entries: usize,
    /// Gradient norms below `zero_floor · max(1, |loss|)` are treated as
    /// exactly zero; central differences cannot resolve anything smaller
    /// than roughly `ε_machine · |loss| / step`.
    pub zero_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries: 24,
            zero_floor: 1e-8,
        }
    }
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    // Spread across the tensor with a stride coprime-ish to typical shapes.
    let stride = len as f64 / max as f64;
    (0..max).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < floor {
        0.0
    } else {
        diff / scale
    }
}

/// Checks gradients of the scalar built by `loss` with respect to every
/// tensor of `params` (or only those accepted by `filter`).
pub fn check_params<F>(
    params: &ParamStore,
    filter: impl Fn(&str) -> bool,
    opts: GradCheckOptions,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let l = loss(&mut g, &b)?;
        Ok(g.value(l).item())
    };

    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let l = loss(&mut g, &bound)?;
    let grads = g.backward(l)?;
    let analytic = bound.collect_grads(&g, &grads);
    let floor = opts.zero_floor * g.value(l).item().abs().max(1.0);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        probed: 0,
        per_tensor: Vec::new(),
    };
    let mut work = params.clone();
    let names: Vec<String> = params.names().filter(|n| filter(n)).cloned().collect();
    for name in names {
        let len = params.get(&name).map(Tensor::len).unwrap_or(0);
        let idx = probe_indices(len, opts.max_entries);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = params.get(&name).expect("name").data()[i];
            work.get_mut(&name).expect("name").data_mut()[i] = orig + opts.step;
            let up = eval(&work)?;
            work.get_mut(&name).expect("name").data_mut()[i] = orig - opts.step;
            let down = eval(&work)?;
            work.get_mut(&name).expect("name").data_mut()[i] = orig;
            n.push((up - down) / (2.0 * opts.step));
            a.push(analytic.get(&name).expect("grad").data()[i]);
        }
        let err = rel_err(&a, &n, floor);
        report.probed += idx.len();
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = name.clone();
        }
        report.per_tensor.push((name, err));
    }
    Ok(report)
}

/// Checks the gradient with respect to a single input tensor.
pub fn check_input<F>(input: &Tensor, opts: GradCheckOptions, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let l = loss(&mut g, x)?;
    let floor = opts.zero_floor * g.value(l).item().abs().max(1.0);
    let grads = g.backward(l)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let l = loss(&mut g, x)?;
        Ok(g.value(l).item())
    };
    let idx = probe_indices(input.len(), opts.max_entries);
    let mut work = input.clone();
    let mut a = Vec::new();
    let mut n = Vec::new();
    for &i in &idx {
        let orig = input.data()[i];
        work.data_mut()[i] = orig + opts.step;
        let up = eval(&work)?;
        work.data_mut()[i] = orig - opts.step;
        let down = eval(&work)?;
        work.data_mut()[i] = orig;
        n.push((up - down) / (2.0 * opts.step));
        a.push(analytic.data()[i]);
    }
    Ok(rel_err(&a, &n, floor))
}

//! Central finite-difference checks of tape gradients in `f64`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over all probed entries.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub probes: usize,
}

/// Relative error of one entry. The floor keeps entries that are zero up to
/// finite-difference noise from dominating; it scales with the largest
/// numeric gradient of the same tensor.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `f`'s tape gradient with respect to every input against central
/// differences with step `h`. At most `max_probes` entries per input are
/// probed, evenly spaced.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], max_probes: usize, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        probes: 0,
    };
    let mut xs = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let count = n.min(max_probes.max(1));
        let idx: Vec<usize> = (0..count).map(|k| k * n / count).collect();
        let mut numeric = Vec::with_capacity(count);
        for &k in &idx {
            let x0 = input.data[k];
            xs[ii].data[k] = x0 + h;
            let fp = eval(&xs)?;
            xs[ii].data[k] = x0 - h;
            let fm = eval(&xs)?;
            xs[ii].data[k] = x0;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let floor = (1e-3 * scale).max(1e-8);
        for (&k, &num) in idx.iter().zip(&numeric) {
            let e = rel_error(analytic[ii].data[k], num, floor);
            report.probes += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = (ii, k);
            }
        }
    }
    Ok(report)
}

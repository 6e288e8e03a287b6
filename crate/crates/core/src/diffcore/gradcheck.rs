use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{arg_err, Result};

/// Gradients below this magnitude are compared absolutely; their difference
/// quotients are dominated by rounding.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per leaf; larger leaves are subsampled.
    pub max_probes_per_leaf: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            max_probes_per_leaf: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, [`GRAD_FLOOR`])
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes dropped because the difference quotient straddled a kink.
    pub skipped: usize,
}

/// A leaf of the checked function: its value and whether to probe it.
#[derive(Clone, Debug)]
pub struct CheckLeaf {
    pub value: Tensor<f64>,
    pub probe: bool,
}

impl CheckLeaf {
    pub fn probed(value: Tensor<f64>) -> Self {
        CheckLeaf { value, probe: true }
    }

    pub fn fixed(value: Tensor<f64>) -> Self {
        CheckLeaf { value, probe: false }
    }
}

fn evaluate<F>(leaves: &[CheckLeaf], f: &F, grad: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|l| g.leaf(l.value.clone(), grad && l.probe))
        .collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).shape().is_scalar() {
        return Err(arg_err!("checked function must return a scalar"));
    }
    Ok((g, vars, out))
}

/// Compares reverse-mode gradients of a scalar f64 function against central
/// differences.
///
/// Piecewise-linear ops (relu, clamp, max-pool, abs) make the difference
/// quotient wrong whenever the probe interval crosses a kink. Each probe is
/// therefore evaluated at `eps` and `eps/2`; on smooth stretches the two agree
/// to O(eps²), so disagreement marks a kink crossing and the probe is skipped.
pub fn grad_check<F>(leaves: &[CheckLeaf], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(arg_err!("grad_check eps must be positive"));
    }
    let (mut g, vars, out) = evaluate(leaves, &f, true)?;
    g.backward(out)?;
    let analytic: Vec<Option<Tensor<f64>>> = vars.iter().map(|v| g.grad(*v).cloned()).collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<CheckLeaf> = leaves.to_vec();
    let mut report = GradCheckReport::default();
    let eval_at = |work: &mut Vec<CheckLeaf>, li: usize, idx: usize, x0: f64, delta: f64| -> Result<f64> {
        work[li].value.data_mut()[idx] = x0 + delta;
        let (g, _, out) = evaluate(work, &f, false)?;
        Ok(g.value(out).item())
    };
    for li in 0..leaves.len() {
        if !leaves[li].probe {
            continue;
        }
        let n = leaves[li].value.data().len();
        let coords: Vec<usize> = if n <= opts.max_probes_per_leaf {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_probes_per_leaf).into_vec()
        };
        for idx in coords {
            let x0 = leaves[li].value.data()[idx];
            let h = opts.eps;
            let fp = eval_at(&mut work, li, idx, x0, h)?;
            let fm = eval_at(&mut work, li, idx, x0, -h)?;
            let fp2 = eval_at(&mut work, li, idx, x0, h / 2.0)?;
            let fm2 = eval_at(&mut work, li, idx, x0, -h / 2.0)?;
            work[li].value.data_mut()[idx] = x0;
            let n1 = (fp - fm) / (2.0 * h);
            let n2 = (fp2 - fm2) / h;
            let scale = n1.abs().max(n2.abs()).max(1e-6);
            if (n1 - n2).abs() > 1e-4 * scale {
                report.skipped += 1;
                continue;
            }
            let a = analytic[li].as_ref().map_or(0.0, |t| t.data()[idx]);
            let rel = (a - n1).abs() / a.abs().max(n1.abs()).max(GRAD_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.probes += 1;
        }
    }
    Ok(report)
}

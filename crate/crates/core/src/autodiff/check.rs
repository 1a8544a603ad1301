use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_parameter: Vec<f64>,
    /// Entries skipped because a perturbation crossed a relu kink.
    pub excluded: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_parameter.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every entry of every parameter with central differences of step
/// `eps`. `build` records the loss on a fresh graph given the parameter
/// leaves and is re-run for each perturbation.
///
/// Entries whose perturbation changes the sign pattern of any relu input are
/// excluded: the loss is not differentiable there.
pub fn grad_check<F>(params: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if let Some(v) = params.iter().flat_map(|p| p.data()).find(|v| !v.is_finite() || v.abs() > 1e3) {
        return Err(Error::Contract(format!("parameter value {v} outside [-1e3, 1e3]; rescale before checking")));
    }
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<i8>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g.value(loss).item(), g.relu_signature()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let base_sig = g.relu_signature();
    let grads = g.backward(loss)?;

    let mut work = params.to_vec();
    let mut per_parameter = Vec::with_capacity(params.len());
    let (mut excluded, mut checked) = (0, 0);
    for (p, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        let mut worst = 0.0f64;
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let (plus, sig_p) = eval(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let (minus, sig_m) = eval(&work)?;
            work[p].data_mut()[i] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            checked += 1;
        }
        per_parameter.push(worst);
    }
    Ok(GradCheckReport { per_parameter, excluded, checked })
}

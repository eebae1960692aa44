//! Centered-finite-difference verification of tape gradients.

use super::{AutodiffError, Elem, Graph, ParamSet, Var};

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_coords: usize,
}

/// Compare tape gradients of a scalar loss against centered finite
/// differences over every trainable coordinate in `params`.
///
/// `f` must be a pure function of the parameter values: it is re-evaluated
/// once per perturbed coordinate. The relative error per coordinate is
/// `|ga - gn| / max(1e-8, |ga| + |gn|)`; the report carries the maximum.
pub fn grad_check<E, F>(
    params: &mut ParamSet<E>,
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    E: Elem,
    F: FnMut(&mut Graph<E>, &ParamSet<E>) -> Result<Var, AutodiffError>,
{
    params.zero_grads();
    let mut graph = Graph::new();
    let loss = f(&mut graph, params)?;
    let l0 = graph.scalar_value(loss)?;
    if !l0.is_finite() {
        return Err(AutodiffError::NonFiniteLoss(l0));
    }
    graph.backward(loss)?;
    graph.write_grads(params);

    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_coords: 0,
    };
    for name in &names {
        let n = params.get(name).unwrap().data.len();
        for i in 0..n {
            let orig = params.get(name).unwrap().data.as_slice().unwrap()[i];
            let ga = params.get(name).unwrap().grad.as_slice().unwrap()[i].as_f64();
            let setter = |ps: &mut ParamSet<E>, v: E| {
                ps.get_mut(name).unwrap().data.as_slice_mut().unwrap()[i] = v;
            };
            setter(params, orig + E::from_f64(eps));
            let lp = eval_scalar(params, &mut f)?;
            setter(params, orig - E::from_f64(eps));
            let lm = eval_scalar(params, &mut f)?;
            setter(params, orig);
            let gn = (lp - lm) / (2.0 * eps);
            let rel = (ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8);
            report.n_coords += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = ga;
                report.numeric = gn;
            }
        }
    }
    Ok(report)
}

fn eval_scalar<E, F>(params: &ParamSet<E>, f: &mut F) -> Result<f64, AutodiffError>
where
    E: Elem,
    F: FnMut(&mut Graph<E>, &ParamSet<E>) -> Result<Var, AutodiffError>,
{
    let mut graph = Graph::new();
    let loss = f(&mut graph, params)?;
    let v = graph.scalar_value(loss)?;
    if !v.is_finite() {
        return Err(AutodiffError::NonFiniteLoss(v));
    }
    Ok(v)
}

use super::{Binding, Graph, Tensor, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

pub const DEFAULT_EPS: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar(graph: &Graph, v: Var) -> f64 {
    graph
        .value(v)
        .item()
        .expect("gradcheck function must return a scalar")
}

/// Largest relative disagreement between the reverse-mode gradient of `f`
/// at `x` and a central difference with step `eps`, where the error of a
/// coordinate is `|a - n| / max(1, |a|, |n|)`.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    gradcheck_in(Graph::new, f, x, eps)
}

/// [`gradcheck`] with a caller-supplied graph constructor.
pub fn gradcheck_in<G, F>(new_graph: G, f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    G: Fn() -> Graph,
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = new_graph();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    g.backward(y)?;
    let analytic = g
        .grad(xv)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |point: &Tensor| -> Result<f64> {
        let mut g = new_graph();
        let xv = g.param(point.clone());
        let y = f(&mut g, xv)?;
        Ok(scalar(&g, y))
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for (i, &exact) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(exact, numeric));
    }
    Ok(worst)
}

/// Gradient check of a scalar function over every coordinate of the listed
/// parameters.
pub fn gradcheck_params<G, F>(
    new_graph: G,
    f: F,
    store: &ParamStore,
    ids: &[ParamId],
    eps: f64,
) -> Result<f64>
where
    G: Fn() -> Graph,
    F: Fn(&mut Graph, &Binding) -> Result<Var>,
{
    let mut g = new_graph();
    let bind = g.bind(store, ids, true);
    let y = f(&mut g, &bind)?;
    g.backward(y)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad(bind.var(id))
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; store.get(id).len()])
        })
        .collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = new_graph();
        let bind = g.bind(s, ids, false);
        let y = f(&mut g, &bind)?;
        Ok(scalar(&g, y))
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for (i, &exact) in analytic[k].iter().enumerate() {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(exact, numeric));
        }
    }
    Ok(worst)
}

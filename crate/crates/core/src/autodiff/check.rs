use alloc::vec::Vec;

use super::{Graph, NodeId, ParamId, ParamStore};

/// Anything that owns a parameter store (a bare store, a model).
pub trait HasParams<T> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

impl<T> HasParams<T> for ParamStore<T> {
    fn params(&self) -> &ParamStore<T> {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self
    }
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
///
/// Central differences of an O(1) loss carry rounding noise near
/// `ε·|L|/h ≈ 1e-11` at `h = 1e-5`, so smaller gradients are compared
/// absolutely (to `1e-10` at a `1e-4` tolerance) rather than relatively.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares backward-pass gradients of one parameter against central differences.
///
/// `build` must construct the same scalar-valued graph each time it is
/// called. `coords` selects which elements to probe (all when `None`).
/// Returns the largest [`relative_error`] found.
pub fn finite_difference_check<M, F>(holder: &mut M, param: ParamId, coords: Option<&[usize]>, h: f64, mut build: F) -> f64
where
    M: HasParams<f64>,
    F: FnMut(&mut M) -> (Graph<f64>, NodeId),
{
    finite_difference_check_scaled(holder, param, coords, h, 1.0, |m| {
        let (g, loss) = build(m);
        (g, loss, loss)
    })
}

/// Like [`finite_difference_check`], but the backward pass starts at one
/// node while the differences are taken on another, and the analytic
/// gradient is compared against `scale` times the numeric one.
///
/// `build` returns `(graph, backward_node, value_node)`.
pub fn finite_difference_check_scaled<M, F>(
    holder: &mut M,
    param: ParamId,
    coords: Option<&[usize]>,
    h: f64,
    scale: f64,
    mut build: F,
) -> f64
where
    M: HasParams<f64>,
    F: FnMut(&mut M) -> (Graph<f64>, NodeId, NodeId),
{
    holder.params_mut().zero_grad();
    let (mut g, loss, _) = build(holder);
    g.backward(loss, holder.params_mut());
    let analytic = holder.params().get(param).grad.clone();
    holder.params_mut().zero_grad();

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = holder.params().get(param).value.data()[i];
        holder.params_mut().get_mut(param).value.data_mut()[i] = orig + h;
        let (g, _, v) = build(holder);
        let plus = g.scalar(v);
        holder.params_mut().get_mut(param).value.data_mut()[i] = orig - h;
        let (g, _, v) = build(holder);
        let minus = g.scalar(v);
        holder.params_mut().get_mut(param).value.data_mut()[i] = orig;
        let numeric = scale * (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

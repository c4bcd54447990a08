//! Central finite-difference gradient checks.

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::TensorError;

/// Max over coordinates of `|analytic - numeric| / (|analytic| + 1e-8)` for
/// the scalar function `f` at `x`, with central differences of step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let eval = |t: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let v = g.leaf(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let zero = vec![0.0; x.len()];
    let analytic = grads.wrt(v).unwrap_or(&zero);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8));
    }
    Ok(worst)
}

/// Same measure over every parameter of `store`. `f` builds the scalar
/// loss from the store.
pub fn grad_check_params<F>(f: F, store: &ParamStore, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut buf = crate::params::GradBuffer::new(store);
    buf.accumulate(&grads);
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = buf.get(id)[i];
            worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
        }
    }
    Ok(worst)
}

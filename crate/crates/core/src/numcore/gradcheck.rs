//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of [`relative_error`]. Central differences carry
/// roundoff near `1e-16 / eps`, so components far below this are compared
/// absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a| + |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares graph gradients of `f` at `points` against central differences.
///
/// `f` must build a scalar from the given leaves and be a pure function of
/// their values. Returns the maximum relative error over every coordinate of
/// every point.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut work = points.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(point), eps)
}

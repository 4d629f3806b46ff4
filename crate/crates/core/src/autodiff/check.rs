//! Central-difference gradient checks against the tape.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|g_ad - g_fd| / max(1, |g_fd|)` for a scalar
/// function of a single array.
pub fn finite_diff_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    finite_diff_check_multi(|vars| f(vars[0]), &[point.to_vec()], h)
}

/// Like [`finite_diff_check`] for a function of several arrays. Each input is
/// passed as a rank-1 `Var`; reshape inside `f` as needed.
pub fn finite_diff_check_multi<F>(f: F, points: &[Vec<f64>], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.var(&[p.len()], p.clone())).collect();
        let y = f(&vars);
        let g = tape.backward(y)?;
        vars.iter().map(|v| g.wrt(*v).values).collect()
    };
    let eval = |input: usize, coord: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut p = p.clone();
                if i == input {
                    p[coord] += delta;
                }
                tape.constant(&[p.len()], p)
            })
            .collect();
        let y = f(&vars).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite {
                input,
                coordinate: coord,
            })
        }
    };
    let mut worst: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for c in 0..p.len() {
            let fd = (eval(i, c, h)? - eval(i, c, -h)?) / (2.0 * h);
            let err = (analytic[i][c] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Like [`finite_diff_check`] for a stored parameter: `f` builds the loss from
/// `store` on a fresh tape, and the tape gradient for `id` is compared with
/// central differences of perturbed copies of the store. Only the coordinates
/// in `coords` are probed (all when `None`).
pub fn param_fd_check<F>(store: &ParamStore, id: ParamId, h: f64, coords: Option<&[usize]>, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Var<'t>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = {
        let tape = Tape::new();
        let y = f(&tape, store);
        let g = tape.backward(y)?;
        g.params()
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.values(id).len()])
    };
    let all: Vec<usize> = (0..analytic.len()).collect();
    let coords = coords.unwrap_or(&all);
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let base = store.values(id)[c];
        let mut eval = |delta: f64| -> Result<f64> {
            probe.get_mut(id).values[c] = base + delta;
            let tape = Tape::new();
            let y = f(&tape, &probe).item();
            y.is_finite().then_some(y).ok_or(Error::NonFinite {
                input: id.index(),
                coordinate: c,
            })
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        probe.get_mut(id).values[c] = base;
        worst = worst.max((analytic[c] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}

//! Numeric augmented vectors for oracle checks against sampled trajectories.

use nalgebra::DVector;

use super::layout::AugmentedLayout;
use crate::error::{Error, Result};
use crate::legendre::{Interval, IntervalRole};
use crate::model::DelayBound;
use crate::quad;

/// Normalised moment `nu_i = (i-1)!/L^i * (i-fold iterated integral)` on
/// `[a, b]`, by nested quadrature. A zero-length interval yields the limit
/// `z(a) / i`.
pub fn moment<F>(z: &F, a: f64, b: f64, i: usize, dim: usize, tol: f64) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    let len = b - a;
    if len < 0.0 {
        return Err(Error::OutOfRange(format!(
            "interval [{a}, {b}] is reversed"
        )));
    }
    if len == 0.0 {
        return Ok(z(a) / i as f64);
    }
    let fact: f64 = (1..i).map(|x| x as f64).product();
    Ok(quad::iterated_integral(z, a, b, i, dim, tol)? * (fact / len.powi(i as i32)))
}

/// The augmented vector at time `t` for realised delays `taus`.
pub fn sample_zeta<F>(
    layout: &AugmentedLayout,
    bounds: &[DelayBound],
    taus: &[f64],
    t: f64,
    z: &F,
    tol: f64,
) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    let f = layout.dim;
    let m = layout.agents;
    if bounds.len() != m || taus.len() != m {
        return Err(Error::Dimension(format!("need {m} bounds and delays")));
    }
    let mut zeta = DVector::zeros(layout.zeta_dim());
    let mut put = |blk: usize, v: DVector<f64>| zeta.rows_mut(layout.offset(blk), f).copy_from(&v);
    put(layout.current(), z(t));
    for k in 1..=m {
        let b = bounds[k - 1];
        let tau = taus[k - 1];
        if tau < b.lower || tau > b.upper {
            return Err(Error::OutOfRange(format!(
                "tau_{k} = {tau} outside [{}, {}]",
                b.lower, b.upper
            )));
        }
        put(layout.lower_delay(k), z(t - b.lower));
        put(layout.upper_delay(k), z(t - b.upper));
        put(layout.varying_delay(k), z(t - tau));
        for iv in Interval::ALL {
            let role = IntervalRole::new(iv, k);
            let (lo, hi) = role.endpoints(t, &b, tau);
            for i in 1..=layout.order {
                put(role.moment_block(layout, i), moment(z, lo, hi, i, f, tol)?);
            }
        }
    }
    Ok(zeta)
}

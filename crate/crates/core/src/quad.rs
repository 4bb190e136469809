//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.

use nalgebra::DVector;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Default absolute tolerance for oracle integrals.
pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_PANELS: usize = 20_000;

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize) -> Result<(DVector<f64>, f64)>
where
    F: FnMut(f64) -> DVector<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = DVector::zeros(dim);
    let mut gauss = DVector::zeros(dim);
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in nodes {
            let v = f(c + sgn * h * x);
            if v.len() != dim {
                return Err(Error::Quadrature(format!(
                    "integrand returned length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|e| !e.is_finite()) {
                return Err(Error::Quadrature(format!(
                    "non-finite integrand at s = {}",
                    c + sgn * h * x
                )));
            }
            kron.axpy(w, &v, 1.0);
            if j % 2 == 1 {
                gauss.axpy(WG[j / 2], &v, 1.0);
            }
        }
    }
    kron *= h;
    gauss *= h;
    let err = (&kron - &gauss).amax();
    Ok((kron, err))
}

/// Integrates a vector-valued function over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, dim: usize, tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> DVector<f64>,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("non-finite limits".into()));
    }
    if a == b {
        return Ok(DVector::zeros(dim));
    }
    if b < a {
        return integrate_vec(f, b, a, dim, tol).map(|v| -v);
    }
    let width = b - a;
    let mut total = DVector::zeros(dim);
    let mut stack = vec![(a, b)];
    let mut panels = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        panels += 1;
        if panels > MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}] after {MAX_PANELS} panels"
            )));
        }
        let (val, err) = gk15(&mut f, lo, hi, dim)?;
        let budget = tol * (hi - lo) / width;
        if err <= budget.max(1e-15 * val.amax()) || hi - lo < 1e-12 * width {
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    Ok(total)
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|s| DVector::from_element(1, f(s)), a, b, 1, tol).map(|v| v[0])
}

/// The `order`-fold iterated integral
/// `int_a^b int_{s_order}^b ... int_{s_2}^b z(s_1) ds_1 ... ds_order`,
/// evaluated literally by nesting the adaptive rule.
pub fn iterated_integral<F>(
    z: &F,
    a: f64,
    b: f64,
    order: usize,
    dim: usize,
    tol: f64,
) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    assert!(order >= 1, "iterated integral order starts at 1");
    if order == 1 {
        return integrate_vec(z, a, b, dim, tol);
    }
    let mut failure = None;
    let out = integrate_vec(
        |s| match iterated_integral(z, s, b, order - 1, dim, tol) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                DVector::from_element(dim, f64::NAN)
            }
        },
        a,
        b,
        dim,
        tol,
    );
    match failure {
        Some(e) => Err(e),
        None => out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_trig() {
        let v = integrate(|s| s * s, 0.0, 1.0, DEFAULT_TOL).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
        let v = integrate(|s| (5.0 * s).sin(), 0.0, 2.0, DEFAULT_TOL).unwrap();
        assert!((v - (1.0 - 10f64.cos()) / 5.0).abs() < 1e-12);
        let v = integrate(|s| s, 1.0, 0.0, DEFAULT_TOL).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn peaked_integrand_subdivides() {
        let v = integrate(|s| 1.0 / (1e-4 + s * s), -1.0, 1.0, 1e-10).unwrap();
        let exact = 2.0 * (1.0 / 1e-4f64.sqrt()) * (1.0 / 1e-4f64.sqrt()).atan();
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }

    #[test]
    fn iterated_matches_cauchy_formula() {
        // int_0^1 int_s^1 1 dr ds = 1/2, triple = 1/6
        let one = |_s: f64| DVector::from_element(1, 1.0);
        let v2 = iterated_integral(&one, 0.0, 1.0, 2, 1, 1e-13).unwrap();
        let v3 = iterated_integral(&one, 0.0, 1.0, 3, 1, 1e-13).unwrap();
        assert!((v2[0] - 0.5).abs() < 1e-13);
        assert!((v3[0] - 1.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn nan_is_reported() {
        assert!(integrate(|s| if s > 0.5 { f64::NAN } else { 0.0 }, 0.0, 1.0, 1e-12).is_err());
    }
}

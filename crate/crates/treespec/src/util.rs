//! Small numeric helpers: stable trig kernels, quadrature, grids.

/// sin(x)/x with a series branch near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 * (1.0 - x * x / 20.0)
    } else {
        x.sin() / x
    }
}

/// ∫₀^L sin(a t) sin(b t) dt, exact.
pub fn int_sin_sin(a: f64, b: f64, len: f64) -> f64 {
    0.5 * (len * sinc((a - b) * len) - len * sinc((a + b) * len))
}

/// ∫₀^L cos(a t) cos(b t) dt, exact.
pub fn int_cos_cos(a: f64, b: f64, len: f64) -> f64 {
    0.5 * (len * sinc((a - b) * len) + len * sinc((a + b) * len))
}

/// ∫₀^L t^j sin(a t) dt and ∫₀^L t^j cos(a t) dt by the usual recurrence.
/// Small j only (monomial pad rows).
pub fn int_monomial_trig(j: u32, a: f64, len: f64) -> (f64, f64) {
    if a.abs() < 1e-9 {
        // sin branch ~ a * L^{j+2}/(j+2), cos branch exact at a=0
        let cosv = len.powi(j as i32 + 1) / (j as f64 + 1.0);
        let sinv = a * len.powi(j as i32 + 2) / (j as f64 + 2.0);
        return (sinv, cosv);
    }
    let (mut js, mut jc) = ((1.0 - (a * len).cos()) / a, (a * len).sin() / a);
    for k in 1..=j {
        let kf = k as f64;
        let pow = len.powi(k as i32);
        let new_js = -pow * (a * len).cos() / a + kf / a * jc;
        let new_jc = pow * (a * len).sin() / a - kf / a * js;
        js = new_js;
        jc = new_jc;
    }
    (js, jc)
}

/// Trapezoid rule on a uniform grid with fourth-order Euler-Maclaurin end
/// correction (one-sided 4-point derivative stencils).
pub fn integrate_corrected(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 5, "need at least 5 samples");
    let mut s = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        s += v;
    }
    let d0 = (-11.0 * values[0] + 18.0 * values[1] - 9.0 * values[2] + 2.0 * values[3]) / (6.0 * h);
    let dn = (11.0 * values[n - 1] - 18.0 * values[n - 2] + 9.0 * values[n - 3]
        - 2.0 * values[n - 4])
        / (6.0 * h);
    s * h - h * h / 12.0 * (dn - d0)
}

/// Uniform grid of `n` nodes over [0, len] (inclusive endpoints).
pub fn uniform_grid(n: usize, len: f64) -> Vec<f64> {
    let h = len / (n - 1) as f64;
    (0..n).map(|i| i as f64 * h).collect()
}

/// Discrete L2 norm of samples on a uniform grid over [0, len].
pub fn discrete_l2(values: &[f64], len: f64) -> f64 {
    let h = len / (values.len() - 1) as f64;
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    integrate_corrected(&sq, h).max(0.0).sqrt()
}

/// Relative discrete L2 error of `got` against `want` on a shared grid.
pub fn rel_l2_error(got: &[f64], want: &[f64], len: f64) -> f64 {
    assert_eq!(got.len(), want.len());
    let diff: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
    let denom = discrete_l2(want, len).max(1e-30);
    discrete_l2(&diff, len) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trig_integrals_match_quadrature() {
        let len = 3.0 * std::f64::consts::PI;
        for &(a, b) in &[(0.7, 1.9), (2.0, 2.0), (0.13386, 5.25), (1e-6, 0.4)] {
            let n = 20001;
            let h = len / (n - 1) as f64;
            let ss: Vec<f64> = (0..n)
                .map(|i| (a * i as f64 * h).sin() * (b * i as f64 * h).sin())
                .collect();
            let cc: Vec<f64> = (0..n)
                .map(|i| (a * i as f64 * h).cos() * (b * i as f64 * h).cos())
                .collect();
            assert_relative_eq!(
                int_sin_sin(a, b, len),
                integrate_corrected(&ss, h),
                epsilon = 1e-8
            );
            assert_relative_eq!(
                int_cos_cos(a, b, len),
                integrate_corrected(&cc, h),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn monomial_integrals() {
        let len = 2.0;
        for j in 0..4u32 {
            for &a in &[0.9_f64, 3.7, 1e-12] {
                let n = 40001;
                let h = len / (n - 1) as f64;
                let s: Vec<f64> = (0..n)
                    .map(|i| (i as f64 * h).powi(j as i32) * (a * i as f64 * h).sin())
                    .collect();
                let c: Vec<f64> = (0..n)
                    .map(|i| (i as f64 * h).powi(j as i32) * (a * i as f64 * h).cos())
                    .collect();
                let (js, jc) = int_monomial_trig(j, a, len);
                assert_relative_eq!(js, integrate_corrected(&s, h), epsilon = 1e-9);
                assert_relative_eq!(jc, integrate_corrected(&c, h), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn corrected_trapezoid_is_fourth_order() {
        // exp on [0,1]
        let f = |x: f64| x.exp();
        let exact = 1f64.exp() - 1.0;
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
            (integrate_corrected(&v, h) - exact).abs()
        };
        let e1 = err(101);
        let e2 = err(401);
        assert!(e1 / e2 > 100.0, "expected ≥ order-3.3 drop over h/4, got {}", e1 / e2);
    }
}

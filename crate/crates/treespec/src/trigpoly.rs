//! Polynomials in (sin ρπ, cos ρπ) reduced modulo sin² = 1 − cos², with the
//! ρ-power bookkeeping needed by zero-potential characteristic functions.
//!
//! A zero-potential characteristic function has the form ρ^{1−d} R(sin ρπ,
//! cos ρπ) where d counts the Dirichlet conditions; R reduces to
//! sin ρπ·Q_{m−1}(cos ρπ) for even d and Q_m(cos ρπ) for odd d, with
//! Q_k(z) = (−1)^k Q_k(−z).

use crate::error::{Error, Result};
use nalgebra::DMatrix;

const COEFF_EPS: f64 = 1e-12;

/// Element c_part(cos) + sin·s_part(cos) of R[cos] ⊕ sin·R[cos].
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    pub c_part: Vec<f64>,
    pub s_part: Vec<f64>,
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

fn poly_eval(a: &[f64], z: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

fn poly_trim(a: &mut Vec<f64>) {
    while a.len() > 1 && a.last().map_or(false, |c| c.abs() < COEFF_EPS) {
        a.pop();
    }
    if a.iter().all(|c| c.abs() < COEFF_EPS) {
        a.clear();
    }
}

impl TrigPoly {
    pub fn zero() -> TrigPoly {
        TrigPoly { c_part: vec![], s_part: vec![] }
    }

    pub fn constant(k: f64) -> TrigPoly {
        TrigPoly { c_part: vec![k], s_part: vec![] }
    }

    /// sin ρπ
    pub fn sin() -> TrigPoly {
        TrigPoly { c_part: vec![], s_part: vec![1.0] }
    }

    /// cos ρπ
    pub fn cos() -> TrigPoly {
        TrigPoly { c_part: vec![0.0, 1.0], s_part: vec![] }
    }

    pub fn add(&self, o: &TrigPoly) -> TrigPoly {
        let mut r = TrigPoly {
            c_part: poly_add(&self.c_part, &o.c_part),
            s_part: poly_add(&self.s_part, &o.s_part),
        };
        poly_trim(&mut r.c_part);
        poly_trim(&mut r.s_part);
        r
    }

    pub fn mul(&self, o: &TrigPoly) -> TrigPoly {
        // (a + s b)(a' + s b') = (aa' + (1−c²) bb') + s(ab' + a'b)
        let aa = poly_mul(&self.c_part, &o.c_part);
        let bb = poly_mul(&self.s_part, &o.s_part);
        let one_minus_c2 = vec![1.0, 0.0, -1.0];
        let mut c_part = poly_add(&aa, &poly_mul(&one_minus_c2, &bb));
        let mut s_part = poly_add(
            &poly_mul(&self.c_part, &o.s_part),
            &poly_mul(&o.c_part, &self.s_part),
        );
        poly_trim(&mut c_part);
        poly_trim(&mut s_part);
        TrigPoly { c_part, s_part }
    }

    pub fn scale(&self, k: f64) -> TrigPoly {
        TrigPoly {
            c_part: poly_scale(&self.c_part, k),
            s_part: poly_scale(&self.s_part, k),
        }
    }

    /// Evaluates at sin ρπ, cos ρπ. Valid for ρ of either sign.
    pub fn eval(&self, rho: f64) -> f64 {
        let (s, c) = (std::f64::consts::PI * rho).sin_cos();
        poly_eval(&self.c_part, c) + s * poly_eval(&self.s_part, c)
    }
}

/// ρ^{rho_pow} · R(sin ρπ, cos ρπ): a zero-potential characteristic function
/// or any product/sum arising in the recursion.
#[derive(Debug, Clone)]
pub struct ScaledTrigPoly {
    pub rho_pow: i32,
    pub poly: TrigPoly,
}

impl ScaledTrigPoly {
    pub fn mul(&self, o: &ScaledTrigPoly) -> ScaledTrigPoly {
        ScaledTrigPoly {
            rho_pow: self.rho_pow + o.rho_pow,
            poly: self.poly.mul(&o.poly),
        }
    }

    /// Sum requires equal ρ-powers; a mismatch means the Dirichlet-count
    /// bookkeeping upstream is broken.
    pub fn add(&self, o: &ScaledTrigPoly) -> Result<ScaledTrigPoly> {
        if self.rho_pow != o.rho_pow {
            return Err(Error::Internal(format!(
                "rho power mismatch in trig recursion: {} vs {}",
                self.rho_pow, o.rho_pow
            )));
        }
        Ok(ScaledTrigPoly {
            rho_pow: self.rho_pow,
            poly: self.poly.add(&o.poly),
        })
    }

    /// Value at ρ ≠ 0 (either sign).
    pub fn eval(&self, rho: f64) -> f64 {
        rho.powi(self.rho_pow) * self.poly.eval(rho)
    }
}

/// Normal form of a zero-potential characteristic function:
/// ρ^{1−d}·R with R = sin ρπ·Q(cos ρπ) (d even) or Q(cos ρπ) (d odd).
#[derive(Debug, Clone)]
pub struct TrigPolyForm {
    /// Dirichlet count of the underlying problem.
    pub d: usize,
    /// Edge count of the underlying tree.
    pub m: usize,
    /// Coefficients of Q in ascending powers of z = cos ρπ.
    pub q: Vec<f64>,
    /// True if R carries the sin ρπ factor (even d).
    pub has_sin_factor: bool,
}

impl TrigPolyForm {
    /// Normalizes a recursion result, asserting the claimed structure:
    /// the ρ-power must equal 1−d, the off-type part must vanish, and Q must
    /// satisfy the parity symmetry Q_k(z) = (−1)^k Q_k(−z).
    pub fn from_scaled(sp: &ScaledTrigPoly, d: usize, m: usize) -> Result<TrigPolyForm> {
        if sp.rho_pow != 1 - d as i32 {
            return Err(Error::Internal(format!(
                "expected rho power {}, got {}",
                1 - d as i32,
                sp.rho_pow
            )));
        }
        let scale: f64 = sp
            .poly
            .c_part
            .iter()
            .chain(sp.poly.s_part.iter())
            .fold(0.0f64, |a, c| a.max(c.abs()))
            .max(1.0);
        let even = d % 2 == 0;
        let (q, off) = if even {
            (&sp.poly.s_part, &sp.poly.c_part)
        } else {
            (&sp.poly.c_part, &sp.poly.s_part)
        };
        if off.iter().any(|c| c.abs() > COEFF_EPS * scale) {
            return Err(Error::Internal(
                "zero-potential recursion produced a mixed sin/cos form".into(),
            ));
        }
        let expected_deg = if even { m - 1 } else { m };
        let mut q = q.clone();
        q.resize(expected_deg + 1, 0.0);
        // parity: coefficients of z^j with j ≢ deg (mod 2) vanish
        for (j, c) in q.iter().enumerate() {
            if j % 2 != expected_deg % 2 && c.abs() > 1e-12 * scale {
                return Err(Error::Internal(format!(
                    "parity violation in Q: coeff[{j}] = {c}"
                )));
            }
        }
        if q[expected_deg].abs() < COEFF_EPS * scale {
            return Err(Error::Internal("leading coefficient of Q vanishes".into()));
        }
        Ok(TrigPolyForm { d, m, q, has_sin_factor: even })
    }

    /// R(sin ρπ, cos ρπ).
    pub fn eval_r(&self, rho: f64) -> f64 {
        let (s, c) = (std::f64::consts::PI * rho).sin_cos();
        let qv = poly_eval(&self.q, c);
        if self.has_sin_factor {
            s * qv
        } else {
            qv
        }
    }

    /// The full ρ^{1−d}·R value (ρ ≠ 0).
    pub fn eval(&self, rho: f64) -> f64 {
        rho.powi(1 - self.d as i32) * self.eval_r(rho)
    }

    /// Roots of Q inside [−1, 1], clustered with multiplicity.
    /// Errors if a root strays off the real interval beyond tolerance, which
    /// would contradict self-adjointness and indicates an upstream bug.
    pub fn q_roots(&self) -> Result<Vec<(f64, usize)>> {
        let roots = real_poly_roots(&self.q)?;
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in roots {
            if r < -1.0 - 1e-9 || r > 1.0 + 1e-9 {
                return Err(Error::Internal(format!(
                    "non-self-adjoint artifact: Q root {r} off [-1, 1]"
                )));
            }
            let r = r.clamp(-1.0, 1.0);
            match out.iter_mut().find(|(v, _)| (*v - r).abs() < 1e-8) {
                Some((v, k)) => {
                    *v = (*v * *k as f64 + r) / (*k as f64 + 1.0);
                    *k += 1;
                }
                None => out.push((r, 1)),
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(out)
    }

    /// Order of the zero of ρ^{1−d}R(ρ) at ρ = 0 (in ρ), computed from the
    /// structure: ord(R) = [sin factor] + 2·ord_{z=1}(Q). Matches the
    /// z_α + 1 − d bookkeeping of the zero-eigenvalue multiplicity.
    pub fn rho_order_at_zero(&self) -> i32 {
        let mut ord_q1 = 0usize;
        let mut q = self.q.clone();
        loop {
            if q.iter().all(|c| c.abs() < COEFF_EPS) {
                break;
            }
            if poly_eval(&q, 1.0).abs() > 1e-9 * q.iter().fold(0.0f64, |a, c| a.max(c.abs())) {
                break;
            }
            // synthetic division by (z - 1)
            let mut new_q = vec![0.0; q.len().saturating_sub(1)];
            let mut carry = 0.0;
            for i in (0..q.len()).rev() {
                let v = q[i] + carry;
                if i > 0 {
                    new_q[i - 1] = v;
                }
                carry = v;
            }
            q = new_q;
            ord_q1 += 1;
        }
        let ord_r = if self.has_sin_factor { 1 } else { 0 } + 2 * ord_q1 as i32;
        ord_r + 1 - self.d as i32
    }
}

/// Real roots of a real polynomial (ascending coefficients) via the companion
/// matrix, polished by Newton steps. Errors on roots with a meaningful
/// imaginary part.
pub fn real_poly_roots(coeffs: &[f64]) -> Result<Vec<f64>> {
    let mut c = coeffs.to_vec();
    poly_trim(&mut c);
    if c.len() <= 1 {
        return Ok(vec![]);
    }
    let n = c.len() - 1;
    let lead = c[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
        if i > 0 {
            m[(i, i - 1)] = 1.0;
        }
    }
    let eig = m.complex_eigenvalues();
    let scale: f64 = c.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut out = Vec::new();
    for e in eig.iter() {
        if e.im.abs() > 1e-7 * (1.0 + e.re.abs()) {
            return Err(Error::Internal(format!(
                "complex root {e} of a polynomial expected to have real roots"
            )));
        }
        let mut r = e.re;
        // Newton polish
        for _ in 0..40 {
            let f = poly_eval(&c, r);
            let df = {
                let d: Vec<f64> = c
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, x)| i as f64 * x)
                    .collect();
                poly_eval(&d, r)
            };
            if df.abs() < 1e-14 * scale {
                break;
            }
            let step = f / df;
            r -= step;
            if step.abs() < 1e-14 * (1.0 + r.abs()) {
                break;
            }
        }
        out.push(r);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn algebra_reduces_sin_squared() {
        let s = TrigPoly::sin();
        let s2 = s.mul(&s);
        // sin² = 1 − cos²
        assert!(s2.s_part.is_empty());
        assert_eq!(s2.c_part, vec![1.0, 0.0, -1.0]);
        for &rho in &[0.3, 1.7, -0.45] {
            let direct = (std::f64::consts::PI * rho).sin().powi(2);
            assert_relative_eq!(s2.eval(rho), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn eval_matches_trig_identities() {
        // cos 2ρπ = 2c² − 1, sin 2ρπ = 2 s c
        let c2 = TrigPoly { c_part: vec![-1.0, 0.0, 2.0], s_part: vec![] };
        let s2 = TrigPoly { c_part: vec![], s_part: vec![0.0, 2.0] };
        for &rho in &[0.21, 0.9, 2.34] {
            assert_relative_eq!(
                c2.eval(rho),
                (2.0 * std::f64::consts::PI * rho).cos(),
                epsilon = 1e-13
            );
            assert_relative_eq!(
                s2.eval(rho),
                (2.0 * std::f64::consts::PI * rho).sin(),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn roots_of_quadratic() {
        // 6z² − 5: roots ±sqrt(5/6)
        let r = real_poly_roots(&[-5.0, 0.0, 6.0]).unwrap();
        assert_eq!(r.len(), 2);
        assert_relative_eq!(r[1], (5.0f64 / 6.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn power_mismatch_is_internal_error() {
        let a = ScaledTrigPoly { rho_pow: 0, poly: TrigPoly::cos() };
        let b = ScaledTrigPoly { rho_pow: -1, poly: TrigPoly::sin() };
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn rho_order_bookkeeping() {
        // single NN edge: R = −sin, d = 0 → order 2 (double root of −ρ sin ρπ in ρ)
        let f = TrigPolyForm { d: 0, m: 1, q: vec![-1.0], has_sin_factor: true };
        assert_eq!(f.rho_order_at_zero(), 2);
        // single DD edge: R = sin, d = 2 → order 0
        let f = TrigPolyForm { d: 2, m: 1, q: vec![1.0], has_sin_factor: true };
        assert_eq!(f.rho_order_at_zero(), 0);
    }
}

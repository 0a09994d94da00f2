//! Closed-form references: Lambert W, the radial slow-front solution, and V-shaped fronts.

use crate::error::{GeomError, Result};
use crate::grid::{GridFunction, Mask};

const W_MAX_ITER: usize = 50;

/// Principal branch of w·eʷ = z for z ≥ 0, by Halley iteration from log(1 + z).
pub fn lambert_w(z: f64) -> Result<f64> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(GeomError::Domain(format!("lambert_w: z = {z} is outside the supported branch")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let mut w = z.ln_1p();
    if z > 3.0 {
        // asymptotic start keeps the iteration count flat for large z
        let l = z.ln();
        w = l - l.ln();
    }
    for _ in 0..W_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    let resid = (w * w.exp() - z).abs();
    if resid > 1e-12 * (1.0 + z) {
        return Err(GeomError::Domain(format!("lambert_w({z}) did not converge (residual {resid:e})")));
    }
    Ok(w)
}

/// W'(z) = W/(z(1 + W)), with the limit 1 at z = 0.
pub fn lambert_w_derivative(z: f64) -> Result<f64> {
    if z == 0.0 {
        return Ok(1.0);
    }
    let w = lambert_w(z)?;
    Ok(w / (z * (1.0 + w)))
}

/// W(e^l) for large l, solving w + ln w = l by Newton (avoids overflow of e^l).
fn lambert_w_exp(l: f64) -> f64 {
    if l < 600.0 {
        return lambert_w(l.exp()).expect("positive argument");
    }
    let mut w = l - l.ln();
    for _ in 0..W_MAX_ITER {
        let step = (w + w.ln() - l) / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

/// ξ₁(s) = W((r/ε − 1) exp(r/ε − s − 1)) + 1, the solution of ξ̇ = −1 + 1/ξ with ξ(0) = r/ε.
pub fn radial_xi1(r: f64, eps: f64, s: f64) -> Result<f64> {
    if !(eps > 0.0) || !(r / eps > 1.0) {
        return Err(GeomError::Domain(format!("radial_xi1 needs r/eps > 1 (r = {r}, eps = {eps})")));
    }
    if !(s >= 0.0) {
        return Err(GeomError::Domain(format!("radial_xi1 needs s >= 0, got {s}")));
    }
    let a = r / eps;
    let log_z = (a - 1.0).ln() + a - s - 1.0;
    Ok(lambert_w_exp(log_z) + 1.0)
}

/// φ^ε(r, t) = −ε ξ₁(t/ε) with ξ₁ started at r/ε; valid for r > t.
pub fn radial_phi_eps(r: f64, t: f64, eps: f64) -> Result<f64> {
    if !(t >= 0.0) || !(r > t) {
        return Err(GeomError::Domain(format!("radial_phi_eps needs r > t >= 0 (r = {r}, t = {t})")));
    }
    if t == 0.0 {
        return Ok(-r);
    }
    Ok(-eps * radial_xi1(r, eps, t / eps)?)
}

/// ½ε(log(t/ε − 1) + 1), defined for t > ε(1 + e⁻¹).
pub fn lower_bound_value(eps: f64, t: f64) -> Result<f64> {
    if !(eps > 0.0) || !(t > eps * (1.0 + (-1.0f64).exp())) {
        return Err(GeomError::Domain(format!("lower bound needs t > eps(1 + 1/e) (t = {t}, eps = {eps})")));
    }
    Ok(0.5 * eps * ((t / eps - 1.0).ln() + 1.0))
}

fn vshape_base(x: &[f64], alpha: f64, a_set: &[Vec<f64>]) -> Result<f64> {
    if a_set.is_empty() {
        return Err(GeomError::Invalid("V-shape direction set is empty".into()));
    }
    if !(alpha > 0.0 && alpha <= std::f64::consts::FRAC_PI_2 + 1e-15) {
        return Err(GeomError::Domain(format!("alpha must lie in (0, pi/2], got {alpha}")));
    }
    let cot = alpha.cos() / alpha.sin();
    let mut best = f64::NEG_INFINITY;
    for nu in a_set {
        if nu.len() != x.len() {
            return Err(GeomError::ShapeMismatch(format!("direction {nu:?} does not fit x {x:?}")));
        }
        let dot: f64 = nu.iter().zip(x).map(|(a, b)| a * b).sum();
        best = best.max(cot * dot);
    }
    Ok(best)
}

/// Height of the effective V-shaped front over x′ ∈ R^{n−1}: u₀(x′) + csc(α) t with
/// u₀ = sup_{ν∈A} cot(α) ν·x′.
pub fn vshape_effective(x: &[f64], t: f64, alpha: f64, a_set: &[Vec<f64>]) -> Result<f64> {
    Ok(vshape_base(x, alpha, a_set)? + t / alpha.sin())
}

/// Level-set function of the same front in Rⁿ: U(x, t) = u₀(x′) + csc(α) t − x_n.
/// It solves the effective equation with U(·, t) = U(·, 0) + csc(α) t exactly.
pub fn vshape_level_set(x: &[f64], t: f64, alpha: f64, a_set: &[Vec<f64>]) -> Result<f64> {
    let n = x.len();
    Ok(vshape_effective(&x[..n - 1], t, alpha, a_set)? - x[n - 1])
}

/// sup over the mask of |u^ε(x, t) − ε u¹(x/ε, t/ε)|, with the unit-scale snapshot at
/// time t/ε interpolated bilinearly.
pub fn scaling_identity_check(eps: f64, u_eps: &GridFunction, mask: &Mask, unit: &GridFunction) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(GeomError::Domain(format!("eps must be positive, got {eps}")));
    }
    if mask.len() != u_eps.values().len() {
        return Err(GeomError::IncompatibleGrids("mask does not match the eps-scale grid".into()));
    }
    let [nx, ny] = u_eps.grid.shape();
    let crate::grid::Grid::Box(unit_box) = unit.grid else {
        return Err(GeomError::IncompatibleGrids("unit-scale run must live on a box grid".into()));
    };
    let up = unit_box.upper();
    let mut worst: f64 = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            if !mask.contains(i * ny + j) {
                continue;
            }
            let x = u_eps.grid.coord(i, j);
            let y = [x[0] / eps, x[1] / eps];
            let tol = 1e-9 * unit_box.h;
            if (0..2).any(|a| y[a] < unit_box.lower[a] - tol || y[a] > up[a] + tol) {
                return Err(GeomError::IncompatibleGrids(format!("mask point {x:?} maps outside the unit-scale box")));
            }
            worst = worst.max((u_eps.at(i, j) - eps * unit.interpolate(y)).abs());
        }
    }
    Ok(worst)
}

/// Positive 1-homogeneity test u₀(2x) = 2u₀(x) on sample points (guard for the scaling check).
pub fn is_one_homogeneous(u0: impl Fn([f64; 2]) -> f64, samples: &[[f64; 2]]) -> bool {
    samples.iter().all(|&x| {
        let a = u0([2.0 * x[0], 2.0 * x[1]]);
        let b = 2.0 * u0(x);
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, FRAC_PI_2, FRAC_PI_4, SQRT_2};

    // independent oracle: bisection on w e^w = z
    fn w_bisect(z: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64.max(z.ln() + 1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn rk4_xi(xi0: f64, s_end: f64, dt: f64) -> f64 {
        let f = |x: f64| -1.0 + 1.0 / x;
        let steps = (s_end / dt).round() as usize;
        let mut x = xi0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * dt * k1);
            let k3 = f(x + 0.5 * dt * k2);
            let k4 = f(x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn lambert_w_values() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambert_w(1.0).unwrap() - w_bisect(1.0)).abs() < 1e-14);
        assert!((lambert_w(1.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!(lambert_w(-0.1).is_err());
        for z in [1e-8, 0.3, 2.0, 50.0, 1e4, 1e6] {
            assert!((lambert_w(z).unwrap() - w_bisect(z)).abs() < 1e-12 * (1.0 + w_bisect(z)));
        }
    }

    #[test]
    fn lambert_w_derivative_matches_difference() {
        for z in [0.5, 3.0, 40.0] {
            let d = 1e-5;
            let fd = (lambert_w(z + d).unwrap() - lambert_w(z - d).unwrap()) / (2.0 * d);
            assert!((lambert_w_derivative(z).unwrap() - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn xi1_initial_value_and_ode() {
        assert!((radial_xi1(1.0, 0.01, 0.0).unwrap() - 100.0).abs() < 1e-11);
        for s in [0.5, 10.0, 60.0, 98.0, 150.0] {
            let d = 1e-4;
            let fd = (radial_xi1(1.0, 0.01, s + d).unwrap() - radial_xi1(1.0, 0.01, s - d).unwrap()) / (2.0 * d);
            let xi = radial_xi1(1.0, 0.01, s).unwrap();
            assert!((fd - (-1.0 + 1.0 / xi)).abs() < 1e-6, "s = {s}");
        }
        assert!(radial_xi1(0.01, 0.01, 0.0).is_err());
    }

    #[test]
    fn xi1_matches_rk4() {
        let formula = radial_xi1(1.0, 0.01, 50.0).unwrap();
        let rk = rk4_xi(100.0, 50.0, 1e-3);
        assert!((formula - rk).abs() <= 1e-8, "{formula} vs {rk}");
    }

    #[test]
    fn radial_values() {
        assert_eq!(radial_phi_eps(0.7, 0.0, 0.01).unwrap(), -0.7);
        let lb = lower_bound_value(0.01, 1.0).unwrap();
        assert!((lb - 0.005 * (99f64.ln() + 1.0)).abs() < 1e-15);
        assert!((lb - 0.027975).abs() < 1e-6);
        assert!(lower_bound_value(0.01, 0.01).is_err());
        assert!(radial_phi_eps(1.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn radial_bound_scan() {
        for &eps in &[0.001, 0.01, 0.05, 0.1] {
            for k in 1..40 {
                let t = eps * (1.0 + (-1.0f64).exp()) * (1.0 + 0.3 * k as f64);
                let lb = lower_bound_value(eps, t).unwrap();
                // started at r/eps = t/eps, evaluated at s = t/eps
                let xi = radial_xi1(t, eps, t / eps).unwrap();
                assert!(eps * xi >= lb, "eps {eps} t {t}");
                for dr in [1e-6, 1e-3, 0.1] {
                    assert!(radial_phi_eps(t + dr, t, eps).unwrap() <= -lb);
                }
            }
        }
    }

    #[test]
    fn w_half_log_bound() {
        let mut z: f64 = 1e-3;
        while z <= 1e6 {
            assert!(lambert_w(z).unwrap() >= 0.5 * z.ln());
            z *= 1.07;
        }
    }

    #[test]
    fn vshape_examples() {
        let a = vec![vec![-1.0], vec![1.0]];
        assert!((vshape_effective(&[0.3], 2.0, FRAC_PI_2, &a).unwrap() - 2.0).abs() < 1e-15);
        for x in [-1.5, 0.0, 0.7] {
            let v = vshape_effective(&[x], 0.4, FRAC_PI_4, &a).unwrap();
            assert!((v - (x.abs() + SQRT_2 * 0.4)).abs() < 1e-14);
            let u2 = vshape_effective(&[2.0 * x], 0.0, FRAC_PI_4, &a).unwrap();
            let u1 = vshape_effective(&[x], 0.0, FRAC_PI_4, &a).unwrap();
            assert!((u2 - 2.0 * u1).abs() < 1e-14);
        }
        assert!(vshape_effective(&[0.0], 0.0, FRAC_PI_4, &[]).is_err());
        let ls = vshape_level_set(&[0.5, 0.2], 1.0, FRAC_PI_4, &a).unwrap();
        assert!((ls - (0.5 + SQRT_2 - 0.2)).abs() < 1e-14);
    }

    proptest::proptest! {
        #[test]
        fn w_round_trip(w in 0.0..20.0f64) {
            let z = w * w.exp();
            proptest::prop_assert!((lambert_w(z).unwrap() - w).abs() <= 1e-12 * (1.0 + w));
        }

        #[test]
        fn w_residual(z in 0.0..1e6f64) {
            let w = lambert_w(z).unwrap();
            proptest::prop_assert!((w * w.exp() - z).abs() <= 1e-12 * (1.0 + z));
        }

        #[test]
        fn xi1_decreasing_to_one(a in 1.5..200.0f64, s in 0.0..300.0f64) {
            let x0 = radial_xi1(a * 0.01, 0.01, s).unwrap();
            let x1 = radial_xi1(a * 0.01, 0.01, s + 0.5).unwrap();
            proptest::prop_assert!(x1 < x0 || (x0 - 1.0) < 1e-12);
            proptest::prop_assert!(x1 >= 1.0);
        }
    }
}

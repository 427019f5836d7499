//! Fixed-step explicit integrators for `dy/dt = f(t, y)`.

/// One explicit Euler step, in place.
pub fn euler_step<F>(f: &mut F, t: f64, y: &mut [f64], h: f64, scratch: &mut Vec<f64>)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    scratch.resize(y.len(), 0.0);
    f(t, y, scratch);
    for (yi, ki) in y.iter_mut().zip(scratch.iter()) {
        *yi += h * ki;
    }
}

/// One classical fourth-order Runge-Kutta step, in place.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &mut [f64], h: f64)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates from `t0` to `t1` in `steps` RK4 steps, calling `observe`
/// after every step with the new time and state.
pub fn integrate_rk4<F, O>(mut f: F, y: &mut [f64], t0: f64, t1: f64, steps: usize, mut observe: O)
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let h = (t1 - t0) / steps as f64;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        rk4_step(&mut f, t, y, h);
        observe(if i + 1 == steps { t1 } else { t + h }, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay_is_fourth_order() {
        let err = |steps: usize| {
            let mut y = [1.0];
            integrate_rk4(|_, y, d| d[0] = -y[0], &mut y, 0.0, 1.0, steps, |_, _| {});
            (y[0] - (-1.0f64).exp()).abs()
        };
        let (e1, e2) = (err(10), err(20));
        assert!(e1 < 1e-6);
        // halving h cuts the error by ~2^4
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn euler_on_constant_field_is_exact() {
        let mut y = [0.5];
        let mut s = Vec::new();
        let mut f = |_: f64, _: &[f64], d: &mut [f64]| d[0] = 2.0;
        for i in 0..8 {
            euler_step(&mut f, i as f64 * 0.125, &mut y, 0.125, &mut s);
        }
        assert!((y[0] - 2.5).abs() < 1e-15);
    }
}

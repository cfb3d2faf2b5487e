//! Adaptive Dormand–Prince 5(4) integrator for complex state vectors.

use num_complex::Complex64;

use crate::error::{QnsError, Result};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Rk45Options {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: f64::INFINITY,
            initial_step: 1e-5,
            max_steps: 50_000_000,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrate `dy/dt = f(t, y)` from `t0`, landing exactly on every time in
/// `outputs` (ascending, ≥ t0) and calling `record(i, y)` there.
pub fn integrate<F, R>(
    mut f: F,
    t0: f64,
    y0: &[C],
    outputs: &[f64],
    opts: &Rk45Options,
    mut record: R,
) -> Result<Vec<C>>
where
    F: FnMut(f64, &[C], &mut [C]),
    R: FnMut(usize, &[C]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut h = opts.initial_step.min(opts.max_step);
    let mut k: Vec<Vec<C>> = vec![vec![C::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![C::new(0.0, 0.0); n];
    let mut y5 = vec![C::new(0.0, 0.0); n];
    let mut fresh = true;
    let mut steps = 0usize;

    for (i, &t_out) in outputs.iter().enumerate() {
        if t_out < t - 1e-15 {
            return Err(QnsError::InvalidParameter(
                "output times must be ascending".into(),
            ));
        }
        while t_out - t > 1e-14 * t_out.abs().max(1.0) {
            if fresh {
                f(t, &y, &mut k[0]);
                fresh = false;
            }
            let remaining = t_out - t;
            let hs = h.min(remaining).min(opts.max_step);
            let stage = |coef: &[f64], k: &[Vec<C>], tmp: &mut [C], y: &[C]| {
                for idx in 0..n {
                    let mut acc = C::new(0.0, 0.0);
                    for (c, kk) in coef.iter().zip(k) {
                        if *c != 0.0 {
                            acc += kk[idx] * *c;
                        }
                    }
                    tmp[idx] = y[idx] + acc * hs;
                }
            };
            stage(&[A21], &k[..1], &mut tmp, &y);
            f(t + hs / 5.0, &tmp, &mut k[1]);
            stage(&[A31, A32], &k[..2], &mut tmp, &y);
            f(t + 0.3 * hs, &tmp, &mut k[2]);
            stage(&[A41, A42, A43], &k[..3], &mut tmp, &y);
            f(t + 0.8 * hs, &tmp, &mut k[3]);
            stage(&[A51, A52, A53, A54], &k[..4], &mut tmp, &y);
            f(t + 8.0 / 9.0 * hs, &tmp, &mut k[4]);
            stage(&[A61, A62, A63, A64, A65], &k[..5], &mut tmp, &y);
            f(t + hs, &tmp, &mut k[5]);
            stage(&[B1, 0.0, B3, B4, B5, B6], &k[..6], &mut y5, &y);
            f(t + hs, &y5, &mut k[6]);

            let mut err = 0.0f64;
            for idx in 0..n {
                let e = (k[0][idx] * E1
                    + k[2][idx] * E3
                    + k[3][idx] * E4
                    + k[4][idx] * E5
                    + k[5][idx] * E6
                    + k[6][idx] * E7)
                    * hs;
                let sc = opts.atol + opts.rtol * y[idx].norm().max(y5[idx].norm());
                err = err.max(e.norm() / sc);
            }
            steps += 1;
            if steps > opts.max_steps {
                return Err(QnsError::InvalidParameter(format!(
                    "adaptive integrator exceeded {} steps",
                    opts.max_steps
                )));
            }
            if err <= 1.0 {
                t += hs;
                std::mem::swap(&mut y, &mut y5);
                k.swap(0, 6);
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if hs >= h * (1.0 - 1e-12) || grow < 1.0 {
                    h = hs * grow;
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        t = t_out;
        record(i, &y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase() {
        // dy/dt = -i ω y
        let w = 2.0 * std::f64::consts::PI * 10.0;
        let outputs: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let mut got = Vec::new();
        integrate(
            |_, y, dy| dy[0] = C::new(0.0, -w) * y[0],
            0.0,
            &[C::new(1.0, 0.0)],
            &outputs,
            &Rk45Options::default(),
            |_, y| got.push(y[0]),
        )
        .unwrap();
        for (t, y) in outputs.iter().zip(&got) {
            let want = C::from_polar(1.0, -w * t);
            assert!((y - want).norm() < 1e-7, "t={t} err={}", (y - want).norm());
        }
    }

    #[test]
    fn exponential_decay() {
        let y = integrate(
            |_, y, dy| dy[0] = -y[0] * 3.0,
            0.0,
            &[C::new(1.0, 0.0)],
            &[2.0],
            &Rk45Options::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0].re - (-6.0f64).exp()).abs() < 1e-10);
    }
}

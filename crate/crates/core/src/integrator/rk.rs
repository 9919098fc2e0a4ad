//! Dormand–Prince 5(4) step for the chart-form geodesic equations.

use crate::metrics::chart_rhs;

pub(crate) type State = [f64; 4];


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

// fifth-order weights minus the embedded fourth-order ones
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..4 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One step of size `h`. Returns the fifth-order solution and the
/// embedded error estimate.
pub(crate) fn dopri_step(k: f64, y: &State, h: f64) -> (State, State) {
    let k1 = chart_rhs(k, y);
    let k2 = chart_rhs(k, &axpy(y, &[(A21, &k1)], h));
    let k3 = chart_rhs(k, &axpy(y, &[(A31, &k1), (A32, &k2)], h));
    let k4 = chart_rhs(k, &axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
    let k5 = chart_rhs(k, &axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = chart_rhs(k, &axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y5 = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = chart_rhs(k, &y5);
    let mut err = [0.0; 4];
    for i in 0..4 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

/// Error norm relative to the local geometry: position errors in units of
/// `y`, velocity errors in units of `|v|`.
pub(crate) fn error_ratio(y0: &State, y1: &State, err: &State, tol: f64) -> f64 {
    let len = y0[1].min(y1[1]);
    let speed = y0[2].hypot(y0[3]).min(y1[2].hypot(y1[3]));
    let ex = err[0].abs().max(err[1].abs()) / (tol * len);
    let ev = err[2].abs().max(err[3].abs()) / (tol * speed);
    ex.max(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_hyperbolic_step_is_exponential() {
        // y' = y along the imaginary axis at unit hyperbolic speed
        let mut s = [0.0, 1.0, 0.0, 1.0];
        let h = 0.01;
        for _ in 0..100 {
            s = dopri_step(2.0, &s, h).0;
        }
        assert!((s[1] - 1f64.exp()).abs() < 1e-11);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn error_estimate_scales_as_fifth_power() {
        let s = [0.0, 1.0, 0.6, 0.8];
        let e1 = dopri_step(2.0, &s, 0.1).1;
        let e2 = dopri_step(2.0, &s, 0.05).1;
        let r = e1[1].abs() / e2[1].abs();
        // local error of the embedded pair is O(h^5)
        assert!(r > 20.0 && r < 45.0, "ratio {r}");
    }
}

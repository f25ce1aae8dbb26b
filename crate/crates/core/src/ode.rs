//! Autonomous scalar second-order equations and a classical RK4 integrator.

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

/// `y'' = F(y, y')` in the shapes the warping-function families reduce to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SecondOrderOde {
    /// `y'' = a1 y' + a0 y + c`.
    Linear { a1: f64, a0: f64, c: f64 },
    /// `y'' = a1 y' + a0 y + c y^e`, for `y > 0`.
    PowerForced { a1: f64, a0: f64, c: f64, e: f64 },
    /// `y'' = y'²/y + k y^e`, i.e. `(ln y)'' = k y^{e−1}`, for `y > 0`.
    LogForced { k: f64, e: f64 },
}

impl SecondOrderOde {
    pub fn rhs(&self, y: f64, dy: f64) -> f64 {
        match *self {
            SecondOrderOde::Linear { a1, a0, c } => a1 * dy + a0 * y + c,
            SecondOrderOde::PowerForced { a1, a0, c, e } => a1 * dy + a0 * y + c * y.powf(e),
            SecondOrderOde::LogForced { k, e } => dy * dy / y + k * y.powf(e),
        }
    }

    /// `y'' − F(y, y')` for a jet `[y, y', y'']`.
    pub fn residual(&self, jet: [f64; 3]) -> f64 {
        jet[2] - self.rhs(jet[0], jet[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    /// `[y, y', y'']` at node `k`, with `y''` from the equation.
    pub fn jet(&self, ode: &SecondOrderOde, k: usize) -> [f64; 3] {
        [self.y[k], self.dy[k], ode.rhs(self.y[k], self.dy[k])]
    }
}

/// Classical RK4 on `(y, y')` over `[t0, t1]` with `n_steps` equal steps.
pub fn rk4(ode: &SecondOrderOde, t0: f64, t1: f64, y0: f64, dy0: f64, n_steps: usize) -> Result<Trajectory> {
    if n_steps == 0 || !(t1 > t0) {
        return Err(GeometryError::InvalidSpec(format!("RK4 needs n_steps > 0 and t1 > t0, got {n_steps} on [{t0}, {t1}]")));
    }
    let h = (t1 - t0) / n_steps as f64;
    let f = |y: f64, v: f64| (v, ode.rhs(y, v));
    let mut tr = Trajectory { t: vec![t0], y: vec![y0], dy: vec![dy0] };
    let (mut y, mut v) = (y0, dy0);
    for k in 1..=n_steps {
        let (k1y, k1v) = f(y, v);
        let (k2y, k2v) = f(y + 0.5 * h * k1y, v + 0.5 * h * k1v);
        let (k3y, k3v) = f(y + 0.5 * h * k2y, v + 0.5 * h * k2v);
        let (k4y, k4v) = f(y + h * k3y, v + h * k3v);
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(y.is_finite() && v.is_finite()) {
            return Err(GeometryError::NumericalInstability(format!("RK4 diverged at step {k}")));
        }
        tr.t.push(t0 + k as f64 * h);
        tr.y.push(y);
        tr.dy.push(v);
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let ode = SecondOrderOde::Linear { a1: 0.0, a0: -1.0, c: 0.0 };
        let tr = rk4(&ode, 0.0, std::f64::consts::TAU, 1.0, 0.0, 2000).unwrap();
        assert!((tr.y.last().unwrap() - 1.0).abs() < 1e-10);
        assert!(tr.dy.last().unwrap().abs() < 1e-10);
    }

    #[test]
    fn fourth_order_convergence() {
        let ode = SecondOrderOde::Linear { a1: 1.0, a0: 0.0, c: 0.0 };
        let err = |n| (rk4(&ode, 0.0, 1.0, 0.0, 1.0, n).unwrap().y[n] - (1f64.exp() - 1.0)).abs();
        let ratio = err(50) / err(100);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn rejects_empty_step_count() {
        let ode = SecondOrderOde::Linear { a1: 0.0, a0: 0.0, c: 0.0 };
        assert!(rk4(&ode, 0.0, 1.0, 1.0, 0.0, 0).is_err());
    }
}

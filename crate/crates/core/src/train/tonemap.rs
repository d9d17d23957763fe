//! Sign-preserving mu-law compression used by the training loss and for
//! display.

use crate::real::Real;

pub const MU: f64 = 10.0;
pub const EPS: f64 = 1.0;

pub fn tonemap_scalar(x: f64, mu: f64, eps: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    x.signum() * (mu * x.abs() + eps).ln() / (mu + eps).ln()
}

/// `d tonemap / dx`; with `eps = 1` the derivative is finite at zero.
pub fn tonemap_grad_scalar(x: f64, mu: f64, eps: f64) -> f64 {
    mu / ((mu * x.abs() + eps) * (mu + eps).ln())
}

pub fn tonemap_rgb(c: [f64; 3], mu: f64, eps: f64) -> [f64; 3] {
    c.map(|x| tonemap_scalar(x, mu, eps))
}

#[derive(Debug, Clone, Copy)]
pub struct Tonemap<T> {
    mu: T,
    eps: T,
    inv_log: T,
}

impl<T: Real> Tonemap<T> {
    pub fn new(mu: f64, eps: f64) -> Self {
        Tonemap {
            mu: T::lit(mu),
            eps: T::lit(eps),
            inv_log: T::lit(1.0 / (mu + eps).ln()),
        }
    }

    pub fn apply(&self, x: T) -> T {
        if x == T::zero() {
            return T::zero();
        }
        x.signum() * (self.mu * x.abs() + self.eps).ln() * self.inv_log
    }

    pub fn grad(&self, x: T) -> T {
        self.mu * self.inv_log / (self.mu * x.abs() + self.eps)
    }
}

impl<T: Real> Default for Tonemap<T> {
    fn default() -> Self {
        Tonemap::new(MU, EPS)
    }
}

//! Adam with bias correction.

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    /// Implemented as descent on the negated gradient.
    Ascend,
}

/// Moment buffers for one list of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    /// One update of `params` against `grads`. Buffers are created lazily on
    /// the first call and their shapes are pinned from then on.
    pub fn update(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[Matrix],
        lr: f64,
        dir: Direction,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer state holds {} buffers, got {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "parameter {:?}, gradient {:?} and moment {:?} shapes differ",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let sign = match dir {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (((w, &gr), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(md.iter_mut())
                .zip(vd.iter_mut())
            {
                let gr = sign * gr;
                *mi = BETA1 * *mi + (1.0 - BETA1) * gr;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gr * gr;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

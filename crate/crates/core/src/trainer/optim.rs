use crate::embed::{EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate scaled by `sqrt(total_batch / 16)`.
pub fn scale_lr(base_lr: f64, total_batch: usize) -> f64 {
    base_lr * (total_batch as f64 / 16.0).sqrt()
}

/// Linear warmup from 0 to `peak_lr` over the first `warmup_fraction` of the
/// steps, then linear decay to 0 at `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = warmup_fraction * total;
    if step < warm {
        peak_lr * step / warm
    } else if total > warm {
        peak_lr * (total - step) / (total - warm)
    } else {
        peak_lr
    }
}

/// First and second moments for one flat parameter group.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, bc1: f64, bc2: f64) {
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Adam without weight decay over two groups: the table together with
/// `alpha`, and the logit bias `beta` on its own learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    table: Moments,
    alpha: Moments,
    beta: Moments,
    shape: (usize, usize),
    step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            table: Moments::zeros(params.buckets() * params.dim()),
            alpha: Moments::zeros(1),
            beta: Moments::zeros(1),
            shape: params.table.shape(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `alpha` moves only when `train_alpha` is set; its
    /// gradient is still checked for finiteness.
    pub fn step(
        &mut self,
        params: &mut EncoderParams,
        grads: &EncoderGrads,
        lr: f64,
        beta_lr: f64,
        train_alpha: bool,
    ) -> Result<()> {
        if params.table.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: params.table.shape(),
            });
        }
        if grads.table.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: grads.table.shape(),
            });
        }
        check_finite(&grads.table, "table")?;
        if !grads.alpha.is_finite() {
            return Err(Error::NonFiniteGrad { group: "alpha" });
        }
        if !grads.beta.is_finite() {
            return Err(Error::NonFiniteGrad { group: "beta" });
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        self.table
            .update(params.table.as_mut_slice(), grads.table.as_slice(), lr, bc1, bc2);
        if train_alpha {
            let mut a = [params.alpha];
            self.alpha.update(&mut a, &[grads.alpha], lr, bc1, bc2);
            params.alpha = a[0];
        }
        let mut b = [params.beta];
        self.beta.update(&mut b, &[grads.beta], beta_lr, bc1, bc2);
        params.beta = b[0];
        Ok(())
    }
}

fn check_finite(m: &Matrix, group: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteGrad { group })
    }
}

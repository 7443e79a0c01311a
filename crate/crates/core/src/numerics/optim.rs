//! AdamW with linear warmup followed by cosine decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Position in the learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub step: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub lr_floor: f64,
    pub lr_peak: f64,
}

impl ScheduleState {
    pub fn new(warmup_steps: usize, total_steps: usize, lr_floor: f64, lr_peak: f64) -> Result<Self> {
        if warmup_steps == 0 || warmup_steps >= total_steps {
            return Err(Error::Config(format!(
                "schedule needs 0 < warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        if lr_floor.partial_cmp(&lr_peak) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!(
                "schedule needs lr_floor ({lr_floor}) < lr_peak ({lr_peak})"
            )));
        }
        Ok(Self {
            step: 0,
            warmup_steps,
            total_steps,
            lr_floor,
            lr_peak,
        })
    }

    pub fn at(mut self, step: usize) -> Self {
        self.step = step;
        self
    }
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self::new(100, 2000, 1e-5, 1e-4).expect("valid default schedule")
    }
}

/// Linear warmup from `lr_floor` to `lr_peak`, then cosine decay to zero at `total_steps`.
pub fn learning_rate(state: &ScheduleState) -> f64 {
    let s = state;
    if s.step > s.total_steps {
        log::warn!(
            "schedule step {} is past total_steps {}; using learning rate 0",
            s.step,
            s.total_steps
        );
        return 0.0;
    }
    if s.step <= s.warmup_steps {
        let frac = s.step as f64 / s.warmup_steps as f64;
        return s.lr_floor + frac * (s.lr_peak - s.lr_floor);
    }
    let progress = (s.step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    0.5 * s.lr_peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates this parameter has received (for bias correction).
    pub t: u64,
}

impl Moments {
    pub fn for_tensor(t: &Tensor) -> Self {
        Self {
            m: vec![0.0; t.numel()],
            v: vec![0.0; t.numel()],
            t: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update at `learning_rate(state)`.
///
/// Parameters whose gradient is `None` were not reached by the loss and are left
/// untouched (no decay, no moment update). Returns the learning rate used.
pub fn adamw_step(
    names: &[String],
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    moments: &mut [Moments],
    state: &ScheduleState,
    cfg: &AdamWConfig,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != moments.len() || params.len() != names.len() {
        return Err(Error::LengthMismatch(format!(
            "{} params, {} grads, {} moments, {} names",
            params.len(),
            grads.len(),
            moments.len(),
            names.len()
        )));
    }
    for (name, g) in names.iter().zip(grads) {
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
    }
    let lr = learning_rate(state);
    for ((p, g), mo) in params.iter_mut().zip(grads).zip(moments.iter_mut()) {
        let Some(g) = g else { continue };
        if g.shape() != p.shape() {
            return Err(crate::error::shape_err(
                "adamw_step",
                format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
            ));
        }
        mo.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(mo.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(mo.t as i32);
        let mut data = p.to_vec();
        for (i, (w, gv)) in data.iter_mut().zip(g.data()).enumerate() {
            mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * gv;
            mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * gv * gv;
            let mhat = mo.m[i] / bc1;
            let vhat = mo.v[i] / bc2;
            *w -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
        }
        let rg = p.requires_grad();
        *p = Tensor::new(p.shape(), data)?.with_requires_grad(rg);
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_endpoints() {
        let s = ScheduleState::new(100, 2000, 1e-5, 1e-4).unwrap();
        assert_abs_diff_eq!(learning_rate(&s.at(0)), 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&s.at(100)), 1e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&s.at(2000)), 0.0, epsilon = 1e-18);
        assert_eq!(learning_rate(&s.at(2500)), 0.0);
    }

    #[test]
    fn schedule_is_continuous_at_warmup() {
        let s = ScheduleState::new(100, 2000, 1e-5, 1e-4).unwrap();
        let before = learning_rate(&s.at(99));
        let at = learning_rate(&s.at(100));
        let after = learning_rate(&s.at(101));
        assert!((at - before).abs() < 1e-6 && (at - after).abs() < 1e-8);
    }

    #[test]
    fn invalid_schedule_rejected() {
        assert!(ScheduleState::new(0, 10, 1e-5, 1e-4).is_err());
        assert!(ScheduleState::new(10, 10, 1e-5, 1e-4).is_err());
        assert!(ScheduleState::new(1, 10, 1e-4, 1e-4).is_err());
    }

    fn single(w: f64) -> (Vec<String>, Vec<Tensor>, Vec<Moments>) {
        let p = Tensor::from_vec(vec![w]);
        let m = Moments::for_tensor(&p);
        (vec!["w".into()], vec![p], vec![m])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (names, mut params, mut mo) = single(0.7);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = vec![Some(Tensor::from_vec(vec![0.0]))];
        adamw_step(&names, &mut params, &g, &mut mo, &ScheduleState::default(), &cfg).unwrap();
        assert_eq!(params[0].item(), 0.7);
    }

    #[test]
    fn step_descends_square() {
        let (names, mut params, mut mo) = single(1.0);
        let g = vec![Some(Tensor::from_vec(vec![2.0]))];
        let st = ScheduleState::default().at(50);
        adamw_step(&names, &mut params, &g, &mut mo, &st, &AdamWConfig::default()).unwrap();
        assert!(params[0].item() < 1.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (names, mut params, mut mo) = single(1.0);
        let g = vec![Some(Tensor::from_vec(vec![f64::NAN]))];
        let err = adamw_step(&names, &mut params, &g, &mut mo, &ScheduleState::default(), &AdamWConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn unreached_parameter_is_not_updated() {
        let (names, mut params, mut mo) = single(1.0);
        adamw_step(&names, &mut params, &[None], &mut mo, &ScheduleState::default(), &AdamWConfig::default())
            .unwrap();
        assert_eq!(params[0].item(), 1.0);
        assert_eq!(mo[0].t, 0);
    }
}

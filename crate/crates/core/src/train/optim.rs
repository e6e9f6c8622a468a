use super::TrainError;
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamWState<T: Scalar> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay. `grads` follow parameter
/// order. Nothing is modified when any gradient is non-finite.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamWState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), TrainError> {
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TrainError::Config(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFinite {
                what: format!("gradient of `{name}`"),
                step: state.step,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let decay = T::of(1.0 - lr * cfg.weight_decay);
    let step_size = T::of(lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(cfg.eps);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            if cfg.weight_decay != 0.0 {
                *w *= decay;
            }
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let denom = (v[j] * inv_bc2).sqrt() + eps;
            *w -= step_size * m[j] / denom;
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `lr_peak`, then cosine decay towards 0.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, lr_peak: f64) -> f64 {
    if step < warmup_steps {
        return lr_peak * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    0.5 * lr_peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(&[vals.len()], vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_grads_fixed_point_and_decay() {
        let mut p = store(&[1.0, -2.0]);
        let mut s = AdamWState::new(&p);
        let g = [Tensor::zeros(&[2])];
        adamw_step(&mut p, &g, &mut s, 0.1, &AdamWConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &g, &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.95, -1.9]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut p = store(&[0.0, 0.0, 0.0]);
        let mut s = AdamWState::new(&p);
        let gv = [0.3, -2.0, 1e-3];
        let g = [Tensor::from_vec(&[3], gv.to_vec()).unwrap()];
        let cfg = AdamWConfig::default();
        adamw_step(&mut p, &g, &mut s, 0.01, &cfg).unwrap();
        for (w, g) in p.get("w").unwrap().data().iter().zip(gv) {
            // m̂ = g, v̂ = g², so the update is −lr·g/(|g|+eps)
            let expect = -0.01 * g / (g.abs() + cfg.eps);
            assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter_and_leaves_state() {
        let mut p = store(&[1.0]);
        let mut s = AdamWState::new(&p);
        let g = [Tensor::from_vec(&[1], vec![f64::NAN]).unwrap()];
        let err = adamw_step(&mut p, &g, &mut s, 0.1, &AdamWConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.step, 0);
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn schedule_shape() {
        let (total, warm, peak) = (1000, 100, 5e-4);
        assert_eq!(lr_at(0, total, warm, peak), 0.0);
        assert_eq!(lr_at(warm, total, warm, peak), peak);
        // ramp value extended one increment to the boundary
        let left = lr_at(warm - 1, total, warm, peak) + peak / warm as f64;
        assert!((left - lr_at(warm, total, warm, peak)).abs() < 1e-12 * peak);
        assert!((lr_at(550, total, warm, peak) - 0.5 * peak).abs() < 1e-15);
        let last = lr_at(total - 1, total, warm, peak);
        let inc = lr_at(total - 2, total, warm, peak) - last;
        assert!(last >= 0.0 && last <= inc + 1e-18);
        assert_eq!(lr_at(5, 10, 0, 1.0), 0.5);
    }
}

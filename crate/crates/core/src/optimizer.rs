//! Full-batch Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelParams;

/// Adam moments and counters. β₁=0.9, β₂=0.999, ε=1e-8 unless overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(learning_rate: f64, shape: &ModelParams) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: shape.zeros_like(),
            v: shape.zeros_like(),
        }
    }
}

/// Elementwise Adam update over zipped parameter/gradient/moment slots.
/// `t` is the post-increment step count. Shared with the evaluation
/// classifier, which trains flat vectors.
pub(crate) fn adam_update<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), m), v) in params.zip(grads).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// One bias-corrected Adam step over the full parameter set, in place.
pub fn adam_step(params: &mut ModelParams, g: &ModelParams, state: &mut AdamState) -> Result<()> {
    if g.num_params() != params.num_params() {
        return Err(Error::Shape(format!(
            "gradient has {} slots, parameters have {}",
            g.num_params(),
            params.num_params()
        )));
    }
    if !(state.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be > 0, got {}",
            state.learning_rate
        )));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient passed to adam_step".into()));
    }
    state.step_count += 1;
    adam_update(
        params.slots_mut(),
        g.slots(),
        state.m.slots_mut(),
        state.v.slots_mut(),
        state.step_count,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, Topology};
    use crate::numerics::Rng;

    fn params_and_state(lr: f64, seed: u64) -> (ModelParams, AdamState) {
        let t = Topology::from_hidden_chain(3, &[2], true).unwrap();
        let p = init_params(&t, &mut Rng::new(seed));
        let s = AdamState::new(lr, &p);
        (p, s)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut p, mut s) = params_and_state(0.01, 0);
        let g = p.zeros_like();
        let before = p.clone();
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_hand_algebra() {
        // m̂ = g, v̂ = g² after bias correction, so the update is
        // −lr·g/(|g|+ε) = −0.001·2/(2+1e-8).
        let (mut p, mut s) = params_and_state(0.001, 1);
        let before = p.spl[0];
        let mut g = p.zeros_like();
        g.spl[0] = 2.0;
        adam_step(&mut p, &g, &mut s).unwrap();
        let want = -0.001 * 2.0 / (2.0 + 1e-8);
        assert!((p.spl[0] - before - want).abs() < 1e-15, "{}", p.spl[0] - before);
    }

    #[test]
    fn equal_gradients_get_identical_updates() {
        let (mut p, mut s) = params_and_state(0.01, 2);
        p.spl[0] = 0.5;
        p.spl[1] = 0.5;
        let mut g = p.zeros_like();
        g.spl[0] = 1.3;
        g.spl[1] = 1.3;
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.spl[0], p.spl[1]);
    }

    #[test]
    fn rejects_nonfinite_gradient() {
        let (mut p, mut s) = params_and_state(0.01, 3);
        let mut g = p.zeros_like();
        g.spl[0] = f64::NAN;
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }

    #[test]
    fn step_displacement_bounded_by_lr() {
        // Constant gradients give exactly lr·g/(|g|+ε); seeded i.i.d. normal
        // sequences stay within lr for the default betas.
        let lr = 0.01;
        let (mut p, mut s) = params_and_state(lr, 4);
        let mut rng = Rng::new(40);
        for _ in 0..200 {
            let mut g = p.zeros_like();
            for slot in g.slots_mut() {
                *slot = rng.normal(0.0, 1.0);
            }
            let before = p.to_flat();
            adam_step(&mut p, &g, &mut s).unwrap();
            for (a, b) in p.to_flat().iter().zip(&before) {
                assert!((a - b).abs() <= lr * (1.0 + 1e-6), "step {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn first_step_invariant_under_gradient_scaling() {
        let (p0, _) = params_and_state(0.001, 5);
        let mut run = |scale: f64| {
            let mut p = p0.clone();
            let mut s = AdamState::new(0.001, &p);
            let mut g = p.zeros_like();
            for (i, slot) in g.slots_mut().enumerate() {
                *slot = scale * (0.3 + i as f64 * 0.05);
            }
            adam_step(&mut p, &g, &mut s).unwrap();
            p.to_flat()
        };
        let small = run(1.0);
        let large = run(1000.0);
        let base = p0.to_flat();
        for ((a, b), orig) in small.iter().zip(&large).zip(&base) {
            let da = a - orig;
            let db = b - orig;
            assert!((da - db).abs() / da.abs().max(1e-12) < 1e-6);
        }
    }
}

//! Adam with per-group learning rates, and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::numeric::{GroupKind, ParamSet, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning rate per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub linear: f64,
    pub bilinear: f64,
    pub head: f64,
    pub embedding: f64,
}

impl GroupRates {
    /// Bilinear group at `ratio * base`, everything else at `base`.
    pub fn split(base: f64, ratio: f64) -> Self {
        Self {
            linear: base,
            bilinear: ratio * base,
            head: base,
            embedding: base,
        }
    }

    pub fn get(&self, group: GroupKind) -> f64 {
        match group {
            GroupKind::Linear => self.linear,
            GroupKind::Bilinear => self.bilinear,
            GroupKind::Head => self.head,
            GroupKind::Embedding => self.embedding,
        }
    }
}

/// First and second moments mirroring the parameter layout, plus the
/// shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Groups whose rate is zero are skipped
/// entirely, so their tensors stay bitwise unchanged.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, rates: &GroupRates) {
    assert!(params.same_layout(grads), "parameter and gradient layouts must match");
    adam_update(params.iter_mut().map(|e| (e.group, &mut e.tensor)), grads, state, rates);
}

/// [`adam_step`] over tensors borrowed in enumeration order.
pub fn adam_update<'a>(
    params: impl Iterator<Item = (GroupKind, &'a mut Tensor)>,
    grads: &ParamSet,
    state: &mut AdamState,
    rates: &GroupRates,
) {
    assert!(grads.same_layout(&state.m), "gradient and moment layouts must match");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((group, p), g), (m, v)) in params.zip(grads.iter()).zip(moments) {
        let lr = rates.get(group);
        if lr == 0.0 {
            continue;
        }
        assert_eq!(p.shape(), g.tensor.shape(), "{}", g.name);
        let pd = p.data_mut();
        let md = m.tensor.data_mut();
        let vd = v.tensor.data_mut();
        for (i, &gi) in g.tensor.data().iter().enumerate() {
            md[i] = BETA1 * md[i] + (1.0 - BETA1) * gi;
            vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

/// Rescales all gradients by `clip / norm` when the global L2 norm exceeds
/// `clip`. Returns the pre-clip norm and whether clipping happened.
pub fn clip_gradients(grads: &mut ParamSet, clip: f64) -> (f64, bool) {
    let norm = grads.global_l2_norm();
    if norm > clip {
        grads.scale(clip / norm);
        (norm, true)
    } else {
        (norm, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64, group: GroupKind) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", group, Tensor::vector(vec![v]));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.7, GroupKind::Linear);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &single(0.0, GroupKind::Linear), &mut s, &GroupRates::split(0.1, 0.5));
        assert_eq!(p.entries()[0].tensor.data(), &[0.7]);
    }

    #[test]
    fn hand_stepped_scalar() {
        let (lr, g) = (0.01, 0.3);
        let mut p = single(1.0, GroupKind::Linear);
        let mut s = AdamState::new(&p);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            adam_step(&mut p, &single(g, GroupKind::Linear), &mut s, &GroupRates::split(lr, 0.5));
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.entries()[0].tensor.data()[0] - w).abs() < 1e-15);
        }
        // first step moves by almost exactly lr
        let mut q = single(1.0, GroupKind::Linear);
        adam_step(&mut q, &single(g, GroupKind::Linear), &mut AdamState::new(&single(1.0, GroupKind::Linear)), &GroupRates::split(lr, 0.5));
        assert!((1.0 - q.entries()[0].tensor.data()[0] - lr).abs() < 1e-9);
    }

    #[test]
    fn zero_ratio_freezes_bilinear() {
        let mut p = ParamSet::new();
        p.push("a", GroupKind::Linear, Tensor::vector(vec![0.1, 0.2]));
        p.push("b", GroupKind::Bilinear, Tensor::vector(vec![-0.3, 0.4]));
        let before = p.clone();
        let mut g = p.zeros_like();
        for e in g.iter_mut() {
            e.tensor = Tensor::vector(vec![1.0, -2.0]);
        }
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s, &GroupRates::split(0.01, 0.0));
        }
        assert!(p.entries()[1].tensor.bit_eq(&before.entries()[1].tensor));
        assert!(!p.entries()[0].tensor.bit_eq(&before.entries()[0].tensor));
    }

    #[test]
    fn clipping() {
        let mut g = ParamSet::new();
        g.push("x", GroupKind::Linear, Tensor::vector(vec![3.0]));
        g.push("y", GroupKind::Bilinear, Tensor::vector(vec![4.0]));
        let mut below = g.clone();
        assert_eq!(clip_gradients(&mut below, 10.0), (5.0, false));
        assert!(below.bit_eq(&g));
        let (norm, clipped) = clip_gradients(&mut g, 1.0);
        assert!(clipped && norm == 5.0);
        assert!((g.entries()[0].tensor.data()[0] - 0.6).abs() < 1e-15);
        assert!((g.entries()[1].tensor.data()[0] - 0.8).abs() < 1e-15);
        assert!(g.global_l2_norm() <= 1.0 + 1e-12);
    }
}

use std::collections::BTreeMap;

use super::TrainConfig;
use crate::error::{numeric_err, shape_err, Result};
use crate::model::ModelWeights;
use crate::tensor::{DType, Tensor};

/// First and second moments per parameter and the step counter.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OptimState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl OptimState {
    pub fn new(weights: &ModelWeights) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape(), DType::F64);
        Self {
            m: weights.iter().map(|(k, p)| (k.clone(), zeros(p))).collect(),
            v: weights.iter().map(|(k, p)| (k.clone(), zeros(p))).collect(),
            t: 0,
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One AdamW update with decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adamw_step(
    weights: &mut ModelWeights,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.values().flatten().any(|g| !g.is_finite()) {
        return Err(numeric_err!("non-finite gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in weights.iter_mut() {
        let zero;
        let g = match grads.get(name) {
            Some(g) if g.len() == p.numel() => g.as_slice(),
            Some(g) => {
                return Err(shape_err!(
                    "gradient of '{name}' has {} values for {}",
                    g.len(),
                    p.numel()
                ))
            }
            None => {
                zero = vec![0.0; p.numel()];
                &zero
            }
        };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape(), DType::F64));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape(), DType::F64));
        let mut md = m.data().to_vec();
        let mut vd = v.data().to_vec();
        let mut pd = p.data().to_vec();
        for i in 0..pd.len() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
        }
        m.assign(&md)?;
        v.assign(&vd)?;
        p.assign(&pd)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_weights(v: f64) -> ModelWeights {
        let mut w = ModelWeights::new();
        w.insert("p", Tensor::scalar(v, DType::F64));
        w
    }

    fn grads(g: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("p".to_string(), vec![g])])
    }

    #[test]
    fn zero_gradient_cases() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut w = scalar_weights(0.7);
        let mut s = OptimState::new(&w);
        adamw_step(&mut w, &grads(0.0), &mut s, &cfg).unwrap();
        assert_eq!(w.get("p").unwrap().item(), 0.7);

        let cfg = TrainConfig::default();
        let mut w = scalar_weights(1.0);
        let mut s = OptimState::new(&w);
        adamw_step(&mut w, &grads(0.0), &mut s, &cfg).unwrap();
        assert!((w.get("p").unwrap().item() - (1.0 - 4e-7)).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_hand_unrolled() {
        let cfg = TrainConfig::default();
        let (lr, b1, b2, eps, wd) = (4e-4, 0.9, 0.999, 1e-8, 0.001);
        let gs = [1.0, -0.5, 0.25];
        let mut w = scalar_weights(0.0);
        let mut s = OptimState::new(&w);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            adamw_step(&mut w, &grads(g), &mut s, &cfg).unwrap();
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * (mh / (vh.sqrt() + eps) + wd * p);
            assert!((w.get("p").unwrap().item() - p).abs() < 1e-12);
        }
        // first step from p = 0 with g = 1: m_hat = v_hat = 1
        let mut w1 = scalar_weights(0.0);
        let mut s1 = OptimState::new(&w1);
        adamw_step(&mut w1, &grads(1.0), &mut s1, &cfg).unwrap();
        assert!((w1.get("p").unwrap().item() + lr / (1.0 + eps)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let mut w = scalar_weights(0.0);
        let mut s = OptimState::new(&w);
        let err = adamw_step(&mut w, &grads(f64::NAN), &mut s, &TrainConfig::default());
        assert!(matches!(err, Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn clipping() {
        let mut g = BTreeMap::from([("a".to_string(), vec![3.0]), ("b".to_string(), vec![4.0])]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["b"][0] - 0.8).abs() < 1e-15);
    }
}

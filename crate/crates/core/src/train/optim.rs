//! Adam and AdaDelta over named parameters, with optional global-norm
//! gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Real, StoredTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdaDelta,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adadelta" => Ok(OptimizerKind::AdaDelta),
            other => Err(format!(
                "unknown optimizer {other:?} (expected adam or adadelta)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub eps: f64,
    /// Global L2 norm the gradients are scaled down to; `None` disables.
    pub clip_norm: Option<f64>,
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            rho: 0.95,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }

    pub fn adadelta(lr: f64) -> Self {
        OptimConfig {
            kind: OptimizerKind::AdaDelta,
            eps: 1e-6,
            ..Self::adam(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && (0.0..1.0).contains(&self.rho)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(format!("invalid optimizer settings {self:?}")))
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::adam(0.01)
    }
}

/// Per-parameter accumulators. For Adam `a` and `b` are the first and
/// second moments; for AdaDelta they are E[g²] and E[Δ²].
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<F> {
    pub shape: Vec<usize>,
    pub a: Vec<F>,
    pub b: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState<F> {
    pub step: u64,
    pub slots: BTreeMap<String, Slot<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct Optimizer<F: Real> {
    pub config: OptimConfig,
    pub state: OptimState<F>,
}

const STATE_PREFIX: &str = "optim";

impl<F: Real> Optimizer<F> {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimState::default(),
        })
    }

    /// One update from the gradients currently stored on `params`. A
    /// parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &[(String, Tensor<F>)]) -> Result<StepInfo> {
        let mut grads: BTreeMap<&str, (Vec<f64>, &Tensor<F>)> = BTreeMap::new();
        for (name, p) in params {
            let g: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            };
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: "optimizer",
                    detail: format!("non-finite gradient {} in {name} at index {k}", g[k]),
                });
            }
            if grads.insert(name, (g, p)).is_some() {
                return Err(Error::Usage(format!("parameter {name} registered twice")));
            }
        }
        let grad_norm = grads
            .values()
            .flat_map(|(g, _)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.config;
        for (name, (g, p)) in grads {
            let slot = self
                .state
                .slots
                .entry(name.to_string())
                .or_insert_with(|| Slot {
                    shape: p.shape().to_vec(),
                    a: vec![F::zero(); p.numel()],
                    b: vec![F::zero(); p.numel()],
                });
            if slot.shape != p.shape() {
                return Err(Error::shape("optimizer", &slot.shape, p.shape()));
            }
            let mut data = p.data_mut();
            match c.kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for k in 0..g.len() {
                        let gk = g[k] * scale;
                        let m = c.beta1 * slot.a[k].as_f64() + (1.0 - c.beta1) * gk;
                        let v = c.beta2 * slot.b[k].as_f64() + (1.0 - c.beta2) * gk * gk;
                        slot.a[k] = F::lit(m);
                        slot.b[k] = F::lit(v);
                        let delta = c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
                        data[k] = F::lit(data[k].as_f64() - delta);
                    }
                }
                OptimizerKind::AdaDelta => {
                    for k in 0..g.len() {
                        let gk = g[k] * scale;
                        let eg = c.rho * slot.a[k].as_f64() + (1.0 - c.rho) * gk * gk;
                        let delta =
                            ((slot.b[k].as_f64() + c.eps).sqrt() / (eg + c.eps).sqrt()) * gk;
                        let ed = c.rho * slot.b[k].as_f64() + (1.0 - c.rho) * delta * delta;
                        slot.a[k] = F::lit(eg);
                        slot.b[k] = F::lit(ed);
                        data[k] = F::lit(data[k].as_f64() - c.lr * delta);
                    }
                }
            }
        }
        Ok(StepInfo {
            grad_norm,
            clipped: scale < 1.0,
        })
    }

    /// Appends accumulators as `optim.a.<name>` / `optim.b.<name>` tensors
    /// and the step counter and settings under the `optimizer` meta key.
    pub fn save_state(&self, ck: &mut Checkpoint) {
        for (name, slot) in &self.state.slots {
            for (tag, v) in [("a", &slot.a), ("b", &slot.b)] {
                ck.tensors.push(StoredTensor {
                    name: format!("{STATE_PREFIX}.{tag}.{name}"),
                    shape: slot.shape.clone(),
                    data: v.iter().map(|x| x.as_f64() as f32).collect(),
                });
            }
        }
        ck.meta.insert(
            "optimizer".into(),
            serde_json::json!({ "config": self.config, "step": self.state.step }),
        );
    }

    /// Rebuilds an optimizer from [`Optimizer::save_state`] output.
    pub fn load_state(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .meta
            .get("optimizer")
            .ok_or_else(|| Error::Data("checkpoint has no optimizer state".into()))?;
        let config: OptimConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Data(format!("optimizer config: {e}")))?;
        let step = meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Data("optimizer step missing".into()))?;
        let mut opt = Optimizer::new(config)?;
        opt.state.step = step;
        let a_prefix = format!("{STATE_PREFIX}.a.");
        for t in &ck.tensors {
            let Some(name) = t.name.strip_prefix(&a_prefix) else {
                continue;
            };
            let b = ck
                .get(&format!("{STATE_PREFIX}.b.{name}"))
                .ok_or_else(|| Error::Data(format!("optimizer state for {name} incomplete")))?;
            let cast = |v: &[f32]| v.iter().map(|&x| F::lit(x as f64)).collect();
            opt.state.slots.insert(
                name.to_string(),
                Slot {
                    shape: t.shape.clone(),
                    a: cast(&t.data),
                    b: cast(&b.data),
                },
            );
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> (String, Tensor<f64>) {
        ("w".to_string(), Tensor::param(vec![v], &[1]).unwrap())
    }

    fn set_grad(p: &Tensor<f64>, g: f64) {
        p.zero_grad();
        p.scale(g).sum().backward().unwrap();
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e-3] {
            let (n, p) = scalar_param(1.0);
            let mut opt = Optimizer::new(OptimConfig {
                clip_norm: None,
                ..OptimConfig::adam(0.01)
            })
            .unwrap();
            set_grad(&p, g);
            opt.step(&[(n, p.clone())]).unwrap();
            let delta = 1.0 - p.item();
            let want = 0.01 * g.abs() / (g.abs() + 1e-8) * g.signum();
            assert!((delta - want).abs() < 1e-15, "{g}: {delta} vs {want}");
        }
    }

    #[test]
    fn adam_matches_hand_rolled_trace() {
        let (n, p) = scalar_param(0.5);
        let params = [(n, p.clone())];
        let mut opt = Optimizer::new(OptimConfig {
            clip_norm: None,
            ..OptimConfig::adam(0.1)
        })
        .unwrap();
        let (mut theta, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            // Gradient of theta².
            let g = 2.0 * theta;
            set_grad(&p, g);
            opt.step(&params).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.item() - theta).abs() < 1e-15, "step {t}");
        }
        assert_eq!(opt.state.step, 3);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        for cfg in [OptimConfig::adam(0.01), OptimConfig::adadelta(0.5)] {
            let (n, p) = scalar_param(0.7);
            let mut opt = Optimizer::new(cfg).unwrap();
            for _ in 0..5 {
                set_grad(&p, 0.0);
                opt.step(&[(n.clone(), p.clone())]).unwrap();
            }
            assert_eq!(p.item(), 0.7);
        }
    }

    #[test]
    fn adadelta_constant_grad_approaches_lr() {
        let (n, p) = scalar_param(0.0);
        let cfg = OptimConfig {
            eps: 0.1,
            clip_norm: None,
            ..OptimConfig::adadelta(0.5)
        };
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut prev = 0.0;
        let mut last = 0.0;
        for _ in 0..3000 {
            set_grad(&p, 1.0);
            let before = p.item();
            opt.step(&[(n.clone(), p.clone())]).unwrap();
            last = before - p.item();
            assert!(last >= prev - 1e-15 && last <= 0.5 + 1e-12);
            prev = last;
        }
        assert!((last - 0.5).abs() < 1e-3, "{last}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let p = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        p.scale(f64::NAN).sum().backward().unwrap();
        let mut opt = Optimizer::new(OptimConfig::adam(0.01)).unwrap();
        let err = opt.step(&[("encoder.fwd.b".to_string(), p)]).unwrap_err();
        assert!(err.to_string().contains("encoder.fwd.b"), "{err}");
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let p = Tensor::<f64>::param(vec![0.0, 0.0], &[2]).unwrap();
        Tensor::from_f64(&[30.0, 40.0], &[2])
            .unwrap()
            .mul(&p)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        let cfg = OptimConfig {
            kind: OptimizerKind::AdaDelta,
            lr: 1.0,
            rho: 0.0,
            eps: 1e-300,
            ..OptimConfig::adam(1.0)
        };
        let mut opt = Optimizer::new(cfg).unwrap();
        let info = opt.step(&[("p".into(), p.clone())]).unwrap();
        assert_eq!(info.grad_norm, 50.0);
        assert!(info.clipped);
        // rho = 0 stores the clipped gradient squared directly.
        let eg = &opt.state.slots["p"].a;
        assert!(
            (eg[0] - 9.0).abs() < 1e-12 && (eg[1] - 16.0).abs() < 1e-12,
            "{eg:?}"
        );
    }

    #[test]
    fn registration_order_does_not_matter() {
        let run = |order: &[usize]| {
            let ps: Vec<(String, Tensor<f64>)> = (0..3)
                .map(|i| {
                    (
                        format!("p{i}"),
                        Tensor::param(vec![i as f64 + 0.5, -0.25 * i as f64], &[2]).unwrap(),
                    )
                })
                .collect();
            let mut opt = Optimizer::new(OptimConfig::adam(0.05)).unwrap();
            let reg: Vec<_> = order.iter().map(|&i| ps[i].clone()).collect();
            for step in 0..4 {
                for (k, (_, p)) in ps.iter().enumerate() {
                    p.zero_grad();
                    p.mul(p)
                        .unwrap()
                        .scale(3.0 + k as f64 + step as f64)
                        .sum()
                        .backward()
                        .unwrap();
                }
                opt.step(&reg).unwrap();
            }
            ps.iter().map(|(_, p)| p.to_vec()).collect::<Vec<_>>()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = Tensor::<f32>::param(vec![0.3, -0.6, 0.9], &[3]).unwrap();
        let params = [("w".to_string(), p.clone())];
        let mut opt = Optimizer::<f32>::new(OptimConfig::adadelta(0.5)).unwrap();
        for _ in 0..3 {
            p.zero_grad();
            p.mul(&p).unwrap().sum().backward().unwrap();
            opt.step(&params).unwrap();
        }
        let mut ck = Checkpoint::default();
        opt.save_state(&mut ck);
        let stem = dir.path().join("opt");
        ck.save(&stem).unwrap();
        let back = Optimizer::<f32>::load_state(&Checkpoint::load(&stem).unwrap()).unwrap();
        assert_eq!(back.config, opt.config);
        assert_eq!(back.state, opt.state);
    }
}

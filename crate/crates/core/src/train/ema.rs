use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Exponential moving average of parameter values.
#[derive(Debug, Clone)]
pub struct Ema<F> {
    pub decay: f64,
    shadow: Vec<(String, Vec<F>)>,
}

impl<F: Real> Ema<F> {
    /// Shadow starts equal to the current parameter values.
    pub fn new(params: &[(String, Tensor<F>)], decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Usage(format!("ema decay {decay} outside [0, 1)")));
        }
        Ok(Ema {
            decay,
            shadow: params
                .iter()
                .map(|(n, p)| (n.clone(), p.to_vec()))
                .collect(),
        })
    }

    fn check(&self, params: &[(String, Tensor<F>)]) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::Usage(format!(
                "ema tracks {} tensors, got {}",
                self.shadow.len(),
                params.len()
            )));
        }
        for ((n, p), (sn, s)) in params.iter().zip(&self.shadow) {
            if n != sn || p.numel() != s.len() {
                return Err(Error::Usage(format!("ema tensor {sn} does not match {n}")));
            }
        }
        Ok(())
    }

    /// `shadow ← decay·shadow + (1 − decay)·param`.
    pub fn update(&mut self, params: &[(String, Tensor<F>)]) -> Result<()> {
        self.check(params)?;
        let d = self.decay;
        for ((_, p), (_, s)) in params.iter().zip(&mut self.shadow) {
            for (sv, pv) in s.iter_mut().zip(p.data().iter()) {
                *sv = F::lit(d * sv.as_f64() + (1.0 - d) * pv.as_f64());
            }
        }
        Ok(())
    }

    /// Exchanges shadow and live values. Calling it twice restores the
    /// original state.
    pub fn swap(&mut self, params: &[(String, Tensor<F>)]) -> Result<()> {
        self.check(params)?;
        for ((_, p), (_, s)) in params.iter().zip(&mut self.shadow) {
            std::mem::swap(&mut *p.data_mut(), s);
        }
        Ok(())
    }

    pub fn shadow(&self, name: &str) -> Option<&[F]> {
        self.shadow
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: &[f64]) -> Vec<(String, Tensor<f64>)> {
        vec![("p".into(), Tensor::param(v.to_vec(), &[v.len()]).unwrap())]
    }

    #[test]
    fn constant_params_keep_shadow_equal() {
        let ps = params(&[0.25, -1.5]);
        let mut ema = Ema::new(&ps, 0.999).unwrap();
        for _ in 0..10 {
            ema.update(&ps).unwrap();
        }
        assert_eq!(ema.shadow("p").unwrap(), &[0.25, -1.5]);
    }

    #[test]
    fn one_step_from_zero() {
        let ps = params(&[0.0]);
        let mut ema = Ema::new(&ps, 0.999).unwrap();
        ps[0].1.data_mut()[0] = 1.0;
        ema.update(&ps).unwrap();
        assert!((ema.shadow("p").unwrap()[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn gap_shrinks_geometrically() {
        let ps = params(&[0.0]);
        let mut ema = Ema::new(&ps, 0.9).unwrap();
        ps[0].1.data_mut()[0] = 1.0;
        let mut gap = 1.0;
        for _ in 0..20 {
            ema.update(&ps).unwrap();
            let g = 1.0 - ema.shadow("p").unwrap()[0];
            assert!((g - 0.9 * gap).abs() < 1e-12);
            gap = g;
        }
    }

    #[test]
    fn double_swap_is_identity() {
        let ps = params(&[1.0, 2.0]);
        let mut ema = Ema::new(&ps, 0.5).unwrap();
        ps[0].1.data_mut().copy_from_slice(&[3.0, 4.0]);
        ema.update(&ps).unwrap();
        ema.swap(&ps).unwrap();
        assert_eq!(ps[0].1.to_vec(), vec![2.0, 3.0]);
        ema.swap(&ps).unwrap();
        assert_eq!(ps[0].1.to_vec(), vec![3.0, 4.0]);
        assert_eq!(ema.shadow("p").unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn mismatched_params_rejected() {
        let ps = params(&[1.0]);
        let mut ema = Ema::new(&ps, 0.5).unwrap();
        assert!(ema.update(&params(&[1.0, 2.0])).is_err());
    }
}

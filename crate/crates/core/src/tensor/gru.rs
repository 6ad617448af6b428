//! Fused GRU recurrence with hand-written backpropagation through time.
//!
//! The input projection `x·W_ih + b` is an ordinary matmul computed by the
//! caller; this op only runs the recurrent part so the whole sequence is a
//! single graph node. Gate layout along the `3h` axis is `[z | r | n]`:
//!
//! ```text
//! z = σ(xw_z + h·U_z)
//! r = σ(xw_r + h·U_r)
//! n = tanh(xw_n + (r∘h)·U_n)
//! h' = (1−z)∘h + z∘n
//! ```
//!
//! Steps whose mask is false copy the previous state through unchanged.

use super::ops::Op;
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub(crate) struct GruCache<F> {
    hidden: usize,
    mask: Vec<bool>,
    reverse: bool,
    z: Vec<F>,
    r: Vec<F>,
    n: Vec<F>,
    h_prev: Vec<F>,
}

fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

fn order(steps: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    }
}

impl<F: Real> Tensor<F> {
    /// Runs the recurrence over `xw` (`T×3h`) with recurrent weights `w_hh`
    /// (`h×3h`) from a zero initial state, returning every state (`T×h`).
    /// With `reverse` the sequence is consumed from `T-1` down to `0`, and
    /// row `t` of the result is still the state after reading position `t`.
    pub fn gru_scan(
        xw: &Tensor<F>,
        w_hh: &Tensor<F>,
        mask: &[bool],
        reverse: bool,
    ) -> Result<Tensor<F>> {
        if w_hh.rank() != 2 || w_hh.dim(1) != 3 * w_hh.dim(0) {
            return Err(Error::shape("gru_scan", w_hh.shape(), &[0, 0]));
        }
        let h = w_hh.dim(0);
        if xw.rank() != 2 || xw.dim(1) != 3 * h {
            return Err(Error::shape("gru_scan", xw.shape(), w_hh.shape()));
        }
        let steps = xw.dim(0);
        if mask.len() != steps {
            return Err(Error::shape("gru_scan", xw.shape(), &[mask.len()]));
        }

        let a = xw.data();
        let w = w_hh.data();
        let three = 3 * h;
        let mut cache = GruCache {
            hidden: h,
            mask: mask.to_vec(),
            reverse,
            z: vec![F::zero(); steps * h],
            r: vec![F::zero(); steps * h],
            n: vec![F::zero(); steps * h],
            h_prev: vec![F::zero(); steps * h],
        };
        let mut out = vec![F::zero(); steps * h];
        let mut state = vec![F::zero(); h];
        let mut pre = vec![F::zero(); three];
        let mut rh = vec![F::zero(); h];

        for t in order(steps, reverse) {
            cache.h_prev[t * h..(t + 1) * h].copy_from_slice(&state);
            if !mask[t] {
                out[t * h..(t + 1) * h].copy_from_slice(&state);
                continue;
            }
            let row = &a[t * three..(t + 1) * three];
            pre[..2 * h].copy_from_slice(&row[..2 * h]);
            for (i, &hv) in state.iter().enumerate() {
                if hv == F::zero() {
                    continue;
                }
                let wrow = &w[i * three..i * three + 2 * h];
                for (p, &wv) in pre[..2 * h].iter_mut().zip(wrow) {
                    *p += hv * wv;
                }
            }
            for j in 0..h {
                let z = sigmoid(pre[j]);
                let r = sigmoid(pre[h + j]);
                cache.z[t * h + j] = z;
                cache.r[t * h + j] = r;
                rh[j] = r * state[j];
            }
            let npre = &mut pre[2 * h..];
            npre.copy_from_slice(&row[2 * h..]);
            for (i, &v) in rh.iter().enumerate() {
                let wrow = &w[i * three + 2 * h..(i + 1) * three];
                for (p, &wv) in npre.iter_mut().zip(wrow) {
                    *p += v * wv;
                }
            }
            for j in 0..h {
                let n = npre[j].tanh();
                let z = cache.z[t * h + j];
                cache.n[t * h + j] = n;
                state[j] = (F::one() - z) * state[j] + z * n;
            }
            out[t * h..(t + 1) * h].copy_from_slice(&state);
        }
        drop((a, w));
        Ok(Tensor::from_op(
            out,
            vec![steps, h],
            Op::GruScan {
                xw: xw.clone(),
                w_hh: w_hh.clone(),
                cache,
            },
        ))
    }
}

impl<F: Real> GruCache<F> {
    pub(crate) fn backward(&self, xw: &Tensor<F>, w_hh: &Tensor<F>, g: &[F]) {
        let h = self.hidden;
        let three = 3 * h;
        let steps = self.mask.len();
        let w = w_hh.data();
        let mut dxw = vec![F::zero(); steps * three];
        let mut dw = vec![F::zero(); h * three];
        let mut carry = vec![F::zero(); h];
        let mut dh = vec![F::zero(); h];
        let mut dgates = vec![F::zero(); three];
        let mut drh = vec![F::zero(); h];

        for t in order(steps, !self.reverse) {
            for j in 0..h {
                dh[j] = carry[j] + g[t * h + j];
            }
            if !self.mask[t] {
                carry.copy_from_slice(&dh);
                continue;
            }
            let z = &self.z[t * h..(t + 1) * h];
            let r = &self.r[t * h..(t + 1) * h];
            let n = &self.n[t * h..(t + 1) * h];
            let hp = &self.h_prev[t * h..(t + 1) * h];

            for j in 0..h {
                let dn = dh[j] * z[j];
                let dz = dh[j] * (n[j] - hp[j]);
                carry[j] = dh[j] * (F::one() - z[j]);
                dgates[2 * h + j] = dn * (F::one() - n[j] * n[j]);
                dgates[j] = dz * z[j] * (F::one() - z[j]);
            }
            // candidate path through U_n
            for i in 0..h {
                let wrow = &w[i * three + 2 * h..(i + 1) * three];
                let dwrow = &mut dw[i * three + 2 * h..(i + 1) * three];
                let rhi = r[i] * hp[i];
                let mut acc = F::zero();
                for ((dwv, &wv), &dg) in dwrow.iter_mut().zip(wrow).zip(&dgates[2 * h..]) {
                    acc += dg * wv;
                    *dwv += rhi * dg;
                }
                drh[i] = acc;
            }
            for j in 0..h {
                let dr = drh[j] * hp[j];
                carry[j] += drh[j] * r[j];
                dgates[h + j] = dr * r[j] * (F::one() - r[j]);
            }
            // update/reset path through U_z, U_r
            for i in 0..h {
                let wrow = &w[i * three..i * three + 2 * h];
                let dwrow = &mut dw[i * three..i * three + 2 * h];
                let mut acc = F::zero();
                for ((dwv, &wv), &dg) in dwrow.iter_mut().zip(wrow).zip(&dgates[..2 * h]) {
                    acc += dg * wv;
                    *dwv += hp[i] * dg;
                }
                carry[i] += acc;
            }
            dxw[t * three..(t + 1) * three].copy_from_slice(&dgates);
        }
        drop(w);
        xw.accumulate_grad(&dxw);
        w_hh.accumulate_grad(&dw);
    }
}

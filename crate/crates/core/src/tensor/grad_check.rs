//! Centered finite-difference gradient verification.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kinks, Real, Tensor};
use crate::error::{Error, Result};

/// Floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Tensors with more elements than this are checked on a random sample
    /// of coordinates.
    pub max_coords: usize,
    pub seed: u64,
    /// Combine the `eps` and `eps/2` quotients to cancel the second-order
    /// truncation term.
    pub richardson: bool,
    /// Relative errors divide by at least this magnitude.
    pub floor: f64,
    /// When nonzero, each tensor is checked along this many random ±1
    /// directions (`∇L·v` against the difference quotient of `L` along `v`)
    /// instead of coordinate by coordinate.
    pub directions: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: 12,
            seed: 0,
            richardson: false,
            floor: REL_ERROR_FLOOR,
            directions: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    /// Coordinate index, or direction number in directional mode.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct ParamGradStats {
    pub name: String,
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
    /// Probes rejected because the perturbation flipped a non-smooth
    /// decision.
    pub kinks: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub params: Vec<ParamGradStats>,
}

impl GradReport {
    pub fn worst(&self) -> Option<&ParamGradStats> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |p| p.max_rel_error)
    }

    pub fn samples(&self) -> usize {
        self.params.iter().map(|p| p.samples.len()).sum()
    }

    pub fn kinks(&self) -> usize {
        self.params.iter().map(|p| p.kinks).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_ERROR_FLOOR)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<R: Real>(f: &mut impl FnMut() -> Result<Tensor<R>>) -> Result<f64> {
    let out = f()?;
    if out.numel() != 1 {
        return Err(Error::Usage(format!(
            "grad_check objective has shape {:?}",
            out.shape()
        )));
    }
    let v = out.item().as_f64();
    if !v.is_finite() {
        return Err(Error::Numeric {
            op: "grad_check",
            detail: format!("objective evaluated to {v}"),
        });
    }
    Ok(v)
}

fn eval_traced<R: Real>(f: &mut impl FnMut() -> Result<Tensor<R>>) -> Result<(f64, Option<u64>)> {
    kinks::start();
    let v = eval_scalar(f);
    let trace = kinks::finish();
    Ok((v?, trace))
}

/// Centered quotient along `dir` (a single coordinate when `dir` is
/// `None`). `None` when either probe crossed a kink.
fn quotient<R: Real>(
    p: &Tensor<R>,
    dir: Probe<'_>,
    eps: f64,
    base: Option<u64>,
    f: &mut impl FnMut() -> Result<Tensor<R>>,
) -> Result<Option<f64>> {
    let orig = p.to_vec();
    let set = |sign: f64| -> f64 {
        let mut d = p.data_mut();
        match dir {
            Probe::Coord(i) => {
                d[i] = R::lit(orig[i].as_f64() + sign * eps);
                // actual step after rounding to R
                d[i].as_f64() - orig[i].as_f64()
            }
            Probe::Direction(v) => {
                for ((x, &o), &vi) in d.iter_mut().zip(&orig).zip(v) {
                    *x = R::lit(o.as_f64() + sign * eps * vi);
                }
                sign * eps
            }
        }
    };
    let up = set(1.0);
    let hi = eval_traced(f);
    let down = set(-1.0);
    let lo = eval_traced(f);
    *p.data_mut() = orig;
    let ((hi, t_hi), (lo, t_lo)) = (hi?, lo?);
    if t_hi != base || t_lo != base {
        return Ok(None);
    }
    Ok(Some((hi - lo) / (up - down)))
}

#[derive(Clone, Copy)]
enum Probe<'a> {
    Coord(usize),
    Direction(&'a [f64]),
}

fn estimate<R: Real>(
    p: &Tensor<R>,
    dir: Probe<'_>,
    opts: &GradCheckOptions,
    base: Option<u64>,
    f: &mut impl FnMut() -> Result<Tensor<R>>,
) -> Result<Option<f64>> {
    let Some(coarse) = quotient(p, dir, opts.eps, base, f)? else {
        return Ok(None);
    };
    if !opts.richardson {
        return Ok(Some(coarse));
    }
    Ok(quotient(p, dir, opts.eps / 2.0, base, f)?.map(|fine| (4.0 * fine - coarse) / 3.0))
}

/// Compares `backward()` gradients of `f` against centered differences of
/// the same objective, both in precision `F`.
pub fn grad_check<F: Real>(
    params: &[(String, Tensor<F>)],
    mut f: impl FnMut() -> Result<Tensor<F>>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    // The same closure serves for the analytic pass and the perturbations.
    let analytic = analytic_grads(params, &mut f)?;
    numeric_compare(params, &analytic, &mut f, opts)
}

/// Analytic gradients from `f` (precision `F`) checked against centered
/// differences of a reference objective `reference` over `ref_params`
/// (precision `R`). The reference parameters must mirror `params` by
/// position and hold the same values. Used to verify 32-bit backward passes
/// against a 64-bit difference quotient, which is not swamped by rounding.
pub fn grad_check_against<F: Real, R: Real>(
    params: &[(String, Tensor<F>)],
    mut f: impl FnMut() -> Result<Tensor<F>>,
    ref_params: &[(String, Tensor<R>)],
    mut reference: impl FnMut() -> Result<Tensor<R>>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    if params.len() != ref_params.len() {
        return Err(Error::Usage(
            "reference parameter list differs in length".into(),
        ));
    }
    for ((n, p), (rn, rp)) in params.iter().zip(ref_params) {
        if n != rn || p.shape() != rp.shape() {
            return Err(Error::shape("grad_check_against", p.shape(), rp.shape()));
        }
    }
    let analytic = analytic_grads(params, &mut f)?;
    numeric_compare(ref_params, &analytic, &mut reference, opts)
}

fn analytic_grads<F: Real>(
    params: &[(String, Tensor<F>)],
    f: &mut impl FnMut() -> Result<Tensor<F>>,
) -> Result<Vec<Vec<f64>>> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    eval_scalar(&mut || Ok(loss.clone()))?;
    loss.backward()?;
    let grads = params
        .iter()
        .map(|(_, p)| match p.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(grads)
}

/// Attempts per sample before a kinked probe is given up.
const KINK_RETRIES: usize = 8;

fn numeric_compare<R: Real>(
    params: &[(String, Tensor<R>)],
    analytic: &[Vec<f64>],
    f: &mut impl FnMut() -> Result<Tensor<R>>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (_, base) = eval_traced(f)?;
    let mut report = GradReport::default();
    for ((name, p), grad) in params.iter().zip(analytic) {
        let n = p.numel();
        let mut stats = ParamGradStats {
            name: name.clone(),
            max_rel_error: 0.0,
            samples: Vec::new(),
            kinks: 0,
        };
        let push = |stats: &mut ParamGradStats, index, analytic: f64, numeric: f64| {
            let rel = relative_error_with_floor(analytic, numeric, opts.floor);
            stats.max_rel_error = stats.max_rel_error.max(rel);
            stats.samples.push(GradSample {
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        };
        if opts.directions > 0 {
            for k in 0..opts.directions {
                let mut o = opts.clone();
                for attempt in 0..KINK_RETRIES {
                    // A fresh direction each time; the step shrinks every
                    // second attempt.
                    if attempt > 0 && attempt % 2 == 0 {
                        o.eps /= 4.0;
                    }
                    let dir: Vec<f64> = (0..n)
                        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                        .collect();
                    match estimate(p, Probe::Direction(&dir), &o, base, f)? {
                        Some(numeric) => {
                            let a = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
                            push(&mut stats, k, a, numeric);
                            break;
                        }
                        None => stats.kinks += 1,
                    }
                }
            }
        } else {
            let coords: Vec<usize> = if n <= opts.max_coords {
                (0..n).collect()
            } else {
                let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
                c.sort_unstable();
                c
            };
            for idx in coords {
                let mut o = opts.clone();
                for _ in 0..KINK_RETRIES {
                    match estimate(p, Probe::Coord(idx), &o, base, f)? {
                        Some(numeric) => {
                            push(&mut stats, idx, grad[idx], numeric);
                            break;
                        }
                        None => {
                            stats.kinks += 1;
                            o.eps /= 4.0;
                        }
                    }
                }
            }
        }
        report.params.push(stats);
    }
    Ok(report)
}

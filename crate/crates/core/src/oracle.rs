//! Plaintext references for the secure protocols.
//!
//! [`Mirror`] replays the secure fixed-point arithmetic on plain integers. By
//! default it rounds nearest truncations half up; given the truncation trace
//! reconstructed by a [`DebugTap`] it reuses the protocol's own rounding and
//! becomes bit-exact, which pins any divergence to the first differing call.

use std::collections::VecDeque;

use crate::invsqrt::PolyCoefficients;
use crate::mpc::{DebugTap, TruncEvent};
use crate::numeric::{FixedPoint, NumericError};
use crate::train::{step_factor_raw, ClipScale, DpsgdConfig, TrainError, BATCH_LABEL, NOISE_LABEL};

/// `g * min(1, C / ||g||)` in real arithmetic.
pub fn exact_clip(g: &[f64], clip: f64) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= clip || norm == 0.0 {
        g.to_vec()
    } else {
        let s = clip / norm;
        g.iter().map(|v| v * s).collect()
    }
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub struct Mirror {
    fp: FixedPoint,
    coeffs: PolyCoefficients,
    trace: Option<VecDeque<TruncEvent>>,
    divergences: Vec<String>,
    calls: u64,
}

impl Mirror {
    pub fn new(fp: FixedPoint) -> Result<Self, NumericError> {
        Ok(Mirror { fp, coeffs: PolyCoefficients::new(&fp)?, trace: None, divergences: Vec::new(), calls: 0 })
    }

    /// Replays `events` (in execution order) instead of rounding locally.
    pub fn with_trace(fp: FixedPoint, events: Vec<TruncEvent>) -> Result<Self, NumericError> {
        let mut m = Mirror::new(fp)?;
        m.trace = Some(events.into());
        Ok(m)
    }

    pub fn fp(&self) -> &FixedPoint {
        &self.fp
    }

    /// Contract violations and trace mismatches seen so far.
    pub fn divergences(&self) -> &[String] {
        &self.divergences
    }

    /// Trace events not consumed yet.
    pub fn remaining_trace(&self) -> usize {
        self.trace.as_ref().map_or(0, |t| t.len())
    }

    pub fn trunc(&mut self, x: &[i128], q: u32, floor: bool) -> Vec<i128> {
        let call = self.calls;
        self.calls += 1;
        let bound = 1i128 << (self.fp.params.k - 1);
        if let Some(bad) = x.iter().find(|v| v.abs() >= bound) {
            self.divergences.push(format!("trunc call {call}: input {bad} exceeds 2^{}", self.fp.params.k - 1));
        }
        let local: Vec<i128> = if floor {
            x.iter().map(|v| v >> q).collect()
        } else {
            let h = 1i128 << (q - 1);
            x.iter().map(|v| (v + h) >> q).collect()
        };
        let Some(trace) = self.trace.as_mut() else {
            return local;
        };
        match trace.pop_front() {
            None => {
                self.divergences.push(format!("trunc call {call}: trace exhausted"));
                local
            }
            Some(ev) if ev.q != q || ev.floor != floor || ev.input != x => {
                self.divergences.push(format!(
                    "trunc call {call}: protocol truncated {} values by {} (floor {}), mirror {} by {q} (floor {floor})",
                    ev.input.len(),
                    ev.q,
                    ev.floor,
                    x.len()
                ));
                local
            }
            Some(ev) => {
                if ev.output.iter().zip(&local).any(|(a, b)| (a - b).abs() > 1) {
                    self.divergences.push(format!("trunc call {call}: protocol rounding off by more than one unit"));
                }
                ev.output
            }
        }
    }

    /// Fixed-point replica of the one-sided inverse square root.
    pub fn invsqrt(&mut self, x: &[i128]) -> Vec<i128> {
        let (k, f) = (self.fp.params.k, self.fp.params.f);
        let upper = 1i128 << (3 * f);
        let mut b = Vec::with_capacity(x.len());
        let mut sum_c = Vec::with_capacity(x.len());
        for &v in x {
            if v <= 0 || v >= upper {
                self.divergences.push(format!("inverse square root input {v} outside (0, 2^{})", 3 * f));
            }
            if v <= 0 {
                b.push(1i128 << (k - 1));
                sum_c.push(0i128);
            } else {
                let h = 127 - (v as u128).leading_zeros() as i128;
                let h = h.min(k as i128 - 2);
                b.push(1i128 << (k as i128 - 2 - h));
                sum_c.push(h + 1);
            }
        }
        let bx: Vec<i128> = x.iter().zip(&b).map(|(v, b)| v.max(&0) * b).collect();
        let xp = self.trunc(&bx, k - f - 1, false);
        let fi = f as i128;
        let lsb: Vec<i128> = sum_c.iter().map(|s| s & 1).collect();
        let pow_even: Vec<i128> = sum_c
            .iter()
            .zip(&lsb)
            .map(|(s, l)| {
                let exp = s - fi;
                let e = fi - (exp - l) / 2;
                1i128 << e.clamp(0, 63)
            })
            .collect();
        let scaled: Vec<i128> = pow_even.iter().map(|p| p * self.coeffs.inv_sqrt2).collect();
        let pow_odd = self.trunc(&scaled, f, true);
        let pow: Vec<i128> = (0..x.len()).map(|i| if lsb[i] == 1 { pow_odd[i] } else { pow_even[i] }).collect();
        let t1: Vec<i128> = xp.iter().map(|v| v * self.coeffs.a2).collect();
        let t1 = self.trunc(&t1, f, false);
        let t3: Vec<i128> = t1.iter().zip(&xp).map(|(a, v)| (a - self.coeffs.a1) * v).collect();
        let t3 = self.trunc(&t3, f, false);
        let prod: Vec<i128> = t3.iter().zip(&pow).map(|(t, p)| (t + self.coeffs.a0_minus_margin) * p).collect();
        self.trunc(&prod, f, true)
    }

    pub fn scores(&mut self, x: &[i128], theta: &[i128], dim: usize, classes: usize) -> Vec<i128> {
        let n = x.len() / dim;
        let mut sums = Vec::with_capacity(n * classes);
        for s in 0..n {
            for j in 0..classes {
                sums.push((0..dim).map(|i| x[s * dim + i] * theta[i * classes + j]).sum::<i128>());
            }
        }
        let u = self.trunc(&sums, self.fp.params.f, false);
        u.iter().enumerate().map(|(i, v)| v + theta[dim * classes + i % classes]).collect()
    }

    pub fn forward(&mut self, x: &[i128], theta: &[i128], dim: usize, classes: usize) -> Vec<i128> {
        let one = 1i128 << self.fp.params.f;
        let half = one / 2;
        self.scores(x, theta, dim, classes)
            .into_iter()
            .map(|u| {
                if u <= -half {
                    0
                } else if u <= half {
                    u + half
                } else {
                    one
                }
            })
            .collect()
    }

    /// `y` holds one-hot labels at integer scale.
    pub fn gradients(&mut self, x: &[i128], y: &[i128], y_hat: &[i128], dim: usize, classes: usize) -> Vec<i128> {
        let f = self.fp.params.f;
        let n = y.len() / classes;
        let r: Vec<i128> = y_hat.iter().zip(y).map(|(h, y)| h - (y << f)).collect();
        let mut prod = Vec::with_capacity(n * dim * classes);
        for s in 0..n {
            for i in 0..dim {
                for j in 0..classes {
                    prod.push(x[s * dim + i] * r[s * classes + j]);
                }
            }
        }
        let gw = self.trunc(&prod, f, false);
        let mut g = Vec::with_capacity(n * (dim + 1) * classes);
        for s in 0..n {
            g.extend_from_slice(&gw[s * dim * classes..(s + 1) * dim * classes]);
            g.extend_from_slice(&r[s * classes..(s + 1) * classes]);
        }
        g
    }

    pub fn clip(&mut self, g: &[i128], p: usize, clip: f64) -> Result<Vec<i128>, TrainError> {
        let f = self.fp.params.f;
        let sq: Vec<i128> = g.chunks(p).map(|row| row.iter().map(|v| v * v).sum()).collect();
        let norms: Vec<i128> = self.trunc(&sq, f, false).into_iter().map(|v| v + 1).collect();
        let inv = self.invsqrt(&norms);
        let scale = match ClipScale::new(&self.fp, clip)? {
            ClipScale::Integer(c) => inv.iter().map(|v| v * c).collect(),
            ClipScale::Fixed(c) => {
                let t: Vec<i128> = inv.iter().map(|v| v * c).collect();
                self.trunc(&t, f, true)
            }
        };
        let one = 1i128 << f;
        let prod: Vec<i128> = g.iter().enumerate().map(|(i, v)| v * scale[i / p]).collect();
        let scaled = self.trunc(&prod, f, false);
        Ok(g.iter()
            .enumerate()
            .map(|(i, &v)| if scale[i / p] <= one { scaled[i] } else { v })
            .collect())
    }

    /// One DPSGD step on lifted batch rows `[x | one-hot y]`; `noise` is the
    /// summed noise vector when the step is private.
    #[allow(clippy::too_many_arguments)]
    pub fn dpsgd_step(
        &mut self,
        theta: &[i128],
        rows: &[i128],
        dim: usize,
        classes: usize,
        cfg: &DpsgdConfig,
        t: u64,
        noise: Option<&[i128]>,
    ) -> Result<Vec<i128>, TrainError> {
        let w = dim + classes;
        let b = rows.len() / w;
        let p = (dim + 1) * classes;
        let mut x = Vec::with_capacity(b * dim);
        let mut y = Vec::with_capacity(b * classes);
        for r in rows.chunks(w) {
            x.extend_from_slice(&r[..dim]);
            y.extend_from_slice(&r[dim..]);
        }
        let y_hat = self.forward(&x, theta, dim, classes);
        let mut g = self.gradients(&x, &y, &y_hat, dim, classes);
        if cfg.is_private() {
            g = self.clip(&g, p, cfg.clip)?;
        }
        let mut total: Vec<i128> = (0..p).map(|k| (0..b).map(|s| g[s * p + k]).sum()).collect();
        if let Some(nz) = noise {
            total.iter_mut().zip(nz).for_each(|(a, n)| *a += n);
        }
        let factor = step_factor_raw(&self.fp, cfg.lr.rate(t, cfg.iterations), b)?;
        let upd: Vec<i128> = total.iter().map(|v| v * factor).collect();
        let upd = self.trunc(&upd, self.fp.params.f, false);
        Ok(theta.iter().zip(&upd).map(|(a, u)| a - u).collect())
    }
}

/// Standalone replica of the inverse square root with local rounding.
pub fn mirror_invsqrt(fp: &FixedPoint, x: &[i128]) -> Result<Vec<i128>, NumericError> {
    Ok(Mirror::new(*fp)?.invsqrt(x))
}

/// Result of replaying a tapped secure training run.
pub struct Replay {
    /// Model after every step (lifted raw values).
    pub models: Vec<Vec<i128>>,
    pub divergences: Vec<String>,
}

/// Replays secure DPSGD from `init` on the minibatches and noise recorded by
/// `tap`. With `exact`, the tap's truncation trace (which must begin at the
/// first training step) is reused and the replay is bit-exact.
pub fn replay_dpsgd(
    fp: &FixedPoint,
    tap: &DebugTap,
    init: &[i128],
    cfg: &DpsgdConfig,
    dim: usize,
    classes: usize,
    exact: bool,
) -> Result<Replay, TrainError> {
    let mut mirror = if exact { Mirror::with_trace(*fp, tap.trunc_trace())? } else { Mirror::new(*fp)? };
    let lift = |v: &[crate::numeric::FieldElement]| v.iter().map(|e| fp.modulus.lift(*e)).collect::<Vec<i128>>();
    let batches = tap.records(BATCH_LABEL);
    let noises = tap.records(NOISE_LABEL);
    if batches.len() as u64 != cfg.iterations || (cfg.is_private() && noises.len() != batches.len()) {
        return Err(TrainError::Config(format!(
            "tap holds {} batches and {} noise vectors for {} steps",
            batches.len(),
            noises.len(),
            cfg.iterations
        )));
    }
    let mut theta = init.to_vec();
    let mut models = Vec::with_capacity(batches.len());
    for (t, batch) in batches.iter().enumerate() {
        let rows = lift(&batch.values);
        let noise = if cfg.is_private() { Some(lift(&noises[t].values)) } else { None };
        theta = mirror.dpsgd_step(&theta, &rows, dim, classes, cfg, t as u64, noise.as_deref())?;
        models.push(theta.clone());
    }
    Ok(Replay { models, divergences: mirror.divergences().to_vec() })
}

/// Checks the recorded inputs of a tapped run against the protocol contracts:
/// inverse square root inputs in `(0, 2^(2f))` and truncation inputs below
/// `2^(k-1)` in magnitude.
pub fn check_contracts(tap: &DebugTap, fp: &FixedPoint) -> Vec<String> {
    let mut out = tap.problems();
    let f = fp.params.f;
    for r in tap.records("invsqrt.input") {
        for v in &r.values {
            let x = fp.modulus.lift(*v);
            if x <= 0 || x >= 1i128 << (3 * f) {
                out.push(format!("inverse square root input {} (raw {x}) outside (0, 2^{})", fp.raw_to_f64(x), 2 * f));
            }
        }
    }
    let bound = 1i128 << (fp.params.k - 1);
    for ev in tap.trunc_trace() {
        if let Some(x) = ev.input.iter().find(|x| x.abs() >= bound) {
            out.push(format!("truncation #{} input {x} exceeds 2^{}", ev.seq, fp.params.k - 1));
        }
    }
    out
}

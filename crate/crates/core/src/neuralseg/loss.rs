use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor4};
use crate::{Error, Result, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TverskyConfig {
    /// Weight on false negatives.
    pub alpha: f64,
    /// Weight on false positives.
    pub beta: f64,
    pub gamma: f64,
    /// Added to the numerator and denominator of every Tversky index. At
    /// 1e-6 an absent class's term drops from 1 to 0 once its probabilities
    /// underflow, and the 1/smooth gradient near that cliff saturates the
    /// whole softmax; 1 keeps the gradient bounded.
    pub smooth: f64,
}

impl Default for TverskyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            gamma: 1.2,
            smooth: 1.0,
        }
    }
}

impl TverskyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && (self.alpha + self.beta - 1.0).abs() < 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "tversky alpha + beta must be 1 (got {} + {})",
                self.alpha, self.beta
            )));
        }
        if !(self.gamma > 0.0 && self.smooth > 0.0) {
            return Err(Error::InvalidConfig("tversky gamma and smooth must be > 0".into()));
        }
        Ok(())
    }
}

/// Probability-weighted confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

impl SoftCounts {
    pub fn tversky_index(&self, cfg: &TverskyConfig) -> f64 {
        (self.tp + cfg.smooth) / (self.tp + cfg.alpha * self.fn_ + cfg.beta * self.fp + cfg.smooth)
    }
}

/// `(1 − TI)^γ` for one class.
pub fn tversky_term(c: &SoftCounts, cfg: &TverskyConfig) -> f64 {
    (1.0 - c.tversky_index(cfg)).max(0.0).powf(cfg.gamma)
}

/// Soft counts per class over the whole batch. `probs` and `target` are
/// `n×7×H×W`.
pub fn soft_counts<T: Scalar>(probs: &Tensor4<T>, target: &Tensor4<T>) -> Result<[SoftCounts; N_CLASSES]> {
    check_shapes(probs, target)?;
    let hw = probs.h * probs.w;
    let mut out = [SoftCounts::default(); N_CLASSES];
    for i in 0..probs.n {
        let (p, g) = (probs.image(i), target.image(i));
        for (c, acc) in out.iter_mut().enumerate() {
            let (mut tp, mut sg, mut sp) = (0.0, 0.0, 0.0);
            for (&pv, &gv) in p[c * hw..(c + 1) * hw].iter().zip(&g[c * hw..(c + 1) * hw]) {
                let (pv, gv) = (pv.as_f64(), gv.as_f64());
                tp += pv * gv;
                sg += gv;
                sp += pv;
            }
            acc.tp += tp;
            acc.fn_ += sg - tp;
            acc.fp += sp - tp;
        }
    }
    Ok(out)
}

fn check_shapes<T: Scalar>(probs: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if probs.c != N_CLASSES {
        return Err(Error::shape(format!("{N_CLASSES} channels"), probs.c));
    }
    if probs.dims() != target.dims() {
        return Err(Error::shape(format!("{:?}", probs.dims()), format!("{:?}", target.dims())));
    }
    Ok(())
}

/// Mean over the 7 classes of `(1 − TI_c)^γ`, and its gradient with
/// respect to `probs`.
pub fn focal_tversky_loss<T: Scalar>(
    probs: &Tensor4<T>,
    target: &Tensor4<T>,
    cfg: &TverskyConfig,
) -> Result<(f64, Tensor4<T>)> {
    let counts = soft_counts(probs, target)?;
    let k = N_CLASSES as f64;
    let (a, b, s) = (cfg.alpha, cfg.beta, cfg.smooth);
    let mut loss = 0.0;
    // ∂loss/∂p = u_c·g + v_c per class: TI = num/den with
    // ∂num/∂p = g, ∂den/∂p = g − α·g + β·(1 − g).
    let mut coef = [(0.0f64, 0.0f64); N_CLASSES];
    for (c, sc) in counts.iter().enumerate() {
        let num = sc.tp + s;
        let den = sc.tp + a * sc.fn_ + b * sc.fp + s;
        let ti = num / den;
        let one_minus = (1.0 - ti).max(0.0);
        loss += one_minus.powf(cfg.gamma) / k;
        let dl_dti = if one_minus > 0.0 {
            -cfg.gamma * one_minus.powf(cfg.gamma - 1.0) / k
        } else {
            0.0
        };
        let d2 = den * den;
        let u = dl_dti * (den - num * (1.0 - a - b)) / d2;
        let v = dl_dti * (-num * b) / d2;
        coef[c] = (u, v);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("focal tversky loss = {loss}")));
    }
    let hw = probs.h * probs.w;
    let mut grad = Tensor4::zeros(probs.n, probs.c, probs.h, probs.w);
    for i in 0..probs.n {
        let g = target.image(i);
        let out = grad.image_mut(i);
        for (c, &(u, v)) in coef.iter().enumerate() {
            let (u, v) = (T::from_f64(u), T::from_f64(v));
            for (o, &gv) in out[c * hw..(c + 1) * hw].iter_mut().zip(&g[c * hw..(c + 1) * hw]) {
                *o = u * gv + v;
            }
        }
    }
    Ok((loss, grad))
}

//! Box geometry, the smooth-L1 + GIoU regression objective and
//! Precision@threshold.
//!
//! Loss formulas are written once over the [`Scalar`] trait and evaluated
//! either on plain `f64` or on a forward-mode dual number carrying the four
//! partial derivatives with respect to the predicted box.

use std::ops::{Add, Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalised centre-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if !b.is_valid() {
            return Err(Error::Input(format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.x)
            && (0.0..=1.0).contains(&self.y)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn corners(&self) -> [f64; 4] {
        to_corners([self.x, self.y, self.w, self.h])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn lit(v: f64) -> Self;
    fn val(&self) -> f64;

    fn min(self, o: Self) -> Self {
        if self.val() <= o.val() {
            self
        } else {
            o
        }
    }

    fn max(self, o: Self) -> Self {
        if self.val() >= o.val() {
            self
        } else {
            o
        }
    }

    fn abs(self) -> Self {
        if self.val() < 0.0 {
            Self::lit(0.0) - self
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
}

/// Value plus gradient with respect to four inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual4 {
    pub v: f64,
    pub d: [f64; 4],
}

impl Dual4 {
    fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 4];
        d[i] = 1.0;
        Self { v, d }
    }
}

impl Add for Dual4 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl Sub for Dual4 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl Mul for Dual4 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl Div for Dual4 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        Self {
            v: self.v * inv,
            d: std::array::from_fn(|i| (self.d[i] * o.v - self.v * o.d[i]) * inv * inv),
        }
    }
}

impl Scalar for Dual4 {
    fn lit(v: f64) -> Self {
        Self { v, d: [0.0; 4] }
    }
    fn val(&self) -> f64 {
        self.v
    }
}

fn to_corners<T: Scalar>(b: [T; 4]) -> [T; 4] {
    let half = T::lit(0.5);
    [
        b[0] - b[2] * half,
        b[1] - b[3] * half,
        b[0] + b[2] * half,
        b[1] + b[3] * half,
    ]
}

fn area<T: Scalar>(c: &[T; 4]) -> T {
    (c[2] - c[0]) * (c[3] - c[1])
}

/// Intersection, union and enclosing-hull areas of two corner boxes.
fn overlap_terms<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> (T, T, T) {
    let zero = T::lit(0.0);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(zero);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(zero);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    let hull = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
    (inter, union, hull)
}

fn giou_generic<T: Scalar>(a: &[T; 4], b: &[T; 4]) -> T {
    let (inter, union, hull) = overlap_terms(a, b);
    inter / union - (hull - union) / hull
}

fn smooth_l1_generic<T: Scalar>(p: &[T; 4], t: &[T; 4], beta: f64) -> T {
    let b = T::lit(beta);
    let mut total = T::lit(0.0);
    for i in 0..4 {
        let d = (p[i] - t[i]).abs();
        total = total
            + if d.val() < beta {
                T::lit(0.5) * d * d / b
            } else {
                d - T::lit(0.5 * beta)
            };
    }
    total
}

fn rec_loss_generic<T: Scalar>(p: [T; 4], gt: &BBox, lambda: f64, beta: f64) -> T {
    let t = gt.as_array().map(T::lit);
    let sl1 = smooth_l1_generic(&p, &t, beta);
    let g = giou_generic(&to_corners(p), &to_corners(t));
    sl1 + T::lit(lambda) * (T::lit(1.0) - g)
}

/// Intersection over union of two corner-form boxes `(x0, y0, x1, y1)`.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let (inter, union, _) = overlap_terms(&a, &b);
    inter / union
}

/// Generalised IoU of two corner-form boxes.
pub fn giou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    giou_generic(&a, &b)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_xyxy(a.corners(), b.corners())
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    giou_xyxy(a.corners(), b.corners())
}

pub fn giou_loss(a: &BBox, b: &BBox) -> f64 {
    1.0 - giou(a, b)
}

/// Sum over the four coordinates of the Huber-style smooth-L1 term.
pub fn smooth_l1(b: &BBox, gt: &BBox, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Contract(format!("smooth-L1 beta must be > 0, got {beta}")));
    }
    Ok(smooth_l1_generic(&b.as_array(), &gt.as_array(), beta))
}

/// `smooth_l1 + lambda · (1 − giou)`.
pub fn rec_loss(b: &BBox, gt: &BBox, lambda: f64, beta: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(beta > 0.0) {
        return Err(Error::Contract(format!("smooth-L1 beta must be > 0, got {beta}")));
    }
    Ok(rec_loss_raw(b.as_array(), gt, lambda, beta))
}

/// Objective on an unvalidated `(x, y, w, h)` prediction.
pub fn rec_loss_raw(pred: [f64; 4], gt: &BBox, lambda: f64, beta: f64) -> f64 {
    rec_loss_generic(pred, gt, lambda, beta)
}

/// Gradient of [`rec_loss_raw`] with respect to the four predicted values.
pub fn rec_loss_grad(pred: [f64; 4], gt: &BBox, lambda: f64, beta: f64) -> [f64; 4] {
    let p: [Dual4; 4] = std::array::from_fn(|i| Dual4::var(pred[i], i));
    rec_loss_generic(p, gt, lambda, beta).d
}

/// Fraction of pairs whose IoU strictly exceeds `threshold`.
pub fn precision_at(preds: &[BBox], gts: &[BBox], threshold: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!(
            "precision needs equal lengths, got {} predictions and {} targets",
            preds.len(),
            gts.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| iou(p, g) > threshold)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

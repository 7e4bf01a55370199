//! Verifiable per-action rewards.
//!
//! `reward(pred, ref)` is a type-match indicator plus a distance term in
//! `[0, 1]` whose form depends on the reference action's family:
//! normalized L1 for points, IoU for boxes, character BLEU for text, keys and
//! scroll directions, and a fixed `1` for `wait`/`finished`.

use crate::action::{Action, BBox, Payload, Point, RewardFamily};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("screen geometry must be at least 1x1, got {0}x{1}")]
    ZeroGeometry(u32, u32),
    #[error("both boxes have zero area")]
    DegenerateBoxes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenGeometry {
    pub width: u32,
    pub height: u32,
}

impl ScreenGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self, RewardError> {
        if width == 0 || height == 0 {
            return Err(RewardError::ZeroGeometry(width, height));
        }
        Ok(ScreenGeometry { width, height })
    }

    /// Parses `WxH`.
    pub fn parse(s: &str) -> Option<Self> {
        let (w, h) = s.trim().split_once(['x', 'X'])?;
        ScreenGeometry::new(w.trim().parse().ok()?, h.trim().parse().ok()?).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub type_match: u8,
    pub r_dist: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn new(type_match: bool, r_dist: f64) -> Self {
        let type_match = u8::from(type_match);
        RewardBreakdown {
            type_match,
            r_dist,
            total: f64::from(type_match) + r_dist,
        }
    }
}

/// `1 - (|dx|/W + |dy|/H) / 2`, with both points clamped to the screen.
pub fn l1_point_reward(pred: Point, reference: Point, geom: ScreenGeometry) -> Result<f64, RewardError> {
    if geom.width == 0 || geom.height == 0 {
        return Err(RewardError::ZeroGeometry(geom.width, geom.height));
    }
    let (w, h) = (f64::from(geom.width), f64::from(geom.height));
    let clamp = |p: Point| (f64::from(p.x).min(w), f64::from(p.y).min(h));
    let (px, py) = clamp(pred);
    let (rx, ry) = clamp(reference);
    let dist = ((px - rx).abs() / w + (py - ry).abs() / h) / 2.0;
    Ok((1.0 - dist).clamp(0.0, 1.0))
}

pub fn iou_reward(pred: BBox, reference: BBox) -> Result<f64, RewardError> {
    if pred.area() == 0.0 && reference.area() == 0.0 {
        return Err(RewardError::DegenerateBoxes);
    }
    let ix = f64::from(pred.x2.min(reference.x2)) - f64::from(pred.x1.max(reference.x1));
    let iy = f64::from(pred.y2.min(reference.y2)) - f64::from(pred.y1.max(reference.y1));
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    let union = pred.area() + reference.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Character-level BLEU with add-one smoothing on every n-gram precision.
///
/// Uses n = 1..N with `N = min(4, |pred|, |ref|)` over Unicode scalar
/// values and the standard brevity penalty `min(1, exp(1 - |ref|/|pred|))`.
pub fn char_bleu(pred: &str, reference: &str) -> f64 {
    let p: Vec<char> = pred.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let max_n = 4.min(p.len()).min(r.len());
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let mut ref_counts: HashMap<&[char], usize> = HashMap::new();
        for g in r.windows(n) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let mut pred_counts: HashMap<&[char], usize> = HashMap::new();
        for g in p.windows(n) {
            *pred_counts.entry(g).or_default() += 1;
        }
        let matched: usize = pred_counts
            .iter()
            .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let candidates = p.len() - n + 1;
        log_sum += ((matched as f64 + 1.0) / (candidates as f64 + 1.0)).ln();
    }
    let bp = (1.0 - r.len() as f64 / p.len() as f64).exp().min(1.0);
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Type indicator plus family-specific distance reward. A kind mismatch
/// scores zero without computing any distance.
pub fn reward(pred: &Action, reference: &Action, geom: ScreenGeometry) -> Result<RewardBreakdown, RewardError> {
    if pred.kind() != reference.kind() {
        return Ok(RewardBreakdown::new(false, 0.0));
    }
    let r_dist = match (reference.kind().family(), pred.payload(), reference.payload()) {
        (RewardFamily::Point, Payload::Point(p), Payload::Point(r)) => l1_point_reward(*p, *r, geom)?,
        (RewardFamily::Box, Payload::Box(p), Payload::Box(r)) => iou_reward(*p, *r)?,
        (RewardFamily::Fixed, _, _) => 1.0,
        (RewardFamily::Text | RewardFamily::Keys | RewardFamily::Direction, _, _) => char_bleu(
            &pred.payload_text().unwrap_or_default(),
            &reference.payload_text().unwrap_or_default(),
        ),
        // Same kind always means same payload variant.
        _ => 0.0,
    };
    Ok(RewardBreakdown::new(true, r_dist))
}

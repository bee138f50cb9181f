//! OD masking, downsampling, pluggable OOI detection (ground-truth oracle
//! and naive few-shot color-signature detector), and average precision.

use std::collections::BTreeMap;

use crate::error::{PpgtaError, Result};
use crate::world::render::render_with_owners;
use crate::world::{AgentPose, Frame, World};

/// Axis-aligned pixel rectangle, half-open on the upper edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub ooi_type: u8,
    pub score: f32,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn clip(mut self, w: usize, h: usize) -> Self {
        self.x1 = self.x1.min(w);
        self.y1 = self.y1.min(h);
        self.x0 = self.x0.min(self.x1);
        self.y0 = self.y0.min(self.y1);
        self
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f32 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = ((ix1 - ix0) * (iy1 - iy0)) as f32;
    let union = (a.area() + b.area()) as f32 - inter;
    inter / union
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32).round() as u8
}

/// Grayscale everything outside the box; pixels inside stay byte-identical.
pub fn od_mask(frame: &Frame, bbox: &BoundingBox) -> Frame {
    let b = (*bbox).clip(frame.width, frame.height);
    let mut out = frame.clone();
    for y in 0..frame.height {
        for x in 0..frame.width {
            if x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1 {
                continue;
            }
            let (r, g, bl) = frame.get(x, y);
            let l = luma(r, g, bl);
            out.set(x, y, (l, l, l));
        }
    }
    out
}

/// Box-filter average pooling; non-divisible extents average over unequal
/// bins. Round-half-up.
pub fn downsample(frame: &Frame, w: usize, h: usize) -> Frame {
    assert!(w <= frame.width && h <= frame.height);
    let mut out = Frame::new(w, h);
    for oy in 0..h {
        let y0 = oy * frame.height / h;
        let y1 = ((oy + 1) * frame.height).div_ceil(h).min(frame.height).max(y0 + 1);
        for ox in 0..w {
            let x0 = ox * frame.width / w;
            let x1 = ((ox + 1) * frame.width).div_ceil(w).min(frame.width).max(x0 + 1);
            let mut acc = [0u64; 3];
            let n = ((y1 - y0) * (x1 - x0)) as u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (r, g, b) = frame.get(x, y);
                    acc[0] += r as u64;
                    acc[1] += g as u64;
                    acc[2] += b as u64;
                }
            }
            out.set(
                ox,
                oy,
                (
                    ((acc[0] as f64 / n as f64) + 0.5).floor() as u8,
                    ((acc[1] as f64 / n as f64) + 0.5).floor() as u8,
                    ((acc[2] as f64 / n as f64) + 0.5).floor() as u8,
                ),
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

/// Ground-truth detector: projects visible OOIs' true screen extents from
/// the renderer's owner buffer. Invariant to texture bugs by construction.
pub struct OracleDetector<'a> {
    pub world: &'a World,
}

impl<'a> OracleDetector<'a> {
    pub fn detect(&self, pose: &AgentPose) -> Vec<BoundingBox> {
        self.detect_with_ids(pose).into_iter().map(|(_, b)| b).collect()
    }

    /// Detections paired with the owning OOI id.
    pub fn detect_with_ids(&self, pose: &AgentPose) -> Vec<(u32, BoundingBox)> {
        let (frame, owners) = render_with_owners(self.world, pose);
        let mut extents: BTreeMap<u32, (usize, usize, usize, usize)> = BTreeMap::new();
        for y in 0..frame.height {
            for x in 0..frame.width {
                if let Some(id) = owners[y * frame.width + x] {
                    let e = extents.entry(id).or_insert((x, y, x + 1, y + 1));
                    e.0 = e.0.min(x);
                    e.1 = e.1.min(y);
                    e.2 = e.2.max(x + 1);
                    e.3 = e.3.max(y + 1);
                }
            }
        }
        extents
            .into_iter()
            .map(|(id, (x0, y0, x1, y1))| {
                (
                    id,
                    BoundingBox {
                        x0,
                        y0,
                        x1,
                        y1,
                        ooi_type: self.world.oois[id as usize].ooi_type,
                        score: 1.0,
                    },
                )
            })
            .collect()
    }
}

const CHROMA_BINS: usize = 8;
const N_TYPES: usize = 4;

fn chroma_bin(r: u8, g: u8, b: u8) -> usize {
    let sum = r as f32 + g as f32 + b as f32 + 1e-3;
    let rn = ((r as f32 / sum) * CHROMA_BINS as f32) as usize;
    let gn = ((g as f32 / sum) * CHROMA_BINS as f32) as usize;
    rn.min(CHROMA_BINS - 1) * CHROMA_BINS + gn.min(CHROMA_BINS - 1)
}

/// Naive few-shot detector: per-type chromaticity-histogram signatures
/// learned from a handful of labeled crops, plus a background histogram.
/// Detection finds connected components of foreground-posterior pixels and
/// scores each by histogram similarity to its best-matching signature.
#[derive(Debug, Clone)]
pub struct FewShotDetector {
    type_hist: Vec<Vec<f64>>,
    bg_hist: Vec<f64>,
    trained: bool,
}

impl Default for FewShotDetector {
    fn default() -> Self {
        Self::new()
    }
}

impl FewShotDetector {
    pub fn new() -> Self {
        FewShotDetector {
            type_hist: vec![vec![0.0; CHROMA_BINS * CHROMA_BINS]; N_TYPES],
            bg_hist: vec![0.0; CHROMA_BINS * CHROMA_BINS],
            trained: false,
        }
    }

    /// Learns signatures from labeled frames; pixels inside a box feed that
    /// type's histogram, everything else feeds the background histogram.
    pub fn train(&mut self, samples: &[(Frame, Vec<BoundingBox>)]) {
        for (frame, boxes) in samples {
            for y in 0..frame.height {
                for x in 0..frame.width {
                    let (r, g, b) = frame.get(x, y);
                    let bin = chroma_bin(r, g, b);
                    let owner = boxes
                        .iter()
                        .find(|bb| x >= bb.x0 && x < bb.x1 && y >= bb.y0 && y < bb.y1);
                    match owner {
                        Some(bb) => self.type_hist[bb.ooi_type as usize][bin] += 1.0,
                        None => self.bg_hist[bin] += 1.0,
                    }
                }
            }
        }
        for h in self.type_hist.iter_mut() {
            normalize(h);
        }
        normalize(&mut self.bg_hist);
        self.trained = true;
    }

    pub fn detect(&self, frame: &Frame) -> Result<Vec<BoundingBox>> {
        if !self.trained {
            return Err(PpgtaError::Contract("few-shot detector is untrained".into()));
        }
        let (w, h) = (frame.width, frame.height);
        // foreground posterior per pixel
        let mut fg = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = frame.get(x, y);
                let bin = chroma_bin(r, g, b);
                let obj: f64 = self.type_hist.iter().map(|t| t[bin]).fold(0.0, f64::max);
                let bg = self.bg_hist[bin];
                if obj / (obj + bg + 1e-9) > 0.5 {
                    fg[y * w + x] = true;
                }
            }
        }
        // 4-connected components
        let mut comp = vec![usize::MAX; w * h];
        let mut boxes = Vec::new();
        let mut next = 0usize;
        for start in 0..w * h {
            if !fg[start] || comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            let mut pixels = Vec::new();
            comp[start] = next;
            while let Some(p) = stack.pop() {
                pixels.push(p);
                let (px, py) = (p % w, p / w);
                let mut push = |nx: usize, ny: usize| {
                    let q = ny * w + nx;
                    if fg[q] && comp[q] == usize::MAX {
                        comp[q] = next;
                        stack.push(q);
                    }
                };
                if px > 0 {
                    push(px - 1, py);
                }
                if px + 1 < w {
                    push(px + 1, py);
                }
                if py > 0 {
                    push(px, py - 1);
                }
                if py + 1 < h {
                    push(px, py + 1);
                }
            }
            next += 1;
            if pixels.len() < 3 {
                continue;
            }
            let mut hist = vec![0.0f64; CHROMA_BINS * CHROMA_BINS];
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
            for &p in &pixels {
                let (px, py) = (p % w, p / w);
                x0 = x0.min(px);
                y0 = y0.min(py);
                x1 = x1.max(px + 1);
                y1 = y1.max(py + 1);
                let (r, g, b) = frame.get(px, py);
                hist[chroma_bin(r, g, b)] += 1.0;
            }
            normalize(&mut hist);
            let (best_type, score) = self
                .type_hist
                .iter()
                .enumerate()
                .map(|(t, sig)| (t, cosine(&hist, sig)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            boxes.push(BoundingBox {
                x0,
                y0,
                x1,
                y1,
                ooi_type: best_type as u8,
                score: score as f32,
            });
        }
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(boxes)
    }

    /// Text persistence: one histogram per line, background last.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if !self.trained {
            return Err(PpgtaError::Contract("refusing to save untrained detector".into()));
        }
        let tmp = path.with_extension("tmp");
        let mut body = String::new();
        for h in self.type_hist.iter().chain(std::iter::once(&self.bg_hist)) {
            let row: Vec<String> = h.iter().map(|v| format!("{v:e}")).collect();
            body.push_str(&row.join(" "));
            body.push('\n');
        }
        std::fs::write(&tmp, body)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let corrupt = |reason: &str| PpgtaError::CorruptFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let text = std::fs::read_to_string(path)
            .map_err(|_| PpgtaError::MissingArtifact(path.display().to_string()))?;
        let mut rows = Vec::new();
        for line in text.lines() {
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|v| v.parse::<f64>()).collect();
            let row = row.map_err(|_| corrupt("bad histogram value"))?;
            if row.len() != CHROMA_BINS * CHROMA_BINS {
                return Err(corrupt("bad histogram width"));
            }
            rows.push(row);
        }
        if rows.len() != N_TYPES + 1 {
            return Err(corrupt("wrong histogram count"));
        }
        let bg_hist = rows.pop().unwrap();
        Ok(FewShotDetector { type_hist: rows, bg_hist, trained: true })
    }
}

fn normalize(h: &mut [f64]) {
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|v| *v /= s);
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

/// Standard AP per type: rank by score, greedy IoU matching within each
/// frame, interpolated precision-recall area. Types with no ground truth are
/// reported as absent.
pub fn average_precision(
    detections: &[(u64, BoundingBox)],
    ground_truth: &[(u64, BoundingBox)],
    iou_threshold: f32,
) -> BTreeMap<u8, f64> {
    let mut out = BTreeMap::new();
    for t in 0..N_TYPES as u8 {
        let gt: Vec<&(u64, BoundingBox)> = ground_truth
            .iter()
            .filter(|(_, b)| b.ooi_type == t)
            .collect();
        if gt.is_empty() {
            continue;
        }
        let mut dets: Vec<&(u64, BoundingBox)> = detections
            .iter()
            .filter(|(_, b)| b.ooi_type == t)
            .collect();
        dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
        let mut matched = vec![false; gt.len()];
        let mut tp = Vec::with_capacity(dets.len());
        for (frame_id, det) in dets {
            let mut best: Option<(usize, f32)> = None;
            for (gi, (gfid, gbox)) in gt.iter().enumerate() {
                if *gfid != *frame_id || matched[gi] {
                    continue;
                }
                let i = iou(det, gbox);
                if i >= iou_threshold && best.map_or(true, |(_, bi)| i > bi) {
                    best = Some((gi, i));
                }
            }
            match best {
                Some((gi, _)) => {
                    matched[gi] = true;
                    tp.push(true);
                }
                None => tp.push(false),
            }
        }
        out.insert(t, pr_area(&tp, gt.len()));
    }
    out
}

/// Area under the interpolated precision-recall curve given the ranked
/// true/false-positive flags.
fn pr_area(tp_flags: &[bool], n_gt: usize) -> f64 {
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // precision envelope
    let mut env = precisions.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..env.len() {
        if recalls[i] > prev_recall {
            area += (recalls[i] - prev_recall) * env[i];
            prev_recall = recalls[i];
        }
    }
    area
}

/// Detection label line: `frame_id type x0 y0 x1 y1 score`.
pub fn write_labels(
    out: &mut impl std::io::Write,
    rows: &[(u64, BoundingBox)],
) -> std::io::Result<()> {
    let mut sorted: Vec<&(u64, BoundingBox)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.score.total_cmp(&a.1.score)));
    for (fid, b) in sorted {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            fid, b.ooi_type, b.x0, b.y0, b.x1, b.y1, b.score
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: usize, y0: usize, x1: usize, y1: usize, ty: u8, score: f32) -> BoundingBox {
        BoundingBox { x0, y0, x1, y1, ooi_type: ty, score }
    }

    #[test]
    fn iou_hand_cases() {
        let a = bb(0, 0, 4, 4, 0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(4, 4, 8, 8, 0, 1.0)), 0.0);
        // 2x4 overlap, union 16 + 16 - 8 = 24
        let b = bb(2, 0, 6, 4, 0, 1.0);
        assert!((iou(&a, &b) - 8.0 / 24.0).abs() < 1e-6);
    }

    #[test]
    fn od_mask_keeps_inside_and_grays_outside() {
        let mut f = Frame::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                f.set(x, y, (200, 10, 50));
            }
        }
        let out = od_mask(&f, &bb(1, 1, 3, 3, 0, 1.0));
        assert_eq!(out.get(1, 1), (200, 10, 50));
        assert_eq!(out.get(2, 2), (200, 10, 50));
        let l = luma(200, 10, 50);
        assert_eq!(out.get(0, 0), (l, l, l));
        assert_eq!(out.get(3, 3), (l, l, l));
    }

    #[test]
    fn downsample_averages_blocks_exactly() {
        let mut f = Frame::new(4, 2);
        // left 2x2 block: 10,20,30,40 -> 25; right block constant 8
        f.set(0, 0, (10, 10, 10));
        f.set(1, 0, (20, 20, 20));
        f.set(0, 1, (30, 30, 30));
        f.set(1, 1, (40, 40, 40));
        for (x, y) in [(2, 0), (3, 0), (2, 1), (3, 1)] {
            f.set(x, y, (8, 8, 8));
        }
        let out = downsample(&f, 2, 1);
        assert_eq!(out.get(0, 0), (25, 25, 25));
        assert_eq!(out.get(1, 0), (8, 8, 8));
    }

    #[test]
    fn perfect_detections_score_ap_one() {
        let gt = vec![
            (0u64, bb(0, 0, 4, 4, 0, 1.0)),
            (1, bb(5, 5, 9, 9, 0, 1.0)),
            (1, bb(0, 0, 3, 3, 1, 1.0)),
        ];
        let ap = average_precision(&gt, &gt, 0.5);
        assert_eq!(ap.get(&0), Some(&1.0));
        assert_eq!(ap.get(&1), Some(&1.0));
        assert_eq!(ap.get(&2), None, "types without ground truth are absent");
    }

    #[test]
    fn ap_matches_hand_computed_pr_curves() {
        // one GT; the higher-scored detection misses, the lower one hits:
        // envelope precision 1/2 over the full recall range
        let gt = vec![(0u64, bb(0, 0, 4, 4, 0, 1.0))];
        let dets = vec![
            (0u64, bb(20, 20, 24, 24, 0, 0.9)),
            (0, bb(0, 0, 4, 4, 0, 0.4)),
        ];
        let ap = average_precision(&dets, &gt, 0.5);
        assert!((ap[&0] - 0.5).abs() < 1e-9);

        // two GT; ranked TP, FP, TP: area = 0.5*1 + 0.5*(2/3)
        let gt = vec![
            (0u64, bb(0, 0, 4, 4, 0, 1.0)),
            (0, bb(10, 10, 14, 14, 0, 1.0)),
        ];
        let dets = vec![
            (0u64, bb(0, 0, 4, 4, 0, 0.9)),
            (0, bb(20, 20, 24, 24, 0, 0.8)),
            (0, bb(10, 10, 14, 14, 0, 0.7)),
        ];
        let ap = average_precision(&dets, &gt, 0.5);
        assert!((ap[&0] - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn duplicate_detection_of_one_gt_is_a_false_positive() {
        let gt = vec![(0u64, bb(0, 0, 4, 4, 0, 1.0))];
        let dets = vec![
            (0u64, bb(0, 0, 4, 4, 0, 0.9)),
            (0, bb(0, 0, 4, 4, 0, 0.8)),
        ];
        let ap = average_precision(&dets, &gt, 0.5);
        assert!((ap[&0] - 1.0).abs() < 1e-9, "envelope ignores trailing FPs");
        // reversed: FP first would halve the AP if it matched; same-frame
        // greedy matching must bind the best-scored detection only once
        let gt2 = vec![
            (0u64, bb(0, 0, 4, 4, 0, 1.0)),
            (1, bb(0, 0, 4, 4, 0, 1.0)),
        ];
        let ap = average_precision(&dets, &gt2, 0.5);
        // second detection is frame 0 too: frame 1's GT stays unmatched
        assert!((ap[&0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn detector_roundtrips_and_rejects_untrained() {
        let det = FewShotDetector::new();
        assert!(det.detect(&Frame::new(4, 4)).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.txt");
        assert!(det.save(&path).is_err());

        let mut det = FewShotDetector::new();
        let mut f = Frame::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                f.set(x, y, if x < 4 { (250, 10, 10) } else { (30, 90, 30) });
            }
        }
        det.train(&[(f.clone(), vec![bb(0, 0, 4, 8, 2, 1.0)])]);
        det.save(&path).unwrap();
        let back = FewShotDetector::load(&path).unwrap();
        let a = det.detect(&f).unwrap();
        let b = back.detect(&f).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty());
        assert_eq!(a[0].ooi_type, 2);
    }
}

//! Detection-level evaluation of segmentation maps.
//!
//! Predicted and ground-truth class maps are split into 8-connected
//! instances per class. Instances are matched greedily by IoU within each
//! class; a match needs IoU strictly above the threshold. Counts are then
//! reduced to accuracy, precision, recall and F1, and compared across runs
//! with Welch's t-test.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Grid, Result, N_CLASSES};

pub const N_OBJECT_CLASSES: usize = N_CLASSES - 1;
pub const DEFAULT_MIN_AREA: usize = 2;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const SIGNIFICANCE: f64 = 0.05;

/// A connected region of one class. `pixels` are sorted row-major indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub class_id: u8,
    pub pixels: Vec<usize>,
}

impl InstanceMask {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// `|a ∩ b| / |a ∪ b|` of two sorted index sets; 0 when both are empty.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// 8-connected components of every object class (1..=6), dropping those
/// smaller than `min_area`. Ordered by class, then by first pixel.
pub fn extract_instances(map: &Grid<u8>, min_area: usize) -> Vec<InstanceMask> {
    let (w, h) = (map.width, map.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for class in 1..=N_OBJECT_CLASSES as u8 {
        for start in 0..w * h {
            if seen[start] || map.data[start] != class {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut pixels = Vec::new();
            while let Some(p) = stack.pop() {
                pixels.push(p);
                let (r, c) = ((p / w) as isize, (p % w) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nr, nc) = (r + dr, c + dc);
                        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                            continue;
                        }
                        let q = nr as usize * w + nc as usize;
                        if !seen[q] && map.data[q] == class {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            if pixels.len() >= min_area {
                pixels.sort_unstable();
                out.push(InstanceMask {
                    class_id: class,
                    pixels,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Index into this class's predicted instances.
    pub pred: usize,
    /// Index into this class's ground-truth instances.
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassOutcome {
    pub matches: Vec<Match>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    /// Frame-level true negative: class absent from ground truth and
    /// prediction.
    pub true_negative: bool,
}

impl ClassOutcome {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }
    pub fn fp(&self) -> usize {
        self.unmatched_pred.len()
    }
    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }
    pub fn n_gt(&self) -> usize {
        self.tp() + self.fn_()
    }

    /// Detection flag of every ground-truth instance, in instance order.
    pub fn gt_detected(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_gt()];
        for m in &self.matches {
            flags[m.gt] = true;
        }
        flags
    }
}

/// One frame's matching result; `classes[k]` is class `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub classes: Vec<ClassOutcome>,
}

impl DetectionOutcome {
    pub fn class(&self, class_id: u8) -> &ClassOutcome {
        &self.classes[class_id as usize - 1]
    }
}

/// Greedy per-class matching in descending IoU order. Ties are broken by
/// predicted index, then ground-truth index.
pub fn match_detections(pred: &[InstanceMask], gt: &[InstanceMask], iou_threshold: f64) -> DetectionOutcome {
    let classes = (1..=N_OBJECT_CLASSES as u8)
        .map(|class| {
            let p: Vec<&InstanceMask> = pred.iter().filter(|m| m.class_id == class).collect();
            let g: Vec<&InstanceMask> = gt.iter().filter(|m| m.class_id == class).collect();
            let mut pairs = Vec::new();
            for (i, a) in p.iter().enumerate() {
                for (j, b) in g.iter().enumerate() {
                    let v = iou(&a.pixels, &b.pixels);
                    if v > iou_threshold {
                        pairs.push(Match { pred: i, gt: j, iou: v });
                    }
                }
            }
            pairs.sort_by(|x, y| {
                y.iou
                    .total_cmp(&x.iou)
                    .then(x.pred.cmp(&y.pred))
                    .then(x.gt.cmp(&y.gt))
            });
            let (mut used_p, mut used_g) = (vec![false; p.len()], vec![false; g.len()]);
            let mut matches = Vec::new();
            for m in pairs {
                if !used_p[m.pred] && !used_g[m.gt] {
                    used_p[m.pred] = true;
                    used_g[m.gt] = true;
                    matches.push(m);
                }
            }
            matches.sort_by_key(|m| m.gt);
            ClassOutcome {
                matches,
                unmatched_pred: (0..p.len()).filter(|&i| !used_p[i]).collect(),
                unmatched_gt: (0..g.len()).filter(|&j| !used_g[j]).collect(),
                true_negative: p.is_empty() && g.is_empty(),
            }
        })
        .collect();
    DetectionOutcome { classes }
}

/// Extracts and matches instances of a predicted and a ground-truth map.
pub fn evaluate_maps(
    pred: &Grid<u8>,
    gt: &Grid<u8>,
    min_area: usize,
    iou_threshold: f64,
) -> Result<DetectionOutcome> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(
            format!("{}x{}", gt.height, gt.width),
            format!("{}x{}", pred.height, pred.width),
        ));
    }
    Ok(match_detections(
        &extract_instances(pred, min_area),
        &extract_instances(gt, min_area),
        iou_threshold,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    pub fn metrics(&self) -> ClassMetrics {
        let Counts { tp, fp, fn_, tn } = *self;
        let vacuous = tp + fp + fn_ == 0;
        let ratio = |num: usize, den: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if vacuous {
                1.0
            } else {
                0.0
            }
        };
        let f1_den = tp as f64 + (fp + fn_) as f64 / 2.0;
        ClassMetrics {
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: if f1_den > 0.0 {
                tp as f64 / f1_den
            } else if vacuous {
                1.0
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_frames: usize,
    /// `(class_id, counts, metrics)` for every evaluated class.
    pub classes: Vec<(u8, Counts, ClassMetrics)>,
    /// Unweighted mean over the evaluated classes.
    pub aggregate: ClassMetrics,
}

pub fn class_counts(outcomes: &[DetectionOutcome], class_id: u8) -> Counts {
    let mut c = Counts::default();
    for o in outcomes {
        let k = o.class(class_id);
        c.tp += k.tp();
        c.fp += k.fp();
        c.fn_ += k.fn_();
        c.tn += k.true_negative as usize;
    }
    c
}

/// Metrics over the classes with at least one ground-truth instance (all
/// six if there are none). Predictions of other classes only show up
/// through [`metrics_for`].
pub fn metrics(outcomes: &[DetectionOutcome]) -> Result<MetricsReport> {
    let present = gt_classes(outcomes);
    if present.is_empty() {
        metrics_for(outcomes, &(1..=N_OBJECT_CLASSES as u8).collect::<Vec<_>>())
    } else {
        metrics_for(outcomes, &present)
    }
}

/// Classes with at least one ground-truth instance in `outcomes`.
pub fn gt_classes(outcomes: &[DetectionOutcome]) -> Vec<u8> {
    (1..=N_OBJECT_CLASSES as u8)
        .filter(|&c| outcomes.iter().any(|o| o.class(c).n_gt() > 0))
        .collect()
}

pub fn metrics_for(outcomes: &[DetectionOutcome], classes: &[u8]) -> Result<MetricsReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty("outcome set"));
    }
    if classes.is_empty() {
        return Err(Error::Empty("class list"));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c == 0 || c as usize > N_OBJECT_CLASSES) {
        return Err(Error::InvalidConfig(format!("class id {bad} out of range")));
    }
    let rows: Vec<_> = classes
        .iter()
        .map(|&c| {
            let k = class_counts(outcomes, c);
            (c, k, k.metrics())
        })
        .collect();
    let n = rows.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| rows.iter().map(|r| f(&r.2)).sum::<f64>() / n;
    let aggregate = ClassMetrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    Ok(MetricsReport {
        n_frames: outcomes.len(),
        classes: rows,
        aggregate,
    })
}

impl MetricsReport {
    pub fn to_table(&self, class_names: &dyn Fn(u8) -> String) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9}",
            "class", "TP", "FP", "FN", "TN", "accuracy", "precision", "recall", "f1"
        );
        for (c, k, m) in &self.classes {
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                class_names(*c),
                k.tp,
                k.fp,
                k.fn_,
                k.tn,
                m.accuracy,
                m.precision,
                m.recall,
                m.f1
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            "mean", "", "", "", "", a.accuracy, a.precision, a.recall, a.f1
        );
        s
    }

    /// `key = value` lines.
    pub fn to_summary(&self) -> String {
        let mut s = format!("n_frames = {}\n", self.n_frames);
        let mut put = |prefix: &str, m: &ClassMetrics| {
            let _ = writeln!(s, "{prefix}accuracy = {}", m.accuracy);
            let _ = writeln!(s, "{prefix}precision = {}", m.precision);
            let _ = writeln!(s, "{prefix}recall = {}", m.recall);
            let _ = writeln!(s, "{prefix}f1 = {}", m.f1);
        };
        put("aggregate_", &self.aggregate);
        for (c, _, m) in &self.classes {
            put(&format!("class{c}_"), m);
        }
        s
    }
}

/// Share of ground-truth instances by joint detection outcome, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub n_instances: usize,
    pub both_correct: f64,
    pub both_wrong: f64,
    pub only_a: f64,
    pub only_b: f64,
}

/// Per-class comparison of two outcome sets on the same frames. Classes
/// without ground-truth instances yield `None`.
pub fn paired_failure_table(a: &[DetectionOutcome], b: &[DetectionOutcome]) -> Result<Vec<(u8, Option<PairedRow>)>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} frames", a.len()), b.len()));
    }
    let mut out = Vec::with_capacity(N_OBJECT_CLASSES);
    for class in 1..=N_OBJECT_CLASSES as u8 {
        let mut cnt = [0usize; 4];
        for (i, (oa, ob)) in a.iter().zip(b).enumerate() {
            let (fa, fb) = (oa.class(class).gt_detected(), ob.class(class).gt_detected());
            if fa.len() != fb.len() {
                return Err(Error::shape(
                    format!("frame {i} class {class}: {} gt instances", fa.len()),
                    fb.len(),
                ));
            }
            for (x, y) in fa.into_iter().zip(fb) {
                cnt[match (x, y) {
                    (true, true) => 0,
                    (false, false) => 1,
                    (true, false) => 2,
                    (false, true) => 3,
                }] += 1;
            }
        }
        let n: usize = cnt.iter().sum();
        let row = (n > 0).then(|| {
            let pct = |k: usize| 100.0 * k as f64 / n as f64;
            PairedRow {
                n_instances: n,
                both_correct: pct(cnt[0]),
                both_wrong: pct(cnt[1]),
                only_a: pct(cnt[2]),
                only_b: pct(cnt[3]),
            }
        });
        out.push((class, row));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AHigher,
    NoDifference,
    BHigher,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::AHigher => "A > B",
            Verdict::NoDifference => "no difference",
            Verdict::BHigher => "B > A",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
    pub significant: bool,
    pub verdict: Verdict,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided Student-t tail probability `P(|T| ≥ |t|)`.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Welch's unequal-variance t-test of `a` against `b`.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::SampleTooSmall(format!(
            "welch t-test needs at least 2 samples each (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let (t, dof, p) = if se2 == 0.0 {
        let dof = (a.len() + b.len() - 2) as f64;
        if ma == mb {
            (0.0, dof, 1.0)
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            (t, dof, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let dof = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
        (t, dof, student_t_two_sided(t, dof))
    };
    let significant = p < SIGNIFICANCE;
    let verdict = match (significant, t > 0.0) {
        (false, _) => Verdict::NoDifference,
        (true, true) => Verdict::AHigher,
        (true, false) => Verdict::BHigher,
    };
    Ok(TTest {
        t,
        dof,
        p_two_sided: p,
        significant,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_from(rows: &[&str]) -> Grid<u8> {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'.' { 0 } else { b - b'0' }))
            .collect();
        Grid::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(iou(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(iou(&[], &[]), 0.0);
        // 2×2 box covering half of a 2×4 box on an 8-wide grid
        let small = [0, 1, 8, 9];
        let big = [0, 1, 2, 3, 8, 9, 10, 11];
        assert_eq!(iou(&small, &big), 4.0 / 8.0);
    }

    #[test]
    fn extraction_cases() {
        assert!(extract_instances(&Grid::filled(8, 4, 0u8), 2).is_empty());
        let m = map_from(&["........", ".111....", ".111....", "........"]);
        let inst = extract_instances(&m, 2);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].area(), 6);
        assert_eq!(inst[0].pixels, vec![9, 10, 11, 17, 18, 19]);

        let diag = map_from(&["22......", "22......", "..22....", "..22...3"]);
        let inst = extract_instances(&diag, 2);
        assert_eq!(inst.len(), 1, "diagonal contact joins; single 3 is speckle");
        assert_eq!(inst[0].area(), 8);
        assert_eq!(extract_instances(&diag, 1).len(), 2);

        // adjacent different classes stay separate
        let two = map_from(&["1122", "1122"]);
        let inst = extract_instances(&two, 2);
        assert_eq!(inst.iter().map(|i| i.class_id).collect::<Vec<_>>(), vec![1, 2]);
    }

    fn inst(class_id: u8, pixels: impl IntoIterator<Item = usize>) -> InstanceMask {
        let mut pixels: Vec<usize> = pixels.into_iter().collect();
        pixels.sort_unstable();
        InstanceMask { class_id, pixels }
    }

    #[test]
    fn matching_cases() {
        let g = vec![inst(1, 0..10)];
        let perfect = match_detections(&g, &g, 0.5);
        assert_eq!(perfect.class(1).tp(), 1);
        assert_eq!(perfect.class(1).fp() + perfect.class(1).fn_(), 0);
        assert!(perfect.class(2).true_negative);

        // IoU 0.4: 4 predicted pixels inside a 10-pixel gt
        let p = vec![inst(1, 0..4)];
        assert!((iou(&p[0].pixels, &g[0].pixels) - 0.4).abs() < 1e-12);
        let o = match_detections(&p, &g, 0.5);
        assert_eq!((o.class(1).tp(), o.class(1).fp(), o.class(1).fn_()), (0, 1, 1));

        // two candidates over one gt: 0.8 wins, 0.6 becomes FP
        let p = vec![inst(1, 0..6), inst(1, 0..8)];
        let o = match_detections(&p, &g, 0.5);
        assert_eq!(o.class(1).matches, vec![Match { pred: 1, gt: 0, iou: 0.8 }]);
        assert_eq!(o.class(1).unmatched_pred, vec![0]);

        // right place, wrong class
        let p = vec![inst(2, 0..10)];
        let o = match_detections(&p, &g, 0.5);
        assert_eq!((o.class(1).fn_(), o.class(2).fp()), (1, 1));
        assert!(!o.class(1).true_negative && !o.class(2).true_negative);

        // exactly at the threshold does not match
        let o = match_detections(&[inst(1, 0..5)], &g, 0.5);
        assert_eq!(o.class(1).tp(), 0);
    }

    #[test]
    fn metric_conventions() {
        let c = Counts {
            tp: 1,
            fp: 0,
            fn_: 1,
            tn: 0,
        };
        let m = c.metrics();
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 1.0 / 1.5).abs() < 1e-15);
        let vac = Counts {
            tn: 7,
            ..Default::default()
        }
        .metrics();
        assert_eq!((vac.accuracy, vac.precision, vac.recall, vac.f1), (1.0, 1.0, 1.0, 1.0));
        let miss = Counts {
            fn_: 3,
            ..Default::default()
        }
        .metrics();
        assert_eq!((miss.precision, miss.recall, miss.f1), (0.0, 0.0, 0.0));
        assert!(metrics(&[]).is_err());
    }

    #[test]
    fn paired_cases() {
        let g = vec![inst(3, 0..10), inst(3, 20..30)];
        let perfect = match_detections(&g, &g, 0.5);
        let missed = match_detections(&[], &g, 0.5);
        let t = paired_failure_table(&[perfect.clone()], &[perfect.clone()]).unwrap();
        let row = t[2].1.unwrap();
        assert_eq!((row.only_a, row.only_b, row.both_correct), (0.0, 0.0, 100.0));
        assert!(t[0].1.is_none());
        let t = paired_failure_table(&[perfect.clone()], &[missed.clone()]).unwrap();
        let row = t[2].1.unwrap();
        assert_eq!((row.both_correct, row.only_a), (0.0, 100.0));
        assert!(paired_failure_table(&[perfect.clone()], &[]).is_err());
        let other = match_detections(&[], &[inst(3, 0..10)], 0.5);
        assert!(paired_failure_table(&[perfect], &[other]).is_err());
    }

    #[test]
    fn welch_edge_cases() {
        let a = [0.5, 0.6, 0.7];
        let same = welch_ttest(&a, &a).unwrap();
        assert_eq!(same.t, 0.0);
        assert_eq!(same.verdict, Verdict::NoDifference);
        let far = welch_ttest(&[0.1; 5], &[0.9; 5]).unwrap();
        assert!(far.significant);
        assert_eq!(far.verdict, Verdict::BHigher);
        let flat = welch_ttest(&[0.3; 4], &[0.3; 4]).unwrap();
        assert_eq!((flat.t, flat.p_two_sided, flat.verdict), (0.0, 1.0, Verdict::NoDifference));
        assert!(matches!(welch_ttest(&[1.0], &[1.0, 2.0]), Err(Error::SampleTooSmall(_))));
    }

    #[test]
    fn incomplete_beta_reference_points() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_0.5(a, a) = 0.5
        assert!((incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        assert!((incomplete_beta(2.5, 1.0, 0.4) - 0.4f64.powf(2.5)).abs() < 1e-14);
        assert!((incomplete_beta(3.7, 3.7, 0.5) - 0.5).abs() < 1e-14);
        // t = 2.0 with 1 dof: p = 1 − 2·atan(2)/π
        let want = 1.0 - 2.0 * 2.0f64.atan() / std::f64::consts::PI;
        assert!((student_t_two_sided(2.0, 1.0) - want).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn iou_symmetric(a in proptest::collection::btree_set(0usize..64, 0..20),
                         b in proptest::collection::btree_set(0usize..64, 0..20)) {
            let (a, b): (Vec<_>, Vec<_>) = (a.into_iter().collect(), b.into_iter().collect());
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn accounting_identities(cells in proptest::collection::vec(0u8..4, 96),
                                 pcells in proptest::collection::vec(0u8..4, 96)) {
            let gt = Grid::from_vec(12, 8, cells).unwrap();
            let pred = Grid::from_vec(12, 8, pcells).unwrap();
            let gi = extract_instances(&gt, 2);
            let pi = extract_instances(&pred, 2);
            let o = match_detections(&pi, &gi, 0.5);
            for c in 1..=6u8 {
                let k = o.class(c);
                prop_assert_eq!(k.tp() + k.fn_(), gi.iter().filter(|m| m.class_id == c).count());
                prop_assert_eq!(k.tp() + k.fp(), pi.iter().filter(|m| m.class_id == c).count());
                prop_assert!(k.matches.iter().all(|m| m.iou > 0.5));
            }
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let m = Counts { tp, fp, fn_, tn: 0 }.metrics();
            if m.precision + m.recall > 0.0 && tp + fp > 0 && tp + fn_ > 0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - h).abs() < 1e-12);
            }
        }

        #[test]
        fn welch_swap(a in proptest::collection::vec(0.0f64..1.0, 2..8),
                      b in proptest::collection::vec(0.0f64..1.0, 2..8)) {
            let x = welch_ttest(&a, &b).unwrap();
            let y = welch_ttest(&b, &a).unwrap();
            prop_assert_eq!(x.t, -y.t);
            prop_assert!((x.p_two_sided - y.p_two_sided).abs() < 1e-14);
            prop_assert!((0.0..=1.0).contains(&x.p_two_sided));
        }

        #[test]
        fn paired_rows_sum_to_100(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            // one gt instance per frame, detected or not in each run
            let g = vec![inst(1, 0..4)];
            let hit = match_detections(&g, &g, 0.5);
            let miss = match_detections(&[], &g, 0.5);
            let a: Vec<_> = flags.iter().map(|f| if f.0 { hit.clone() } else { miss.clone() }).collect();
            let b: Vec<_> = flags.iter().map(|f| if f.1 { hit.clone() } else { miss.clone() }).collect();
            let row = paired_failure_table(&a, &b).unwrap()[0].1.unwrap();
            let s = row.both_correct + row.both_wrong + row.only_a + row.only_b;
            prop_assert!((s - 100.0).abs() < 1e-9);
        }
    }
}

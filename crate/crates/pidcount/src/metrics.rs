//! Segmentation and counting metrics: pixel confusion counts, accuracy,
//! Dice, Jaccard, precision, counting accuracy, and the exact symmetric
//! Hausdorff distance.
//!
//! Division-by-zero conventions (all pinned by tests): with two empty masks
//! Dice, Jaccard, and precision are 1 (perfect agreement); with no predicted
//! foreground against a nonempty ground truth, precision and Dice are 0.
//! Counting accuracy is deliberately unclamped, so gross over-counting goes
//! negative; it is undefined when the ground-truth count is zero and such
//! rows are excluded from aggregation. Hausdorff of two empty masks is 0;
//! if exactly one side is empty the distance is reported as the farthest
//! two pixels can lie apart (the image diagonal) and the row is flagged.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::raster::Mask;

/// Pixel-level confusion counts between a prediction and ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// Counts TP/TN/FP/FN over two same-shaped binary masks.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<Confusion> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::Shape(format!(
            "confusion needs equal shapes, got {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (1, 1) => c.true_pos += 1,
            (0, 0) => c.true_neg += 1,
            (1, 0) => c.false_pos += 1,
            _ => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// The four ratio metrics computed from one confusion table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
}

/// Accuracy, Dice, Jaccard, and precision with the empty-mask conventions
/// described in the module docs.
pub fn segmentation_metrics(c: &Confusion) -> SegScores {
    let tp = c.true_pos as f64;
    let fp = c.false_pos as f64;
    let fneg = c.false_neg as f64;
    let accuracy = (c.true_pos + c.true_neg) as f64 / c.total() as f64;
    let dice = if c.true_pos + c.false_pos + c.false_neg == 0 {
        1.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    };
    let jaccard = if c.true_pos + c.false_pos + c.false_neg == 0 {
        1.0
    } else {
        tp / (tp + fp + fneg)
    };
    let precision = if c.true_pos + c.false_pos == 0 {
        // Nothing predicted: perfect if nothing was there to find.
        if c.false_neg == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fp)
    };
    SegScores { accuracy, dice, jaccard, precision }
}

/// Counting accuracy `1 - |n_pred - n_gt| / n_gt`, unclamped (negative under
/// gross over-counting). Undefined for `n_gt = 0`.
pub fn counting_accuracy(n_pred: usize, n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::Validation(
            "counting accuracy is undefined when the ground-truth count is zero".into(),
        ));
    }
    let diff = n_pred.abs_diff(n_gt);
    Ok((n_gt as f64 - diff as f64) / n_gt as f64)
}

/// Hausdorff distance plus a flag marking the exactly-one-empty-mask case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HausdorffResult {
    pub distance: f64,
    pub degenerate: bool,
}

/// Largest possible distance between two pixels of an `h` x `w` grid.
fn image_diagonal(h: usize, w: usize) -> f64 {
    let dy = (h - 1) as f64;
    let dx = (w - 1) as f64;
    (dy * dy + dx * dx).sqrt()
}

/// Symmetric Hausdorff distance between the foreground pixel sets of two
/// same-shaped masks, in pixels. Exact: distances are compared as squared
/// integers and rooted once at the end.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<HausdorffResult> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!(
            "hausdorff needs equal shapes, got {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let a_empty = a.is_all_background();
    let b_empty = b.is_all_background();
    if a_empty && b_empty {
        return Ok(HausdorffResult { distance: 0.0, degenerate: false });
    }
    if a_empty || b_empty {
        return Ok(HausdorffResult { distance: image_diagonal(a.h, a.w), degenerate: true });
    }
    let to_a = squared_edt(a);
    let to_b = squared_edt(b);
    let mut worst: f64 = 0.0;
    for (i, &m) in a.data.iter().enumerate() {
        if m == 1 && to_b[i] > worst {
            worst = to_b[i];
        }
    }
    for (i, &m) in b.data.iter().enumerate() {
        if m == 1 && to_a[i] > worst {
            worst = to_a[i];
        }
    }
    Ok(HausdorffResult { distance: worst.sqrt(), degenerate: false })
}

/// One evaluated image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    /// `None` when the ground-truth count is zero (excluded from means).
    pub counting_accuracy: Option<f64>,
    pub hausdorff_px: f64,
    pub hausdorff_degenerate: bool,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// Computes every per-image metric in one call.
pub fn image_metrics(
    id: &str,
    pred: &Mask,
    gt: &Mask,
    n_pred: usize,
    n_gt: usize,
) -> Result<ImageMetrics> {
    let seg = segmentation_metrics(&confusion(pred, gt)?);
    let hd = hausdorff(pred, gt)?;
    Ok(ImageMetrics {
        id: id.to_string(),
        accuracy: seg.accuracy,
        dice: seg.dice,
        jaccard: seg.jaccard,
        precision: seg.precision,
        counting_accuracy: counting_accuracy(n_pred, n_gt).ok(),
        hausdorff_px: hd.distance,
        hausdorff_degenerate: hd.degenerate,
        n_pred,
        n_gt,
    })
}

/// Per-image rows for one method, plus aggregation and export.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub method: String,
    pub rows: Vec<ImageMetrics>,
}

/// Unweighted means over the evaluated images.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateMetrics {
    pub method: String,
    pub n_images: usize,
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    /// Mean over images with a defined counting accuracy; `None` if no
    /// image had a nonzero ground-truth count.
    pub counting_accuracy: Option<f64>,
    pub hausdorff_px: f64,
    pub counting_undefined_images: usize,
    pub hausdorff_degenerate_images: usize,
}

impl MetricsReport {
    pub fn new(method: &str) -> Self {
        MetricsReport { method: method.to_string(), rows: Vec::new() }
    }

    pub fn aggregate(&self) -> Result<AggregateMetrics> {
        if self.rows.is_empty() {
            return Err(Error::Validation("cannot aggregate an empty metrics report".into()));
        }
        let n = self.rows.len() as f64;
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| self.rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let ca_rows: Vec<f64> = self.rows.iter().filter_map(|r| r.counting_accuracy).collect();
        let counting_accuracy = if ca_rows.is_empty() {
            None
        } else {
            Some(ca_rows.iter().sum::<f64>() / ca_rows.len() as f64)
        };
        Ok(AggregateMetrics {
            method: self.method.clone(),
            n_images: self.rows.len(),
            accuracy: mean(&|r| r.accuracy),
            dice: mean(&|r| r.dice),
            jaccard: mean(&|r| r.jaccard),
            precision: mean(&|r| r.precision),
            counting_accuracy,
            hausdorff_px: mean(&|r| r.hausdorff_px),
            counting_undefined_images: self.rows.len() - ca_rows.len(),
            hausdorff_degenerate_images: self
                .rows
                .iter()
                .filter(|r| r.hausdorff_degenerate)
                .count(),
        })
    }

    /// Per-image rows as CSV. Floats use the shortest round-trip form, so a
    /// bit-identical evaluation produces a byte-identical file.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "id,method,accuracy,dice,jaccard,precision,counting_accuracy,hausdorff_px,hausdorff_degenerate,n_pred,n_gt\n",
        );
        for r in &self.rows {
            let ca = r.counting_accuracy.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.id,
                self.method,
                r.accuracy,
                r.dice,
                r.jaccard,
                r.precision,
                ca,
                r.hausdorff_px,
                r.hausdorff_degenerate,
                r.n_pred,
                r.n_gt
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Writes the aggregate as pretty JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let agg = self.aggregate()?;
        let text = serde_json::to_string_pretty(&agg)
            .map_err(|e| Error::Data(format!("metrics serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
        Mask::from_fn(h, w, |_, _| rng.gen_bool(p))
    }

    #[test]
    fn confusion_of_identical_and_complementary_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mask(&mut rng, 12, 9, 0.4);
        let same = confusion(&m, &m).unwrap();
        assert_eq!(same.false_pos, 0);
        assert_eq!(same.false_neg, 0);
        assert_eq!(same.true_pos as usize, m.area());
        let comp = confusion(&m.inverted(), &m).unwrap();
        assert_eq!(comp.true_pos, 0);
        assert_eq!(comp.true_neg, 0);
        assert_eq!(comp.total() as usize, 12 * 9);
    }

    #[test]
    fn confusion_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let pred = random_mask(&mut rng, 10, 10, 0.5);
            let gt = random_mask(&mut rng, 10, 10, 0.3);
            let c = confusion(&pred, &gt).unwrap();
            let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
            for y in 0..10 {
                for x in 0..10 {
                    let p = pred.get(y, x) == 1;
                    let g = gt.get(y, x) == 1;
                    if p && g {
                        tp += 1;
                    } else if !p && !g {
                        tn += 1;
                    } else if p {
                        fp += 1;
                    } else {
                        fneg += 1;
                    }
                }
            }
            assert_eq!(
                (c.true_pos, c.true_neg, c.false_pos, c.false_neg),
                (tp, tn, fp, fneg)
            );
        }
    }

    #[test]
    fn confusion_rejects_shape_mismatch() {
        assert!(confusion(&Mask::new(2, 3), &Mask::new(3, 2)).is_err());
    }

    #[test]
    fn dice_and_jaccard_on_known_overlaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_mask(&mut rng, 8, 8, 0.5);
        let s = segmentation_metrics(&confusion(&m, &m).unwrap());
        assert_eq!(s.dice, 1.0);
        assert_eq!(s.jaccard, 1.0);
        assert_eq!(s.accuracy, 1.0);

        // pred {a,b}, gt {b,c}: overlap 1 of 2+2 pixels.
        let pred = Mask::from_data(1, 4, vec![1, 1, 0, 0]).unwrap();
        let gt = Mask::from_data(1, 4, vec![0, 1, 1, 0]).unwrap();
        let s = segmentation_metrics(&confusion(&pred, &gt).unwrap());
        assert_eq!(s.dice, 0.5);
        assert_eq!(s.jaccard, 1.0 / 3.0);
        assert_eq!(s.precision, 0.5);
    }

    #[test]
    fn empty_mask_conventions() {
        let empty = Mask::new(4, 4);
        let s = segmentation_metrics(&confusion(&empty, &empty).unwrap());
        assert_eq!((s.dice, s.jaccard, s.precision, s.accuracy), (1.0, 1.0, 1.0, 1.0));

        let mut gt = Mask::new(4, 4);
        gt.set(1, 1, 1);
        let s = segmentation_metrics(&confusion(&empty, &gt).unwrap());
        assert_eq!(s.dice, 0.0);
        assert_eq!(s.jaccard, 0.0);
        assert_eq!(s.precision, 0.0);
    }

    #[test]
    fn counting_accuracy_formula_is_exact_and_unclamped() {
        assert_eq!(counting_accuracy(97, 100).unwrap(), 0.97);
        assert_eq!(counting_accuracy(100, 100).unwrap(), 1.0);
        assert_eq!(counting_accuracy(300, 100).unwrap(), -1.0);
        assert_eq!(counting_accuracy(103, 100).unwrap(), 0.97);
        assert!(counting_accuracy(5, 0).is_err());
    }

    fn brute_hausdorff(a: &Mask, b: &Mask) -> f64 {
        let pa = a.foreground();
        let pb = b.foreground();
        let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
            let mut worst = 0.0f64;
            for &(y, x) in from {
                let mut best = f64::INFINITY;
                for &(ty, tx) in to {
                    let dy = y as f64 - ty as f64;
                    let dx = x as f64 - tx as f64;
                    let d = dy * dy + dx * dx;
                    if d < best {
                        best = d;
                    }
                }
                if best > worst {
                    worst = best;
                }
            }
            worst
        };
        directed(&pa, &pb).max(directed(&pb, &pa)).sqrt()
    }

    #[test]
    fn hausdorff_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_mask(&mut rng, 10, 10, 0.4);
        assert_eq!(hausdorff(&m, &m).unwrap().distance, 0.0);

        let mut a = Mask::new(8, 8);
        a.set(0, 0, 1);
        let mut b = Mask::new(8, 8);
        b.set(3, 4, 1);
        assert_eq!(hausdorff(&a, &b).unwrap().distance, 5.0);
    }

    #[test]
    fn hausdorff_empty_conventions() {
        let empty = Mask::new(5, 9);
        let r = hausdorff(&empty, &empty).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(!r.degenerate);

        let mut one = Mask::new(5, 9);
        one.set(2, 2, 1);
        let r = hausdorff(&empty, &one).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.distance, ((4 * 4 + 8 * 8) as f64).sqrt());
    }

    #[test]
    fn hausdorff_equals_brute_force_on_200_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..200 {
            let h = rng.gen_range(1..=32);
            let w = rng.gen_range(1..=32);
            let a = random_mask(&mut rng, h, w, 0.15);
            let b = random_mask(&mut rng, h, w, 0.15);
            if a.is_all_background() || b.is_all_background() {
                continue;
            }
            let fast = hausdorff(&a, &b).unwrap();
            assert_eq!(fast.distance, brute_hausdorff(&a, &b), "trial {}", trial);
            let swapped = hausdorff(&b, &a).unwrap();
            assert_eq!(fast.distance, swapped.distance);
        }
    }

    #[test]
    fn hausdorff_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a = random_mask(&mut rng, 12, 12, 0.3);
            let b = random_mask(&mut rng, 12, 12, 0.3);
            let c = random_mask(&mut rng, 12, 12, 0.3);
            if a.is_all_background() || b.is_all_background() || c.is_all_background() {
                continue;
            }
            let ab = hausdorff(&a, &b).unwrap().distance;
            let bc = hausdorff(&b, &c).unwrap().distance;
            let ac = hausdorff(&a, &c).unwrap().distance;
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn aggregate_means_and_ca_exclusion() {
        let mut report = MetricsReport::new("pidnet");
        report.rows.push(ImageMetrics {
            id: "a".into(),
            accuracy: 1.0,
            dice: 1.0,
            jaccard: 1.0,
            precision: 1.0,
            counting_accuracy: Some(1.0),
            hausdorff_px: 0.0,
            hausdorff_degenerate: false,
            n_pred: 3,
            n_gt: 3,
        });
        report.rows.push(ImageMetrics {
            id: "b".into(),
            accuracy: 0.5,
            dice: 0.0,
            jaccard: 0.0,
            precision: 0.0,
            counting_accuracy: None,
            hausdorff_px: 2.0,
            hausdorff_degenerate: true,
            n_pred: 1,
            n_gt: 0,
        });
        let agg = report.aggregate().unwrap();
        assert_eq!(agg.n_images, 2);
        assert_eq!(agg.accuracy, 0.75);
        assert_eq!(agg.counting_accuracy, Some(1.0));
        assert_eq!(agg.counting_undefined_images, 1);
        assert_eq!(agg.hausdorff_degenerate_images, 1);
        assert_eq!(agg.hausdorff_px, 1.0);

        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("id,method,accuracy"));
        assert!(csv.contains("a,pidnet,1,1,1,1,1,0,false,3,3"));
        assert!(csv.contains("b,pidnet,0.5,0,0,0,,2,true,1,0"));

        assert!(MetricsReport::new("x").aggregate().is_err());
    }

    #[test]
    fn json_roundtrip_preserves_aggregate() {
        let mut report = MetricsReport::new("otsu");
        report.rows.push(ImageMetrics {
            id: "a".into(),
            accuracy: 0.9,
            dice: 0.8,
            jaccard: 0.75,
            precision: 0.85,
            counting_accuracy: Some(0.97),
            hausdorff_px: 1.5,
            hausdorff_degenerate: false,
            n_pred: 97,
            n_gt: 100,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.json");
        report.write_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: AggregateMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report.aggregate().unwrap());
        for field in ["accuracy", "dice", "jaccard", "precision", "counting_accuracy", "hausdorff_px"] {
            assert!(text.contains(field), "missing field {}", field);
        }
    }

    proptest! {
        #[test]
        fn jaccard_dice_identity_and_order(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = random_mask(&mut rng, 9, 9, 0.4);
            let gt = random_mask(&mut rng, 9, 9, 0.4);
            let s = segmentation_metrics(&confusion(&pred, &gt).unwrap());
            prop_assert!((s.jaccard - s.dice / (2.0 - s.dice)).abs() < 1e-9);
            prop_assert!(s.dice >= s.jaccard);
            if s.dice != 0.0 && s.dice != 1.0 {
                prop_assert!(s.dice > s.jaccard);
            }
            prop_assert!((0.0..=1.0).contains(&s.accuracy));
            prop_assert!((0.0..=1.0).contains(&s.precision));
            // accuracy = 1 iff the masks agree everywhere.
            prop_assert_eq!(s.accuracy == 1.0, pred == gt);
        }

        #[test]
        fn counting_accuracy_is_at_most_one(n_pred in 0usize..500, n_gt in 1usize..500) {
            let ca = counting_accuracy(n_pred, n_gt).unwrap();
            prop_assert!(ca <= 1.0);
            prop_assert_eq!(ca == 1.0, n_pred == n_gt);
        }
    }
}

//! CLEAR MOT (MOTA, MOTP, FP, FN, IDS), IDF1, and MT/ML.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::association::{hungarian, AffinityMatrix};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mot_io::DetectionRow;

/// Raw counts; every derived score is a function of these, so reports for
/// several sequences aggregate by summation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub sequence: String,
    pub total_gt: usize,
    pub total_hyp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub matches: usize,
    pub iou_sum: f64,
    pub idtp: usize,
    pub gt_tracks: usize,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
}

impl MetricsReport {
    pub fn mota(&self) -> f64 {
        if self.total_gt == 0 {
            return if self.fp + self.ids == 0 { 1.0 } else { f64::NEG_INFINITY };
        }
        1.0 - (self.fp + self.fn_ + self.ids) as f64 / self.total_gt as f64
    }

    /// Mean IOU over matches; 0 when nothing matched.
    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }

    /// `2·IDTP / (total_gt + total_hyp)`; 1 when both streams are empty.
    pub fn idf1(&self) -> f64 {
        let denom = self.total_gt + self.total_hyp;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.idtp as f64 / denom as f64
        }
    }

    pub fn mt_percent(&self) -> f64 {
        percent(self.mostly_tracked, self.gt_tracks)
    }

    pub fn ml_percent(&self) -> f64 {
        percent(self.mostly_lost, self.gt_tracks)
    }

    pub fn aggregate(name: &str, reports: &[MetricsReport]) -> MetricsReport {
        let mut out = MetricsReport {
            sequence: name.to_string(),
            ..Default::default()
        };
        for r in reports {
            out.total_gt += r.total_gt;
            out.total_hyp += r.total_hyp;
            out.fp += r.fp;
            out.fn_ += r.fn_;
            out.ids += r.ids;
            out.matches += r.matches;
            out.iou_sum += r.iou_sum;
            out.idtp += r.idtp;
            out.gt_tracks += r.gt_tracks;
            out.mostly_tracked += r.mostly_tracked;
            out.mostly_lost += r.mostly_lost;
        }
        out
    }
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

pub const CSV_HEADER: &str = "sequence,MOTA,MOTP,IDF1,MT,ML,FP,FN,IDS";

pub fn csv_line(r: &MetricsReport) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.2},{:.2},{},{},{}",
        r.sequence,
        r.mota(),
        r.motp(),
        r.idf1(),
        r.mt_percent(),
        r.ml_percent(),
        r.fp,
        r.fn_,
        r.ids
    )
}

pub fn csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&csv_line(r));
        s.push('\n');
    }
    s
}

/// Fixed-width table with MOTA/MOTP/IDF1 and MT/ML in percent.
pub fn text_table(reports: &[MetricsReport]) -> String {
    let w = reports.iter().map(|r| r.sequence.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    writeln!(
        s,
        "{:<w$} {:>8} {:>8} {:>8} {:>7} {:>7} {:>6} {:>6} {:>5}",
        "sequence", "MOTA", "MOTP", "IDF1", "MT", "ML", "FP", "FN", "IDS"
    )
    .unwrap();
    for r in reports {
        writeln!(
            s,
            "{:<w$} {:>8.2} {:>8.2} {:>8.2} {:>6.1}% {:>6.1}% {:>6} {:>6} {:>5}",
            r.sequence,
            100.0 * r.mota(),
            100.0 * r.motp(),
            100.0 * r.idf1(),
            r.mt_percent(),
            r.ml_percent(),
            r.fp,
            r.fn_,
            r.ids
        )
        .unwrap();
    }
    s
}

type FrameMap = BTreeMap<u32, Vec<(i64, BBox)>>;

fn by_frame(rows: &[DetectionRow], which: &str) -> Result<FrameMap> {
    let mut seen = BTreeSet::new();
    let mut m: FrameMap = BTreeMap::new();
    for r in rows {
        if !seen.insert((r.frame, r.id)) {
            return Err(Error::contract(format!(
                "duplicate {which} row for frame {} id {}",
                r.frame, r.id
            )));
        }
        m.entry(r.frame).or_default().push((r.id, r.bbox));
    }
    Ok(m)
}

/// Per-frame CLEAR matching shared by every metric.
struct Matching {
    report: MetricsReport,
    /// gt id → (frames present, frames matched)
    coverage: BTreeMap<i64, (usize, usize)>,
}

fn match_frames(gt: &[DetectionRow], hyp: &[DetectionRow], thr: f64) -> Result<Matching> {
    let g = by_frame(gt, "gt")?;
    let h = by_frame(hyp, "hypothesis")?;
    let frames: BTreeSet<u32> = g.keys().chain(h.keys()).copied().collect();
    let mut rep = MetricsReport::default();
    let mut coverage: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let mut last: HashMap<i64, i64> = HashMap::new();
    let empty = Vec::new();
    for f in frames {
        let gs = g.get(&f).unwrap_or(&empty);
        let hs = h.get(&f).unwrap_or(&empty);
        rep.total_gt += gs.len();
        rep.total_hyp += hs.len();
        let mut g_used = vec![false; gs.len()];
        let mut h_used = vec![false; hs.len()];
        let mut pairs = Vec::new();
        // keep last frame's correspondences that still overlap
        for (gi, (gid, gb)) in gs.iter().enumerate() {
            let Some(prev) = last.get(gid) else { continue };
            if let Some(hi) = hs.iter().position(|(hid, _)| hid == prev) {
                let iou = gb.iou(&hs[hi].1);
                if iou >= thr && !h_used[hi] {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    pairs.push((gi, hi, iou));
                }
            }
        }
        let gr: Vec<usize> = (0..gs.len()).filter(|&i| !g_used[i]).collect();
        let hr: Vec<usize> = (0..hs.len()).filter(|&i| !h_used[i]).collect();
        if !gr.is_empty() && !hr.is_empty() {
            // cardinality first, then total IOU
            let big = gr.len().min(hr.len()) as f64 + 1.0;
            let mut data = Vec::with_capacity(gr.len() * hr.len());
            for &gi in &gr {
                for &hi in &hr {
                    let iou = gs[gi].1.iou(&hs[hi].1);
                    data.push(if iou >= thr { big + iou } else { 0.0 });
                }
            }
            let m = AffinityMatrix::new(gr.len(), hr.len(), data)?;
            for (r, c) in hungarian(&m)? {
                if m.at(r, c) > 0.0 {
                    let (gi, hi) = (gr[r], hr[c]);
                    pairs.push((gi, hi, gs[gi].1.iou(&hs[hi].1)));
                }
            }
        }
        for (gid, _) in gs {
            coverage.entry(*gid).or_default().0 += 1;
        }
        for &(gi, hi, iou) in &pairs {
            let (gid, hid) = (gs[gi].0, hs[hi].0);
            if last.get(&gid).is_some_and(|&p| p != hid) {
                rep.ids += 1;
            }
            last.insert(gid, hid);
            coverage.get_mut(&gid).expect("present").1 += 1;
            rep.matches += 1;
            rep.iou_sum += iou;
        }
        rep.fp += hs.len() - pairs.len();
        rep.fn_ += gs.len() - pairs.len();
    }
    rep.gt_tracks = coverage.len();
    for &(life, hit) in coverage.values() {
        let c = hit as f64 / life as f64;
        if c >= 0.8 {
            rep.mostly_tracked += 1;
        }
        if c <= 0.2 {
            rep.mostly_lost += 1;
        }
    }
    Ok(Matching { report: rep, coverage })
}

/// CLEAR MOT counts (and MT/ML) for one sequence.
pub fn clear_mot(gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<MetricsReport> {
    Ok(match_frames(gt, hyp, iou_threshold)?.report)
}

/// Identity-true-positive count under the best one-to-one gt-id ↔ hyp-id
/// mapping.
pub fn idtp(gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<usize> {
    let g = by_frame(gt, "gt")?;
    let h = by_frame(hyp, "hypothesis")?;
    let gids: Vec<i64> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let hids: Vec<i64> = hyp.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    if gids.is_empty() || hids.is_empty() {
        return Ok(0);
    }
    let gi: HashMap<i64, usize> = gids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let hi: HashMap<i64, usize> = hids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut counts = vec![0.0; gids.len() * hids.len()];
    for (f, gs) in &g {
        let Some(hs) = h.get(f) else { continue };
        for (gid, gb) in gs {
            for (hid, hb) in hs {
                if gb.iou(hb) >= iou_threshold {
                    counts[gi[gid] * hids.len() + hi[hid]] += 1.0;
                }
            }
        }
    }
    let m = AffinityMatrix::new(gids.len(), hids.len(), counts)?;
    Ok(hungarian(&m)?.iter().map(|&(r, c)| m.at(r, c) as usize).sum())
}

pub fn idf1(gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<f64> {
    let tp = idtp(gt, hyp, iou_threshold)?;
    let denom = gt.len() + hyp.len();
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Percent of gt trajectories covered ≥ 80% and ≤ 20% of their lifespan.
pub fn mt_ml(gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<(f64, f64)> {
    let r = clear_mot(gt, hyp, iou_threshold)?;
    Ok((r.mt_percent(), r.ml_percent()))
}

/// Per-gt-id `(lifespan, matched)` frame counts.
pub fn coverage(gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<BTreeMap<i64, (usize, usize)>> {
    Ok(match_frames(gt, hyp, iou_threshold)?.coverage)
}

/// Full report for one sequence.
pub fn evaluate(sequence: &str, gt: &[DetectionRow], hyp: &[DetectionRow], iou_threshold: f64) -> Result<MetricsReport> {
    let mut r = clear_mot(gt, hyp, iou_threshold)?;
    r.idtp = idtp(gt, hyp, iou_threshold)?;
    r.sequence = sequence.to_string();
    Ok(r)
}

/// Hand-built gt/hypothesis pairs with known metric values.
pub mod scenarios {
    use crate::bbox::BBox;
    use crate::mot_io::DetectionRow;

    fn row(frame: u32, id: i64, x: f64) -> DetectionRow {
        DetectionRow::new(frame, id, BBox { x, y: 0.0, w: 10.0, h: 10.0 }, 1.0)
    }

    fn two_tracks(frames: u32) -> Vec<DetectionRow> {
        (1..=frames).flat_map(|f| [row(f, 1, 0.0), row(f, 2, 50.0)]).collect()
    }

    /// 10 gt boxes; the hypothesis has 1 FP, 2 FN and 1 IDS, so MOTA = 0.6.
    pub fn mota_point_six() -> (Vec<DetectionRow>, Vec<DetectionRow>) {
        let gt = two_tracks(5);
        let mut hyp: Vec<DetectionRow> = (1..=5).map(|f| row(f, 1, 0.0)).collect();
        hyp.extend([row(1, 2, 50.0), row(2, 2, 50.0), row(3, 3, 50.0)]);
        hyp.push(row(5, 4, 200.0));
        (gt, hyp)
    }

    /// Two 4-frame tracks whose hypothesis ids swap halfway: IDF1 = 0.5.
    pub fn id_swap() -> (Vec<DetectionRow>, Vec<DetectionRow>) {
        let gt = two_tracks(4);
        let hyp = (1..=4)
            .flat_map(|f| {
                let (a, b) = if f <= 2 { (1, 2) } else { (2, 1) };
                [row(f, a, 0.0), row(f, b, 50.0)]
            })
            .collect();
        (gt, hyp)
    }

    pub fn perfect() -> (Vec<DetectionRow>, Vec<DetectionRow>) {
        let gt = two_tracks(6);
        (gt.clone(), gt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u32, id: i64, x: f64) -> DetectionRow {
        DetectionRow::new(frame, id, BBox { x, y: 0.0, w: 10.0, h: 10.0 }, 1.0)
    }

    #[test]
    fn perfect() {
        let gt: Vec<_> = (1..=5).flat_map(|f| [row(f, 1, 0.0), row(f, 2, 50.0)]).collect();
        let r = evaluate("s", &gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota(), r.motp(), r.idf1()), (1.0, 1.0, 1.0));
        assert_eq!((r.fp, r.fn_, r.ids), (0, 0, 0));
        assert_eq!((r.mt_percent(), r.ml_percent()), (100.0, 0.0));
    }

    #[test]
    fn empty_hypothesis() {
        let gt: Vec<_> = (1..=4).map(|f| row(f, 1, 0.0)).collect();
        let r = evaluate("s", &gt, &[], 0.5).unwrap();
        assert_eq!(r.mota(), 0.0);
        assert_eq!((r.fp, r.fn_, r.ids), (0, 4, 0));
        assert_eq!(r.idf1(), 0.0);
        assert_eq!(r.ml_percent(), 100.0);
    }

    #[test]
    fn duplicates_rejected() {
        let gt = vec![row(1, 1, 0.0), row(1, 1, 3.0)];
        assert!(clear_mot(&gt, &[], 0.5).is_err());
        assert!(clear_mot(&[], &gt, 0.5).is_err());
    }

    #[test]
    fn carry_over_prefers_previous_match() {
        // two hyps overlap gt equally well in frame 2; the previous partner wins
        let gt = vec![row(1, 1, 0.0), row(2, 1, 0.0)];
        let hyp = vec![row(1, 7, 1.0), row(2, 7, 1.0), row(2, 8, -1.0)];
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.ids, r.fp), (0, 1));
    }

    #[test]
    fn cardinality_beats_iou() {
        // one gt box could grab the best hyp, starving its neighbour
        let gt = vec![row(1, 1, 0.0), row(1, 2, 3.0)];
        let hyp = vec![row(1, 5, 1.5), row(1, 6, 4.5)];
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.matches, 2);
    }

    #[test]
    fn aggregate_sums_counts() {
        let gt: Vec<_> = (1..=3).map(|f| row(f, 1, 0.0)).collect();
        let a = evaluate("a", &gt, &gt, 0.5).unwrap();
        let b = evaluate("b", &gt, &[], 0.5).unwrap();
        let t = MetricsReport::aggregate("all", &[a.clone(), b.clone()]);
        assert_eq!(t.total_gt, 6);
        assert_eq!(t.fn_, a.fn_ + b.fn_);
        assert_eq!(t.idtp, 3);
        assert_eq!(t.mota(), 0.5);
    }

    #[test]
    fn csv_format() {
        let gt: Vec<_> = (1..=2).map(|f| row(f, 1, 0.0)).collect();
        let r = evaluate("seq", &gt, &gt, 0.5).unwrap();
        assert_eq!(
            csv(&[r]),
            "sequence,MOTA,MOTP,IDF1,MT,ML,FP,FN,IDS\nseq,1.000000,1.000000,1.000000,100.00,0.00,0,0,0\n"
        );
    }
}

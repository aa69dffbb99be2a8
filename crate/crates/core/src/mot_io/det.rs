use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// One line of a MOT det/gt/result file. The box is 0-based; files are
/// 1-based and the conversion happens at parse/write time.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub confidence: f64,
    /// Fields after the confidence, kept verbatim.
    pub rest: Vec<String>,
}

impl DetectionRow {
    pub fn new(frame: u32, id: i64, bbox: BBox, confidence: f64) -> Self {
        DetectionRow {
            frame,
            id,
            bbox,
            confidence,
            rest: vec!["-1".into(), "-1".into(), "-1".into()],
        }
    }
}

pub fn parse_det_file(path: impl AsRef<Path>) -> Result<Vec<DetectionRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_det_str(&text).map_err(|(line, msg)| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    })
}

/// Parses `frame,id,x,y,w,h,conf,...` lines; blank lines are skipped.
pub fn parse_det_str(text: &str) -> std::result::Result<Vec<DetectionRow>, (usize, String)> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        rows.push(parse_line(line).map_err(|m| (i + 1, m))?);
    }
    Ok(rows)
}

fn parse_line(line: &str) -> std::result::Result<DetectionRow, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 7 {
        return Err(format!("expected at least 7 fields, found {}", fields.len()));
    }
    let num = |k: usize, name: &str| -> std::result::Result<f64, String> {
        fields[k]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("field {name} is not a number: `{}`", fields[k]))
    };
    let frame = num(0, "frame")?;
    if frame < 1.0 || frame.fract() != 0.0 || frame > u32::MAX as f64 {
        return Err(format!("frame must be a positive integer, got `{}`", fields[0]));
    }
    let id = num(1, "id")?;
    if id.fract() != 0.0 {
        return Err(format!("id must be an integer, got `{}`", fields[1]));
    }
    let (x, y, w, h) = (num(2, "x")?, num(3, "y")?, num(4, "w")?, num(5, "h")?);
    if !(w > 0.0 && h > 0.0) {
        return Err(format!("box size must be positive, got {w}×{h}"));
    }
    Ok(DetectionRow {
        frame: frame as u32,
        id: id as i64,
        bbox: BBox { x: x - 1.0, y: y - 1.0, w, h },
        confidence: num(6, "conf")?,
        rest: fields[7..].iter().map(|s| s.to_string()).collect(),
    })
}

/// Two decimals, rounding half away from zero on the shortest decimal
/// representation (so `10.255` prints as `10.26`).
pub fn format_fixed2(v: f64) -> String {
    let s = format!("{}", v.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(2)).collect();
    if frac.len() > 2 && frac.as_bytes()[2] >= b'5' {
        let mut k = digits.len();
        loop {
            if k == 0 {
                digits.insert(0, b'1');
                break;
            }
            k -= 1;
            if digits[k] == b'9' {
                digits[k] = b'0';
            } else {
                digits[k] += 1;
                break;
            }
        }
    }
    let n = digits.len();
    let body = format!(
        "{}.{}",
        std::str::from_utf8(&digits[..n - 2]).unwrap(),
        std::str::from_utf8(&digits[n - 2..]).unwrap()
    );
    if v < 0.0 && body.bytes().any(|b| b != b'0' && b != b'.') {
        format!("-{body}")
    } else {
        body
    }
}

pub fn format_row(r: &DetectionRow) -> String {
    let mut s = String::new();
    write!(
        s,
        "{},{},{},{},{},{},{}",
        r.frame,
        r.id,
        format_fixed2(r.bbox.x + 1.0),
        format_fixed2(r.bbox.y + 1.0),
        format_fixed2(r.bbox.w),
        format_fixed2(r.bbox.h),
        format_fixed2(r.confidence)
    )
    .unwrap();
    for f in &r.rest {
        s.push(',');
        s.push_str(f);
    }
    s
}

/// Serializes rows in the given order.
pub fn format_rows(rows: &[DetectionRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out
}

/// Tracker output file: rows sorted by `(frame, id)`, one per line as
/// `frame,id,x,y,w,h,conf,-1,-1,-1`.
pub fn write_results(rows: &[DetectionRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, results_text(rows)?)?;
    Ok(())
}

pub fn results_text(rows: &[DetectionRow]) -> Result<String> {
    let mut last: HashMap<i64, u32> = HashMap::new();
    for r in rows {
        if r.id < 1 {
            return Err(Error::contract(format!("result id {} at frame {} is not ≥ 1", r.id, r.frame)));
        }
        if let Some(&prev) = last.get(&r.id) {
            if r.frame <= prev {
                return Err(Error::contract(format!(
                    "frames for id {} not ascending: {} after {prev}",
                    r.id, r.frame
                )));
            }
        }
        last.insert(r.id, r.frame);
    }
    let mut sorted: Vec<DetectionRow> = rows
        .iter()
        .map(|r| DetectionRow {
            rest: vec!["-1".into(), "-1".into(), "-1".into()],
            ..r.clone()
        })
        .collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    Ok(format_rows(&sorted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mot_line() {
        let rows = parse_det_str("1,-1,10.5,20,30,40,0.9,-1,-1,-1\n").unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.frame, r.id), (1, -1));
        // 1-based file coordinates become 0-based
        assert_eq!(r.bbox, BBox { x: 9.5, y: 19.0, w: 30.0, h: 40.0 });
        assert_eq!(r.confidence, 0.9);
        assert_eq!(r.rest, vec!["-1", "-1", "-1"]);
    }

    #[test]
    fn empty_and_bad_lines() {
        assert!(parse_det_str("").unwrap().is_empty());
        let err = parse_det_str("1,-1,0,0,5,5,1\n2,-1,0,0,0,5,1\n").unwrap_err();
        assert_eq!(err.0, 2);
        let err = parse_det_str("1,-1,a,0,5,5,1").unwrap_err();
        assert_eq!(err.0, 1);
        assert!(err.1.contains("x"));
        assert!(parse_det_str("0,1,0,0,5,5,1").is_err());
    }

    #[test]
    fn fixed_two_decimals() {
        assert_eq!(format_fixed2(10.255), "10.26");
        assert_eq!(format_fixed2(10.0), "10.00");
        assert_eq!(format_fixed2(0.5), "0.50");
        assert_eq!(format_fixed2(9.995), "10.00");
        assert_eq!(format_fixed2(-1.005), "-1.01");
        assert_eq!(format_fixed2(-0.001), "0.00");
        assert_eq!(format_fixed2(123.4), "123.40");
    }

    #[test]
    fn single_result_line() {
        let r = DetectionRow::new(3, 7, BBox { x: 0.0, y: 1.5, w: 10.0, h: 20.25 }, 1.0);
        assert_eq!(results_text(&[r]).unwrap(), "3,7,1.00,2.50,10.00,20.25,1.00,-1,-1,-1\n");
    }

    #[test]
    fn result_contract() {
        let b = BBox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 };
        assert!(results_text(&[DetectionRow::new(1, 0, b, 1.0)]).is_err());
        let rows = [DetectionRow::new(2, 1, b, 1.0), DetectionRow::new(2, 1, b, 1.0)];
        assert!(results_text(&rows).is_err());
        let rows = [DetectionRow::new(2, 2, b, 1.0), DetectionRow::new(1, 1, b, 1.0)];
        assert!(results_text(&rows).unwrap().starts_with("1,1,"));
    }
}

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub frame_rate: f64,
    pub im_dir: String,
    pub im_ext: String,
}

pub fn parse_seqinfo(path: impl AsRef<Path>) -> Result<SequenceMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_seqinfo_str(&text).map_err(|(line, msg)| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    })
}

/// `key=value` lines under a `[Sequence]` header; unknown keys are ignored.
pub fn parse_seqinfo_str(text: &str) -> std::result::Result<SequenceMeta, (usize, String)> {
    let mut get = std::collections::HashMap::new();
    let mut in_section = false;
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            in_section = line.eq_ignore_ascii_case("[Sequence]");
            saw_header |= in_section;
            continue;
        }
        if !in_section {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected key=value, got `{line}`")))?;
        get.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    let last = text.lines().count().max(1);
    if !saw_header {
        return Err((1, "missing [Sequence] section".into()));
    }
    let positive = |key: &str| -> std::result::Result<usize, (usize, String)> {
        let (line, v) = get.get(key).ok_or_else(|| (last, format!("missing required key {key}")))?;
        v.parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| (*line, format!("{key} must be a positive integer, got `{v}`")))
    };
    let width = positive("imWidth")?;
    let height = positive("imHeight")?;
    let length = positive("seqLength")?;
    let (rate_line, rate) = get
        .get("frameRate")
        .ok_or_else(|| (last, "missing required key frameRate".to_string()))?;
    let frame_rate = rate
        .parse::<f64>()
        .ok()
        .filter(|r| *r > 0.0)
        .ok_or_else(|| (*rate_line, format!("frameRate must be positive, got `{rate}`")))?;
    let text_of = |key: &str, default: &str| get.get(key).map_or(default.to_string(), |(_, v)| v.clone());
    Ok(SequenceMeta {
        name: text_of("name", ""),
        width,
        height,
        length,
        frame_rate,
        im_dir: text_of("imDir", "img1"),
        im_ext: text_of("imExt", ".ppm"),
    })
}

pub fn format_seqinfo(m: &SequenceMeta) -> String {
    format!(
        "[Sequence]\nname={}\nimDir={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\nimExt={}\n",
        m.name, m.im_dir, m.frame_rate, m.length, m.width, m.height, m.im_ext
    )
}

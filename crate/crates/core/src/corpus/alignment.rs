//! Forced-alignment readers: plain TSV and Praat TextGrid interval tiers.

use std::path::Path;

use crate::error::{PaseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeInterval {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl PhonemeInterval {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

const SILENCE: &[&str] = &["", "sil", "sp", "spn", "<eps>", "<unk>", "<sil>", "silence", "pau"];

pub fn is_silence(label: &str) -> bool {
    let l = label.trim().to_ascii_lowercase();
    SILENCE.contains(&l.as_str())
}

/// Overlaps smaller than this are treated as rounding noise.
const OVERLAP_TOLERANCE_S: f64 = 1e-9;

pub fn parse_alignment(path: &Path) -> Result<Vec<PhonemeInterval>> {
    let text = std::fs::read_to_string(path)?;
    parse_alignment_str(&text)
}

/// Parses either format, drops silence, sorts by start and rejects overlaps.
pub fn parse_alignment_str(text: &str) -> Result<Vec<PhonemeInterval>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let raw = if looks_like_textgrid(text) {
        parse_textgrid(text)?
    } else {
        parse_tsv(text)?
    };
    let mut intervals: Vec<PhonemeInterval> = raw.into_iter().filter(|iv| !is_silence(&iv.label)).collect();
    intervals.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for pair in intervals.windows(2) {
        if pair[1].start_s < pair[0].end_s - OVERLAP_TOLERANCE_S {
            return Err(PaseError::NonMonotonicAlignment);
        }
    }
    Ok(intervals)
}

fn looks_like_textgrid(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.contains("ooTextFile"))
}

fn parse_time(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| PaseError::MalformedLine {
        line,
        reason: format!("invalid time {:?}", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(PaseError::MalformedLine {
            line,
            reason: "non-finite time".into(),
        });
    }
    Ok(v)
}

fn checked_interval(label: String, start_s: f64, end_s: f64, line: usize) -> Result<PhonemeInterval> {
    if start_s < 0.0 || start_s >= end_s {
        return Err(PaseError::MalformedLine {
            line,
            reason: format!("need 0 <= start < end, got {start_s}..{end_s}"),
        });
    }
    Ok(PhonemeInterval { label, start_s, end_s })
}

fn parse_tsv(text: &str) -> Result<Vec<PhonemeInterval>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(PaseError::MalformedLine {
                line: n,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let start = parse_time(fields[1], n)?;
        let end = parse_time(fields[2], n)?;
        out.push(checked_interval(fields[0].trim().to_string(), start, end, n)?);
    }
    Ok(out)
}

#[derive(Default)]
struct Tier {
    name: String,
    is_interval: bool,
    intervals: Vec<PhonemeInterval>,
}

fn key_value(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn unquote(v: &str, line: usize) -> Result<String> {
    let v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        Ok(v[1..v.len() - 1].replace("\"\"", "\""))
    } else {
        Err(PaseError::MalformedLine {
            line,
            reason: "expected a quoted string".into(),
        })
    }
}

/// Long ("ooTextFile") TextGrid. Uses the tier named `phones` when present,
/// otherwise the first interval tier.
fn parse_textgrid(text: &str) -> Result<Vec<PhonemeInterval>> {
    let mut tiers: Vec<Tier> = Vec::new();
    // (xmin, xmax, text, first line) of the interval being read
    let mut pending: Option<(Option<f64>, Option<f64>, Option<String>, usize)> = None;

    let flush = |pending: &mut Option<(Option<f64>, Option<f64>, Option<String>, usize)>,
                     tiers: &mut Vec<Tier>|
     -> Result<()> {
        if let Some((xmin, xmax, label, line)) = pending.take() {
            let (Some(xmin), Some(xmax), Some(label)) = (xmin, xmax, label) else {
                return Err(PaseError::MalformedLine {
                    line,
                    reason: "interval lacks xmin, xmax or text".into(),
                });
            };
            let tier = tiers.last_mut().ok_or(PaseError::MalformedLine {
                line,
                reason: "interval outside any tier".into(),
            })?;
            if xmax > xmin {
                tier.intervals.push(checked_interval(label.trim().to_string(), xmin, xmax, line)?);
            }
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.starts_with("item [") {
            flush(&mut pending, &mut tiers)?;
            if line != "item []:" {
                tiers.push(Tier::default());
            }
            continue;
        }
        if line.starts_with("intervals [") && line.ends_with(':') {
            flush(&mut pending, &mut tiers)?;
            pending = Some((None, None, None, n));
            continue;
        }
        if line.starts_with("points [") {
            flush(&mut pending, &mut tiers)?;
            continue;
        }
        let Some((key, value)) = key_value(line) else {
            continue;
        };
        match (&mut pending, key) {
            (Some(p), "xmin") => p.0 = Some(parse_time(value, n)?),
            (Some(p), "xmax") => p.1 = Some(parse_time(value, n)?),
            (Some(p), "text") => p.2 = Some(unquote(value, n)?),
            (None, "class") => {
                if let Some(t) = tiers.last_mut() {
                    t.is_interval = unquote(value, n)? == "IntervalTier";
                }
            }
            (None, "name") => {
                if let Some(t) = tiers.last_mut() {
                    t.name = unquote(value, n)?;
                }
            }
            _ => {}
        }
    }
    flush(&mut pending, &mut tiers)?;

    let all: Vec<Tier> = tiers.into_iter().filter(|t| t.is_interval).collect();
    let chosen = all
        .iter()
        .position(|t| t.name.eq_ignore_ascii_case("phones"))
        .unwrap_or(0);
    Ok(all.into_iter().nth(chosen).map(|t| t.intervals).unwrap_or_default())
}

/// TSV form: `LABEL<TAB>start<TAB>end`, times printed in shortest round-trip form.
pub fn alignment_to_tsv(intervals: &[PhonemeInterval]) -> String {
    let mut s = String::new();
    for iv in intervals {
        s.push_str(&format!("{}\t{}\t{}\n", iv.label, iv.start_s, iv.end_s));
    }
    s
}

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::MultiChannelSeries;
use crate::error::{Error, Result};
use crate::evaluation::Event;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Writes `# sample_rate_hz=<rate> channels=<a;b;...>` followed by one
/// comma-separated row per sample instant.
pub fn save_csv(series: &MultiChannelSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path.as_ref())?);
    writeln!(w, "# sample_rate_hz={} channels={}", series.sample_rate_hz(), series.channel_ids().join(";"))?;
    let mut line = String::new();
    for i in 0..series.len() {
        line.clear();
        for c in 0..series.channels() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&series.channel(c)[i].to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<MultiChannelSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.strip_prefix('#').ok_or_else(|| parse_err(path, 1, "header must start with '#'"))?;

    let mut rate = None;
    let mut ids: Option<Vec<String>> = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("sample_rate_hz", v)) => {
                rate = Some(v.parse::<f64>().map_err(|_| parse_err(path, 1, format!("bad sample rate {v:?}")))?)
            }
            Some(("channels", v)) => ids = Some(v.split(';').map(str::to_string).collect()),
            _ => return Err(parse_err(path, 1, format!("unknown header field {field:?}"))),
        }
    }
    let rate = rate.ok_or_else(|| parse_err(path, 1, "missing sample_rate_hz"))?;
    let ids = ids.ok_or_else(|| parse_err(path, 1, "missing channels"))?;

    let mut samples = vec![Vec::new(); ids.len()];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut n = 0;
        for (c, cell) in line.split(',').enumerate() {
            if c >= ids.len() {
                return Err(parse_err(path, lineno, format!("more than {} columns", ids.len())));
            }
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("non-numeric cell {cell:?}")))?;
            samples[c].push(v);
            n += 1;
        }
        if n != ids.len() {
            return Err(parse_err(path, lineno, format!("expected {} columns, found {n}", ids.len())));
        }
    }
    MultiChannelSeries::new(samples, rate, ids, None)
}

/// One `<start_s>,<end_s>` pair per line.
pub fn save_events(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path.as_ref())?);
    for e in events {
        writeln!(w, "{},{}", e.start_s, e.end_s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| parse_err(path, i + 1, "expected <start_s>,<end_s>"))?;
        let start_s = a.trim().parse::<f64>().map_err(|_| parse_err(path, i + 1, format!("bad start {a:?}")))?;
        let end_s = b.trim().parse::<f64>().map_err(|_| parse_err(path, i + 1, format!("bad end {b:?}")))?;
        if !(start_s < end_s) {
            return Err(parse_err(path, i + 1, "event start must precede end"));
        }
        events.push(Event { start_s, end_s });
    }
    Ok(events)
}

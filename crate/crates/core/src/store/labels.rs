//! Labels CSV: `#map,<fine>,<coarse>` comment lines declaring the hierarchy,
//! then a `index,fine,coarse` header and one row per embedding row.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub fine_to_coarse: Vec<usize>,
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

pub fn encode(fine_to_coarse: &[usize], fine: &[usize], coarse: &[usize]) -> String {
    let mut out = String::new();
    for (f, c) in fine_to_coarse.iter().enumerate() {
        let _ = writeln!(out, "#map,{f},{c}");
    }
    out.push_str("index,fine,coarse\n");
    for (i, (f, c)) in fine.iter().zip(coarse).enumerate() {
        let _ = writeln!(out, "{i},{f},{c}");
    }
    out
}

fn parse_field(s: &str, line_no: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line_no}: expected an integer, got {s:?}")))
}

/// Parse the CSV text. Hierarchy consistency is checked here; the row count
/// against the embeddings is checked by the caller.
pub fn decode(text: &str) -> Result<LabelTable> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    let mut header_seen = false;
    let mut fine = Vec::new();
    let mut coarse = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#map,") {
            if header_seen {
                return Err(Error::Format(format!(
                    "line {line_no}: #map lines must precede the header"
                )));
            }
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Format(format!("line {line_no}: malformed #map line")));
            }
            map.push((parse_field(parts[0], line_no)?, parse_field(parts[1], line_no)?));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line.replace(' ', "") != "index,fine,coarse" {
                return Err(Error::Format(format!(
                    "line {line_no}: expected header `index,fine,coarse`, got {line:?}"
                )));
            }
            header_seen = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "line {line_no}: expected 3 columns, got {}",
                parts.len()
            )));
        }
        let index = parse_field(parts[0], line_no)?;
        if index != fine.len() {
            return Err(Error::Format(format!(
                "line {line_no}: index {index} out of order, expected {}",
                fine.len()
            )));
        }
        fine.push(parse_field(parts[1], line_no)?);
        coarse.push(parse_field(parts[2], line_no)?);
    }

    if !header_seen {
        return Err(Error::Format("missing `index,fine,coarse` header".into()));
    }
    if map.is_empty() {
        return Err(Error::Format("no #map lines declaring fine_to_coarse".into()));
    }

    let num_fine = map.len();
    let mut fine_to_coarse = vec![usize::MAX; num_fine];
    for &(f, c) in &map {
        if f >= num_fine {
            return Err(Error::Label(format!(
                "#map fine class {f} outside [0, {num_fine})"
            )));
        }
        if fine_to_coarse[f] != usize::MAX {
            return Err(Error::Label(format!("fine class {f} mapped twice")));
        }
        fine_to_coarse[f] = c;
    }

    Ok(LabelTable {
        fine_to_coarse,
        fine,
        coarse,
    })
}

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{data_err, Error, Result};
use crate::io_config::{Quarter, StandardizationStats};
use crate::tokenizer::{Token, TokenPanel};

const SYNTHETIC_MAGIC: &[u8; 8] = b"MTOKSYN1";

pub fn stats_to_text(stats: &StandardizationStats) -> String {
    let source = stats.source_range.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
    let mut out = format!("standardization vars={} source={source}\n", stats.n_vars());
    for ((name, m), s) in stats.var_names.iter().zip(&stats.means).zip(&stats.stds) {
        writeln!(out, "{name}\t{m}\t{s}").unwrap();
    }
    out
}

pub fn stats_from_text(text: &str) -> Result<StandardizationStats> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| data_err!("empty standardization file"))?;
    let mut fields = header.split_whitespace();
    let (Some("standardization"), Some(vars), Some(source)) = (fields.next(), fields.next(), fields.next()) else {
        return Err(data_err!("bad standardization header {header:?}"));
    };
    let n: usize = vars
        .strip_prefix("vars=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| data_err!("bad standardization header {header:?}"))?;
    let source_range = match source.strip_prefix("source=") {
        Some("-") => None,
        Some(r) => Some(r.parse()?),
        None => return Err(data_err!("bad standardization header {header:?}")),
    };
    let mut stats = StandardizationStats { var_names: vec![], means: vec![], stds: vec![], source_range };
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split('\t').collect();
        let [name, m, s] = parts[..] else {
            return Err(data_err!("bad standardization line {line:?}"));
        };
        let num = |x: &str| x.parse::<f64>().map_err(|_| data_err!("bad number in standardization line {line:?}"));
        stats.var_names.push(name.to_string());
        stats.means.push(num(m)?);
        stats.stds.push(num(s)?);
    }
    if stats.n_vars() != n {
        return Err(data_err!("standardization file lists {} variables, header says {n}", stats.n_vars()));
    }
    Ok(stats)
}

/// Dated token panel as `period,<vars…>` CSV.
pub fn token_panel_csv(panel: &TokenPanel, var_names: &[String]) -> Result<String> {
    let times = panel.times().ok_or_else(|| data_err!("real token panel carries no dates"))?;
    let mut out = format!("period,{}\n", var_names.join(","));
    for (i, q) in times.iter().enumerate() {
        write!(out, "{q}").unwrap();
        for t in panel.row(i) {
            write!(out, ",{t}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_token_panel_csv(text: &str, var_names: &[String]) -> Result<TokenPanel> {
    let mut lines = text.lines();
    let expected = format!("period,{}", var_names.join(","));
    if lines.next().map(str::trim) != Some(expected.as_str()) {
        return Err(data_err!("token file header does not match {expected:?}"));
    }
    let mut times = Vec::new();
    let mut tokens = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut f = line.split(',');
        let q: Quarter = f.next().unwrap_or("").parse()?;
        times.push(q);
        let row: Vec<Token> = f
            .map(|s| s.trim().parse::<Token>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| data_err!("token file row {}: bad token", i + 2))?;
        if row.len() != var_names.len() {
            return Err(data_err!("token file row {}: {} tokens, expected {}", i + 2, row.len(), var_names.len()));
        }
        tokens.extend(row);
    }
    TokenPanel::new(tokens, var_names.len(), Some(times))
}

/// Binary synthetic token corpus: magic, `K` and panel count as u64 LE, then
/// per panel its row count (u64 LE) and `rows × K` u16 LE tokens.
pub fn write_synthetic_tokens(panels: &[TokenPanel], n_vars: usize, path: &Path) -> Result<()> {
    let total: usize = panels.iter().map(|p| p.tokens().len()).sum();
    let mut buf = Vec::with_capacity(24 + 8 * panels.len() + 2 * total);
    buf.extend_from_slice(SYNTHETIC_MAGIC);
    buf.extend_from_slice(&(n_vars as u64).to_le_bytes());
    buf.extend_from_slice(&(panels.len() as u64).to_le_bytes());
    for p in panels {
        buf.extend_from_slice(&(p.n_rows() as u64).to_le_bytes());
        for t in p.tokens() {
            buf.extend_from_slice(&t.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_synthetic_tokens(path: &Path) -> Result<Vec<TokenPanel>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || data_err!("{}: truncated or malformed synthetic token file", path.display());
    if bytes.len() < 24 || &bytes[..8] != SYNTHETIC_MAGIC {
        return Err(bad());
    }
    let u64_at = |pos: usize| -> Result<u64> {
        bytes
            .get(pos..pos + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(bad)
    };
    let k = u64_at(8)? as usize;
    let n = u64_at(16)? as usize;
    let mut pos = 24;
    let mut panels = Vec::with_capacity(n.min(bytes.len() / 8));
    for _ in 0..n {
        let rows = u64_at(pos)? as usize;
        pos += 8;
        let len = rows.checked_mul(k).and_then(|x| x.checked_mul(2)).ok_or_else(bad)?;
        let chunk = bytes.get(pos..pos + len).ok_or_else(bad)?;
        let toks = chunk.chunks_exact(2).map(|c| Token::from_le_bytes([c[0], c[1]])).collect();
        panels.push(TokenPanel::new(toks, k, None)?);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(bad());
    }
    Ok(panels)
}

//! C-style escapes shared by the vocabulary, grammar and corpus formats.

/// Escapes a byte string so it can sit between double quotes.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            b'\r' => out.push_str("\\r"),
            b'\\' => out.push_str("\\\\"),
            b'"' => out.push_str("\\\""),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

/// Parses a double-quoted literal at the start of `s`. Returns the decoded
/// bytes and the number of input bytes consumed, closing quote included.
pub fn parse_quoted(s: &str) -> Result<(Vec<u8>, usize), String> {
    if !s.starts_with('"') {
        return Err("expected '\"'".into());
    }
    match unescape_from(s.as_bytes(), 1, true)? {
        (bytes, Some(end)) => Ok((bytes, end)),
        (_, None) => Err("unterminated string literal".into()),
    }
}

/// Decodes escapes starting at `i`. With `quoted`, stops after the first
/// unescaped `"` and returns the offset just past it.
fn unescape_from(raw: &[u8], mut i: usize, quoted: bool) -> Result<(Vec<u8>, Option<usize>), String> {
    let mut out = Vec::new();
    while i < raw.len() {
        match raw[i] {
            b'"' if quoted => return Ok((out, Some(i + 1))),
            b'\\' => {
                let esc = *raw.get(i + 1).ok_or("unterminated escape")?;
                i += 2;
                match esc {
                    b'n' => out.push(b'\n'),
                    b't' => out.push(b'\t'),
                    b'r' => out.push(b'\r'),
                    b'0' => out.push(0),
                    b'\\' => out.push(b'\\'),
                    b'"' => out.push(b'"'),
                    b'\'' => out.push(b'\''),
                    b'x' => {
                        let hex = raw.get(i..i + 2).ok_or("short \\x escape")?;
                        let hex = std::str::from_utf8(hex).map_err(|_| "bad \\x escape")?;
                        out.push(u8::from_str_radix(hex, 16).map_err(|_| "bad \\x escape")?);
                        i += 2;
                    }
                    other => return Err(format!("unknown escape \\{}", other as char)),
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    Ok((out, None))
}

/// Parses a line that must consist of exactly one quoted literal.
pub fn unescape_quoted(line: &str) -> Result<Vec<u8>, String> {
    let (bytes, used) = parse_quoted(line)?;
    if !line[used..].trim().is_empty() {
        return Err("trailing characters after literal".into());
    }
    Ok(bytes)
}

/// Decodes escapes in unquoted text (corpus lines).
pub fn unescape_plain(text: &str) -> Result<Vec<u8>, String> {
    unescape_from(text.as_bytes(), 0, false).map(|(b, _)| b)
}

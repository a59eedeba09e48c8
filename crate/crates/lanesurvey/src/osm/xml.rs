//! Minimal XML reader for OpenStreetMap extracts.
//!
//! Handles exactly the subset osmium emits: elements with attributes,
//! self-closing tags, comments, declarations and character entities. Every
//! error carries the byte offset where parsing stopped.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct XmlError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for XmlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "xml error at byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for XmlError {}

#[derive(Debug, Clone, PartialEq)]
pub enum XmlEvent {
    Start {
        name: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    },
    End {
        name: String,
    },
    Eof,
}

pub struct XmlReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> XmlReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn err(&self, message: impl Into<String>) -> XmlError {
        XmlError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn skip_until(&mut self, needle: &[u8]) -> Result<(), XmlError> {
        while self.pos + needle.len() <= self.data.len() {
            if &self.data[self.pos..self.pos + needle.len()] == needle {
                self.pos += needle.len();
                return Ok(());
            }
            self.pos += 1;
        }
        Err(self.err(format!(
            "unterminated construct, expected {:?}",
            String::from_utf8_lossy(needle)
        )))
    }

    /// Next start/end tag, skipping text content, comments, declarations and
    /// processing instructions.
    pub fn next_event(&mut self) -> Result<XmlEvent, XmlError> {
        loop {
            // Text between tags is irrelevant in OSM extracts.
            while matches!(self.peek(), Some(b) if b != b'<') {
                self.pos += 1;
            }
            if self.peek().is_none() {
                return Ok(XmlEvent::Eof);
            }
            self.pos += 1; // consume '<'
            match self.peek() {
                None => return Err(self.err("unexpected end of input after '<'")),
                Some(b'?') => {
                    self.skip_until(b"?>")?;
                }
                Some(b'!') => {
                    if self.data[self.pos..].starts_with(b"!--") {
                        self.pos += 3;
                        self.skip_until(b"-->")?;
                    } else {
                        // DOCTYPE or CDATA; neither occurs in extracts but
                        // skipping keeps the parser total.
                        self.skip_until(b">")?;
                    }
                }
                Some(b'/') => {
                    self.pos += 1;
                    let name = self.read_name()?;
                    self.skip_whitespace();
                    if self.bump() != Some(b'>') {
                        return Err(self.err("expected '>' after end tag name"));
                    }
                    return Ok(XmlEvent::End { name });
                }
                Some(_) => {
                    let name = self.read_name()?;
                    let mut attrs = Vec::new();
                    loop {
                        self.skip_whitespace();
                        match self.peek() {
                            None => return Err(self.err("unexpected end of input in tag")),
                            Some(b'>') => {
                                self.pos += 1;
                                return Ok(XmlEvent::Start {
                                    name,
                                    attrs,
                                    self_closing: false,
                                });
                            }
                            Some(b'/') => {
                                self.pos += 1;
                                if self.bump() != Some(b'>') {
                                    return Err(self.err("expected '>' after '/'"));
                                }
                                return Ok(XmlEvent::Start {
                                    name,
                                    attrs,
                                    self_closing: true,
                                });
                            }
                            Some(_) => {
                                let key = self.read_name()?;
                                self.skip_whitespace();
                                if self.bump() != Some(b'=') {
                                    return Err(self.err(format!(
                                        "expected '=' after attribute name {key:?}"
                                    )));
                                }
                                self.skip_whitespace();
                                let value = self.read_quoted()?;
                                attrs.push((key, value));
                            }
                        }
                    }
                }
            }
        }
    }

    /// Skips everything up to and including the matching end tag of an
    /// already-consumed start tag.
    pub fn skip_subtree(&mut self, name: &str) -> Result<(), XmlError> {
        let mut depth = 1usize;
        loop {
            match self.next_event()? {
                XmlEvent::Start {
                    name: n,
                    self_closing,
                    ..
                } => {
                    if !self_closing && n == name {
                        depth += 1;
                    }
                }
                XmlEvent::End { name: n } if n == name => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(());
                    }
                }
                XmlEvent::End { .. } => {}
                XmlEvent::Eof => {
                    return Err(self.err(format!("unexpected end of input inside <{name}>")))
                }
            }
        }
    }

    fn skip_whitespace(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn read_name(&mut self) -> Result<String, XmlError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if !b.is_ascii_whitespace() && !matches!(b, b'=' | b'>' | b'/' | b'<'))
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a name"));
        }
        String::from_utf8(self.data[start..self.pos].to_vec())
            .map_err(|_| self.err("name is not valid utf-8"))
    }

    fn read_quoted(&mut self) -> Result<String, XmlError> {
        let quote = match self.bump() {
            Some(q @ (b'"' | b'\'')) => q,
            _ => return Err(self.err("expected a quoted attribute value")),
        };
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b == quote {
                let raw = &self.data[start..self.pos];
                self.pos += 1;
                return decode_entities(raw).map_err(|m| XmlError {
                    offset: start,
                    message: m,
                });
            }
            self.pos += 1;
        }
        Err(self.err("unterminated attribute value"))
    }
}

fn decode_entities(raw: &[u8]) -> Result<String, String> {
    let text = std::str::from_utf8(raw).map_err(|_| "attribute is not valid utf-8".to_string())?;
    if !text.contains('&') {
        return Ok(text.to_string());
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(idx) = rest.find('&') {
        out.push_str(&rest[..idx]);
        rest = &rest[idx..];
        let end = rest
            .find(';')
            .ok_or_else(|| "unterminated character entity".to_string())?;
        let entity = &rest[1..end];
        match entity {
            "amp" => out.push('&'),
            "lt" => out.push('<'),
            "gt" => out.push('>'),
            "quot" => out.push('"'),
            "apos" => out.push('\''),
            _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                let code = u32::from_str_radix(&entity[2..], 16)
                    .map_err(|_| format!("bad hex entity &{entity};"))?;
                out.push(char::from_u32(code).ok_or_else(|| format!("bad codepoint &{entity};"))?);
            }
            _ if entity.starts_with('#') => {
                let code = entity[1..]
                    .parse::<u32>()
                    .map_err(|_| format!("bad decimal entity &{entity};"))?;
                out.push(char::from_u32(code).ok_or_else(|| format!("bad codepoint &{entity};"))?);
            }
            _ => return Err(format!("unknown entity &{entity};")),
        }
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn escape_attr(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

use super::{Action, ActionType, BBox, Direction, Payload, Point, RewardFamily};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown action name `{0}`")]
    UnknownActionName(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("coordinate out of range: {0}")]
    OutOfRangeCoordinate(String),
}

/// Parses one action in the canonical DSL. Whitespace between tokens is ignored.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let mut p = Cursor::new(text);
    p.skip_ws();
    let name = p.ident();
    if name.is_empty() {
        return Err(ParseError::MalformedPayload(format!("expected action name in `{text}`")));
    }
    let kind = ActionType::from_name(name).ok_or_else(|| ParseError::UnknownActionName(name.to_string()))?;
    p.expect('(')?;
    p.skip_ws();
    let payload = if kind.family() == RewardFamily::Fixed {
        Payload::None
    } else {
        let arg = p.ident();
        let expected: &[&str] = match kind.family() {
            RewardFamily::Point => &["point"],
            RewardFamily::Box => &["box"],
            RewardFamily::Text => &["text"],
            RewardFamily::Keys => &["keys", "key"],
            RewardFamily::Direction => &["direction"],
            RewardFamily::Fixed => unreachable!(),
        };
        if !expected.contains(&arg) {
            return Err(ParseError::MalformedPayload(format!(
                "`{kind}` takes `{}=`, found `{arg}`",
                expected[0]
            )));
        }
        p.expect('=')?;
        p.skip_ws();
        match kind.family() {
            RewardFamily::Point => {
                let v = p.int_tuple()?;
                if v.len() != 2 {
                    return Err(ParseError::MalformedPayload(format!("point needs 2 coordinates, got {}", v.len())));
                }
                Payload::Point(Point { x: v[0], y: v[1] })
            }
            RewardFamily::Box => {
                let v = p.int_tuple()?;
                if v.len() != 4 {
                    return Err(ParseError::MalformedPayload(format!("box needs 4 coordinates, got {}", v.len())));
                }
                Payload::Box(BBox::new(v[0], v[1], v[2], v[3])?)
            }
            RewardFamily::Text => Payload::Text(p.quoted()?),
            RewardFamily::Keys => Payload::Keys(p.quoted()?),
            RewardFamily::Direction => {
                let word = match p.peek() {
                    Some('\'' | '"') => p.quoted()?,
                    _ => p.ident().to_string(),
                };
                let d = Direction::from_name(&word)
                    .ok_or_else(|| ParseError::MalformedPayload(format!("unknown direction `{word}`")))?;
                Payload::Direction(d)
            }
            RewardFamily::Fixed => unreachable!(),
        }
    };
    p.skip_ws();
    p.expect(')')?;
    p.skip_ws();
    if !p.at_end() {
        return Err(ParseError::MalformedPayload(format!("trailing input after action in `{text}`")));
    }
    Action::new(kind, payload)
}

/// Lowercases and strips spaces around `+`; rejects empty parts.
pub(crate) fn canonical_keys(raw: &str) -> Result<String, ParseError> {
    let parts: Vec<String> = raw.split('+').map(|k| k.trim().to_lowercase()).collect();
    if parts.iter().any(|k| k.is_empty()) {
        return Err(ParseError::MalformedPayload(format!("bad key combination `{raw}`")));
    }
    Ok(parts.join("+"))
}

pub fn serialize_action(a: &Action) -> String {
    let name = a.kind().name();
    match a.payload() {
        Payload::None => format!("{name}()"),
        Payload::Point(p) => format!("{name}(point=({},{}))", p.x, p.y),
        Payload::Box(b) => format!("{name}(box=({},{},{},{}))", b.x1, b.y1, b.x2, b.y2),
        Payload::Text(t) => format!("{name}(text='{}')", escape(t)),
        Payload::Keys(k) => format!("{name}(keys='{}')", escape(k)),
        Payload::Direction(d) => format!("{name}(direction={})", d.name()),
    }
}

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(ParseError::MalformedPayload(format!(
                "expected `{want}` at byte {}, found `{c}`",
                self.pos - c.len_utf8()
            ))),
            None => Err(ParseError::MalformedPayload(format!("expected `{want}`, found end of input"))),
        }
    }

    fn int_tuple(&mut self) -> Result<Vec<u32>, ParseError> {
        self.expect('(')?;
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            out.push(self.int()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => return Ok(out),
                other => {
                    return Err(ParseError::MalformedPayload(format!(
                        "expected `,` or `)` in coordinate tuple, found {other:?}"
                    )))
                }
            }
        }
    }

    fn int(&mut self) -> Result<u32, ParseError> {
        let negative = self.peek() == Some('-');
        if negative {
            self.bump();
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        let digits = &self.src[start..self.pos];
        if digits.is_empty() {
            return Err(ParseError::MalformedPayload(format!("expected integer at byte {start}")));
        }
        if negative {
            return Err(ParseError::OutOfRangeCoordinate(format!("-{digits}")));
        }
        digits
            .parse::<u32>()
            .map_err(|_| ParseError::OutOfRangeCoordinate(digits.to_string()))
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        let quote = match self.bump() {
            Some(q @ ('\'' | '"')) => q,
            other => return Err(ParseError::MalformedPayload(format!("expected quoted string, found {other:?}"))),
        };
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::MalformedPayload("unterminated string".into())),
                Some('\\') => match self.bump() {
                    Some(c) => out.push(c),
                    None => return Err(ParseError::MalformedPayload("dangling escape".into())),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }
}

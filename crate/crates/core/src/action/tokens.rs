use super::dsl::escape;
use super::{serialize_action, Action, ActionType, Direction, Payload};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::OnceLock;

/// Key names that tokenize as a single symbol inside `keys='...'` payloads.
pub const KEY_NAMES: &[&str] = &[
    "ctrl", "shift", "alt", "meta", "cmd", "win", "enter", "return", "tab", "esc", "escape", "space",
    "backspace", "delete", "home", "end", "pageup", "pagedown", "insert", "capslock", "f1", "f2", "f3",
    "f4", "f5", "f6", "f7", "f8", "f9", "f10", "f11", "f12",
];

const ARG_NAMES: [&str; 5] = ["point", "box", "text", "keys", "direction"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u16);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The fixed DSL alphabet: action names, argument names, direction words,
/// key names, then one token per byte value.
#[derive(Debug)]
pub struct Vocabulary {
    symbols: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, TokenId>,
    byte_base: u16,
}

impl Vocabulary {
    pub fn get() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(Vocabulary::build)
    }

    fn build() -> Vocabulary {
        let mut symbols: Vec<Vec<u8>> = Vec::new();
        let mut lookup = HashMap::new();
        let words = ActionType::ALL
            .iter()
            .map(|k| k.name())
            .chain(ARG_NAMES)
            .chain(Direction::ALL.iter().map(|d| d.name()))
            .chain(KEY_NAMES.iter().copied());
        for w in words {
            let bytes = w.as_bytes().to_vec();
            if !lookup.contains_key(&bytes) {
                lookup.insert(bytes.clone(), TokenId(symbols.len() as u16));
                symbols.push(bytes);
            }
        }
        let byte_base = symbols.len() as u16;
        for b in 0..=255u8 {
            symbols.push(vec![b]);
        }
        Vocabulary {
            symbols,
            lookup,
            byte_base,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn bytes_of(&self, t: TokenId) -> &[u8] {
        &self.symbols[t.index()]
    }

    /// Human-readable form of a token (bytes outside printable ASCII as `<0xNN>`).
    pub fn display(&self, t: TokenId) -> String {
        let bytes = self.bytes_of(t);
        match bytes {
            [b] if !(0x20..0x7f).contains(b) => format!("<0x{b:02X}>"),
            _ => String::from_utf8_lossy(bytes).into_owned(),
        }
    }

    pub fn byte(&self, b: u8) -> TokenId {
        TokenId(self.byte_base + u16::from(b))
    }

    /// Word token (action name, argument, direction or key name).
    pub fn word(&self, w: &str) -> Option<TokenId> {
        if w.len() <= 1 {
            return None;
        }
        self.lookup.get(w.as_bytes()).copied()
    }

    pub fn action(&self, kind: ActionType) -> TokenId {
        self.lookup[kind.name().as_bytes()]
    }

    pub fn action_of(&self, t: TokenId) -> Option<ActionType> {
        ActionType::ALL.iter().copied().find(|k| self.action(*k) == t)
    }

    pub fn direction(&self, d: Direction) -> TokenId {
        self.lookup[d.name().as_bytes()]
    }

    pub fn is_byte(&self, t: TokenId) -> bool {
        t.0 >= self.byte_base
    }
}

struct Emitter<'v> {
    vocab: &'v Vocabulary,
    out: Vec<TokenId>,
}

impl Emitter<'_> {
    fn word(&mut self, w: &str) {
        let id = self.vocab.word(w).expect("word token in vocabulary");
        self.out.push(id);
    }

    fn bytes(&mut self, s: &str) {
        for b in s.bytes() {
            self.out.push(self.vocab.byte(b));
        }
    }
}

/// Tokenizes the canonical serialization of `a`.
///
/// Structure follows the DSL: action name and argument names are single
/// tokens, punctuation and digits are byte tokens, text payloads are bytes,
/// and known key names inside `keys` payloads are single tokens.
pub fn tokenize_action(a: &Action) -> TokenSequence {
    let vocab = Vocabulary::get();
    let mut e = Emitter { vocab, out: Vec::new() };
    e.out.push(vocab.action(a.kind()));
    e.bytes("(");
    match a.payload() {
        Payload::None => {}
        Payload::Point(p) => {
            e.word("point");
            e.bytes(&format!("=({},{})", p.x, p.y));
        }
        Payload::Box(b) => {
            e.word("box");
            e.bytes(&format!("=({},{},{},{})", b.x1, b.y1, b.x2, b.y2));
        }
        Payload::Text(t) => {
            e.word("text");
            e.bytes("='");
            e.bytes(&escape(t));
            e.bytes("'");
        }
        Payload::Keys(k) => {
            e.word("keys");
            e.bytes("='");
            for (i, part) in k.split('+').enumerate() {
                if i > 0 {
                    e.bytes("+");
                }
                match vocab.word(part) {
                    Some(id) => e.out.push(id),
                    None => e.bytes(&escape(part)),
                }
            }
            e.bytes("'");
        }
        Payload::Direction(d) => {
            e.word("direction");
            e.bytes("=");
            e.out.push(vocab.direction(*d));
        }
    }
    e.bytes(")");
    debug_assert_eq!(detokenize(&TokenSequence { tokens: e.out.clone() }).as_deref(), Ok(serialize_action(a).as_str()));
    TokenSequence { tokens: e.out }
}

/// Concatenates token symbols back into DSL text.
pub fn detokenize(seq: &TokenSequence) -> Result<String, std::string::FromUtf8Error> {
    let vocab = Vocabulary::get();
    let mut bytes = Vec::with_capacity(seq.len() * 2);
    for t in &seq.tokens {
        bytes.extend_from_slice(vocab.bytes_of(*t));
    }
    String::from_utf8(bytes)
}

//! Token-level automaton accepting the canonical action DSL.
//!
//! Used to mask the policy's softmax so sampled sequences are well-formed
//! actions: fixed punctuation is forced, coordinates are decimal without
//! leading zeros and bounded by the screen, text is drawn from a small
//! alphabet, key combinations have at most three parts.

use crate::action::{ActionType, Direction, RewardFamily, TokenId, Vocabulary, KEY_NAMES};
use crate::reward::ScreenGeometry;

pub const TEXT_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789 ";
const KEY_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const MAX_KEY_PARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Seg {
    Lit(TokenId),
    Num(u32),
    Text,
    Keys,
    Dir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarLimits {
    pub geometry: ScreenGeometry,
    pub max_text_len: usize,
}

#[derive(Debug, Clone)]
enum State {
    Start,
    Body { segs: Vec<Seg>, at: usize, value: u32, len: usize, parts: usize, need_part: bool },
    Done,
    Invalid,
}

/// Incremental recognizer. After an unexpected token it turns permissive so
/// log-probabilities of arbitrary sequences stay defined.
#[derive(Debug, Clone)]
pub struct Decoder<'k> {
    kinds: &'k [ActionType],
    limits: GrammarLimits,
    state: State,
}

fn template(kind: ActionType, g: ScreenGeometry) -> Vec<Seg> {
    let v = Vocabulary::get();
    let b = |c: u8| Seg::Lit(v.byte(c));
    let w = |s: &str| Seg::Lit(v.word(s).expect("argument token"));
    let (mx, my) = (g.width - 1, g.height - 1);
    let mut segs = vec![b(b'(')];
    match kind.family() {
        RewardFamily::Fixed => {}
        RewardFamily::Point => segs.extend([w("point"), b(b'='), b(b'('), Seg::Num(mx), b(b','), Seg::Num(my), b(b')')]),
        RewardFamily::Box => segs.extend([
            w("box"),
            b(b'='),
            b(b'('),
            Seg::Num(mx),
            b(b','),
            Seg::Num(my),
            b(b','),
            Seg::Num(mx),
            b(b','),
            Seg::Num(my),
            b(b')'),
        ]),
        RewardFamily::Text => segs.extend([w("text"), b(b'='), b(b'\''), Seg::Text, b(b'\'')]),
        RewardFamily::Keys => segs.extend([w("keys"), b(b'='), b(b'\''), Seg::Keys, b(b'\'')]),
        RewardFamily::Direction => segs.extend([w("direction"), b(b'='), Seg::Dir]),
    }
    segs.push(b(b')'));
    segs
}

impl<'k> Decoder<'k> {
    pub fn new(kinds: &'k [ActionType], limits: GrammarLimits) -> Self {
        Decoder {
            kinds,
            limits,
            state: State::Start,
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.state, State::Done)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self.state, State::Invalid)
    }

    /// Tokens permitted next, in a fixed order. Empty once complete.
    pub fn allowed(&self) -> Vec<TokenId> {
        let v = Vocabulary::get();
        match &self.state {
            State::Start => self.kinds.iter().map(|k| v.action(*k)).collect(),
            State::Done => Vec::new(),
            State::Invalid => (0..v.len() as u16).map(TokenId).collect(),
            State::Body { segs, at, value, len, parts, need_part } => {
                let next_lit = || match segs.get(at + 1) {
                    Some(Seg::Lit(t)) => *t,
                    _ => unreachable!("variable segments are followed by a literal"),
                };
                match segs[*at] {
                    Seg::Lit(t) => vec![t],
                    Seg::Num(max) => {
                        let mut out = Vec::new();
                        if *len == 0 || *value != 0 {
                            for d in 0..=9u32 {
                                if u64::from(*value) * 10 + u64::from(d) <= u64::from(max) {
                                    out.push(v.byte(b'0' + d as u8));
                                }
                            }
                        }
                        if *len > 0 {
                            out.push(next_lit());
                        }
                        out
                    }
                    Seg::Text => {
                        let mut out = Vec::new();
                        if *len < self.limits.max_text_len {
                            out.extend(TEXT_ALPHABET.iter().map(|c| v.byte(*c)));
                        }
                        if *len > 0 {
                            out.push(next_lit());
                        }
                        out
                    }
                    Seg::Keys => {
                        if *need_part {
                            let mut out: Vec<TokenId> = KEY_NAMES.iter().filter_map(|k| v.word(k)).collect();
                            out.extend(KEY_CHARS.iter().map(|c| v.byte(*c)));
                            out
                        } else {
                            let mut out = Vec::new();
                            if *parts < MAX_KEY_PARTS {
                                out.push(v.byte(b'+'));
                            }
                            out.push(next_lit());
                            out
                        }
                    }
                    Seg::Dir => Direction::ALL.iter().map(|d| v.direction(*d)).collect(),
                }
            }
        }
    }

    pub fn push(&mut self, t: TokenId) {
        if matches!(self.state, State::Invalid) {
            return;
        }
        if !self.allowed().contains(&t) {
            self.state = State::Invalid;
            return;
        }
        let v = Vocabulary::get();
        let geometry = self.limits.geometry;
        match &mut self.state {
            State::Start => {
                let kind = v.action_of(t).expect("action token");
                self.state = State::Body {
                    segs: template(kind, geometry),
                    at: 0,
                    value: 0,
                    len: 0,
                    parts: 0,
                    need_part: true,
                };
            }
            State::Body { segs, at, value, len, parts, need_part } => {
                let seg = segs[*at];
                let advance_past_lit = |at: &mut usize| *at += 2;
                match seg {
                    Seg::Lit(_) | Seg::Dir => *at += 1,
                    Seg::Num(_) | Seg::Text => {
                        if matches!(segs.get(*at + 1), Some(Seg::Lit(l)) if *l == t) && *len > 0 {
                            advance_past_lit(at);
                            *value = 0;
                            *len = 0;
                        } else {
                            let c = v.bytes_of(t)[0];
                            if seg != Seg::Text {
                                *value = *value * 10 + u32::from(c - b'0');
                            }
                            *len += 1;
                        }
                    }
                    Seg::Keys => {
                        if *need_part {
                            *parts += 1;
                            *need_part = false;
                        } else if t == v.byte(b'+') {
                            *need_part = true;
                        } else {
                            advance_past_lit(at);
                        }
                    }
                }
                if *at >= segs.len() {
                    self.state = State::Done;
                }
            }
            State::Done | State::Invalid => unreachable!("no token is allowed here"),
        }
    }
}

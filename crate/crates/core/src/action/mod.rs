//! GUI action vocabulary.
//!
//! Actions travel as a small canonical DSL, `name(arg=value)`, e.g.
//! `click(point=(120,340))`, `drag(box=(0,0,10,10))`, `type(text='hello')`,
//! `hotkey(keys='ctrl+c')`, `scroll(direction=down)` or `wait()`. The same
//! text is the wire format in trajectory files and for remote backends.

mod dsl;
mod tokens;

pub use dsl::{parse_action, serialize_action, ParseError};
pub use tokens::{detokenize, tokenize_action, TokenId, TokenSequence, Vocabulary, KEY_NAMES};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Which distance reward applies to an action kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardFamily {
    Point,
    Box,
    Text,
    Keys,
    Direction,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Click,
    LeftSingle,
    RightSingle,
    Hover,
    LeftDouble,
    DoubleClick,
    Drag,
    Select,
    #[serde(rename = "type")]
    TypeText,
    Hotkey,
    Press,
    Scroll,
    MoveMouse,
    Highlight,
    Copy,
    Paste,
    Wait,
    Finished,
}

impl ActionType {
    pub const ALL: [ActionType; 18] = [
        ActionType::Click,
        ActionType::LeftSingle,
        ActionType::RightSingle,
        ActionType::Hover,
        ActionType::LeftDouble,
        ActionType::DoubleClick,
        ActionType::Drag,
        ActionType::Select,
        ActionType::TypeText,
        ActionType::Hotkey,
        ActionType::Press,
        ActionType::Scroll,
        ActionType::MoveMouse,
        ActionType::Highlight,
        ActionType::Copy,
        ActionType::Paste,
        ActionType::Wait,
        ActionType::Finished,
    ];

    /// Canonical DSL name.
    pub fn name(self) -> &'static str {
        match self {
            ActionType::Click => "click",
            ActionType::LeftSingle => "left_single",
            ActionType::RightSingle => "right_single",
            ActionType::Hover => "hover",
            ActionType::LeftDouble => "left_double",
            ActionType::DoubleClick => "double_click",
            ActionType::Drag => "drag",
            ActionType::Select => "select",
            ActionType::TypeText => "type",
            ActionType::Hotkey => "hotkey",
            ActionType::Press => "press",
            ActionType::Scroll => "scroll",
            ActionType::MoveMouse => "move_mouse",
            ActionType::Highlight => "highlight",
            ActionType::Copy => "copy",
            ActionType::Paste => "paste",
            ActionType::Wait => "wait",
            ActionType::Finished => "finished",
        }
    }

    /// Accepts the canonical names plus the `finish_task` and `type_text` aliases.
    pub fn from_name(name: &str) -> Option<ActionType> {
        match name {
            "finish_task" => Some(ActionType::Finished),
            "type_text" => Some(ActionType::TypeText),
            _ => ActionType::ALL.iter().copied().find(|k| k.name() == name),
        }
    }

    pub fn family(self) -> RewardFamily {
        use ActionType::*;
        match self {
            Click | LeftSingle | RightSingle | Hover | LeftDouble | DoubleClick | MoveMouse => {
                RewardFamily::Point
            }
            Drag | Select | Highlight => RewardFamily::Box,
            TypeText | Copy | Paste => RewardFamily::Text,
            Hotkey | Press => RewardFamily::Keys,
            Scroll => RewardFamily::Direction,
            Wait | Finished => RewardFamily::Fixed,
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

/// Axis-aligned box with inclusive corners, `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<BBox, ParseError> {
        if x1 > x2 || y1 > y2 {
            return Err(ParseError::MalformedPayload(format!(
                "box corners out of order: ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Closed-interval hit test.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn center(&self) -> Point {
        Point {
            x: (self.x1 + self.x2) / 2,
            y: (self.y1 + self.y2) / 2,
        }
    }

    pub fn area(&self) -> f64 {
        f64::from(self.x2 - self.x1) * f64::from(self.y2 - self.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Direction> {
        Direction::ALL.iter().copied().find(|d| d.name() == s)
    }
}

/// Payload of an action. The variant is fixed by the action kind's reward family.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Point(Point),
    Box(BBox),
    Text(String),
    Keys(String),
    Direction(Direction),
    None,
}

/// One parsed GUI action. Construct through [`Action::new`] or the helpers so
/// the payload always matches the kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    kind: ActionType,
    payload: Payload,
}

impl Action {
    pub fn new(kind: ActionType, payload: Payload) -> Result<Action, ParseError> {
        let ok = matches!(
            (kind.family(), &payload),
            (RewardFamily::Point, Payload::Point(_))
                | (RewardFamily::Box, Payload::Box(_))
                | (RewardFamily::Text, Payload::Text(_))
                | (RewardFamily::Keys, Payload::Keys(_))
                | (RewardFamily::Direction, Payload::Direction(_))
                | (RewardFamily::Fixed, Payload::None)
        );
        if !ok {
            return Err(ParseError::MalformedPayload(format!(
                "payload {payload:?} does not fit action `{kind}`"
            )));
        }
        let payload = match payload {
            Payload::Keys(keys) => Payload::Keys(dsl::canonical_keys(&keys)?),
            other => other,
        };
        Ok(Action { kind, payload })
    }

    pub fn point(kind: ActionType, x: u32, y: u32) -> Result<Action, ParseError> {
        Action::new(kind, Payload::Point(Point { x, y }))
    }

    pub fn bbox(kind: ActionType, x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Action, ParseError> {
        Action::new(kind, Payload::Box(BBox::new(x1, y1, x2, y2)?))
    }

    pub fn text(kind: ActionType, text: impl Into<String>) -> Result<Action, ParseError> {
        Action::new(kind, Payload::Text(text.into()))
    }

    pub fn keys(kind: ActionType, keys: impl Into<String>) -> Result<Action, ParseError> {
        Action::new(kind, Payload::Keys(keys.into()))
    }

    pub fn scroll(direction: Direction) -> Action {
        Action {
            kind: ActionType::Scroll,
            payload: Payload::Direction(direction),
        }
    }

    pub fn wait() -> Action {
        Action {
            kind: ActionType::Wait,
            payload: Payload::None,
        }
    }

    pub fn finished() -> Action {
        Action {
            kind: ActionType::Finished,
            payload: Payload::None,
        }
    }

    pub fn kind(&self) -> ActionType {
        self.kind
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Canonical string of the payload used by the text-family rewards:
    /// the text itself, the key combination, or the direction word.
    pub fn payload_text(&self) -> Option<String> {
        match &self.payload {
            Payload::Text(t) | Payload::Keys(t) => Some(t.clone()),
            Payload::Direction(d) => Some(d.name().to_string()),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

impl std::str::FromStr for Action {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize_action(self))
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_action(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighteen_kinds_with_unique_names() {
        let mut names: Vec<_> = ActionType::ALL.iter().map(|k| k.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 18);
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(ActionType::from_name("finish_task"), Some(ActionType::Finished));
        assert_eq!(ActionType::from_name("type"), Some(ActionType::TypeText));
        assert_eq!(ActionType::from_name("jump"), None);
    }

    #[test]
    fn payload_must_match_family() {
        assert!(Action::new(ActionType::Click, Payload::Text("x".into())).is_err());
        assert!(Action::new(ActionType::Wait, Payload::Point(Point { x: 1, y: 1 })).is_err());
        assert!(Action::bbox(ActionType::Drag, 5, 0, 1, 3).is_err());
        assert!(Action::keys(ActionType::Hotkey, "").is_err());
        assert!(Action::new(ActionType::Select, Payload::Box(BBox { x1: 0, y1: 0, x2: 1, y2: 1 })).is_ok());
    }

    #[test]
    fn closed_interval_hit_test() {
        let b = BBox::new(10, 10, 20, 20).unwrap();
        assert!(b.contains(Point { x: 10, y: 20 }));
        assert!(b.contains(Point { x: 20, y: 10 }));
        assert!(!b.contains(Point { x: 21, y: 15 }));
    }
}

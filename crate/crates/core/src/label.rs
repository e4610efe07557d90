use std::fmt;

/// Class index used by the classifier head: 0 background, 1 face, 2 mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Background = 0,
    Face = 1,
    Mask = 2,
}

impl Label {
    /// The two foreground classes in index order.
    pub const OBJECTS: [Label; 2] = [Label::Face, Label::Mask];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Background),
            1 => Some(Label::Face),
            2 => Some(Label::Mask),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Face => "face",
            Label::Mask => "mask",
        }
    }

    /// Parses an annotation class string; only the foreground vocabulary is accepted.
    pub fn parse_object(s: &str) -> Option<Label> {
        match s {
            "face" => Some(Label::Face),
            "mask" => Some(Label::Mask),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

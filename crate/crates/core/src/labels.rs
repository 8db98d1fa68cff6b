//! Task identifiers and their fixed label sets.
//!
//! Integer encodings are stable and part of the file formats:
//!
//! | task      | encoding                                         |
//! |-----------|--------------------------------------------------|
//! | detection | Nonrumor 0, Rumor 1                              |
//! | tracking  | Unrelated 0, Related 1 (or event ids in 5-way)   |
//! | stance    | Support 0, Deny 1, Comment 2, Query 3            |
//! | veracity  | True 0, False 1, Unverified 2                    |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Tracking,
    Stance,
    Veracity,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Detection, Task::Tracking, Task::Stance, Task::Veracity];

    pub fn name(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::Tracking => "tracking",
            Task::Stance => "stance",
            Task::Veracity => "veracity",
        }
    }

    /// Position of this task's balancing weight in `lambda`.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "detection" | "d" => Ok(Task::Detection),
            "tracking" | "t" => Ok(Task::Tracking),
            "stance" | "s" => Ok(Task::Stance),
            "veracity" | "v" => Ok(Task::Veracity),
            other => Err(format!(
                "unknown task {other:?} (expected detection, tracking, stance or veracity)"
            )),
        }
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $idx:expr),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant = $idx),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn names() -> Vec<String> {
                Self::ALL.iter().map(|l| l.name().to_string()).collect()
            }

            pub fn parse(s: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|l| l.name() == s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

label_enum!(
    /// Rumor detection labels.
    Detection { Nonrumor = 0, Rumor = 1 }
);
label_enum!(
    /// Binary tracking labels relative to a query event.
    Relatedness { Unrelated = 0, Related = 1 }
);
label_enum!(
    /// Stance of a post toward a rumor.
    Stance { Support = 0, Deny = 1, Comment = 2, Query = 3 }
);
label_enum!(
    /// Truth status of a rumor.
    Veracity { True = 0, False = 1, Unverified = 2 }
);

/// How tracking labels are derived from an example's event.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackingMode {
    /// One class per event.
    #[default]
    FiveWay,
    /// Related iff the example belongs to the query event.
    Binary { query_event: String },
}

/// The PHEME5 events in the column order used by tracking reports.
pub const PHEME_EVENTS: [(&str, &str); 5] = [
    ("sydneysiege", "S"),
    ("germanwings-crash", "G"),
    ("ferguson", "F"),
    ("charliehebdo", "C"),
    ("ottawashooting", "O"),
];

/// Short column code for a PHEME5 event, else the event name itself.
pub fn event_code(event: &str) -> &str {
    PHEME_EVENTS
        .iter()
        .find(|(name, _)| *name == event)
        .map(|(_, code)| *code)
        .unwrap_or(event)
}

/// Orders events: known PHEME5 events first in S, G, F, C, O order, then the
/// rest lexicographically.
pub fn order_events<I: IntoIterator<Item = String>>(events: I) -> Vec<String> {
    let mut events: Vec<String> = events.into_iter().collect();
    events.sort();
    events.dedup();
    events.sort_by_key(|e| {
        PHEME_EVENTS
            .iter()
            .position(|(name, _)| name == e)
            .unwrap_or(PHEME_EVENTS.len())
    });
    events
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// All 64 assignments.
pub const UNIVERSE: u64 = u64::MAX;

/// Seven-way natural-logic relation between two satisfying sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equivalence,
    ForwardEntailment,
    ReverseEntailment,
    Negation,
    Alternation,
    Cover,
    Independence,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Equivalence,
        Relation::ForwardEntailment,
        Relation::ReverseEntailment,
        Relation::Negation,
        Relation::Alternation,
        Relation::Cover,
        Relation::Independence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Equivalence => "equivalence",
            Relation::ForwardEntailment => "forward_entailment",
            Relation::ReverseEntailment => "reverse_entailment",
            Relation::Negation => "negation",
            Relation::Alternation => "alternation",
            Relation::Cover => "cover",
            Relation::Independence => "independence",
        }
    }

    /// Relation of `(b, a)` given that of `(a, b)`.
    pub fn reversed(self) -> Self {
        match self {
            Relation::ForwardEntailment => Relation::ReverseEntailment,
            Relation::ReverseEntailment => Relation::ForwardEntailment,
            other => other,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation '{s}'"))
    }
}

/// Cases are tested in order; the first match wins.
pub fn classify_relation(a: u64, b: u64) -> Relation {
    let meet = a & b;
    let join = a | b;
    if a == b {
        Relation::Equivalence
    } else if a & !b == 0 {
        Relation::ForwardEntailment
    } else if b & !a == 0 {
        Relation::ReverseEntailment
    } else if meet == 0 && join == UNIVERSE {
        Relation::Negation
    } else if meet == 0 {
        Relation::Alternation
    } else if join == UNIVERSE {
        Relation::Cover
    } else {
        Relation::Independence
    }
}

//! Templated correspondence features and their text grammar.
//!
//! ```text
//! description := clause (";" clause)*
//! clause      := "match" OOD "with" ID
//!              | "overlap" OOD ID
//!              | "align-edge" ("left" | "right") OOD ID
//!              | "align-vert" ("top" | "base") OOD ID
//!              | "pass"
//! ```
//!
//! Keywords are case-insensitive. `align left|right` and `align top|base`
//! are accepted as shorthands, and plural label names ("pencils") resolve to
//! their singular form. The OOD-side label may be `unknown`, which matches
//! every label absent from the training data.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorrespondenceError;
use crate::model::{LabelId, LabelRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerticalAnchor {
    Top,
    Base,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrespondenceFeature {
    MatchLabels {
        ood: Label,
        id: Label,
    },
    OverlapSegments {
        ood: Label,
        id: Label,
    },
    AlignEdge {
        side: EdgeSide,
        ood: Label,
        id: Label,
    },
    AlignVertical {
        anchor: VerticalAnchor,
        ood: Label,
        id: Label,
    },
    Pass,
}

impl CorrespondenceFeature {
    pub fn labels(&self) -> Option<(&Label, &Label)> {
        match self {
            CorrespondenceFeature::MatchLabels { ood, id }
            | CorrespondenceFeature::OverlapSegments { ood, id }
            | CorrespondenceFeature::AlignEdge { ood, id, .. }
            | CorrespondenceFeature::AlignVertical { ood, id, .. } => Some((ood, id)),
            CorrespondenceFeature::Pass => None,
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, CorrespondenceFeature::Pass)
    }
}

impl fmt::Display for CorrespondenceFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrespondenceFeature::MatchLabels { ood, id } => {
                write!(f, "match {} with {}", ood.name, id.name)
            }
            CorrespondenceFeature::OverlapSegments { ood, id } => {
                write!(f, "overlap {} {}", ood.name, id.name)
            }
            CorrespondenceFeature::AlignEdge { side, ood, id } => {
                let s = match side {
                    EdgeSide::Left => "left",
                    EdgeSide::Right => "right",
                };
                write!(f, "align-edge {s} {} {}", ood.name, id.name)
            }
            CorrespondenceFeature::AlignVertical { anchor, ood, id } => {
                let a = match anchor {
                    VerticalAnchor::Top => "top",
                    VerticalAnchor::Base => "base",
                };
                write!(f, "align-vert {a} {} {}", ood.name, id.name)
            }
            CorrespondenceFeature::Pass => f.write_str("pass"),
        }
    }
}

/// Ordered feature list. `Pass`, if present, is the single last element.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorrespondenceDescription {
    pub features: Vec<CorrespondenceFeature>,
}

impl CorrespondenceDescription {
    pub fn new(features: Vec<CorrespondenceFeature>) -> Result<Self, CorrespondenceError> {
        if let Some(i) = features.iter().position(|f| f.is_pass()) {
            if i + 1 != features.len() {
                return Err(CorrespondenceError::Parse {
                    position: i,
                    message: "pass must be the last clause".into(),
                });
            }
        }
        Ok(Self { features })
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_pass(&self) -> bool {
        self.features.last().is_some_and(|f| f.is_pass())
    }

    /// Appends the non-pass features of `more`; descriptions accumulate across
    /// refinement rounds.
    pub fn extend(&mut self, more: &CorrespondenceDescription) {
        self.features
            .extend(more.features.iter().filter(|f| !f.is_pass()).cloned());
    }
}

impl fmt::Display for CorrespondenceDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, feat) in self.features.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{feat}")?;
        }
        Ok(())
    }
}

/// Resolves label names against the deployment registry. The name `unknown`
/// always resolves to the registry's reserved UNKNOWN entry.
fn resolve(registry: &LabelRegistry, raw: &str) -> Result<Label, CorrespondenceError> {
    let name = raw.to_ascii_lowercase();
    let found = registry.id(&name).map(|id| (id, name.clone())).or_else(|| {
        let singular = name
            .strip_suffix("es")
            .filter(|s| registry.id(s).is_some())
            .or_else(|| name.strip_suffix('s'))?;
        registry.id(singular).map(|id| (id, singular.to_string()))
    });
    found
        .map(|(id, name)| Label { id, name })
        .ok_or_else(|| CorrespondenceError::UnknownLabel(raw.to_string()))
}

/// Parses expert input into features. Positions in errors are 0-based
/// character offsets into `input`.
pub fn decode_description(
    input: &str,
    registry: &LabelRegistry,
) -> Result<CorrespondenceDescription, CorrespondenceError> {
    let mut features = Vec::new();
    let mut offset = 0usize;
    for clause in input.split(';') {
        let start = offset;
        offset += clause.len() + 1;
        let tokens: Vec<(usize, &str)> = tokenize(clause, start);
        if tokens.is_empty() {
            continue;
        }
        if features.last().is_some_and(CorrespondenceFeature::is_pass) {
            return Err(CorrespondenceError::Parse {
                position: tokens[0].0,
                message: "nothing may follow pass".into(),
            });
        }
        features.push(parse_clause(&tokens, start + clause.len(), registry)?);
    }
    if features.is_empty() {
        return Err(CorrespondenceError::Parse {
            position: 0,
            message: "empty description".into(),
        });
    }
    CorrespondenceDescription::new(features)
}

fn tokenize(clause: &str, base: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in clause.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((base + s, &clause[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((base + s, &clause[s..]));
    }
    out
}

fn parse_clause(
    tokens: &[(usize, &str)],
    end: usize,
    registry: &LabelRegistry,
) -> Result<CorrespondenceFeature, CorrespondenceError> {
    let expect_len = |n: usize, usage: &str| {
        if tokens.len() < n {
            Err(CorrespondenceError::Parse {
                position: end,
                message: format!("incomplete clause, expected `{usage}`"),
            })
        } else if tokens.len() > n {
            Err(CorrespondenceError::Parse {
                position: tokens[n].0,
                message: format!("unexpected token {:?}, expected `{usage}`", tokens[n].1),
            })
        } else {
            Ok(())
        }
    };
    let label = |i: usize| {
        resolve(registry, tokens[i].1).map_err(|e| match e {
            CorrespondenceError::UnknownLabel(name) => CorrespondenceError::Resolve {
                position: tokens[i].0,
                name,
            },
            other => other,
        })
    };
    let keyword = tokens[0].1.to_ascii_lowercase();
    match keyword.as_str() {
        "pass" => {
            expect_len(1, "pass")?;
            Ok(CorrespondenceFeature::Pass)
        }
        "match" => {
            const USAGE: &str = "match <ood-label> with <id-label>";
            expect_len(4, USAGE)?;
            if !tokens[2].1.eq_ignore_ascii_case("with") {
                return Err(CorrespondenceError::Parse {
                    position: tokens[2].0,
                    message: format!("expected `with`, found {:?}", tokens[2].1),
                });
            }
            Ok(CorrespondenceFeature::MatchLabels {
                ood: label(1)?,
                id: label(3)?,
            })
        }
        "overlap" => {
            const USAGE: &str = "overlap <ood-label> <id-label>";
            expect_len(3, USAGE)?;
            Ok(CorrespondenceFeature::OverlapSegments {
                ood: label(1)?,
                id: label(2)?,
            })
        }
        "align-edge" | "align-vert" | "align" => {
            const USAGE: &str =
                "align-edge left|right <ood> <id> or align-vert top|base <ood> <id>";
            if tokens.len() < 2 {
                return Err(CorrespondenceError::Parse {
                    position: end,
                    message: format!("incomplete clause, expected `{USAGE}`"),
                });
            }
            let which = tokens[1].1.to_ascii_lowercase();
            let edge = match which.as_str() {
                "left" => Some(EdgeSide::Left),
                "right" => Some(EdgeSide::Right),
                _ => None,
            };
            let anchor = match which.as_str() {
                "top" => Some(VerticalAnchor::Top),
                "base" | "bottom" => Some(VerticalAnchor::Base),
                _ => None,
            };
            let ok = match keyword.as_str() {
                "align-edge" => edge.is_some(),
                "align-vert" => anchor.is_some(),
                _ => edge.is_some() || anchor.is_some(),
            };
            if !ok {
                return Err(CorrespondenceError::Parse {
                    position: tokens[1].0,
                    message: format!("unexpected alignment {:?}", tokens[1].1),
                });
            }
            expect_len(4, USAGE)?;
            let (ood, id) = (label(2)?, label(3)?);
            Ok(match (edge, anchor) {
                (Some(side), _) => CorrespondenceFeature::AlignEdge { side, ood, id },
                (_, Some(anchor)) => CorrespondenceFeature::AlignVertical { anchor, ood, id },
                _ => unreachable!("checked above"),
            })
        }
        other => Err(CorrespondenceError::Parse {
            position: tokens[0].0,
            message: format!("unknown keyword {other:?}"),
        }),
    }
}

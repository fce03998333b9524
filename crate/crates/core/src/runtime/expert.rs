//! Expert implementations.

use crate::modes::{Expert, ExpertFailure, ExpertQuery};

/// Replays a fixed list of feature strings, one per query, then answers
/// `pass` forever.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedExpert {
    lines: Vec<String>,
    next: usize,
}

impl ScriptedExpert {
    pub fn new<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            lines: lines.into_iter().map(Into::into).collect(),
            next: 0,
        }
    }

    /// Every scripted line joined into one description.
    pub fn full_description(&self) -> String {
        self.lines.join("; ")
    }
}

impl Expert for ScriptedExpert {
    fn respond(&mut self, _query: &ExpertQuery) -> Result<String, ExpertFailure> {
        let out = self
            .lines
            .get(self.next)
            .cloned()
            .unwrap_or_else(|| "pass".into());
        self.next += 1;
        Ok(out)
    }
}

/// An expert that never answers; used for methods that must not consult one.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoExpert;

impl Expert for NoExpert {
    fn respond(&mut self, _query: &ExpertQuery) -> Result<String, ExpertFailure> {
        Err(ExpertFailure::Unavailable(
            "this method takes no expert input".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> ExpertQuery {
        ExpertQuery {
            timestep: 0,
            round: 1,
            entropy: 0.7,
            description: String::new(),
            top: vec![],
            clusters: vec![],
            scene_labels: vec![],
        }
    }

    #[test]
    fn script_then_pass() {
        let mut e = ScriptedExpert::new(["match pencil with pen", "align-edge left pencil pen"]);
        assert_eq!(e.respond(&q()).unwrap(), "match pencil with pen");
        assert_eq!(e.respond(&q()).unwrap(), "align-edge left pencil pen");
        assert_eq!(e.respond(&q()).unwrap(), "pass");
        assert_eq!(e.respond(&q()).unwrap(), "pass");
    }
}

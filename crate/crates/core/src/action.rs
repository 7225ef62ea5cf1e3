use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A routing decision taken after observing the latest reasoning step.
///
/// Escalation is sticky: the target index must be strictly greater than the
/// model that produced the latest step, and the next step is generated by the
/// target model.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Continue,
    Escalate(usize),
}

impl Action {
    /// Model index that generates the next step when this action is taken at `current`.
    pub fn target(self, current: usize) -> usize {
        match self {
            Action::Continue => current,
            Action::Escalate(k) => k,
        }
    }

    /// Output slot of the policy network: 0 for continue, `k` for escalate-to-`k`.
    pub fn slot(self) -> usize {
        match self {
            Action::Continue => 0,
            Action::Escalate(k) => k,
        }
    }

    pub fn is_escalation(self) -> bool {
        matches!(self, Action::Escalate(_))
    }

    pub fn validate(self, current: usize, num_models: usize) -> Result<()> {
        match self {
            Action::Continue if current < num_models => Ok(()),
            Action::Escalate(k) if k > current && k < num_models => Ok(()),
            _ => Err(Error::InvalidAction {
                action: self.key(),
                current,
            }),
        }
    }

    /// Actions available at `current`, in canonical order (continue first,
    /// then escalations by increasing target). Size is `1 + (K - 1 - current)`.
    pub fn available(current: usize, num_models: usize) -> Vec<Action> {
        std::iter::once(Action::Continue)
            .chain((current + 1..num_models).map(Action::Escalate))
            .collect()
    }

    /// Key used in the trace file format.
    pub fn key(self) -> String {
        match self {
            Action::Continue => "continue".to_string(),
            Action::Escalate(k) => format!("escalate:{k}"),
        }
    }

    pub fn from_key(key: &str) -> Option<Action> {
        if key == "continue" {
            return Some(Action::Continue);
        }
        let target = key.strip_prefix("escalate:")?;
        if target.is_empty() || !target.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        target.parse().ok().map(Action::Escalate)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Action, D::Error> {
        let key = String::deserialize(d)?;
        Action::from_key(&key).ok_or_else(|| serde::de::Error::custom(format!("unknown action `{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn available_set_size() {
        for k in 1..5 {
            for cur in 0..k {
                assert_eq!(Action::available(cur, k).len(), 1 + (k - 1 - cur));
            }
        }
    }

    #[test]
    fn escalate_must_go_up() {
        assert!(Action::Escalate(1).validate(0, 2).is_ok());
        assert!(Action::Escalate(1).validate(1, 2).is_err());
        assert!(Action::Escalate(2).validate(0, 2).is_err());
        assert!(Action::Continue.validate(1, 2).is_ok());
    }

    #[test]
    fn key_round_trip() {
        for a in [Action::Continue, Action::Escalate(1), Action::Escalate(12)] {
            assert_eq!(Action::from_key(&a.key()), Some(a));
        }
        assert_eq!(Action::from_key("escalate:"), None);
        assert_eq!(Action::from_key("escalate:+1"), None);
        assert_eq!(Action::from_key("stop"), None);
    }
}

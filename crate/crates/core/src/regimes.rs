//! Observation-perturbation groups standing in for weather conditions.

use cirl_sim::PerturbationRegime;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeGroup {
    Training,
    New,
    New2,
}

impl RegimeGroup {
    pub const ALL: [RegimeGroup; 3] = [RegimeGroup::Training, RegimeGroup::New, RegimeGroup::New2];

    pub fn name(self) -> &'static str {
        match self {
            RegimeGroup::Training => "training",
            RegimeGroup::New => "new",
            RegimeGroup::New2 => "new2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn regimes(self) -> Vec<PerturbationRegime> {
        match self {
            RegimeGroup::Training => vec![
                PerturbationRegime::none(),
                PerturbationRegime::noise(0.02),
                PerturbationRegime::dropout(0.02),
            ],
            RegimeGroup::New => vec![PerturbationRegime::noise(0.05), PerturbationRegime::dropout(0.05)],
            RegimeGroup::New2 => vec![
                PerturbationRegime { intensity: 0.7, ..PerturbationRegime::noise(0.1) },
                PerturbationRegime { intensity: 0.7, ..PerturbationRegime::dropout(0.1) },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_group_contains_identity() {
        assert!(RegimeGroup::Training.regimes().iter().any(|r| r.is_identity()));
        for g in RegimeGroup::ALL {
            assert_eq!(RegimeGroup::from_name(g.name()), Some(g));
            for r in g.regimes() {
                r.validate().unwrap();
            }
        }
        assert!(RegimeGroup::New2.regimes().iter().all(|r| r.intensity == 0.7));
    }
}

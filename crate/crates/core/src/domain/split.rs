use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ResidualCatalog, RuptureScenario, Site};
use crate::error::{Error, Result};

/// Stream offsets so site and scenario shuffles never share a sequence.
const SITE_STREAM: u64 = 0x5173;
const SCENARIO_STREAM: u64 = 0x5ce7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// Record group: earthquake role first, then site role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    TrTr,
    TrTe,
    TeTr,
    TeTe,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::TrTr, Group::TrTe, Group::TeTr, Group::TeTe];

    pub fn from_roles(scenario: Role, site: Role) -> Self {
        match (scenario, site) {
            (Role::Train, Role::Train) => Group::TrTr,
            (Role::Train, Role::Test) => Group::TrTe,
            (Role::Test, Role::Train) => Group::TeTr,
            (Role::Test, Role::Test) => Group::TeTe,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Group::TrTr => "TrTr",
            Group::TrTe => "TrTe",
            Group::TeTr => "TeTr",
            Group::TeTe => "TeTe",
        };
        f.write_str(s)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown group `{s}`")))
    }
}

/// Train/test roles for every site and scenario, indexed like the catalog
/// tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub site_roles: Vec<Role>,
    pub scenario_roles: Vec<Role>,
}

impl SplitAssignment {
    pub fn group(&self, scenario: usize, site: usize) -> Group {
        Group::from_roles(self.scenario_roles[scenario], self.site_roles[site])
    }

    pub fn count(roles: &[Role], role: Role) -> usize {
        roles.iter().filter(|&&r| r == role).count()
    }

    /// Record counts per group, in [`Group::ALL`] order.
    pub fn group_sizes(&self, catalog: &ResidualCatalog) -> [usize; 4] {
        let mut out = [0; 4];
        for r in catalog.records() {
            out[self.group(catalog.scenario_of(r), r.site) as usize] += 1;
        }
        out
    }

    pub fn manifest(
        &self,
        sites: &[Site],
        scenarios: &[RuptureScenario],
        site_test_frac: f64,
        scenario_test_frac: f64,
        seed: u64,
    ) -> SplitManifest {
        let ids = |roles: &[Role], role: Role, id: &dyn Fn(usize) -> String| -> Vec<String> {
            roles
                .iter()
                .enumerate()
                .filter(|(_, &r)| r == role)
                .map(|(i, _)| id(i))
                .collect()
        };
        let site_id = |i: usize| sites[i].site_id.clone();
        let scen_id = |i: usize| scenarios[i].scenario_id.clone();
        SplitManifest {
            seed,
            site_test_frac,
            scenario_test_frac,
            rounding: "n_test = round_half_away_from_zero(n * frac), clamped to [1, n - 1]".into(),
            train_sites: ids(&self.site_roles, Role::Train, &site_id),
            test_sites: ids(&self.site_roles, Role::Test, &site_id),
            train_scenarios: ids(&self.scenario_roles, Role::Train, &scen_id),
            test_scenarios: ids(&self.scenario_roles, Role::Test, &scen_id),
        }
    }
}

/// Reproducibility record of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub site_test_frac: f64,
    pub scenario_test_frac: f64,
    pub rounding: String,
    pub train_sites: Vec<String>,
    pub test_sites: Vec<String>,
    pub train_scenarios: Vec<String>,
    pub test_scenarios: Vec<String>,
}

impl SplitManifest {
    /// Rebuilds roles against the given tables; ids absent from the manifest
    /// are an error.
    pub fn assignment(&self, sites: &[Site], scenarios: &[RuptureScenario]) -> Result<SplitAssignment> {
        let role_of = |id: &str, train: &[String], test: &[String], what: &str| -> Result<Role> {
            if test.iter().any(|t| t == id) {
                Ok(Role::Test)
            } else if train.iter().any(|t| t == id) {
                Ok(Role::Train)
            } else {
                Err(Error::arg(format!("{what} `{id}` is missing from the split manifest")))
            }
        };
        Ok(SplitAssignment {
            site_roles: sites
                .iter()
                .map(|s| role_of(&s.site_id, &self.train_sites, &self.test_sites, "site"))
                .collect::<Result<_>>()?,
            scenario_roles: scenarios
                .iter()
                .map(|s| role_of(&s.scenario_id, &self.train_scenarios, &self.test_scenarios, "scenario"))
                .collect::<Result<_>>()?,
        })
    }
}

fn test_count(n: usize, frac: f64) -> usize {
    let k = (n as f64 * frac).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        k.min(n)
    }
}

fn draw_roles(n: usize, frac: f64, seed: u64, stream: u64) -> Vec<Role> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut roles = vec![Role::Train; n];
    for &i in &idx[..test_count(n, frac)] {
        roles[i] = Role::Test;
    }
    roles
}

/// Random site and scenario partition. Test counts are
/// `round(n * frac)` clamped so that both roles are non-empty.
pub fn split(
    n_sites: usize,
    n_scenarios: usize,
    site_test_frac: f64,
    scenario_test_frac: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    for (name, f) in [("site_test_frac", site_test_frac), ("scenario_test_frac", scenario_test_frac)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::arg(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    Ok(SplitAssignment {
        site_roles: draw_roles(n_sites, site_test_frac, seed, SITE_STREAM),
        scenario_roles: draw_roles(n_scenarios, scenario_test_frac, seed, SCENARIO_STREAM),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_counts() {
        let s = split(335, 10, 0.2, 0.5, 1).unwrap();
        assert_eq!(SplitAssignment::count(&s.site_roles, Role::Train), 268);
        assert_eq!(SplitAssignment::count(&s.site_roles, Role::Test), 67);
    }

    #[test]
    fn scenario_counts() {
        let s = split(10, 8358, 0.2, 0.5, 1).unwrap();
        assert_eq!(SplitAssignment::count(&s.scenario_roles, Role::Train), 4179);
        assert_eq!(SplitAssignment::count(&s.scenario_roles, Role::Test), 4179);
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(split(50, 60, 0.3, 0.4, 9).unwrap(), split(50, 60, 0.3, 0.4, 9).unwrap());
        assert_ne!(split(50, 60, 0.3, 0.4, 9).unwrap(), split(50, 60, 0.3, 0.4, 10).unwrap());
    }

    #[test]
    fn fraction_bounds() {
        assert!(split(5, 5, 0.0, 0.5, 0).is_err());
        assert!(split(5, 5, 0.5, 1.0, 0).is_err());
        assert!(split(5, 5, f64::NAN, 0.5, 0).is_err());
    }

    #[test]
    fn group_labels() {
        assert_eq!(Group::from_roles(Role::Train, Role::Test), Group::TrTe);
        assert_eq!("tete".parse::<Group>().unwrap(), Group::TeTe);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{point_for, ResidualCatalog, RuptureScenario, Site};
use crate::error::{Error, Result};
use crate::kernels::PredictionPoint;
use crate::stats::ExactSum;

/// Mean residual of one (scenario, site) cell over its variations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeanRecord {
    pub scenario: usize,
    pub site: usize,
    pub y_bar: f64,
    pub n_variations: usize,
}

/// Collapsed catalog: one record per observed (scenario, site) cell, sorted
/// by `(scenario, site)`.
#[derive(Debug, Clone)]
pub struct ScenarioMeanTable {
    pub sites: Vec<Site>,
    pub scenarios: Vec<RuptureScenario>,
    pub records: Vec<ScenarioMeanRecord>,
}

impl ScenarioMeanTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn point(&self, r: &ScenarioMeanRecord) -> PredictionPoint {
        point_for(&self.sites[r.site], r.site, &self.scenarios[r.scenario], r.scenario)
    }

    pub fn points(&self) -> Vec<PredictionPoint> {
        self.records.iter().map(|r| self.point(r)).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_bar).collect()
    }

    pub fn filter(&self, keep: impl Fn(&ScenarioMeanRecord) -> bool) -> Self {
        Self {
            sites: self.sites.clone(),
            scenarios: self.scenarios.clone(),
            records: self.records.iter().copied().filter(|r| keep(r)).collect(),
        }
    }

    /// Mean for a cell, if observed.
    pub fn lookup(&self, scenario: usize, site: usize) -> Option<&ScenarioMeanRecord> {
        self.records
            .binary_search_by(|r| (r.scenario, r.site).cmp(&(scenario, site)))
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Streams the catalog once, accumulating an exactly rounded sum and a count
/// per cell. The result does not depend on record order.
pub fn collapse_to_means(catalog: &ResidualCatalog) -> Result<ScenarioMeanTable> {
    if catalog.is_empty() {
        return Err(Error::arg("cannot collapse an empty catalog"));
    }
    let mut cells: BTreeMap<(usize, usize), (ExactSum, usize)> = BTreeMap::new();
    for r in catalog.records() {
        let cell = cells.entry((catalog.scenario_of(r), r.site)).or_default();
        cell.0.add(r.y);
        cell.1 += 1;
    }
    let records = cells
        .into_iter()
        .map(|((scenario, site), (sum, n))| ScenarioMeanRecord {
            scenario,
            site,
            y_bar: sum.value() / n as f64,
            n_variations: n,
        })
        .collect();
    Ok(ScenarioMeanTable {
        sites: catalog.sites().to_vec(),
        scenarios: catalog.scenarios().to_vec(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ResidualRecord, RuptureVariation};

    fn catalog(ys: &[(usize, f64)]) -> ResidualCatalog {
        let sites = vec![Site {
            site_id: "S".into(),
            x_km: 0.0,
            y_km: 0.0,
            vs30: None,
        }];
        let scenarios = vec![RuptureScenario {
            scenario_id: "L".into(),
            magnitude: 6.0,
            annual_rate: 1e-3,
            closest_point_x_km: 1.0,
            closest_point_y_km: 1.0,
        }];
        let variations = (0..3)
            .map(|i| RuptureVariation {
                variation_id: format!("E{i}"),
                scenario: 0,
            })
            .collect();
        let records = ys
            .iter()
            .map(|&(v, y)| ResidualRecord {
                variation: v,
                site: 0,
                y,
                backbone_mu: -2.0,
                backbone_sigma: 0.6,
            })
            .collect();
        ResidualCatalog::new(sites, scenarios, variations, records).unwrap()
    }

    #[test]
    fn mean_of_two_variations() {
        let t = collapse_to_means(&catalog(&[(0, 0.1), (1, 0.3)])).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t.records[0].y_bar - 0.2).abs() < 1e-16);
        assert_eq!(t.records[0].n_variations, 2);
    }

    #[test]
    fn singleton_cell() {
        let t = collapse_to_means(&catalog(&[(2, -0.7)])).unwrap();
        assert_eq!(t.records[0].y_bar, -0.7);
        assert_eq!(t.records[0].n_variations, 1);
    }

    #[test]
    fn empty_catalog_rejected() {
        assert!(collapse_to_means(&catalog(&[])).is_err());
    }
}

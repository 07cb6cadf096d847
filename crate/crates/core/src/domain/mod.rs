//! Core data model: sites, rupture scenarios and variations, residual
//! catalogs, scenario-mean tables and train/test partitions.

mod collapse;
mod ingest;
mod split;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::PredictionPoint;

pub use collapse::{collapse_to_means, ScenarioMeanRecord, ScenarioMeanTable};
pub use ingest::{
    ingest_catalog, ingest_catalog_from_readers, write_catalog, CatalogPaths, ColumnMap,
    IngestOptions,
};
pub use split::{split, Group, Role, SplitAssignment, SplitManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub x_km: f64,
    pub y_km: f64,
    pub vs30: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuptureScenario {
    pub scenario_id: String,
    pub magnitude: f64,
    /// Events per year.
    pub annual_rate: f64,
    pub closest_point_x_km: f64,
    pub closest_point_y_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuptureVariation {
    pub variation_id: String,
    /// Index into the catalog's scenario table.
    pub scenario: usize,
}

/// One (variation, site) residual. `variation` and `site` index the
/// catalog tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub variation: usize,
    pub site: usize,
    /// ln(PSA) minus the backbone median.
    pub y: f64,
    pub backbone_mu: f64,
    pub backbone_sigma: f64,
}

/// Variation-level residual catalog with its site/scenario/variation tables.
#[derive(Debug, Clone)]
pub struct ResidualCatalog {
    sites: Vec<Site>,
    scenarios: Vec<RuptureScenario>,
    variations: Vec<RuptureVariation>,
    records: Vec<ResidualRecord>,
    site_index: HashMap<String, usize>,
    scenario_index: HashMap<String, usize>,
    variation_index: HashMap<String, usize>,
}

fn index_ids<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.to_owned(), i).is_some() {
            return Err(Error::Integrity {
                file: what.to_owned(),
                row: i + 1,
                detail: format!("duplicate id `{id}`"),
            });
        }
    }
    Ok(map)
}

impl ResidualCatalog {
    /// Builds a catalog and verifies every invariant of the tables.
    pub fn new(
        sites: Vec<Site>,
        scenarios: Vec<RuptureScenario>,
        variations: Vec<RuptureVariation>,
        records: Vec<ResidualRecord>,
    ) -> Result<Self> {
        let site_index = index_ids(sites.iter().map(|s| s.site_id.as_str()), "sites")?;
        let scenario_index =
            index_ids(scenarios.iter().map(|s| s.scenario_id.as_str()), "scenarios")?;
        let variation_index =
            index_ids(variations.iter().map(|v| v.variation_id.as_str()), "variations")?;
        for (i, s) in sites.iter().enumerate() {
            if !(s.x_km.is_finite() && s.y_km.is_finite()) {
                return Err(integrity("sites", i, format!("non-finite coordinates for `{}`", s.site_id)));
            }
        }
        for (i, s) in scenarios.iter().enumerate() {
            if !(s.closest_point_x_km.is_finite() && s.closest_point_y_km.is_finite()) {
                return Err(integrity("scenarios", i, "non-finite coordinates".into()));
            }
            if !(s.annual_rate >= 0.0) || !s.annual_rate.is_finite() {
                return Err(integrity("scenarios", i, "annual rate must be finite and >= 0".into()));
            }
        }
        for (i, v) in variations.iter().enumerate() {
            if v.scenario >= scenarios.len() {
                return Err(integrity("variations", i, "unknown scenario index".into()));
            }
        }
        for (i, r) in records.iter().enumerate() {
            if r.site >= sites.len() || r.variation >= variations.len() {
                return Err(integrity("residuals", i, "dangling site or variation index".into()));
            }
            if !r.y.is_finite() || !r.backbone_mu.is_finite() {
                return Err(integrity("residuals", i, "non-finite residual".into()));
            }
            if !(r.backbone_sigma > 0.0) || !r.backbone_sigma.is_finite() {
                return Err(integrity("residuals", i, "backbone sigma must be positive".into()));
            }
        }
        Ok(Self {
            sites,
            scenarios,
            variations,
            records,
            site_index,
            scenario_index,
            variation_index,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn scenarios(&self) -> &[RuptureScenario] {
        &self.scenarios
    }

    pub fn variations(&self) -> &[RuptureVariation] {
        &self.variations
    }

    pub fn records(&self) -> &[ResidualRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scenario_of(&self, record: &ResidualRecord) -> usize {
        self.variations[record.variation].scenario
    }

    pub fn site_by_id(&self, id: &str) -> Option<usize> {
        self.site_index.get(id).copied()
    }

    pub fn scenario_by_id(&self, id: &str) -> Option<usize> {
        self.scenario_index.get(id).copied()
    }

    pub fn variation_by_id(&self, id: &str) -> Option<usize> {
        self.variation_index.get(id).copied()
    }

    /// Kernel input for a (scenario, site) cell.
    pub fn point(&self, scenario: usize, site: usize) -> PredictionPoint {
        point_for(&self.sites[site], site, &self.scenarios[scenario], scenario)
    }

    /// Keeps only records matching `keep`; tables are unchanged.
    pub fn filter_records(&self, keep: impl Fn(&ResidualRecord) -> bool) -> Self {
        let mut out = self.clone();
        out.records.retain(|r| keep(r));
        out
    }
}

pub(crate) fn point_for(site: &Site, site_idx: usize, scen: &RuptureScenario, scen_idx: usize) -> PredictionPoint {
    PredictionPoint {
        site_xy: [site.x_km, site.y_km],
        source_xy: [scen.closest_point_x_km, scen.closest_point_y_km],
        scenario: scen_idx,
        site: site_idx,
    }
}

fn integrity(file: &str, row: usize, detail: String) -> Error {
    Error::Integrity {
        file: file.to_owned(),
        row: row + 1,
        detail,
    }
}

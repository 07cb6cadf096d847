use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ResidualCatalog, ResidualRecord, RuptureScenario, RuptureVariation, Site};
use crate::error::{Error, Result};

/// Column names for the three input tables. Defaults match the files
/// written by [`write_catalog`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub site_id: String,
    pub site_x: String,
    pub site_y: String,
    pub vs30: String,
    pub scenario_id: String,
    pub magnitude: String,
    pub annual_rate: String,
    pub scenario_x: String,
    pub scenario_y: String,
    pub variation_id: String,
    pub y: String,
    pub ln_psa: String,
    pub backbone_mu: String,
    pub backbone_sigma: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let s = |v: &str| v.to_owned();
        Self {
            site_id: s("site_id"),
            site_x: s("x_km"),
            site_y: s("y_km"),
            vs30: s("vs30"),
            scenario_id: s("scenario_id"),
            magnitude: s("magnitude"),
            annual_rate: s("annual_rate"),
            scenario_x: s("closest_point_x_km"),
            scenario_y: s("closest_point_y_km"),
            variation_id: s("variation_id"),
            y: s("y"),
            ln_psa: s("ln_psa"),
            backbone_mu: s("backbone_mu"),
            backbone_sigma: s("backbone_sigma"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogPaths {
    pub sites: PathBuf,
    pub scenarios: PathBuf,
    pub residuals: PathBuf,
}

impl CatalogPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            sites: dir.join("sites.csv"),
            scenarios: dir.join("scenarios.csv"),
            residuals: dir.join("residuals.csv"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    /// Scenario ids dropped, together with all their residual rows.
    pub excluded_scenarios: Vec<String>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn ingest_catalog(paths: &CatalogPaths, opts: &IngestOptions) -> Result<ResidualCatalog> {
    ingest_catalog_from_readers(
        (&paths.sites.display().to_string(), open(&paths.sites)?),
        (&paths.scenarios.display().to_string(), open(&paths.scenarios)?),
        (&paths.residuals.display().to_string(), open(&paths.residuals)?),
        opts,
    )
}

struct Table<R: Read> {
    name: String,
    reader: csv::Reader<R>,
    header: HashMap<String, usize>,
}

impl<R: Read> Table<R> {
    fn new(name: &str, src: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(src);
        let header = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_owned(), i))
            .collect();
        Ok(Self {
            name: name.to_owned(),
            reader,
            header,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header.get(name).copied().ok_or_else(|| Error::Schema {
            file: self.name.clone(),
            column: name.to_owned(),
        })
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.header.get(name).copied()
    }
}

struct Row<'a> {
    file: &'a str,
    row: usize,
    rec: &'a csv::StringRecord,
    header: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn text(&self, col: usize) -> &str {
        self.rec.get(col).unwrap_or("")
    }

    fn number(&self, col: usize) -> Result<f64> {
        let raw = self.text(col);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                file: self.file.to_owned(),
                row: self.row,
                column: self
                    .header
                    .iter()
                    .find(|(_, &i)| i == col)
                    .map(|(k, _)| k.clone())
                    .unwrap_or_default(),
                value: raw.to_owned(),
            }),
        }
    }
}

/// Streams the residual table after loading the site and scenario tables.
/// Rows are numbered from 1, excluding the header and comment lines.
pub fn ingest_catalog_from_readers<A: Read, B: Read, C: Read>(
    sites_src: (&str, A),
    scenarios_src: (&str, B),
    residuals_src: (&str, C),
    opts: &IngestOptions,
) -> Result<ResidualCatalog> {
    let cols = &opts.columns;

    let mut t = Table::new(sites_src.0, sites_src.1)?;
    let (c_id, c_x, c_y) = (t.column(&cols.site_id)?, t.column(&cols.site_x)?, t.column(&cols.site_y)?);
    let c_vs = t.optional(&cols.vs30);
    let mut sites = Vec::new();
    for (i, rec) in t.reader.records().enumerate() {
        let rec = rec?;
        let row = Row { file: &t.name, row: i + 1, rec: &rec, header: &t.header };
        let vs30 = match c_vs {
            Some(c) if !row.text(c).is_empty() => Some(row.number(c)?),
            _ => None,
        };
        sites.push(Site {
            site_id: row.text(c_id).to_owned(),
            x_km: row.number(c_x)?,
            y_km: row.number(c_y)?,
            vs30,
        });
    }

    let excluded: HashSet<&str> = opts.excluded_scenarios.iter().map(String::as_str).collect();
    let mut t = Table::new(scenarios_src.0, scenarios_src.1)?;
    let c_id = t.column(&cols.scenario_id)?;
    let c_m = t.column(&cols.magnitude)?;
    let c_rate = t.column(&cols.annual_rate)?;
    let c_x = t.column(&cols.scenario_x)?;
    let c_y = t.column(&cols.scenario_y)?;
    let mut scenarios = Vec::new();
    for (i, rec) in t.reader.records().enumerate() {
        let rec = rec?;
        let row = Row { file: &t.name, row: i + 1, rec: &rec, header: &t.header };
        if excluded.contains(row.text(c_id)) {
            continue;
        }
        scenarios.push(RuptureScenario {
            scenario_id: row.text(c_id).to_owned(),
            magnitude: row.number(c_m)?,
            annual_rate: row.number(c_rate)?,
            closest_point_x_km: row.number(c_x)?,
            closest_point_y_km: row.number(c_y)?,
        });
    }

    let site_index: HashMap<&str, usize> =
        sites.iter().enumerate().map(|(i, s)| (s.site_id.as_str(), i)).collect();
    let scenario_index: HashMap<&str, usize> =
        scenarios.iter().enumerate().map(|(i, s)| (s.scenario_id.as_str(), i)).collect();

    let mut t = Table::new(residuals_src.0, residuals_src.1)?;
    let c_var = t.column(&cols.variation_id)?;
    let c_scen = t.column(&cols.scenario_id)?;
    let c_site = t.column(&cols.site_id)?;
    let c_mu = t.column(&cols.backbone_mu)?;
    let c_sigma = t.column(&cols.backbone_sigma)?;
    let (c_y, c_lnpsa) = match (t.optional(&cols.y), t.optional(&cols.ln_psa)) {
        (None, None) => {
            return Err(Error::Schema {
                file: t.name.clone(),
                column: format!("{} or {}", cols.y, cols.ln_psa),
            })
        }
        pair => pair,
    };

    let mut variations: Vec<RuptureVariation> = Vec::new();
    let mut variation_index: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (i, rec) in t.reader.records().enumerate() {
        let rec = rec?;
        let row = Row { file: &t.name, row: i + 1, rec: &rec, header: &t.header };
        let scen_id = row.text(c_scen);
        if excluded.contains(scen_id) {
            continue;
        }
        let integrity = |detail: String| Error::Integrity {
            file: t.name.clone(),
            row: i + 1,
            detail,
        };
        let scenario = *scenario_index
            .get(scen_id)
            .ok_or_else(|| integrity(format!("unknown scenario_id `{scen_id}`")))?;
        let site_id = row.text(c_site);
        let site = *site_index
            .get(site_id)
            .ok_or_else(|| integrity(format!("unknown site_id `{site_id}`")))?;
        let var_id = row.text(c_var);
        let variation = match variation_index.get(var_id) {
            Some(&v) => {
                if variations[v].scenario != scenario {
                    return Err(integrity(format!(
                        "variation `{var_id}` assigned to more than one scenario"
                    )));
                }
                v
            }
            None => {
                variations.push(RuptureVariation {
                    variation_id: var_id.to_owned(),
                    scenario,
                });
                variation_index.insert(var_id.to_owned(), variations.len() - 1);
                variations.len() - 1
            }
        };
        let backbone_mu = row.number(c_mu)?;
        let y = match (c_y, c_lnpsa) {
            (Some(c), _) => row.number(c)?,
            (None, Some(c)) => row.number(c)? - backbone_mu,
            (None, None) => unreachable!(),
        };
        let backbone_sigma = row.number(c_sigma)?;
        if !(backbone_sigma > 0.0) {
            return Err(integrity("backbone_sigma must be positive".into()));
        }
        records.push(ResidualRecord {
            variation,
            site,
            y,
            backbone_mu,
            backbone_sigma,
        });
    }

    ResidualCatalog::new(sites, scenarios, variations, records)
}

fn write_atomic(path: &Path, body: &[u8]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(body).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_body(units: &str, f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = format!("# units: {units}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(Path::new("<buffer>"), e))?;
    }
    Ok(buf)
}

/// Writes the catalog as three CSV files with default column names. Each
/// file starts with a `# units:` comment line.
pub fn write_catalog(catalog: &ResidualCatalog, paths: &CatalogPaths) -> Result<()> {
    let body = csv_body("x_km,y_km in km; vs30 in m/s", |w| {
        w.write_record(["site_id", "x_km", "y_km", "vs30"])?;
        for s in catalog.sites() {
            let vs = s.vs30.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.site_id.clone(), s.x_km.to_string(), s.y_km.to_string(), vs])?;
        }
        Ok(())
    })?;
    write_atomic(&paths.sites, &body)?;

    let body = csv_body("annual_rate in 1/yr; coordinates in km", |w| {
        w.write_record([
            "scenario_id",
            "magnitude",
            "annual_rate",
            "closest_point_x_km",
            "closest_point_y_km",
        ])?;
        for s in catalog.scenarios() {
            w.write_record([
                s.scenario_id.clone(),
                s.magnitude.to_string(),
                s.annual_rate.to_string(),
                s.closest_point_x_km.to_string(),
                s.closest_point_y_km.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&paths.scenarios, &body)?;

    let body = csv_body("y, backbone_mu, backbone_sigma in natural-log units of PSA [g]", |w| {
        w.write_record(["variation_id", "scenario_id", "site_id", "y", "backbone_mu", "backbone_sigma"])?;
        for r in catalog.records() {
            let v = &catalog.variations()[r.variation];
            w.write_record([
                v.variation_id.clone(),
                catalog.scenarios()[v.scenario].scenario_id.clone(),
                catalog.sites()[r.site].site_id.clone(),
                r.y.to_string(),
                r.backbone_mu.to_string(),
                r.backbone_sigma.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&paths.residuals, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SITES: &str = "# units: km\nsite_id,x_km,y_km\nA,0,0\nB,3,4\n";
    const SCEN: &str = "scenario_id,magnitude,annual_rate,closest_point_x_km,closest_point_y_km\nL1,6.5,0.001,10,0\n";

    fn ingest(res: &str) -> Result<ResidualCatalog> {
        ingest_catalog_from_readers(
            ("sites", SITES.as_bytes()),
            ("scenarios", SCEN.as_bytes()),
            ("residuals", res.as_bytes()),
            &IngestOptions::default(),
        )
    }

    #[test]
    fn raw_ln_psa_is_differenced() {
        let c = ingest("variation_id,scenario_id,site_id,ln_psa,backbone_mu,backbone_sigma\nE1,L1,A,-1.0,-1.5,0.6\n").unwrap();
        assert_eq!(c.records()[0].y, 0.5);
    }

    #[test]
    fn y_column_passes_through() {
        let c = ingest(
            "variation_id,scenario_id,site_id,y,backbone_mu,backbone_sigma\n\
             E1,L1,A,0.1,-1,0.6\nE2,L1,A,0.2,-1,0.6\nE1,L1,B,-0.3,-1,0.6\n",
        )
        .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.variations().len(), 2);
        let ys: Vec<f64> = c.records().iter().map(|r| r.y).collect();
        assert_eq!(ys, vec![0.1, 0.2, -0.3]);
    }

    #[test]
    fn unknown_site_reports_row() {
        let e = ingest("variation_id,scenario_id,site_id,y,backbone_mu,backbone_sigma\nE1,L1,A,0.1,-1,0.6\nE1,L1,ZZZ,0.1,-1,0.6\n")
            .unwrap_err();
        match e {
            Error::Integrity { row, detail, .. } => {
                assert_eq!(row, 2);
                assert!(detail.contains("ZZZ"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let e = ingest("variation_id,scenario_id,site_id,y,backbone_sigma\nE1,L1,A,0.1,0.6\n").unwrap_err();
        assert!(matches!(e, Error::Schema { ref column, .. } if column == "backbone_mu"));
    }

    #[test]
    fn non_finite_is_parse_error() {
        let e = ingest("variation_id,scenario_id,site_id,y,backbone_mu,backbone_sigma\nE1,L1,A,NaN,-1,0.6\n").unwrap_err();
        assert!(matches!(e, Error::Parse { row: 1, ref column, .. } if column == "y"));
    }
}

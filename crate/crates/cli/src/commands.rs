use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ngmm::domain::{
    collapse_to_means, ingest_catalog, split, write_catalog, CatalogPaths, Group, IngestOptions, ResidualCatalog,
    Role, ScenarioMeanTable, SplitAssignment, SplitManifest,
};
use ngmm::fragility::{read_facilities, read_fragility, sample_damage, FragilitySet};
use ngmm::hazard::{
    curve_distance, curves_csv, empirical_curve, gmm_curve, ngmm_curve, IntensityGrid, Metric, NgmmScenario,
    ScenarioMotion, ScenarioSample, Summary,
};
use ngmm::inference::{
    evaluate_groups, interpolate_with_table, posterior_covariance, posterior_csv, predict, sample_fields,
    GroupMetrics, ObservationFactor, PosteriorResult,
};
use ngmm::lmm::{catalog_deviations, centering_factor, fit_mle, LmmBounds};
use ngmm::synth::{generate, toy_backbone, write_synth};
use ngmm::trainer::{fit, trace_csv};
use ngmm::{HyperParams, PredictionPoint};
use serde::{Deserialize, Serialize};

use crate::config::{Config, Loaded, Overrides};
use crate::run::Run;
use crate::{CatalogArgs, Cli, Command, ParamArgs};

pub fn run(cli: Cli) -> Result<()> {
    let Loaded {
        config: mut cfg,
        raw,
        path,
        digest,
    } = Loaded::load(cli.global.config.as_deref())?;
    let mut ov = Overrides::new(raw);
    ov.apply("workers", &mut cfg.workers, cli.global.workers.map(Some));
    if let Some(n) = cfg.workers {
        if n == 0 {
            bail!("--workers must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let name = command_name(&cli.command);
    let mut run = Run::new(name, cli.global.out.clone(), cli.global.dry_run);
    let seed = cli.global.seed;
    let cmd = cli.command;
    let ctx = Ctx { cfg, ov, path, digest };
    match cmd {
        Command::Ingest { catalog, exclude } => ingest(ctx, &mut run, catalog, exclude)?,
        Command::Collapse { catalog } => collapse(ctx, &mut run, catalog)?,
        Command::Split {
            catalog,
            site_test_frac,
            scenario_test_frac,
        } => split_cmd(ctx, &mut run, catalog, site_test_frac, scenario_test_frac, seed)?,
        Command::FitLmm { catalog } => fit_lmm(ctx, &mut run, catalog)?,
        Command::Tune {
            catalog,
            preset,
            init,
            lmm,
            epochs,
            batch_size,
            learning_rate,
        } => {
            let mut ctx = ctx;
            let t = &mut ctx.cfg.tune;
            ctx.ov.apply("tune.preset", &mut t.preset, preset);
            ctx.ov.apply("tune.init", &mut t.init, init.map(Some));
            ctx.ov.apply("tune.lmm", &mut t.lmm, lmm.map(Some));
            ctx.ov.apply("tune.epochs", &mut t.train.epochs, epochs);
            ctx.ov.apply("tune.batch_size", &mut t.train.batch_size, batch_size);
            ctx.ov.apply("tune.learning_rate", &mut t.train.learning_rate, learning_rate);
            ctx.ov.apply("tune.seed", &mut t.train.seed, seed);
            tune(ctx, &mut run, catalog)?
        }
        Command::Predict {
            catalog,
            params,
            targets,
            facilities,
            scenario,
            realizations,
        } => {
            let mut ctx = ctx;
            ctx.ov.apply("predict.realizations", &mut ctx.cfg.predict.realizations, realizations);
            ctx.ov.apply("predict.fields_seed", &mut ctx.cfg.predict.fields_seed, seed);
            predict_cmd(ctx, &mut run, catalog, params, targets, facilities, scenario)?
        }
        Command::Interpolate {
            catalog,
            params,
            targets,
        } => interpolate_cmd(ctx, &mut run, catalog, params, targets)?,
        Command::Hazard {
            catalog,
            posterior,
            realizations,
            summary,
        } => {
            let mut ctx = ctx;
            let summary = summary.map(|s| parse_summary(&s)).transpose()?;
            let h = &mut ctx.cfg.hazard.ngmm;
            ctx.ov.apply("hazard.n_realizations", &mut h.n_realizations, realizations);
            ctx.ov.apply("hazard.summary", &mut h.summary, summary);
            ctx.ov.apply("hazard.seed", &mut h.seed, seed);
            hazard_cmd(ctx, &mut run, catalog, &posterior)?
        }
        Command::Damage {
            facilities,
            fragility,
            fields,
            draws_per_field,
        } => {
            let mut ctx = ctx;
            let d = &mut ctx.cfg.damage;
            ctx.ov.apply("damage.draws_per_field", &mut d.draws_per_field, draws_per_field);
            ctx.ov.apply("damage.seed", &mut d.seed, seed);
            damage_cmd(ctx, &mut run, &facilities, fragility.as_deref(), &fields)?
        }
        Command::Synth {
            sites,
            scenarios,
            sites_per_scenario,
            variations,
            preset,
        } => {
            let mut ctx = ctx;
            let s = &mut ctx.cfg.synth;
            ctx.ov.apply("synth.n_sites", &mut s.n_sites, sites);
            ctx.ov.apply("synth.n_scenarios", &mut s.n_scenarios, scenarios);
            ctx.ov.apply("synth.sites_per_scenario", &mut s.sites_per_scenario, sites_per_scenario.map(Some));
            ctx.ov.apply("synth.variations_per_scenario", &mut s.variations_per_scenario, variations);
            ctx.ov.apply("synth.seed", &mut s.seed, seed);
            if let Some(p) = preset {
                let params = HyperParams::preset(&p)?;
                ctx.ov.apply("synth.params", &mut s.params, Some(params));
            }
            synth_cmd(ctx, &mut run)?
        }
    }
    run.finish()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest { .. } => "ingest",
        Command::Collapse { .. } => "collapse",
        Command::Split { .. } => "split",
        Command::FitLmm { .. } => "fit-lmm",
        Command::Tune { .. } => "tune",
        Command::Predict { .. } => "predict",
        Command::Interpolate { .. } => "interpolate",
        Command::Hazard { .. } => "hazard",
        Command::Damage { .. } => "damage",
        Command::Synth { .. } => "synth",
    }
}

fn parse_summary(s: &str) -> Result<Summary> {
    match s {
        "median" => Ok(Summary::Median),
        "mean" => Ok(Summary::Mean),
        other => bail!("unknown summary `{other}` (expected `median` or `mean`)"),
    }
}

struct Ctx {
    cfg: Config,
    ov: Overrides,
    path: Option<PathBuf>,
    digest: Option<String>,
}

impl Ctx {
    /// Applies catalog and split flags, then freezes the configuration into
    /// the manifest.
    fn start(&mut self, run: &mut Run, catalog: Option<&CatalogArgs>) -> Result<()> {
        if let Some(a) = catalog {
            self.ov.apply("catalog.dir", &mut self.cfg.catalog.dir, a.catalog.clone().map(Some));
            self.ov.apply("split.file", &mut self.cfg.split.file, a.split.clone().map(Some));
        }
        run.set_config(&self.cfg, self.path.clone(), self.digest.clone(), self.ov.list.clone())
    }

    fn catalog(&self, run: &mut Run) -> Result<ResidualCatalog> {
        let dir = self
            .cfg
            .catalog
            .dir
            .as_ref()
            .ok_or_else(|| anyhow!("no catalog given: pass --catalog or set catalog.dir"))?;
        let paths = CatalogPaths::in_dir(dir);
        for p in [&paths.sites, &paths.scenarios, &paths.residuals] {
            run.input(p)?;
        }
        let opts = IngestOptions {
            columns: self.cfg.catalog.columns.clone(),
            excluded_scenarios: self.cfg.catalog.excluded_scenarios.clone(),
        };
        Ok(ingest_catalog(&paths, &opts)?)
    }

    fn split(&self, run: &mut Run, cat: &ResidualCatalog) -> Result<Option<SplitAssignment>> {
        let Some(path) = &self.cfg.split.file else { return Ok(None) };
        let bytes = run.input(path)?;
        let m: SplitManifest =
            serde_json::from_slice(&bytes).with_context(|| format!("{}: not a split manifest", path.display()))?;
        Ok(Some(m.assignment(cat.sites(), cat.scenarios())?))
    }

    /// `--params` file, then `[params]`, then the named preset.
    fn params(&mut self, run: &mut Run, args: &ParamArgs) -> Result<HyperParams> {
        self.ov.apply("inference.rho", &mut self.cfg.inference.rho, args.rho);
        if let Some(p) = &args.params {
            let bytes = run.input(p)?;
            let h: HyperParams =
                serde_json::from_slice(&bytes).with_context(|| format!("{}: not a parameter file", p.display()))?;
            h.validate()?;
            return Ok(h);
        }
        if let Some(h) = self.cfg.params {
            h.validate()?;
            return Ok(h);
        }
        let name = args.preset.clone().unwrap_or_else(|| self.cfg.tune.preset.clone());
        Ok(HyperParams::preset(&name)?)
    }
}

fn csv_bytes(units: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = format!("# units: {units}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn catalog_files(run: &mut Run) -> Result<()> {
    for f in ["sites.csv", "scenarios.csv", "residuals.csv"] {
        run.record_output(f)?;
    }
    Ok(())
}

fn ingest(mut ctx: Ctx, run: &mut Run, catalog: CatalogArgs, exclude: Vec<String>) -> Result<()> {
    if !exclude.is_empty() {
        ctx.ov.apply("catalog.excluded_scenarios", &mut ctx.cfg.catalog.excluded_scenarios, Some(exclude));
    }
    ctx.start(run, Some(&catalog))?;
    let cat = ctx.catalog(run)?;
    if run.dry_run {
        return Ok(());
    }
    std::fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
    write_catalog(&cat, &CatalogPaths::in_dir(&run.out))?;
    catalog_files(run)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        n_sites: usize,
        n_scenarios: usize,
        n_variations: usize,
        n_records: usize,
        excluded_scenarios: &'a [String],
    }
    let s = Summary {
        n_sites: cat.sites().len(),
        n_scenarios: cat.scenarios().len(),
        n_variations: cat.variations().len(),
        n_records: cat.len(),
        excluded_scenarios: &ctx.cfg.catalog.excluded_scenarios,
    };
    run.write("catalog_summary.json", &serde_json::to_vec_pretty(&s)?)
}

fn means_csv(cat: &ResidualCatalog, table: &ScenarioMeanTable) -> Result<Vec<u8>> {
    csv_bytes(
        "y_bar in ln-units of PSA [g] relative to the backbone median",
        &["scenario_id", "site_id", "y_bar", "n_variations"],
        table.records.iter().map(|r| {
            vec![
                cat.scenarios()[r.scenario].scenario_id.clone(),
                cat.sites()[r.site].site_id.clone(),
                r.y_bar.to_string(),
                r.n_variations.to_string(),
            ]
        }),
    )
}

fn collapse(mut ctx: Ctx, run: &mut Run, catalog: CatalogArgs) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let cat = ctx.catalog(run)?;
    if run.dry_run {
        return Ok(());
    }
    let table = collapse_to_means(&cat)?;
    run.write("means.csv", &means_csv(&cat, &table)?)
}

fn split_cmd(
    mut ctx: Ctx,
    run: &mut Run,
    catalog: CatalogArgs,
    site_frac: Option<f64>,
    scen_frac: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let s = &mut ctx.cfg.split;
    ctx.ov.apply("split.site_test_frac", &mut s.site_test_frac, site_frac);
    ctx.ov.apply("split.scenario_test_frac", &mut s.scenario_test_frac, scen_frac);
    ctx.ov.apply("split.seed", &mut s.seed, seed);
    ctx.cfg.split.file = None;
    ctx.start(run, Some(&CatalogArgs { split: None, ..catalog }))?;
    let cat = ctx.catalog(run)?;
    let s = ctx.cfg.split.clone();
    run.seed("split", s.seed);
    let assign = split(cat.sites().len(), cat.scenarios().len(), s.site_test_frac, s.scenario_test_frac, s.seed)?;
    if run.dry_run {
        return Ok(());
    }
    let manifest = assign.manifest(cat.sites(), cat.scenarios(), s.site_test_frac, s.scenario_test_frac, s.seed);
    run.write("split.json", &serde_json::to_vec_pretty(&manifest)?)?;
    let sizes = assign.group_sizes(&cat);
    let body = csv_bytes(
        "n_records is a count of residual records",
        &["group", "n_records"],
        Group::ALL.iter().zip(sizes).map(|(g, n)| vec![g.to_string(), n.to_string()]),
    )?;
    run.write("groups.csv", &body)
}

/// Records of TrTr cells when a split is given, else the whole catalog.
fn training_catalog(cat: &ResidualCatalog, assign: Option<&SplitAssignment>) -> ResidualCatalog {
    match assign {
        Some(a) => cat.filter_records(|r| a.group(cat.scenario_of(r), r.site) == Group::TrTr),
        None => cat.clone(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LmmOutput {
    tau_ddot2: f64,
    phi_ddot2: f64,
    raw_tau2: f64,
    raw_phi2: f64,
    centering_factor: f64,
    centering_correction: bool,
    loglik: f64,
    converged: bool,
    iterations: usize,
    n_events: usize,
    n_records: usize,
}

fn fit_lmm(mut ctx: Ctx, run: &mut Run, catalog: CatalogArgs) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let cat = ctx.catalog(run)?;
    let assign = ctx.split(run, &cat)?;
    if run.dry_run {
        return Ok(());
    }
    let obs = training_catalog(&cat, assign.as_ref());
    let table = collapse_to_means(&obs)?;
    let events = catalog_deviations(&obs, &table)?;
    let c = &ctx.cfg.lmm;
    let fit = fit_mle(&events, None, LmmBounds { lower: c.lower, upper: c.upper })?;
    let factor = centering_factor(&table);
    let scale = if c.centering_correction {
        if factor <= 0.0 {
            bail!("every cell has a single variation; deviations from the cell mean carry no information");
        }
        1.0 / factor
    } else {
        1.0
    };
    let out = LmmOutput {
        tau_ddot2: fit.tau2 * scale,
        phi_ddot2: fit.phi2 * scale,
        raw_tau2: fit.tau2,
        raw_phi2: fit.phi2,
        centering_factor: factor,
        centering_correction: c.centering_correction,
        loglik: fit.loglik,
        converged: fit.converged,
        iterations: fit.iterations,
        n_events: events.len(),
        n_records: obs.len(),
    };
    run.write("lmm.json", &serde_json::to_vec_pretty(&out)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path, what: &str) -> Result<T> {
    let bytes = run.input(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("{}: not a valid {what}", path.display()))
}

fn tune(mut ctx: Ctx, run: &mut Run, catalog: CatalogArgs) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let cat = ctx.catalog(run)?;
    let assign = ctx.split(run, &cat)?;
    let t = ctx.cfg.tune.clone();
    t.train.validate()?;
    let mut init = match &t.init {
        Some(p) => read_json::<HyperParams>(run, p, "parameter file")?,
        None => HyperParams::preset(&t.preset)?,
    };
    if let Some(p) = &t.lmm {
        let l: LmmOutput = read_json(run, p, "lmm.json")?;
        init.variance_components.tau_ddot2 = l.tau_ddot2;
        init.variance_components.phi_ddot2 = l.phi_ddot2;
    }
    init.validate()?;
    run.seed("tune", t.train.seed);
    if run.dry_run {
        return Ok(());
    }
    let table = collapse_to_means(&cat)?;
    let table = match &assign {
        Some(a) => table.filter(|r| a.group(r.scenario, r.site) == Group::TrTr),
        None => table,
    };
    let (h, trace) = match fit(&table, &t.train, &init) {
        Ok(r) => r,
        Err(ngmm::Error::NonFinite {
            epoch,
            batch,
            last_valid,
        }) => {
            run.write("params_last_valid.json", &serde_json::to_vec_pretty(&*last_valid)?)?;
            bail!("objective became non-finite at epoch {epoch}, batch {batch}; last valid parameters saved");
        }
        Err(e) => return Err(e.into()),
    };
    run.write("params.json", &serde_json::to_vec_pretty(&h)?)?;
    run.write("trace.csv", trace_csv(&trace).as_bytes())?;
    let mut tuned = ctx.cfg.clone();
    tuned.params = Some(h);
    let text = toml::to_string(&tuned).context("cannot render the tuned config")?;
    run.write("config.toml", text.as_bytes())
}

#[derive(Debug, Deserialize)]
struct CellTarget {
    scenario_id: String,
    site_id: String,
}

#[derive(Debug, Deserialize)]
struct VariationTarget {
    variation_id: String,
    site_id: String,
}

fn read_targets<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> Result<Vec<T>> {
    let bytes = run.input(path)?;
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let rows = rd
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("{}: cannot parse targets", path.display()))?;
    if rows.is_empty() {
        bail!("{}: no targets", path.display());
    }
    Ok(rows)
}

fn site_index(cat: &ResidualCatalog, id: &str) -> Result<usize> {
    cat.site_by_id(id).ok_or_else(|| anyhow!("unknown site `{id}`"))
}

fn metrics_csv(metrics: &[GroupMetrics]) -> Result<Vec<u8>> {
    let f = |x: f64| format!("{x:.12e}");
    csv_bytes(
        "rmse and std in ln-units; reduction is a fraction",
        &["group", "n_records", "n_cells", "rmse_y", "rmse_ybar", "mean_std", "backbone_rmse", "reduction"],
        metrics.iter().filter_map(|m| {
            m.stats.map(|s| {
                vec![
                    m.group.to_string(),
                    s.n_records.to_string(),
                    s.n_cells.to_string(),
                    f(s.rmse_y),
                    f(s.rmse_ybar),
                    f(s.mean_std),
                    f(s.backbone_rmse),
                    f(s.reduction),
                ]
            })
        }),
    )
}

fn write_posterior(run: &mut Run, cat: &ResidualCatalog, post: &PosteriorResult) -> Result<()> {
    let body = posterior_csv(post, cat.sites(), cat.scenarios(), cat.variations())?;
    run.write("posterior.csv", body.as_bytes())?;
    run.write("posterior.json", &serde_json::to_vec(post)?)
}

fn predict_cmd(
    mut ctx: Ctx,
    run: &mut Run,
    catalog: CatalogArgs,
    params: ParamArgs,
    targets: Option<PathBuf>,
    facilities: Option<PathBuf>,
    scenario: Option<String>,
) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let h = ctx.params(run, &params)?;
    run.set_config(&ctx.cfg, ctx.path.clone(), ctx.digest.clone(), ctx.ov.list.clone())?;
    let cat = ctx.catalog(run)?;
    let assign = ctx.split(run, &cat)?;
    let table = collapse_to_means(&cat)?;
    let pts: Vec<PredictionPoint> = match (&targets, &assign) {
        (Some(path), _) => read_targets::<CellTarget>(run, path)?
            .iter()
            .map(|t| {
                let l = cat
                    .scenario_by_id(&t.scenario_id)
                    .ok_or_else(|| anyhow!("unknown scenario `{}`", t.scenario_id))?;
                Ok(cat.point(l, site_index(&cat, &t.site_id)?))
            })
            .collect::<Result<_>>()?,
        (None, Some(a)) => table
            .records
            .iter()
            .filter(|r| a.scenario_roles[r.scenario] == Role::Test)
            .map(|r| table.point(r))
            .collect(),
        (None, None) if facilities.is_some() => Vec::new(),
        (None, None) => bail!("predict needs --targets, a split, or --facilities"),
    };
    let fac = match &facilities {
        Some(path) => {
            run.input(path)?;
            let id = scenario
                .as_deref()
                .ok_or_else(|| anyhow!("--facilities requires --scenario"))?;
            let l = cat.scenario_by_id(id).ok_or_else(|| anyhow!("unknown scenario `{id}`"))?;
            Some((read_facilities(path)?, l))
        }
        None => None,
    };
    let obs = match &assign {
        Some(a) => table.filter(|r| a.group(r.scenario, r.site) == Group::TrTr),
        None => table.clone(),
    };
    if obs.is_empty() {
        bail!("no training observations");
    }
    if fac.is_some() {
        run.seed("fields", ctx.cfg.predict.fields_seed);
    }
    if run.dry_run {
        return Ok(());
    }
    let factor = ObservationFactor::build(&obs.points(), &h, ctx.cfg.inference)?;
    if !pts.is_empty() {
        let post = predict(&obs, &pts, &h, &factor)?;
        write_posterior(run, &cat, &post)?;
        if let Some(a) = &assign {
            run.write("metrics.csv", &metrics_csv(&evaluate_groups(&cat, &post, a)?)?)?;
        }
    }
    if let Some((facs, l)) = fac {
        let sc = &cat.scenarios()[l];
        let fpts: Vec<PredictionPoint> = facs
            .iter()
            .enumerate()
            .map(|(i, f)| PredictionPoint {
                site_xy: [f.x_km, f.y_km],
                source_xy: [sc.closest_point_x_km, sc.closest_point_y_km],
                scenario: l,
                site: cat.sites().len() + i,
            })
            .collect();
        let post = predict(&obs, &fpts, &h, &factor)?;
        let cov = posterior_covariance(&obs.points(), &fpts, &h, &factor)?;
        let p = &ctx.cfg.predict;
        let fields = sample_fields(&post, &cov, p.realizations, p.fields_seed)?;
        let mu: Vec<f64> = facs
            .iter()
            .map(|f| {
                let d = (f.x_km - sc.closest_point_x_km).hypot(f.y_km - sc.closest_point_y_km);
                toy_backbone(sc.magnitude, d, 1.0).0
            })
            .collect();
        let e = |x: f64| format!("{x:.12e}");
        let body = csv_bytes(
            "mean, std in ln-units; backbone_mu in ln g",
            &["facility_id", "backbone_mu", "mean", "std"],
            facs.iter()
                .enumerate()
                .map(|(i, f)| vec![f.facility_id.clone(), e(mu[i]), e(post.mean[i]), e(post.std[i])]),
        )?;
        run.write("facility_posterior.csv", &body)?;
        let rows = fields.iter().enumerate().flat_map(|(r, y)| {
            facs.iter()
                .enumerate()
                .map(|(i, f)| vec![r.to_string(), f.facility_id.clone(), e(y[i]), e((mu[i] + y[i]).exp())])
                .collect::<Vec<_>>()
        });
        let body = csv_bytes(
            "y in ln-units; psa_g in g",
            &["realization", "facility_id", "y", "psa_g"],
            rows,
        )?;
        run.write("fields.csv", &body)?;
    }
    Ok(())
}

fn interpolate_cmd(
    mut ctx: Ctx,
    run: &mut Run,
    catalog: CatalogArgs,
    params: ParamArgs,
    targets: Option<PathBuf>,
) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let h = ctx.params(run, &params)?;
    run.set_config(&ctx.cfg, ctx.path.clone(), ctx.digest.clone(), ctx.ov.list.clone())?;
    let cat = ctx.catalog(run)?;
    let assign = ctx.split(run, &cat)?;
    let (pts, vars): (Vec<PredictionPoint>, Vec<Option<usize>>) = match (&targets, &assign) {
        (Some(path), _) => read_targets::<VariationTarget>(run, path)?
            .iter()
            .map(|t| {
                let v = cat
                    .variation_by_id(&t.variation_id)
                    .ok_or_else(|| anyhow!("unknown variation `{}`", t.variation_id))?;
                let l = cat.variations()[v].scenario;
                Ok((cat.point(l, site_index(&cat, &t.site_id)?), Some(v)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        (None, Some(a)) => cat
            .records()
            .iter()
            .filter(|r| a.group(cat.scenario_of(r), r.site) == Group::TrTe)
            .map(|r| (cat.point(cat.scenario_of(r), r.site), Some(r.variation)))
            .unzip(),
        (None, None) => bail!("interpolate needs --targets or a split"),
    };
    let obs = training_catalog(&cat, assign.as_ref());
    if obs.is_empty() {
        bail!("no training observations");
    }
    if run.dry_run {
        return Ok(());
    }
    let table = collapse_to_means(&obs)?;
    let factor = ObservationFactor::build(&table.points(), &h, ctx.cfg.inference)?;
    let post = interpolate_with_table(&obs, &table, &pts, &vars, &h, &factor)?;
    write_posterior(run, &cat, &post)?;
    if let Some(a) = &assign {
        run.write("metrics.csv", &metrics_csv(&evaluate_groups(&cat, &post, a)?)?)?;
    }
    Ok(())
}

/// Backbone moments and PSA values of every variation of one cell.
struct Cell {
    mu: f64,
    sigma: f64,
    psa: Vec<f64>,
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn hazard_cmd(mut ctx: Ctx, run: &mut Run, catalog: CatalogArgs, posterior: &Path) -> Result<()> {
    ctx.start(run, Some(&catalog))?;
    let cat = ctx.catalog(run)?;
    let post: PosteriorResult = read_json(run, posterior, "posterior file")?;
    let hc = ctx.cfg.hazard.clone();
    let grid = IntensityGrid::log_spaced(hc.grid_min, hc.grid_max, hc.grid_points)?;
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    for r in cat.records() {
        let c = cells.entry((cat.scenario_of(r), r.site)).or_insert(Cell {
            mu: r.backbone_mu,
            sigma: r.backbone_sigma,
            psa: Vec::new(),
        });
        c.psa.push((r.backbone_mu + r.y).exp());
    }
    let mut by_site: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, k) in post.keys.iter().enumerate() {
        if k.site >= cat.sites().len() || k.scenario >= cat.scenarios().len() {
            bail!("posterior point {i} does not belong to this catalog");
        }
        if !cells.contains_key(&(k.scenario, k.site)) {
            bail!(
                "no backbone for scenario `{}` at site `{}`",
                cat.scenarios()[k.scenario].scenario_id,
                cat.sites()[k.site].site_id
            );
        }
        by_site.entry(k.site).or_default().push(i);
    }
    run.seed("hazard", hc.ngmm.seed);
    if run.dry_run {
        return Ok(());
    }
    let e = |x: f64| format!("{x:.9e}");
    let mut metric_rows = Vec::new();
    for (&s, idx) in &by_site {
        let mut per_scen: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in idx {
            *per_scen.entry(post.keys[i].scenario).or_default() += 1;
        }
        let rate = |l: usize| cat.scenarios()[l].annual_rate;
        // Points sharing a scenario (several variations) split its rate.
        let ng: Vec<NgmmScenario> = idx
            .iter()
            .map(|&i| {
                let l = post.keys[i].scenario;
                NgmmScenario::from_posterior(rate(l) / per_scen[&l] as f64, cells[&(l, s)].mu, &post, i)
            })
            .collect();
        let motions: Vec<ScenarioMotion> = per_scen
            .keys()
            .map(|&l| {
                let c = &cells[&(l, s)];
                ScenarioMotion {
                    rate: rate(l),
                    mu: c.mu,
                    sigma: c.sigma,
                }
            })
            .collect();
        let samples: Vec<ScenarioSample> = per_scen
            .keys()
            .map(|&l| ScenarioSample {
                rate: rate(l),
                values: cells[&(l, s)].psa.clone(),
            })
            .collect();
        let gmm = gmm_curve(&motions, &grid)?;
        let emp = empirical_curve(&samples, &grid)?;
        let out = ngmm_curve(&ng, &grid, &hc.ngmm)?;
        let sid = &cat.sites()[s].site_id;
        let name = file_safe(sid);
        run.write(
            &format!("hazard_{name}.csv"),
            curves_csv(&[&gmm, &out.curve, &out.analytic, &emp])?.as_bytes(),
        )?;
        if hc.write_realizations {
            if let Some(bundle) = &out.curve.realizations {
                let rows = bundle.iter().enumerate().flat_map(|(r, rates)| {
                    grid.values()
                        .iter()
                        .zip(rates)
                        .map(|(x, v)| vec![r.to_string(), e(*x), e(*v)])
                        .collect::<Vec<_>>()
                });
                let body = csv_bytes("psa_g in g; rate in 1/year", &["realization", "psa_g", "rate"], rows)?;
                run.write(&format!("realizations_{name}.csv"), &body)?;
            }
        }
        metric_rows.push(vec![
            sid.clone(),
            per_scen.len().to_string(),
            e(curve_distance(&gmm, &emp, Metric::Ks)?),
            e(curve_distance(&out.curve, &emp, Metric::Ks)?),
            e(curve_distance(&gmm, &emp, Metric::Mae)?),
            e(curve_distance(&out.curve, &emp, Metric::Mae)?),
        ]);
    }
    let body = csv_bytes(
        "distances to the empirical curve in 1/year",
        &["site_id", "n_scenarios", "ks_gmm", "ks_ngmm", "mae_gmm", "mae_ngmm"],
        metric_rows,
    )?;
    run.write("hazard_metrics.csv", &body)
}

#[derive(Debug, Deserialize)]
struct FieldRow {
    realization: usize,
    facility_id: String,
    psa_g: f64,
}

fn damage_cmd(
    mut ctx: Ctx,
    run: &mut Run,
    facilities: &Path,
    fragility: Option<&Path>,
    fields: &Path,
) -> Result<()> {
    ctx.start(run, None)?;
    run.input(facilities)?;
    let facs = read_facilities(facilities)?;
    let set = match fragility {
        Some(p) => {
            run.input(p)?;
            read_fragility(p)?
        }
        None => FragilitySet::example(),
    };
    let rows: Vec<FieldRow> = read_targets(run, fields)?;
    let slot: HashMap<&str, usize> = facs.iter().enumerate().map(|(i, f)| (f.facility_id.as_str(), i)).collect();
    let mut by_real: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for r in &rows {
        let i = *slot
            .get(r.facility_id.as_str())
            .ok_or_else(|| anyhow!("{}: unknown facility `{}`", fields.display(), r.facility_id))?;
        by_real.entry(r.realization).or_insert_with(|| vec![None; facs.len()])[i] = Some(r.psa_g);
    }
    let field_values: Vec<Vec<f64>> = by_real
        .iter()
        .map(|(r, v)| {
            v.iter()
                .zip(&facs)
                .map(|(x, f)| x.ok_or_else(|| anyhow!("realization {r} has no value for facility `{}`", f.facility_id)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let d = ctx.cfg.damage.clone();
    run.seed("damage", d.seed);
    if run.dry_run {
        return Ok(());
    }
    let ratios: Vec<f64> = facs.iter().map(|f| f.ratio).collect();
    let sample = sample_damage(&field_values, &set, &ratios, d.draws_per_field, d.seed)?;
    let labels = set.labels();
    let real_ids: Vec<usize> = by_real.keys().copied().collect();
    let rows = sample.realizations.iter().flat_map(|r| {
        r.states
            .iter()
            .zip(&facs)
            .map(|(&s, f)| {
                vec![
                    r.realization.to_string(),
                    real_ids[r.field].to_string(),
                    f.facility_id.clone(),
                    labels[s].clone(),
                ]
            })
            .collect::<Vec<_>>()
    });
    let body = csv_bytes(
        "state is a damage-state label",
        &["realization", "field", "facility_id", "state"],
        rows,
    )?;
    run.write("damage_realizations.csv", &body)?;
    let e = |x: f64| format!("{x:.12e}");
    let rows = facs.iter().enumerate().flat_map(|(i, f)| {
        labels
            .iter()
            .enumerate()
            .map(|(k, lab)| {
                vec![
                    f.facility_id.clone(),
                    lab.clone(),
                    e(sample.frequencies[i][k]),
                    e(sample.probabilities[i][k]),
                ]
            })
            .collect::<Vec<_>>()
    });
    let body = csv_bytes(
        "frequency and probability are fractions",
        &["facility_id", "state", "frequency", "probability"],
        rows,
    )?;
    run.write("damage_frequencies.csv", &body)?;
    let body = csv_bytes(
        "expected_count in facilities per realization",
        &["state", "expected_count"],
        labels.iter().zip(&sample.expected_counts).map(|(l, c)| vec![l.clone(), e(*c)]),
    )?;
    run.write("expected_counts.csv", &body)
}

fn synth_cmd(mut ctx: Ctx, run: &mut Run) -> Result<()> {
    ctx.start(run, None)?;
    let spec = ctx.cfg.synth.clone();
    spec.validate()?;
    run.seed("synth", spec.seed);
    if run.dry_run {
        return Ok(());
    }
    let (cat, truth) = generate(&spec)?;
    std::fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
    write_synth(&cat, &truth, &run.out)?;
    catalog_files(run)?;
    run.record_output("truth.json")
}

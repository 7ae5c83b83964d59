//! Simulation sweeps, median aggregation and convergence-rate fits.

pub mod checks;
pub mod semi;

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    first_order_fit, pca_fit, rrr_fit, second_order_fit_with, semi_first_order_fit, semi_second_order_fit_with,
    LatentBasis, NearZeroPolicy, SemiSupervisedData,
};
use crate::io::{write_atomic, write_json_atomic};
use crate::metrics::subspace_dist;
use crate::scores::ScoreField;
use crate::simulation::{
    DispersionChoice, DistributionChoice, LinkOptions, Mechanism, SimulationConfig, SyntheticDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FirstOrder,
    SecondOrder,
    Pca,
    Rrr,
    SemiFirst,
    SemiSecond,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::FirstOrder => "first-order",
            Method::SecondOrder => "second-order",
            Method::Pca => "pca",
            Method::Rrr => "rrr",
            Method::SemiFirst => "semi-first",
            Method::SemiSecond => "semi-second",
        }
    }

    pub fn uses_scores(self) -> bool {
        !matches!(self, Method::Pca | Method::Rrr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Closed-form score of the true design distribution.
    Known,
    /// Gaussian score with the sample second moment in place of `Σ`.
    PlugIn,
}

impl ScoreMode {
    pub fn label(self) -> &'static str {
        match self {
            ScoreMode::Known => "known",
            ScoreMode::PlugIn => "plug-in",
        }
    }

    pub fn field(self, data: &SyntheticDataset) -> Result<ScoreField> {
        match self {
            ScoreMode::Known => Ok(ScoreField::closed_form(data.spec.clone())),
            ScoreMode::PlugIn => ScoreField::plugin_gaussian(&data.x, false),
        }
    }
}

fn default_dispersion() -> DispersionChoice {
    DispersionChoice::Random { shift: 1.0, scale: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distributions: Vec<DistributionChoice>,
    pub mechanisms: Vec<Mechanism>,
    pub methods: Vec<Method>,
    pub score_modes: Vec<ScoreMode>,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    pub q: usize,
    pub r: usize,
    pub sigma_eps: f64,
    pub repetitions: usize,
    pub master_seed: u64,
    #[serde(default = "default_dispersion")]
    pub dispersion: DispersionChoice,
    #[serde(default)]
    pub links: LinkOptions,
    /// Record wall-clock time per fit. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub timing: bool,
    /// Second-order moments indistinguishable from zero are fitted anyway and
    /// flagged (`warn`), or recorded as failures (`fail`).
    #[serde(default = "warn")]
    pub near_zero: NearZeroPolicy,
}

fn warn() -> NearZeroPolicy {
    NearZeroPolicy::Warn
}

impl ExperimentConfig {
    /// `p = q = 10`, `r = 2`, `n ∈ {250, …, 4000}`, 30 repetitions.
    pub fn desk() -> Self {
        Self {
            distributions: vec![DistributionChoice::Gaussian],
            mechanisms: vec![Mechanism::Linear],
            methods: vec![Method::FirstOrder, Method::Rrr],
            score_modes: vec![ScoreMode::Known],
            n_grid: vec![250, 500, 1000, 2000, 4000],
            p_grid: vec![10],
            q: 10,
            r: 2,
            sigma_eps: 0.5,
            repetitions: 30,
            master_seed: 20240601,
            dispersion: default_dispersion(),
            links: LinkOptions::default(),
            timing: false,
            near_zero: NearZeroPolicy::Warn,
        }
    }

    /// The full simulation study: `p = 30`, `q = 20`, `r = 3`,
    /// `n` from 300 to 9000, 100 repetitions, all three designs and mechanisms.
    pub fn paper_default() -> Self {
        Self {
            distributions: vec![
                DistributionChoice::Gaussian,
                DistributionChoice::StudentT { nu: None },
                DistributionChoice::Hyperbolic { chi: None, psi: None },
            ],
            mechanisms: vec![Mechanism::Linear, Mechanism::NonlinearFixed, Mechanism::NonlinearRandomPairs],
            methods: vec![Method::FirstOrder, Method::SecondOrder, Method::Rrr],
            score_modes: vec![ScoreMode::Known],
            n_grid: vec![300, 500, 1000, 3000, 5000, 7000, 9000],
            p_grid: vec![30],
            q: 20,
            r: 3,
            sigma_eps: 0.5,
            repetitions: 100,
            master_seed: 20240601,
            dispersion: default_dispersion(),
            links: LinkOptions::default(),
            timing: false,
            near_zero: NearZeroPolicy::Warn,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper-default" => Some(Self::paper_default()),
            _ => None,
        }
    }

    fn simulation(&self, dist: DistributionChoice, mech: Mechanism, p: usize, n: usize) -> SimulationConfig {
        SimulationConfig {
            p,
            q: self.q,
            r: self.r,
            n,
            sigma_eps: self.sigma_eps,
            distribution: dist,
            dispersion: self.dispersion,
            mechanism: mech,
            links: self.links.clone(),
            basis_mean: 0.0,
            basis_sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("distributions", self.distributions.is_empty()),
            ("mechanisms", self.mechanisms.is_empty()),
            ("methods", self.methods.is_empty()),
            ("n_grid", self.n_grid.is_empty()),
            ("p_grid", self.p_grid.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("{name} must not be empty")));
        }
        if self.methods.iter().any(|m| m.uses_scores()) && self.score_modes.is_empty() {
            return Err(Error::Config("score_modes must not be empty for score-based methods".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        for &dist in &self.distributions {
            for &mech in &self.mechanisms {
                for &p in &self.p_grid {
                    for &n in &self.n_grid {
                        self.simulation(dist, mech, p, n).validate()?;
                    }
                }
                if mech != Mechanism::Linear && self.q / 2 > self.links.palette.len() {
                    return Err(Error::Config(format!(
                        "q/2 = {} exceeds the {} configured elementary functions",
                        self.q / 2,
                        self.links.palette.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One fit on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub dist_kind: String,
    pub link_mech: String,
    pub score_mode: String,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub sigma_eps: f64,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    /// `None` when the fit failed; the reason is in `warnings`.
    pub distance: Option<f64>,
    pub wall_ms: Option<f64>,
    pub warnings: Vec<String>,
}

pub const RESULTS_HEADER: [&str; 14] = [
    "method",
    "dist_kind",
    "link_mech",
    "score_mode",
    "p",
    "q",
    "r",
    "sigma_eps",
    "n",
    "rep",
    "seed",
    "distance",
    "wall_ms",
    "warnings",
];

/// Stable 64-bit seed: the first eight bytes of SHA-256 over the master seed,
/// a canonical description of the data-generating point and the repetition.
pub fn child_seed(master: u64, point: &str, rep: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(point.as_bytes());
    h.update((rep as u64).to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone)]
struct DataPoint {
    dist: DistributionChoice,
    mech: Mechanism,
    p: usize,
    n: usize,
    rep: usize,
}

impl DataPoint {
    fn canonical(&self, cfg: &ExperimentConfig) -> String {
        let dist = serde_json::to_string(&self.dist.resolved(self.p)).expect("plain enum serializes");
        format!(
            "dist={dist}|mech={}|p={}|q={}|r={}|sigma_eps={}|n={}",
            self.mech.label(),
            self.p,
            cfg.q,
            cfg.r,
            cfg.sigma_eps,
            self.n
        )
    }
}

fn data_points(cfg: &ExperimentConfig) -> Vec<DataPoint> {
    let mut out = Vec::new();
    for &dist in &cfg.distributions {
        for &mech in &cfg.mechanisms {
            for &p in &cfg.p_grid {
                for &n in &cfg.n_grid {
                    for rep in 0..cfg.repetitions {
                        out.push(DataPoint { dist, mech, p, n, rep });
                    }
                }
            }
        }
    }
    out
}

/// Run one estimator on a simulated dataset.
pub fn fit_method(
    method: Method,
    data: &SyntheticDataset,
    field: Option<&ScoreField>,
    r: usize,
    policy: NearZeroPolicy,
) -> Result<LatentBasis> {
    let need = || field.ok_or_else(|| Error::Config(format!("{} needs a score field", method.label())));
    match method {
        Method::FirstOrder => first_order_fit(&data.x, &data.y, r, need()?),
        Method::SecondOrder => second_order_fit_with(&data.x, &data.y, r, need()?, policy),
        Method::Pca => pca_fit(&data.x, r),
        Method::Rrr => rrr_fit(&data.x, &data.y, r),
        Method::SemiFirst => {
            let d = SemiSupervisedData::new(data.x.clone(), data.y.clone(), data.x.clone())?;
            semi_first_order_fit(&d, r, need()?)
        }
        Method::SemiSecond => {
            let d = SemiSupervisedData::new(data.x.clone(), data.y.clone(), data.x.clone())?;
            semi_second_order_fit_with(&d, r, need()?, policy)
        }
    }
}

fn run_point(cfg: &ExperimentConfig, pt: &DataPoint) -> Vec<ResultRecord> {
    let seed = child_seed(cfg.master_seed, &pt.canonical(cfg), pt.rep);
    let base = |method: Method, mode: &str| ResultRecord {
        method: method.label().into(),
        dist_kind: pt.dist.label().into(),
        link_mech: pt.mech.label().into(),
        score_mode: mode.into(),
        p: pt.p,
        q: cfg.q,
        r: cfg.r,
        sigma_eps: cfg.sigma_eps,
        n: pt.n,
        rep: pt.rep,
        seed,
        distance: None,
        wall_ms: None,
        warnings: vec![],
    };

    let mut jobs: Vec<(Method, Option<ScoreMode>)> = Vec::new();
    for &m in &cfg.methods {
        if m.uses_scores() {
            jobs.extend(cfg.score_modes.iter().map(|&s| (m, Some(s))));
        } else {
            jobs.push((m, None));
        }
    }

    let data = match cfg.simulation(pt.dist, pt.mech, pt.p, pt.n).realize(seed) {
        Ok(d) => d,
        Err(e) => {
            return jobs
                .iter()
                .map(|&(m, s)| {
                    let mut rec = base(m, s.map_or("none", ScoreMode::label));
                    rec.warnings.push(e.code().into());
                    rec
                })
                .collect();
        }
    };

    let mut fields: Vec<(ScoreMode, Result<ScoreField>)> = Vec::new();
    let mut records = Vec::with_capacity(jobs.len());
    for (method, mode) in jobs {
        let mut rec = base(method, mode.map_or("none", ScoreMode::label));
        let field = match mode {
            Some(mode) => {
                if !fields.iter().any(|(m, _)| *m == mode) {
                    fields.push((mode, mode.field(&data)));
                }
                match &fields.iter().find(|(m, _)| *m == mode).expect("inserted above").1 {
                    Ok(f) => Some(f),
                    Err(e) => {
                        rec.warnings.push(e.code().into());
                        records.push(rec);
                        continue;
                    }
                }
            }
            None => None,
        };
        let start = Instant::now();
        let fit = fit_method(method, &data, field, cfg.r, cfg.near_zero);
        if cfg.timing {
            rec.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        match fit.and_then(|b| {
            let d = subspace_dist(&b.matrix, &data.b_true)?;
            Ok((b, d))
        }) {
            Ok((b, d)) => {
                rec.distance = Some(d.distance);
                rec.warnings.extend(b.warnings.iter().map(|w| w.tag().to_string()));
            }
            Err(e) => rec.warnings.push(e.code().into()),
        }
        records.push(rec);
    }
    records
}

/// Every grid point × repetition, evaluated on the rayon pool. Record order
/// follows the grid (distribution, mechanism, p, n, repetition, method,
/// score mode) regardless of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let pts = data_points(cfg);
    let nested: Vec<Vec<ResultRecord>> = pts.par_iter().map(|pt| run_point(cfg, pt)).collect();
    Ok(nested.into_iter().flatten().collect())
}

/// Single-threaded equivalent of [`run_sweep`].
pub fn run_sweep_serial(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    Ok(data_points(cfg).iter().flat_map(|pt| run_point(cfg, pt)).collect())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[ResultRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.dist_kind.clone(),
            r.link_mech.clone(),
            r.score_mode.clone(),
            r.p.to_string(),
            r.q.to_string(),
            r.r.to_string(),
            r.sigma_eps.to_string(),
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            opt_num(r.distance),
            opt_num(r.wall_ms),
            r.warnings.join(";"),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Method,
    DistKind,
    LinkMech,
    ScoreMode,
    P,
    Q,
    R,
    SigmaEps,
    N,
}

impl GroupKey {
    pub const ALL_BUT_REP: [GroupKey; 9] = [
        GroupKey::Method,
        GroupKey::DistKind,
        GroupKey::LinkMech,
        GroupKey::ScoreMode,
        GroupKey::P,
        GroupKey::Q,
        GroupKey::R,
        GroupKey::SigmaEps,
        GroupKey::N,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Method => "method",
            GroupKey::DistKind => "dist_kind",
            GroupKey::LinkMech => "link_mech",
            GroupKey::ScoreMode => "score_mode",
            GroupKey::P => "p",
            GroupKey::Q => "q",
            GroupKey::R => "r",
            GroupKey::SigmaEps => "sigma_eps",
            GroupKey::N => "n",
        }
    }

    fn value(self, r: &ResultRecord) -> String {
        match self {
            GroupKey::Method => r.method.clone(),
            GroupKey::DistKind => r.dist_kind.clone(),
            GroupKey::LinkMech => r.link_mech.clone(),
            GroupKey::ScoreMode => r.score_mode.clone(),
            GroupKey::P => r.p.to_string(),
            GroupKey::Q => r.q.to_string(),
            GroupKey::R => r.r.to_string(),
            GroupKey::SigmaEps => r.sigma_eps.to_string(),
            GroupKey::N => r.n.to_string(),
        }
    }
}

/// Median with the midpoint convention for even counts. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    /// Group values, in the order of the requested keys.
    pub group: Vec<String>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// `None` when every record in the group failed.
    pub median: Option<f64>,
}

/// Median distance per group, groups in order of first appearance. Failed
/// records are counted but excluded from the median.
pub fn aggregate_median(records: &[ResultRecord], keys: &[GroupKey]) -> Vec<MedianRow> {
    let mut groups: Vec<(Vec<String>, Vec<f64>, usize)> = Vec::new();
    for r in records {
        let g: Vec<String> = keys.iter().map(|k| k.value(r)).collect();
        let slot = match groups.iter().position(|(k, _, _)| *k == g) {
            Some(i) => i,
            None => {
                groups.push((g, vec![], 0));
                groups.len() - 1
            }
        };
        match r.distance {
            Some(d) => groups[slot].1.push(d),
            None => groups[slot].2 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(group, ds, failed)| MedianRow {
            group,
            n_ok: ds.len(),
            n_failed: failed,
            median: median(&ds),
        })
        .collect()
}

pub fn medians_to_csv(rows: &[MedianRow], keys: &[GroupKey]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = keys.iter().map(|k| k.name()).collect();
    header.extend(["n_ok", "n_failed", "median_distance"]);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = row.group.clone();
        rec.push(row.n_ok.to_string());
        rec.push(row.n_failed.to_string());
        rec.push(opt_num(row.median));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Points dropped for non-positive or non-finite coordinates.
    pub excluded: usize,
}

/// Ordinary least squares of `ln d` on `ln n`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, d)| *n > 0.0 && *d > 0.0 && n.is_finite() && d.is_finite())
        .map(|(n, d)| (n.ln(), d.ln()))
        .collect();
    let excluded = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 3 positive points, got {} ({excluded} excluded)",
            usable.len()
        )));
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs at least two distinct n".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: usable.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub method: String,
    pub dist_kind: String,
    pub link_mech: String,
    pub score_mode: String,
    pub p: usize,
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

/// One log-log slope of median distance against `n` per method, design,
/// mechanism, score mode and `p`.
pub fn rate_slopes(records: &[ResultRecord]) -> Vec<SlopeRow> {
    let rows = aggregate_median(records, &GroupKey::ALL_BUT_REP);
    let mut out: Vec<(SlopeRow, Vec<(f64, f64)>)> = Vec::new();
    for row in rows {
        let g = &row.group;
        let p: usize = g[4].parse().expect("p was formatted from usize");
        let n: f64 = g[8].parse().expect("n was formatted from usize");
        let key = (g[0].as_str(), g[1].as_str(), g[2].as_str(), g[3].as_str(), p);
        let slot = match out.iter().position(|(s, _)| {
            (s.method.as_str(), s.dist_kind.as_str(), s.link_mech.as_str(), s.score_mode.as_str(), s.p) == key
        }) {
            Some(i) => i,
            None => {
                out.push((
                    SlopeRow {
                        method: g[0].clone(),
                        dist_kind: g[1].clone(),
                        link_mech: g[2].clone(),
                        score_mode: g[3].clone(),
                        p,
                        fit: None,
                        note: None,
                    },
                    vec![],
                ));
                out.len() - 1
            }
        };
        if let Some(m) = row.median {
            out[slot].1.push((n, m));
        }
    }
    out.into_iter()
        .map(|(mut s, pts)| {
            match fit_rate_slope(&pts) {
                Ok(f) => s.fit = Some(f),
                Err(e) => s.note = Some(e.to_string()),
            }
            s
        })
        .collect()
}

/// `results.csv`, `medians.csv`, `slopes.json` and `config.json` in `dir`,
/// each written atomically.
pub fn write_sweep_outputs(dir: &Path, cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("results.csv"), &records_to_csv(records)?)?;
    let keys = GroupKey::ALL_BUT_REP;
    write_atomic(&dir.join("medians.csv"), &medians_to_csv(&aggregate_median(records, &keys), &keys)?)?;
    write_json_atomic(&dir.join("slopes.json"), &rate_slopes(records))?;
    write_json_atomic(&dir.join("config.json"), cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaEquivalence {
    pub distance: f64,
    /// PCA spectrum tied at `r`; the comparison is then not meaningful.
    pub degenerate: bool,
}

/// Distance between the plug-in first-order estimator on `Y = X` and PCA.
pub fn check_pca_equivalence(x: &DMatrix<f64>, r: usize) -> Result<PcaEquivalence> {
    let field = ScoreField::plugin_gaussian(x, false)?;
    let stein = first_order_fit(x, x, r, &field)?;
    let pca = pca_fit(x, r)?;
    Ok(PcaEquivalence {
        distance: subspace_dist(&stein.matrix, &pca.matrix)?.distance,
        degenerate: !pca.warnings.is_empty(),
    })
}

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stein_subspace::estimators::{
    first_order_fit, fit_linear_decoder, pca_fit, rrr_fit, second_order_fit_with, semi_first_order_fit,
    semi_second_order_fit_with, FitWarning, LatentBasis, NearZeroPolicy, SemiSupervisedData,
};
use stein_subspace::experiments::checks::run_checks;
use stein_subspace::experiments::{run_sweep, write_sweep_outputs, ExperimentConfig, Method, ScoreMode};
use stein_subspace::io::{read_matrix_csv, write_json_atomic, write_matrix_csv};
use stein_subspace::metrics::{nrse, pmse, ssim, subspace_dist};
use stein_subspace::scores::ScoreField;
use stein_subspace::simulation::{Provenance, SimulationConfig};
use stein_subspace::Error;

use crate::config::{config_path, out_dir, read_object, resolve, take, with_preset};
use crate::{log, Common, Failure};

const DEFAULT_CHECK_SEED: u64 = 20240601;

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io(e)))
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, Failure> {
    read_matrix_csv(path).map_err(|e| match e {
        Error::Io(io) => Failure::config(format!("cannot read {}: {io}", path.display())),
        e => Failure::Runtime(e),
    })
}

pub fn simulate(common: &Common) -> Result<u8, Failure> {
    let path = config_path(common)?;
    let mut map = read_object(path)?;
    let seed = common
        .seed
        .or(take::<u64>(&mut map, "seed")?)
        .ok_or_else(|| Failure::config("a seed is required (config key `seed` or --seed)"))?;
    let cfg = with_preset(map, SimulationConfig::preset)?;
    cfg.validate()?;
    let out = out_dir(common)?;

    let data = cfg.realize(seed)?;
    create_dir(out)?;
    write_matrix_csv(&out.join("X.csv"), &data.x)?;
    write_matrix_csv(&out.join("Y.csv"), &data.y)?;
    write_matrix_csv(&out.join("B_true.csv"), &data.b_true)?;
    write_json_atomic(&out.join("provenance.json"), &data.provenance)?;
    log(common, 1, json!({ "level": "info", "event": "simulated", "n": cfg.n, "p": cfg.p, "q": cfg.q, "seed": seed }));
    Ok(0)
}

fn default_policy() -> NearZeroPolicy {
    NearZeroPolicy::Warn
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    /// Directory holding `X.csv`, `Y.csv` and optionally `provenance.json`.
    data: PathBuf,
    method: Method,
    /// Defaults to the rank recorded in `provenance.json`.
    #[serde(default)]
    r: Option<usize>,
    #[serde(default)]
    score: Option<ScoreMode>,
    #[serde(default = "default_policy")]
    near_zero: NearZeroPolicy,
    /// Extra unlabeled rows for the semi-supervised methods.
    #[serde(default)]
    unlabeled: Option<PathBuf>,
    #[serde(default)]
    label_weight: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    method: Method,
    score_mode: &'a str,
    n: usize,
    p: usize,
    q: usize,
    r: usize,
    values: &'a [f64],
    warnings: &'a [FitWarning],
}

fn read_provenance(dir: &Path) -> Result<Option<Provenance>, Failure> {
    let path = dir.join("provenance.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Runtime(Error::Io(e)))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Failure::config(format!("invalid {}: {e}", path.display())))
}

pub fn fit(common: &Common) -> Result<u8, Failure> {
    let path = config_path(common)?;
    let cfg: FitConfig = serde_json::from_value(read_object(path)?.into())
        .map_err(|e| Failure::config(e.to_string()))?;
    let out = out_dir(common)?;
    let dir = resolve(path, &cfg.data);
    let provenance = read_provenance(&dir)?;
    let r = cfg
        .r
        .or(provenance.as_ref().map(|p| p.config.r))
        .ok_or_else(|| Failure::config("r is required when the data has no provenance.json"))?;
    let score = if cfg.method.uses_scores() {
        Some(cfg.score.unwrap_or(ScoreMode::PlugIn))
    } else if cfg.score.is_some() {
        return Err(Failure::config(format!("{} does not use a score", cfg.method.label())));
    } else {
        None
    };
    if cfg.unlabeled.is_some() && !matches!(cfg.method, Method::SemiFirst | Method::SemiSecond) {
        return Err(Failure::config("`unlabeled` applies to semi-supervised methods only"));
    }

    let x = read_matrix(&dir.join("X.csv"))?;
    let y = read_matrix(&dir.join("Y.csv"))?;
    let x_all = match &cfg.unlabeled {
        Some(u) => {
            let extra = read_matrix(&resolve(path, u))?;
            if extra.ncols() != x.ncols() {
                return Err(Failure::config(format!(
                    "unlabeled rows have {} columns, X has {}",
                    extra.ncols(),
                    x.ncols()
                )));
            }
            let mut all = DMatrix::zeros(x.nrows() + extra.nrows(), x.ncols());
            all.rows_mut(0, x.nrows()).copy_from(&x);
            all.rows_mut(x.nrows(), extra.nrows()).copy_from(&extra);
            all
        }
        None => x.clone(),
    };

    let field = match score {
        Some(ScoreMode::Known) => {
            let prov = provenance
                .as_ref()
                .ok_or_else(|| Failure::config("score `known` needs provenance.json next to the data"))?;
            Some(ScoreField::closed_form(prov.config.realize(prov.seed)?.spec))
        }
        Some(ScoreMode::PlugIn) => Some(ScoreField::plugin_gaussian(&x_all, false)?),
        None => None,
    };
    let semi = || -> Result<SemiSupervisedData, Failure> {
        let d = SemiSupervisedData::new(x.clone(), y.clone(), x_all.clone())?;
        Ok(match cfg.label_weight {
            Some(w) => d.with_label_weight(w)?,
            None => d,
        })
    };
    let f = || field.as_ref().expect("score methods have a field");
    let basis: LatentBasis = match cfg.method {
        Method::FirstOrder => first_order_fit(&x, &y, r, f())?,
        Method::SecondOrder => second_order_fit_with(&x, &y, r, f(), cfg.near_zero)?,
        Method::Pca => pca_fit(&x, r)?,
        Method::Rrr => rrr_fit(&x, &y, r)?,
        Method::SemiFirst => semi_first_order_fit(&semi()?, r, f())?,
        Method::SemiSecond => semi_second_order_fit_with(&semi()?, r, f(), cfg.near_zero)?,
    };

    create_dir(out)?;
    write_matrix_csv(&out.join("B_hat.csv"), &basis.matrix)?;
    let report = FitReport {
        method: cfg.method,
        score_mode: score.map_or("none", ScoreMode::label),
        n: x.nrows(),
        p: x.ncols(),
        q: y.ncols(),
        r,
        values: &basis.values,
        warnings: &basis.warnings,
    };
    write_json_atomic(&out.join("fit-report.json"), &report)?;
    for w in &basis.warnings {
        log(common, 0, json!({ "level": "warning", "code": w.tag(), "detail": w }));
    }
    Ok(0)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionConfig {
    x_train: PathBuf,
    y_train: PathBuf,
    x_test: PathBuf,
    y_test: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconstructionConfig {
    estimate: PathBuf,
    reference: PathBuf,
    /// Dynamic range for SSIM; defaults to the reference's max minus min.
    #[serde(default)]
    range: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    estimate: PathBuf,
    truth: PathBuf,
    #[serde(default)]
    prediction: Option<PredictionConfig>,
    #[serde(default)]
    reconstruction: Option<ReconstructionConfig>,
}

#[derive(Debug, Serialize)]
struct Metrics {
    p: usize,
    r: usize,
    distance: f64,
    /// `√(2r)`, the largest possible distance.
    max_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nrse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim: Option<f64>,
}

pub fn eval(common: &Common) -> Result<u8, Failure> {
    let path = config_path(common)?;
    let cfg: EvalConfig = serde_json::from_value(read_object(path)?.into())
        .map_err(|e| Failure::config(e.to_string()))?;
    let out = out_dir(common)?;
    let estimate = read_matrix(&resolve(path, &cfg.estimate))?;
    let truth = read_matrix(&resolve(path, &cfg.truth))?;
    if estimate.shape() != truth.shape() {
        return Err(Failure::config(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let r = truth.ncols();
    let mut metrics = Metrics {
        p: truth.nrows(),
        r,
        distance: subspace_dist(&estimate, &truth)?.distance,
        max_distance: (2.0 * r as f64).sqrt(),
        pmse: None,
        nrse: None,
        ssim: None,
    };
    if let Some(pc) = &cfg.prediction {
        let load = |p: &PathBuf| read_matrix(&resolve(path, p));
        let (x_train, y_train, x_test, y_test) = (load(&pc.x_train)?, load(&pc.y_train)?, load(&pc.x_test)?, load(&pc.y_test)?);
        let dec = fit_linear_decoder(&(&x_train * &estimate), &y_train)?;
        metrics.pmse = Some(pmse(&y_test, &dec.predict(&(&x_test * &estimate))?)?);
    }
    if let Some(rc) = &cfg.reconstruction {
        let est = read_matrix(&resolve(path, &rc.estimate))?;
        let reference = read_matrix(&resolve(path, &rc.reference))?;
        let range = rc.range.unwrap_or_else(|| reference.max() - reference.min());
        metrics.nrse = Some(nrse(&est, &reference)?);
        metrics.ssim = Some(ssim(&est, &reference, range)?);
    }
    create_dir(out)?;
    write_json_atomic(&out.join("metrics.json"), &metrics)?;
    Ok(0)
}

pub fn sweep(common: &Common) -> Result<u8, Failure> {
    let path = config_path(common)?;
    let mut cfg = with_preset(read_object(path)?, ExperimentConfig::preset)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let out = out_dir(common)?;
    let records = run_sweep(&cfg)?;
    write_sweep_outputs(out, &cfg, &records)?;
    if common.verbose > 0 {
        use stein_subspace::experiments::{aggregate_median, GroupKey};
        for row in aggregate_median(&records, &GroupKey::ALL_BUT_REP) {
            log(common, 1, json!({ "level": "info", "event": "grid-point", "group": row.group, "median": row.median, "failed": row.n_failed }));
        }
    }
    Ok(0)
}

pub fn check(common: &Common) -> Result<u8, Failure> {
    if common.config.is_some() {
        return Err(Failure::config("check takes no config"));
    }
    let outcomes = run_checks(common.seed.unwrap_or(DEFAULT_CHECK_SEED))?;
    for o in &outcomes {
        println!("{}", serde_json::to_string(o).expect("outcomes serialize"));
    }
    if let Some(out) = &common.out {
        create_dir(out)?;
        write_json_atomic(&out.join("check-report.json"), &outcomes)?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("{}", json!({ "level": "error", "code": "check-failed", "failed": failed }));
        Ok(1)
    }
}

//! Scenario orchestration: per-replication pipelines, replication-parallel
//! scenario runs with order-independent determinism, aggregation of
//! replication CSVs into performance tables, and the runtime benchmark.
//!
//! Stream layout: replication r draws from substream(seed, r << 16) and its
//! children (dataset, amputation, imputation chains); MAR calibration uses
//! the reserved substream index u64::MAX.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data_model::{
    Dataset, MethodId, MissingnessKind, ReplicationResult, ScenarioConfig,
};
use crate::dgm::{default_params, generate_dataset, DgmParams};
use crate::error::{Error, Result};
use crate::estimation::{diagnostics_for, estimate_effect, run_mi_analysis};
use crate::imputation::{choose_m, mice_impute};
use crate::metrics::{summarize, PerfRow, PERF_CSV_HEADER};
use crate::missingness::{ampute, calibrate_mar, calibrate_mcar, MissingnessPlan};
use crate::rng::RngStream;
use crate::weights::{estimate_weights, winsorise};

pub const CALIBRATION_STREAM: u64 = u64::MAX;

const TAG_DATASET: u64 = 1;
const TAG_AMPUTE: u64 = 2;
const TAG_MICE: u64 = 3;

/// Outcome of one (replication, method, variant): either a result or the
/// failure message, with the method's wall-clock seconds.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep_index: usize,
    pub method: MethodId,
    pub winsorised: bool,
    pub outcome: std::result::Result<ReplicationResult, String>,
    pub seconds: f64,
}

/// Everything produced by one scenario run.
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub plan: Option<MissingnessPlan>,
    pub records: Vec<RepRecord>,
    pub perf: Vec<PerfRow>,
}

fn params_for(config: &ScenarioConfig) -> Result<DgmParams> {
    let mut params = default_params(config.exposure_dgm, config.true_rr)?;
    params.a_max = config.a_max;
    Ok(params)
}

/// Build the calibrated plan for a config, generating the MAR reference
/// sample from the scenario's own DGM on the reserved substream.
pub fn calibrate_plan(config: &ScenarioConfig) -> Result<Option<MissingnessPlan>> {
    match config.missingness {
        MissingnessKind::None => Ok(None),
        MissingnessKind::Mcar => Ok(Some(calibrate_mcar(config.phi_target)?)),
        MissingnessKind::Mar | MissingnessKind::MarNoExposure => {
            let params = params_for(config)?;
            let mut rng = RngStream::substream(config.seed, CALIBRATION_STREAM);
            let reference = generate_dataset(config.reference_n, &params, &mut rng)?;
            let ampute_exposure = config.missingness == MissingnessKind::Mar;
            Ok(Some(calibrate_mar(
                config.phi_target,
                &reference,
                ampute_exposure,
            )?))
        }
    }
}

/// Run one replication end to end, deterministically from
/// (config.seed, rep_index): generate, optionally ampute and impute, then
/// estimate every configured method, raw and winsorised variants both.
pub fn run_replication(
    config: &ScenarioConfig,
    plan: Option<&MissingnessPlan>,
    rep_index: usize,
) -> Vec<RepRecord> {
    match run_replication_inner(config, plan, rep_index) {
        Ok(records) => records,
        Err(e) => {
            // setup failure (data generation or imputation): every method
            // in the replication is recorded as failed
            let mut out = Vec::new();
            for &method in &config.methods {
                for winsorised in variants(config, method) {
                    out.push(RepRecord {
                        rep_index,
                        method,
                        winsorised,
                        outcome: Err(e.to_string()),
                        seconds: 0.0,
                    });
                }
            }
            out
        }
    }
}

fn variants(config: &ScenarioConfig, method: MethodId) -> Vec<bool> {
    if method.is_weighting() && config.winsorize_percentile < 1.0 {
        vec![false, true]
    } else {
        vec![false]
    }
}

fn run_replication_inner(
    config: &ScenarioConfig,
    plan: Option<&MissingnessPlan>,
    rep_index: usize,
) -> Result<Vec<RepRecord>> {
    let params = params_for(config)?;
    let base = RngStream::substream(config.seed, (rep_index as u64) << 16);
    let mut data_rng = base.child(TAG_DATASET);
    let ds = generate_dataset(config.n_obs, &params, &mut data_rng)?;

    let analysed: Dataset;
    let m_used: usize;
    let use_mi: bool;
    match (config.missingness, plan) {
        (MissingnessKind::None, None) => {
            analysed = ds;
            m_used = 1;
            use_mi = false;
        }
        (MissingnessKind::None, Some(_)) => {
            return Err(Error::InvalidParameter(
                "plan supplied for a complete-data scenario".into(),
            ));
        }
        (_, None) => {
            return Err(Error::InvalidParameter(
                "missingness configured but no plan supplied".into(),
            ));
        }
        (_, Some(plan)) => {
            let mut ampute_rng = base.child(TAG_AMPUTE);
            let amputed = ampute(&ds, plan, &mut ampute_rng)?;
            if amputed.missing_cells() == 0 {
                // amputation drew no missing cells; analyse as complete
                analysed = amputed;
                m_used = 1;
                use_mi = false;
            } else {
                m_used = choose_m(&amputed, config.m_cap);
                analysed = amputed;
                use_mi = true;
            }
        }
    }

    let mut records = Vec::new();
    if use_mi {
        let mice_stream = base.child(TAG_MICE);
        let ims = mice_impute(&analysed, m_used, config.mice_cycles, &mice_stream)?;
        for &method in &config.methods {
            let t0 = Instant::now();
            match run_mi_analysis(&ims, method, config.winsorize_percentile) {
                Ok(analysis) => {
                    let seconds = t0.elapsed().as_secs_f64();
                    records.push(RepRecord {
                        rep_index,
                        method,
                        winsorised: false,
                        outcome: Ok(ReplicationResult {
                            rep_index,
                            method,
                            winsorised: false,
                            theta_hat: analysis.raw.theta,
                            var_hat: analysis.raw.t,
                            ci_lo: analysis.raw.ci_lo,
                            ci_hi: analysis.raw.ci_hi,
                            diagnostics: analysis.diag_raw,
                            m_used,
                        }),
                        seconds,
                    });
                    if let Some(win) = analysis.winsorised {
                        records.push(RepRecord {
                            rep_index,
                            method,
                            winsorised: true,
                            outcome: Ok(ReplicationResult {
                                rep_index,
                                method,
                                winsorised: true,
                                theta_hat: win.theta,
                                var_hat: win.t,
                                ci_lo: win.ci_lo,
                                ci_hi: win.ci_hi,
                                diagnostics: analysis.diag_winsorised,
                                m_used,
                            }),
                            seconds,
                        });
                    }
                }
                Err(e) => {
                    let seconds = t0.elapsed().as_secs_f64();
                    for winsorised in variants(config, method) {
                        records.push(RepRecord {
                            rep_index,
                            method,
                            winsorised,
                            outcome: Err(e.to_string()),
                            seconds,
                        });
                    }
                }
            }
        }
    } else {
        for &method in &config.methods {
            let t0 = Instant::now();
            let result = complete_data_method(&analysed, method, config);
            let seconds = t0.elapsed().as_secs_f64();
            match result {
                Ok(pairs) => {
                    for (winsorised, mut rr) in pairs {
                        rr.rep_index = rep_index;
                        rr.m_used = m_used;
                        records.push(RepRecord {
                            rep_index,
                            method,
                            winsorised,
                            outcome: Ok(rr),
                            seconds,
                        });
                    }
                }
                Err(e) => {
                    for winsorised in variants(config, method) {
                        records.push(RepRecord {
                            rep_index,
                            method,
                            winsorised,
                            outcome: Err(e.to_string()),
                            seconds,
                        });
                    }
                }
            }
        }
    }
    Ok(records)
}

fn complete_data_method(
    ds: &Dataset,
    method: MethodId,
    config: &ScenarioConfig,
) -> Result<Vec<(bool, ReplicationResult)>> {
    let mut out = Vec::new();
    if method.is_weighting() {
        let wv = estimate_weights(ds, method)?;
        let est = estimate_effect(ds, method, Some(&wv))?;
        let diag = diagnostics_for(ds, &wv)?;
        out.push((
            false,
            ReplicationResult {
                rep_index: 0,
                method,
                winsorised: false,
                theta_hat: est.theta,
                var_hat: est.se * est.se,
                ci_lo: est.ci_lo,
                ci_hi: est.ci_hi,
                diagnostics: Some(diag),
                m_used: 1,
            },
        ));
        if config.winsorize_percentile < 1.0 {
            let wvw = winsorise(&wv, config.winsorize_percentile)?;
            let estw = estimate_effect(ds, method, Some(&wvw))?;
            let diagw = diagnostics_for(ds, &wvw)?;
            out.push((
                true,
                ReplicationResult {
                    rep_index: 0,
                    method,
                    winsorised: true,
                    theta_hat: estw.theta,
                    var_hat: estw.se * estw.se,
                    ci_lo: estw.ci_lo,
                    ci_hi: estw.ci_hi,
                    diagnostics: Some(diagw),
                    m_used: 1,
                },
            ));
        }
    } else {
        let est = estimate_effect(ds, method, None)?;
        out.push((
            false,
            ReplicationResult {
                rep_index: 0,
                method,
                winsorised: false,
                theta_hat: est.theta,
                var_hat: est.se * est.se,
                ci_lo: est.ci_lo,
                ci_hi: est.ci_hi,
                diagnostics: None,
                m_used: 1,
            },
        ));
    }
    Ok(out)
}

/// Run a whole scenario: calibrate once, dispatch replications across the
/// worker pool (output independent of worker count), aggregate, and write
/// the replication and summary CSVs into `out_dir` when given.
pub fn run_scenario(config: &ScenarioConfig, workers: usize, out_dir: Option<&Path>) -> Result<ScenarioRun> {
    config.validate()?;
    let plan = calibrate_plan(config)?;
    let plan_ref = plan.as_ref();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
    let mut records: Vec<RepRecord> = pool.install(|| {
        (0..config.n_reps)
            .into_par_iter()
            .flat_map_iter(|rep| run_replication(config, plan_ref, rep))
            .collect()
    });
    records.sort_by_key(|r| (r.rep_index, r.method, r.winsorised));

    let perf = aggregate_records(&config.scenario_id(), config.theta_true(), &records)?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let id = config.scenario_id();
        let rep_path = dir.join(format!("{id}_replications.csv"));
        write_replications_csv(&records, &config.scenario_id(), &rep_path)?;
        let perf_path = dir.join(format!("{id}_summary.csv"));
        write_perf_csv(&perf, &perf_path)?;
        if let Some(p) = plan_ref {
            let plan_path = dir.join(format!("{id}_plan.txt"));
            std::fs::write(&plan_path, p.to_plan_string())
                .map_err(|e| Error::io(plan_path.display().to_string(), e))?;
        }
    }

    Ok(ScenarioRun {
        config: config.clone(),
        plan,
        records,
        perf,
    })
}

pub const REPLICATION_CSV_HEADER: &str =
    "scenario,rep,method,winsorised,theta_hat,var_hat,ci_lo,ci_hi,m_used,ess,mean_abs_rho,d_w,eps_a,eps_c,failed";

pub fn write_replications_csv(
    records: &[RepRecord],
    scenario: &str,
    path: &Path,
) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 96 + 128);
    out.push_str(REPLICATION_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&replication_csv_row(r, scenario));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn replication_csv_row(r: &RepRecord, scenario: &str) -> String {
    match &r.outcome {
        Ok(res) => {
            let diag = res.diagnostics.as_ref();
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            format!(
                "{scenario},{},{},{},{},{},{},{},{},{},{},{},{},{},0",
                r.rep_index,
                r.method,
                r.winsorised as u8,
                res.theta_hat,
                res.var_hat,
                res.ci_lo,
                res.ci_hi,
                res.m_used,
                opt(diag.map(|d| d.ess)),
                opt(diag.map(|d| d.mean_abs_rho)),
                opt(diag.map(|d| d.d_w)),
                opt(diag.map(|d| d.eps_a)),
                opt(diag.map(|d| d.eps_c)),
            )
        }
        Err(_) => format!(
            "{scenario},{},{},{},,,,,,,,,,,1",
            r.rep_index, r.method, r.winsorised as u8
        ),
    }
}

fn aggregate_records(
    scenario: &str,
    theta_true: f64,
    records: &[RepRecord],
) -> Result<Vec<PerfRow>> {
    let mut groups: BTreeMap<(MethodId, bool), (Vec<&ReplicationResult>, usize)> = BTreeMap::new();
    for r in records {
        let entry = groups.entry((r.method, r.winsorised)).or_default();
        match &r.outcome {
            Ok(res) => entry.0.push(res),
            Err(_) => entry.1 += 1,
        }
    }
    let mut rows = Vec::new();
    for ((method, winsorised), (results, failed)) in groups {
        if results.len() < 2 {
            continue; // cannot summarise; failures still visible in the rep CSV
        }
        rows.push(summarize(
            scenario,
            method,
            winsorised,
            &results,
            theta_true,
            failed,
        )?);
    }
    Ok(rows)
}

pub fn write_perf_csv(rows: &[PerfRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(PERF_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parsed row of a replication CSV (used by `aggregate`).
struct ParsedRep {
    scenario: String,
    result: std::result::Result<ReplicationResult, ()>,
    method: MethodId,
    winsorised: bool,
}

/// Concatenate replication CSVs, group by (scenario, method, winsorised),
/// and summarise. The true effect is recovered from each scenario id's rr
/// token.
pub fn aggregate(paths: &[impl AsRef<Path>]) -> Result<Vec<PerfRow>> {
    let mut parsed: Vec<ParsedRep> = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == REPLICATION_CSV_HEADER => {}
            _ => {
                return Err(Error::Validation(format!(
                    "{}: missing or unexpected replication CSV header",
                    path.display()
                )))
            }
        }
        for (line_no, line) in lines {
            if line.is_empty() {
                continue;
            }
            parsed.push(parse_replication_row(line, path, line_no + 1)?);
        }
    }

    let mut groups: BTreeMap<(String, MethodId, bool), (Vec<ReplicationResult>, usize)> =
        BTreeMap::new();
    for p in parsed {
        let entry = groups
            .entry((p.scenario.clone(), p.method, p.winsorised))
            .or_default();
        match p.result {
            Ok(res) => entry.0.push(res),
            Err(()) => entry.1 += 1,
        }
    }
    let mut rows = Vec::new();
    for ((scenario, method, winsorised), (results, failed)) in groups {
        let theta_true = ScenarioConfig::theta_true_from_scenario_id(&scenario)?;
        if results.len() < 2 {
            continue;
        }
        let refs: Vec<&ReplicationResult> = results.iter().collect();
        rows.push(summarize(
            &scenario,
            method,
            winsorised,
            &refs,
            theta_true,
            failed,
        )?);
    }
    Ok(rows)
}

fn parse_replication_row(line: &str, path: &Path, line_no: usize) -> Result<ParsedRep> {
    let cells: Vec<&str> = line.split(',').collect();
    let bad = |what: &str| Error::Parse {
        path: path.display().to_string(),
        line: line_no,
        column: what.to_string(),
        message: format!("malformed cell in '{line}'"),
    };
    if cells.len() != 15 {
        return Err(bad("<row>"));
    }
    let scenario = cells[0].to_string();
    let rep_index: usize = cells[1].parse().map_err(|_| bad("rep"))?;
    let method: MethodId = cells[2].parse()?;
    let winsorised = match cells[3] {
        "0" => false,
        "1" => true,
        _ => return Err(bad("winsorised")),
    };
    let failed = match cells[14] {
        "0" => false,
        "1" => true,
        _ => return Err(bad("failed")),
    };
    if failed {
        return Ok(ParsedRep {
            scenario,
            result: Err(()),
            method,
            winsorised,
        });
    }
    let f = |i: usize, name: &str| -> Result<f64> { cells[i].parse().map_err(|_| bad(name)) };
    let opt_f = |i: usize, name: &str| -> Result<Option<f64>> {
        if cells[i].is_empty() {
            Ok(None)
        } else {
            Ok(Some(f(i, name)?))
        }
    };
    let diagnostics = match (
        opt_f(9, "ess")?,
        opt_f(10, "mean_abs_rho")?,
        opt_f(11, "d_w")?,
        opt_f(12, "eps_a")?,
        opt_f(13, "eps_c")?,
    ) {
        (Some(ess), Some(rho), Some(d_w), Some(eps_a), Some(eps_c)) => {
            Some(crate::diagnostics::WeightDiagnostics {
                ess,
                rho_w: vec![rho],
                mean_abs_rho: rho,
                d_w,
                eps_a,
                eps_c,
                dcov_w: 0.0,
            })
        }
        _ => None,
    };
    Ok(ParsedRep {
        scenario,
        result: Ok(ReplicationResult {
            rep_index,
            method,
            winsorised,
            theta_hat: f(4, "theta_hat")?,
            var_hat: f(5, "var_hat")?,
            ci_lo: f(6, "ci_lo")?,
            ci_hi: f(7, "ci_hi")?,
            diagnostics,
            m_used: cells[8].parse().map_err(|_| bad("m_used"))?,
        }),
        method,
        winsorised,
    })
}

/// Pairwise geometric-mean runtime ratios over benchmark datasets.
pub struct BenchResult {
    pub methods: Vec<MethodId>,
    /// ratio[i][j] = geometric mean over datasets of time(i)/time(j).
    pub ratio: Vec<Vec<f64>>,
    pub mean_seconds: Vec<f64>,
    /// (dataset, method) pairs that failed and were excluded.
    pub failures: Vec<(usize, MethodId, String)>,
}

/// Time each weighting method on freshly generated benchmark datasets
/// (negbin DGM, true RR 1.1). One untimed warm-up pass precedes timing;
/// within each dataset methods run in a randomised order.
pub fn bench_runtimes(
    n_datasets: usize,
    n_obs: usize,
    methods: &[MethodId],
    seed: u64,
) -> Result<BenchResult> {
    if methods.iter().any(|m| !m.is_weighting()) {
        return Err(Error::InvalidParameter(
            "bench covers weighting methods only".into(),
        ));
    }
    if n_datasets == 0 {
        return Err(Error::InvalidParameter("need at least one dataset".into()));
    }
    let params = default_params(crate::data_model::ExposureDgm::NegBin, 1.1)?;
    let datasets: Vec<Dataset> = (0..n_datasets)
        .map(|d| {
            let mut rng = RngStream::substream(seed, d as u64);
            generate_dataset(n_obs, &params, &mut rng)
        })
        .collect::<Result<_>>()?;

    // warm-up on the first dataset
    for &m in methods {
        let _ = estimate_weights(&datasets[0], m);
    }

    let k = methods.len();
    let mut times: Vec<Vec<Option<f64>>> = vec![vec![None; k]; n_datasets];
    let mut failures = Vec::new();
    let mut order_rng = RngStream::substream(seed, 1 << 32);
    for (d, ds) in datasets.iter().enumerate() {
        // randomised execution order
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = order_rng.pick(i + 1);
            order.swap(i, j);
        }
        for &mi in &order {
            let t0 = Instant::now();
            match estimate_weights(ds, methods[mi]) {
                Ok(_) => times[d][mi] = Some(t0.elapsed().as_secs_f64()),
                Err(e) => failures.push((d, methods[mi], e.to_string())),
            }
        }
    }

    let mut ratio = vec![vec![f64::NAN; k]; k];
    for i in 0..k {
        for j in 0..k {
            let logs: Vec<f64> = (0..n_datasets)
                .filter_map(|d| match (times[d][i], times[d][j]) {
                    (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln()),
                    _ => None,
                })
                .collect();
            if !logs.is_empty() {
                ratio[i][j] = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
            }
        }
    }
    let mean_seconds = (0..k)
        .map(|i| {
            let vals: Vec<f64> = (0..n_datasets).filter_map(|d| times[d][i]).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    Ok(BenchResult {
        methods: methods.to_vec(),
        ratio,
        mean_seconds,
        failures,
    })
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_seconds");
        for m in &self.methods {
            out.push_str(&format!(",ratio_vs_{m}"));
        }
        out.push('\n');
        for (i, m) in self.methods.iter().enumerate() {
            out.push_str(&format!("{m},{}", self.mean_seconds[i]));
            for j in 0..self.methods.len() {
                out.push_str(&format!(",{}", self.ratio[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

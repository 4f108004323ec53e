//! One function per subcommand: resolve parameters, run, write artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use emacv::backtest::{
    load_returns, normalize_cross_section, regime_panel, rolling_backtest, save_panel, winsorize,
    BacktestConfig, BacktestReport, BetaPolicy, PortfolioEstimator, RegimePanelConfig, ReturnPanel,
};
use emacv::calibration::{calibrate_returns, log_grid, Bandwidth, CalibrationConfig, OutlierRule};
use emacv::eigh;
use emacv::rmt::{default_grid, lsd_density, spectral_edges, LsdParams};
use emacv::rng::substream;
use emacv::simulation::{
    concentration_designs, concentration_experiment, convergence_designs, convergence_experiment,
    shrinkage_response, ExperimentOutput, SimDesign,
};
use emacv::spectral::format_full;

use crate::args::{
    BacktestArgs, CalibrateArgs, ConcentrationArgs, ConvergenceArgs, EstimateArgs, LsdArgs,
    ResponseArgs, SynthPanelArgs,
};
use crate::error::{CliError, CliResult};
use crate::output::Run;

/// Settings shared by every subcommand.
pub struct Globals {
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing required parameter --{flag}")))
}

fn open_panel(path: &Path, run: &mut Run) -> CliResult<ReturnPanel> {
    run.record_input(path)?;
    let panel = load_returns(path)?;
    for sibling in ["volumes.csv", "caps.csv"] {
        let p = path.with_file_name(sibling);
        if p.exists() {
            run.record_input(&p)?;
        }
    }
    Ok(panel)
}

fn full(v: f64) -> String {
    format_full(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_full).unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct EstimateConfig {
    input: String,
    estimator: String,
    beta: f64,
    folds: usize,
    window: Option<usize>,
}

pub fn estimate(args: EstimateArgs, g: &Globals) -> CliResult<()> {
    let input = required(args.input, "input")?;
    let estimator: PortfolioEstimator = args.estimator.as_deref().unwrap_or("EMA-CV").parse()?;
    if estimator == PortfolioEstimator::EqualWeight {
        return Err(CliError::Config(
            "estimator 1/N has no covariance estimate".into(),
        ));
    }
    let config = EstimateConfig {
        input: input.display().to_string(),
        estimator: estimator.name().to_string(),
        beta: args.beta.unwrap_or(0.996),
        folds: args.folds.unwrap_or(10),
        window: args.window,
    };
    let mut run = Run::new("estimate", g.seed, &config, &g.out_dir)?;
    let panel = open_panel(&input, &mut run)?;
    let x = panel.recent_first(config.window)?;

    let fold_seed = substream(g.seed, "folds", 0);
    let raw_kind = if estimator.is_weighted() {
        PortfolioEstimator::Ema
    } else {
        PortfolioEstimator::Scm
    };
    let raw = raw_kind
        .estimate(&x, config.beta, config.folds, fold_seed)?
        .expect("raw estimators return a matrix");
    let sigma = estimator
        .estimate(&x, config.beta, config.folds, fold_seed)?
        .expect("non-1/N estimators return a matrix");
    let sample = eigh(&raw)?;
    let cleaned = eigh(&sigma)?;

    run.write(
        "covariance.csv",
        &[format!(
            "{} covariance, {} assets, headerless",
            estimator,
            panel.n()
        )],
        |out| sigma.write_csv(out),
    )?;
    run.write("eigenvalues.csv", &["ascending order".into()], |out| {
        writeln!(out, "index,sample,estimate")?;
        for (i, (s, e)) in sample
            .eigenvalues()
            .iter()
            .zip(cleaned.eigenvalues())
            .enumerate()
        {
            writeln!(out, "{i},{},{}", full(*s), full(*e))?;
        }
        Ok(())
    })?;
    println!(
        "estimate: {} on {}x{} window, trace {:.6}, artifacts in {}",
        estimator,
        x.nrows(),
        x.ncols(),
        sigma.trace(),
        g.out_dir.display()
    );
    run.finish()
}

#[derive(Debug, Serialize)]
struct LsdConfig {
    q: f64,
    q_e: f64,
    sigma2: f64,
    eta: f64,
    points: usize,
}

pub fn lsd(args: LsdArgs, g: &Globals) -> CliResult<()> {
    let config = LsdConfig {
        q: required(args.q, "q")?,
        q_e: required(args.qe, "qe")?,
        sigma2: args.sigma2.unwrap_or(1.0),
        eta: args.eta.unwrap_or(emacv::rmt::DEFAULT_ETA),
        points: args.points.unwrap_or(emacv::rmt::DEFAULT_GRID_POINTS),
    };
    let params = LsdParams::new(config.q, config.q_e, config.sigma2)?;
    let mut run = Run::new("lsd", g.seed, &config, &g.out_dir)?;
    let grid = default_grid(&params, config.points)?;
    let density = lsd_density(&grid, &params, config.eta)?;
    let (lo, hi) = spectral_edges(&params)?;
    let comments = [
        format!(
            "q={} q_e={} sigma2={} eta={} M={}",
            config.q, config.q_e, config.sigma2, config.eta, config.points
        ),
        format!(
            "point_mass_at_zero={} lower_edge={} upper_edge={}",
            full(density.point_mass),
            full(lo),
            full(hi)
        ),
    ];
    run.write("lsd.csv", &comments, |out| {
        writeln!(out, "lambda,density")?;
        for (l, d) in density.lambdas.iter().zip(&density.densities) {
            writeln!(out, "{},{}", full(*l), full(*d))?;
        }
        Ok(())
    })?;
    println!(
        "lsd: q={} q_e={} integral {:.6} (+ atom {:.6}), support [{lo:.6}, {hi:.6}]",
        config.q,
        config.q_e,
        density.integral(),
        density.point_mass
    );
    run.finish()
}

#[derive(Debug, Serialize)]
struct CalibrateConfig {
    input: String,
    window: Option<usize>,
    preprocess: bool,
    qe_min: f64,
    qe_max: f64,
    candidates: usize,
    outliers: String,
    bandwidth: String,
    grid_size: usize,
    smooth_theory: bool,
}

fn parse_outliers(s: &str) -> CliResult<OutlierRule> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(OutlierRule::Auto);
    }
    s.parse()
        .map(OutlierRule::Fixed)
        .map_err(|_| CliError::Config(format!("--outliers expects `auto` or a count, got `{s}`")))
}

fn parse_bandwidth(s: &str) -> CliResult<Bandwidth> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Bandwidth::Auto);
    }
    s.parse()
        .map(Bandwidth::Fixed)
        .map_err(|_| CliError::Config(format!("--bandwidth expects `auto` or a number, got `{s}`")))
}

pub fn calibrate(args: CalibrateArgs, g: &Globals) -> CliResult<()> {
    let input = required(args.input, "input")?;
    let defaults = CalibrationConfig::default();
    let config = CalibrateConfig {
        input: input.display().to_string(),
        window: args.window,
        preprocess: args.preprocess.unwrap_or(true),
        qe_min: args
            .qe_min
            .unwrap_or(emacv::calibration::DEFAULT_QE_RANGE.0),
        qe_max: args
            .qe_max
            .unwrap_or(emacv::calibration::DEFAULT_QE_RANGE.1),
        candidates: args
            .candidates
            .unwrap_or(emacv::calibration::DEFAULT_QE_CANDIDATES),
        outliers: args.outliers.unwrap_or_else(|| "auto".into()),
        bandwidth: args.bandwidth.unwrap_or_else(|| "auto".into()),
        grid_size: args.grid_size.unwrap_or(defaults.grid_size),
        smooth_theory: args.smooth_theory.unwrap_or(defaults.smooth_theory),
    };
    if !(config.qe_min > 0.0 && config.qe_min < config.qe_max) || config.candidates < 1 {
        return Err(CliError::Config(format!(
            "need 0 < qe-min < qe-max and at least one candidate, got [{}, {}] with {}",
            config.qe_min, config.qe_max, config.candidates
        )));
    }
    let calibration = CalibrationConfig {
        outliers: parse_outliers(&config.outliers)?,
        bandwidth: parse_bandwidth(&config.bandwidth)?,
        grid_size: config.grid_size,
        qe_grid: log_grid(config.qe_min, config.qe_max, config.candidates),
        smooth_theory: config.smooth_theory,
    };
    let mut run = Run::new("calibrate", g.seed, &config, &g.out_dir)?;
    let panel = open_panel(&input, &mut run)?;
    let mut x = panel.recent_first(config.window)?;
    if config.preprocess {
        x = normalize_cross_section(&winsorize(&x, 0.005, 0.995)?)?;
    }
    let result = calibrate_returns(&x, &calibration)?;

    let skipped: Vec<String> = result
        .failures
        .iter()
        .map(|(q, e)| format!("skipped q_e={}: {e}", full(*q)))
        .collect();
    run.write("calibration_curve.csv", &skipped, |out| {
        writeln!(out, "q_e,jsd")?;
        for (q, d) in &result.divergences {
            writeln!(out, "{},{}", full(*q), full(*d))?;
        }
        Ok(())
    })?;
    run.write("calibration_summary.csv", &[], |out| {
        writeln!(out, "beta_hat,qe_hat,T_e,p_used,h_used")?;
        writeln!(
            out,
            "{},{},{},{},{}",
            full(result.beta_hat),
            full(result.qe_hat),
            full(result.timescale()),
            result.p_used,
            full(result.h_used)
        )
    })?;
    println!(
        "calibrate: beta_hat={:.6} qe_hat={:.6} T_e={:.1} p={} h={:.4}",
        result.beta_hat,
        result.qe_hat,
        result.timescale(),
        result.p_used,
        result.h_used
    );
    run.finish()
}

fn write_experiment(run: &mut Run, output: &ExperimentOutput) -> CliResult<()> {
    run.write("seprial_records.csv", &[], |out| {
        writeln!(out, "estimator,n,t,beta,rep,seprial")?;
        for r in &output.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.estimator,
                r.n,
                r.t,
                full(r.beta),
                r.rep,
                full(r.seprial)
            )?;
        }
        Ok(())
    })?;
    run.write("seprial_summary.csv", &[], |out| {
        writeln!(out, "estimator,n,t,beta,reps,mean,std_error")?;
        for r in &output.reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.estimator,
                r.n,
                r.t,
                full(r.beta),
                r.reps,
                full(r.mean),
                full(r.std_error)
            )?;
        }
        Ok(())
    })
}

fn print_reports(mode: &str, output: &ExperimentOutput) {
    let parts: Vec<String> = output
        .reports
        .iter()
        .map(|r| format!("{}@N={}: {:.2}", r.estimator, r.n, r.mean))
        .collect();
    println!("simulate {mode}: {}", parts.join(", "));
}

#[derive(Debug, Serialize)]
struct ConvergenceConfig {
    ns: Vec<usize>,
    q: f64,
    beta: f64,
    reps: usize,
    folds: usize,
    enforce_timescale: bool,
}

fn finish_designs(designs: &mut [SimDesign], folds: usize, enforce: bool) {
    for d in designs {
        d.folds = folds;
        d.enforce_timescale = enforce;
    }
}

pub fn convergence(args: ConvergenceArgs, g: &Globals) -> CliResult<()> {
    let config = ConvergenceConfig {
        ns: args.ns.unwrap_or_else(|| vec![60, 120, 240]),
        q: args.q.unwrap_or(1.0 / 3.0),
        beta: args.beta.unwrap_or(0.996),
        reps: args.reps.unwrap_or(100),
        folds: args.folds.unwrap_or(10),
        enforce_timescale: args.enforce_timescale.unwrap_or(false),
    };
    let mut designs = convergence_designs(&config.ns, config.q, config.beta, config.reps, g.seed)?;
    finish_designs(&mut designs, config.folds, config.enforce_timescale);
    for d in &designs {
        d.validate()?;
    }
    let mut run = Run::new("simulate-convergence", g.seed, &config, &g.out_dir)?;
    let output = convergence_experiment(&designs)?;
    write_experiment(&mut run, &output)?;
    print_reports("convergence", &output);
    run.finish()
}

#[derive(Debug, Serialize)]
struct ConcentrationConfig {
    qs: Vec<f64>,
    nt: usize,
    beta: f64,
    reps: usize,
    folds: usize,
    enforce_timescale: bool,
}

pub fn concentration(args: ConcentrationArgs, g: &Globals) -> CliResult<()> {
    let config = ConcentrationConfig {
        qs: args.qs.unwrap_or_else(|| vec![0.1, 0.33, 0.6]),
        nt: args.nt.unwrap_or(30_000),
        beta: args.beta.unwrap_or(0.996),
        reps: args.reps.unwrap_or(50),
        folds: args.folds.unwrap_or(10),
        enforce_timescale: args.enforce_timescale.unwrap_or(false),
    };
    let mut designs =
        concentration_designs(&config.qs, config.nt, config.beta, config.reps, g.seed)?;
    finish_designs(&mut designs, config.folds, config.enforce_timescale);
    for d in &designs {
        d.validate()?;
    }
    let mut run = Run::new("simulate-concentration", g.seed, &config, &g.out_dir)?;
    let output = concentration_experiment(&designs)?;
    write_experiment(&mut run, &output)?;
    print_reports("concentration", &output);
    run.finish()
}

#[derive(Debug, Serialize)]
struct ResponseConfig {
    n: usize,
    t: usize,
    beta: f64,
    folds: usize,
    enforce_timescale: bool,
}

pub fn response(args: ResponseArgs, g: &Globals) -> CliResult<()> {
    let config = ResponseConfig {
        n: args.n.unwrap_or(100),
        t: args.t.unwrap_or(300),
        beta: args.beta.unwrap_or(0.996),
        folds: args.folds.unwrap_or(10),
        enforce_timescale: args.enforce_timescale.unwrap_or(false),
    };
    let mut design = SimDesign::new(config.n, config.t, config.beta, 1, g.seed);
    design.folds = config.folds;
    design.enforce_timescale = config.enforce_timescale;
    design.validate()?;
    let mut run = Run::new("simulate-response", g.seed, &config, &g.out_dir)?;
    let (points, rho) = shrinkage_response(&design)?;
    run.write(
        "response.csv",
        &[format!("ls_intensity={}", full(rho))],
        |out| {
            writeln!(out, "estimator,index,sample,estimate")?;
            for p in &points {
                writeln!(
                    out,
                    "{},{},{},{}",
                    p.estimator,
                    p.index,
                    full(p.sample),
                    full(p.estimate)
                )?;
            }
            Ok(())
        },
    )?;
    println!(
        "simulate response: N={} T={} points={} ls_intensity={rho:.4}",
        config.n,
        config.t,
        points.len()
    );
    run.finish()
}

#[derive(Debug, Serialize)]
struct BacktestRunConfig {
    input: String,
    estimators: Vec<String>,
    n_universe: usize,
    t_in: usize,
    t_out: usize,
    beta: String,
    corr_threshold: f64,
    winsor_low: f64,
    winsor_high: f64,
    folds: usize,
    max_windows: Option<usize>,
}

fn beta_policy(s: &str) -> CliResult<BetaPolicy> {
    if s.eq_ignore_ascii_case("calibrated") {
        return Ok(BetaPolicy::CalibratedMonthly);
    }
    s.parse().map(BetaPolicy::Fixed).map_err(|_| {
        CliError::Config(format!(
            "--beta expects a decay rate or `calibrated`, got `{s}`"
        ))
    })
}

pub fn backtest(args: BacktestArgs, g: &Globals) -> CliResult<()> {
    let input = required(args.input, "input")?;
    let names = args.estimators.unwrap_or_else(|| {
        PortfolioEstimator::ALL
            .iter()
            .map(|e| e.name().to_string())
            .collect()
    });
    let estimators: Vec<PortfolioEstimator> =
        names.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let base = BacktestConfig::new(0, PortfolioEstimator::EqualWeight);
    let config = BacktestRunConfig {
        input: input.display().to_string(),
        estimators: estimators.iter().map(|e| e.name().to_string()).collect(),
        n_universe: args.n_universe.unwrap_or(100),
        t_in: args.t_in.unwrap_or(base.t_in),
        t_out: args.t_out.unwrap_or(base.t_out),
        beta: args.beta.unwrap_or_else(|| "0.996".into()),
        corr_threshold: args.corr_threshold.unwrap_or(base.corr_threshold),
        winsor_low: args.winsor_low.unwrap_or(base.winsor_quantiles.0),
        winsor_high: args.winsor_high.unwrap_or(base.winsor_quantiles.1),
        folds: args.folds.unwrap_or(base.folds),
        max_windows: args.max_windows,
    };
    let policy = beta_policy(&config.beta)?;
    let configs: Vec<BacktestConfig> = estimators
        .iter()
        .map(|&estimator| BacktestConfig {
            n_universe: config.n_universe,
            t_in: config.t_in,
            t_out: config.t_out,
            estimator,
            beta_policy: policy,
            corr_threshold: config.corr_threshold,
            winsor_quantiles: (config.winsor_low, config.winsor_high),
            folds: config.folds,
            seed: g.seed,
            max_windows: config.max_windows,
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut run = Run::new("backtest", g.seed, &config, &g.out_dir)?;
    let panel = open_panel(&input, &mut run)?;
    let reports: Vec<BacktestReport> = configs
        .iter()
        .map(|c| rolling_backtest(&panel, c))
        .collect::<Result<_, _>>()?;

    run.write(
        "backtest_summary.csv",
        &["AV and SD in percent per annum".into()],
        |out| {
            writeln!(out, "estimator,AV %,SD %,IR")?;
            for r in &reports {
                let m = r.metrics;
                writeln!(
                    out,
                    "{},{},{},{}",
                    r.estimator,
                    full(100.0 * m.av),
                    full(100.0 * m.sd),
                    opt(m.ir)
                )?;
            }
            Ok(())
        },
    )?;
    run.write("backtest_windows.csv", &[], |out| {
        writeln!(
            out,
            "estimator,window,in_start,in_end,out_start,out_end,beta,assets,gmv_variance,equal_weight_variance,out_return"
        )?;
        for r in &reports {
            for w in &r.windows {
                let (gv, ev) = match w.in_sample_variance {
                    Some((a, b)) => (full(a), full(b)),
                    None => (String::new(), String::new()),
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{gv},{ev},{}",
                    r.estimator,
                    w.index,
                    w.in_sample.0,
                    w.in_sample.1,
                    w.out_of_sample.0,
                    w.out_of_sample.1,
                    opt(w.beta),
                    w.assets.len(),
                    full(w.returns.iter().sum())
                )?;
            }
        }
        Ok(())
    })?;
    run.write("backtest_weights.csv", &[], |out| {
        writeln!(out, "estimator,window,asset,weight")?;
        for r in &reports {
            for w in &r.windows {
                for (a, x) in w.assets.iter().zip(&w.weights) {
                    writeln!(out, "{},{},{a},{}", r.estimator, w.index, full(*x))?;
                }
            }
        }
        Ok(())
    })?;
    run.write("backtest_returns.csv", &[], |out| {
        writeln!(out, "estimator,window,date,return")?;
        for r in &reports {
            for w in &r.windows {
                let first = w.index * config.t_out + config.t_in;
                for (k, x) in w.returns.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{}",
                        r.estimator,
                        w.index,
                        panel.dates[first + k],
                        full(*x)
                    )?;
                }
            }
        }
        Ok(())
    })?;
    for r in &reports {
        let m = r.metrics;
        let ir = m.ir.map_or("undefined".to_string(), |v| format!("{v:.3}"));
        println!(
            "backtest {}: {} windows, AV {:.2}%, SD {:.2}%, IR {ir}",
            r.estimator,
            r.windows.len(),
            100.0 * m.av,
            100.0 * m.sd
        );
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct SynthConfig {
    assets: usize,
    days: usize,
    sectors: usize,
    regime_length: f64,
    daily_vol: f64,
}

pub fn synth_panel(args: SynthPanelArgs, g: &Globals) -> CliResult<()> {
    let defaults = RegimePanelConfig::new(110, 1250 + 60 * 21);
    let config = SynthConfig {
        assets: args.assets.unwrap_or(defaults.assets),
        days: args.days.unwrap_or(defaults.days),
        sectors: args.sectors.unwrap_or(defaults.sectors),
        regime_length: args.regime_length.unwrap_or(defaults.mean_regime_length),
        daily_vol: args.daily_vol.unwrap_or(defaults.daily_vol),
    };
    let panel_config = RegimePanelConfig {
        assets: config.assets,
        days: config.days,
        sectors: config.sectors,
        mean_regime_length: config.regime_length,
        daily_vol: config.daily_vol,
        ..defaults
    };
    let mut run = Run::new("synth-panel", g.seed, &config, &g.out_dir)?;
    let panel = regime_panel(&panel_config, substream(g.seed, "backtest", 0))?;
    let written = save_panel(&panel, run.out_dir(), &run.header())?;
    run.add_artifacts(written);
    println!(
        "synth-panel: {} assets x {} days written to {}",
        panel.n(),
        panel.t(),
        g.out_dir.display()
    );
    run.finish()
}

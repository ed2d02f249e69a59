mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nnr_core::designs::{
    appendix_i_gram, build_deconv_instance, design_one_instance, design_two_instance, fig_cs_matrix, generate_with,
    load_instance, save_instance, DeconvSpec, DesignKind, DesignSpec, Ensemble,
};
use nnr_core::diagnostics::{constants_for_support, DEFAULT_M};
use nnr_core::estimators::{nn_lasso, nn_lasso_kkt, omp, recover_support, ridge, threshold_hard};
use nnr_core::nnls::kkt_check;
use nnr_core::rng::{master_rng, normal_vec, substream};
use nnr_core::simlab::{
    deconv_experiment, prop2_empirical, recovery_phase_experiment, tau_contour_study, with_threads, ContourConfig,
    DeconvConfig, ExperimentReport, Prop2Config, RecoveryCell, RecoveryConfig, RecoveryDesign,
};
use nnr_core::{nnls_solve, tau0, GroundTruth, NnlsOptions, RegressionInstance};

use config::Settings;

#[derive(Parser)]
#[command(name = "nnr", version, about = "Non-negative least squares for sparse regression")]
struct Cli {
    /// Flat key=value configuration file; command-line settings override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; falls back to the config file, then NNR_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiments.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path: file prefix for `gen`, directory for `experiment`, file otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a design and response and write manifest plus matrix files.
    Gen {
        /// orthonormal, power-decay, gaussian, equicorr, ens-plus, localized-gaussian,
        /// localized-exp, group-testing, appendix-i, fig-cs, deconv, design-one, design-two
        design: String,
        settings: Vec<String>,
    },
    /// Fit an estimator to a stored instance.
    Solve {
        instance: PathBuf,
        settings: Vec<String>,
        /// nnls (default), nnlasso, omp, ridge, threshold
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Margins, constants and bounds for a support.
    Diagnose { instance: PathBuf, settings: Vec<String> },
    /// Thresholded NNLS with a data-driven model size.
    Recover {
        instance: PathBuf,
        settings: Vec<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long = "m")]
        m: Option<f64>,
    },
    /// Run a named experiment: prop2, tau-contour, deconv, recovery-phase.
    Experiment { name: String, settings: Vec<String> },
}

const COMMON_KEYS: [&str; 2] = ["seed", "threads"];

fn keys<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut k: Vec<&str> = COMMON_KEYS.to_vec();
    k.extend_from_slice(extra);
    k
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .find_map(|c| c.downcast_ref::<nnr_core::Error>())
                .is_some_and(|c| c.is_numerical());
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (command_settings, allowed): (&[String], Vec<&str>) = match &cli.command {
        Command::Gen { design, settings } => (settings, keys(gen_keys(design)?)),
        Command::Solve { settings, .. } => (settings, keys(&["method", "lambda", "steps", "gamma", "t", "tol"])),
        Command::Diagnose { settings, .. } => (settings, keys(&["support", "sigma", "M"])),
        Command::Recover { settings, .. } => (settings, keys(&["sigma", "M"])),
        Command::Experiment { name, settings } => (settings, keys(experiment_keys(name)?)),
    };
    let mut command_settings = command_settings.to_vec();
    if let Command::Gen { design, .. } = &cli.command {
        if design == "ens-plus" {
            for item in command_settings.iter_mut() {
                if matches!(item.as_str(), "E1" | "E2" | "E3" | "E4") {
                    *item = format!("ensemble={item}");
                }
            }
        }
    }
    let flags: Vec<(&str, Option<String>)> = match &cli.command {
        Command::Solve { method, lambda, steps, gamma, t, tol, .. } => vec![
            ("method", method.clone()),
            ("lambda", lambda.map(|v| v.to_string())),
            ("steps", steps.map(|v| v.to_string())),
            ("gamma", gamma.map(|v| v.to_string())),
            ("t", t.map(|v| v.to_string())),
            ("tol", tol.map(|v| v.to_string())),
        ],
        Command::Recover { sigma, m, .. } => {
            vec![("sigma", sigma.map(|v| v.to_string())), ("M", m.map(|v| v.to_string()))]
        }
        _ => Vec::new(),
    };
    command_settings.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
    let mut settings = Settings::load(cli.config.as_deref(), &command_settings)?;
    settings.reject_unknown(&allowed)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => match settings.raw("seed") {
            Some(_) => settings.require("seed")?,
            None => match std::env::var("NNR_SEED") {
                Ok(v) => v.trim().parse().map_err(|_| anyhow!("NNR_SEED is not an unsigned integer: {v:?}"))?,
                Err(_) => 0,
            },
        },
    };
    settings.set("seed", seed);
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => settings.raw("threads").map(|_| settings.require("threads")).transpose()?,
    };
    if threads == Some(0) {
        bail!("threads must be positive");
    }
    match &cli.command {
        Command::Gen { design, .. } => cmd_gen(design, &settings, seed, cli.out.as_deref()),
        Command::Solve { instance, .. } => cmd_solve(instance, &settings, cli.out.as_deref(), cli.format),
        Command::Diagnose { instance, .. } => cmd_diagnose(instance, &settings, cli.out.as_deref()),
        Command::Recover { instance, .. } => cmd_recover(instance, &settings, cli.out.as_deref()),
        Command::Experiment { name, .. } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            let report = with_threads(threads, || cmd_experiment(name, &settings, seed))??;
            let (csv, json) = report.write(&out)?;
            if cli.format != Some(Format::Json) {
                println!("{}", csv.display());
            } else {
                fs::remove_file(&csv)?;
            }
            if cli.format != Some(Format::Csv) {
                println!("{}", json.display());
            } else {
                fs::remove_file(&json)?;
            }
            Ok(())
        }
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// gen

fn gen_keys(design: &str) -> Result<&'static [&'static str]> {
    Ok(match design {
        "orthonormal" | "gaussian" => &["n", "p", "s", "beta", "sigma"],
        "power-decay" | "equicorr" => &["n", "p", "s", "beta", "sigma", "rho"],
        "ens-plus" => &["n", "p", "s", "beta", "sigma", "ensemble", "a", "pi"],
        "localized-gaussian" => &["n", "p", "s", "beta", "sigma", "width"],
        "localized-exp" => &["n", "p", "s", "b", "sigma"],
        "group-testing" => &["n", "p", "s", "beta", "sigma", "pi"],
        "appendix-i" => &["n", "p", "s", "beta", "sigma"],
        "fig-cs" => &["sigma"],
        "deconv" => &["n", "p", "width", "sigma"],
        "design-one" | "design-two" => &["n", "p", "s", "b"],
        other => bail!("unknown design {other:?}"),
    })
}

fn ensemble(settings: &Settings) -> Result<Ensemble> {
    let name: String = settings.get("ensemble", "E1".to_string())?;
    let e = match name.to_ascii_uppercase().as_str() {
        "E1" => Ensemble::E1 { a: settings.get("a", 1.0)? },
        "E2" => Ensemble::E2 { pi: settings.get("pi", 0.5)? },
        "E3" => Ensemble::E3 { a: settings.get("a", 1.0)? },
        "E4" => Ensemble::E4 { a: settings.get("a", 1.0)? },
        other => bail!("unknown ensemble {other:?}"),
    };
    e.validate()?;
    Ok(e)
}

fn design_kind(design: &str, settings: &Settings, p: usize) -> Result<DesignKind> {
    Ok(match design {
        "orthonormal" => DesignKind::Orthonormal,
        "gaussian" => DesignKind::GaussianIid,
        "power-decay" => DesignKind::PowerDecay { rho: settings.require("rho")? },
        "equicorr" => DesignKind::EquiCorrExact { rho: settings.require("rho")? },
        "ens-plus" => DesignKind::EnsPlus { ensemble: ensemble(settings)? },
        "localized-gaussian" => DesignKind::LocalizedGaussian {
            centers: (1..=p).map(|j| j as f64 / p as f64).collect(),
            width: settings.require("width")?,
        },
        "localized-exp" => DesignKind::LocalizedExp {
            s: settings.require("s")?,
            b: settings.get("b", 1.0)?,
        },
        "group-testing" => DesignKind::GroupTestingBernoulli { pi: settings.require("pi")? },
        "appendix-i" => DesignKind::AppendixICounterexample { s: settings.require("s")? },
        other => bail!("unknown design {other:?}"),
    })
}

fn cmd_gen(design: &str, settings: &Settings, seed: u64, out: Option<&Path>) -> Result<()> {
    let out = out.ok_or_else(|| anyhow!("gen needs --out <prefix>"))?;
    let mut echo = settings.to_json();
    echo["design"] = json!(design);
    let mut noise_rng = substream(seed, 1, 0);
    let (inst, spec) = match design {
        "fig-cs" => {
            let x = fig_cs_matrix();
            let mut beta = vec![0.0; 10];
            beta[2] = 1.0;
            beta[8] = 1.0;
            let sigma: f64 = settings.get("sigma", 0.0)?;
            let (y, truth) = response(&x, beta, sigma, &mut noise_rng)?;
            (RegressionInstance::new(x, y, Some(truth))?, None)
        }
        "deconv" => {
            let d = DeconvSpec::default();
            let spec = DeconvSpec {
                n: settings.get("n", d.n)?,
                p: settings.get("p", d.p)?,
                width: settings.get("width", d.width)?,
                ..d
            };
            echo["deconv"] = serde_json::to_value(&spec)?;
            (build_deconv_instance(&spec, settings.get("sigma", 0.09)?, &mut noise_rng)?, None)
        }
        "design-one" | "design-two" => {
            let n: usize = settings.require("n")?;
            let p: usize = settings.get("p", 2 * n)?;
            let s: usize = settings.require("s")?;
            let mut rng = master_rng(seed);
            let inst = if design == "design-one" {
                design_one_instance(n, p, s, settings.get("b", 0.5)?, &mut rng)?
            } else {
                design_two_instance(n, p, s, settings.get("b", 0.55)?, &mut rng)?
            };
            (inst, None)
        }
        _ => {
            let n: usize = settings.require("n")?;
            let p: usize = settings.require("p")?;
            let spec = DesignSpec::new(design_kind(design, settings, p)?, n, p, seed);
            let mut rng = master_rng(seed);
            let g = generate_with(&spec, &mut rng)?;
            let sigma: f64 = settings.get("sigma", 0.0)?;
            let beta = match (&g.truth, settings.raw("beta")) {
                (Some(t), None) => t.beta_star.clone(),
                _ => {
                    let s: usize = settings.get("s", 0)?;
                    if s > p {
                        bail!("s = {s} exceeds p = {p}");
                    }
                    let level: f64 = settings.get("beta", 1.0)?;
                    (0..p).map(|j| if j < s { level } else { 0.0 }).collect()
                }
            };
            if let DesignKind::AppendixICounterexample { s } = spec.kind {
                let g = appendix_i_gram(s, s);
                echo["gramSS"] = json!((0..s).map(|i| (0..s).map(|j| g.get(i, j)).collect::<Vec<_>>()).collect::<Vec<_>>());
            }
            let (y, truth) = response(&g.x, beta, sigma, &mut noise_rng)?;
            (RegressionInstance::from_normalized(g.x, y, Some(truth))?, Some(spec))
        }
    };
    let path = save_instance(out, &inst, spec.as_ref(), echo)?;
    println!("{}", path.display());
    Ok(())
}

fn response(
    x: &nnr_core::DenseMatrix,
    beta: Vec<f64>,
    sigma: f64,
    rng: &mut nnr_core::rng::StreamRng,
) -> Result<(Vec<f64>, GroundTruth)> {
    if !(sigma >= 0.0) {
        bail!("sigma must be non-negative");
    }
    let eps: Vec<f64> = normal_vec(rng, x.rows()).into_iter().map(|e| e * sigma).collect();
    let mut y = x.matvec(&beta);
    for (yi, e) in y.iter_mut().zip(&eps) {
        *yi += e;
    }
    Ok((y, GroundTruth::new(beta, sigma, Some(eps))?))
}

// ---------------------------------------------------------------------------
// solve, diagnose, recover

fn errors_vs_truth(inst: &RegressionInstance, beta: &[f64]) -> Value {
    match &inst.truth {
        None => Value::Null,
        Some(t) => {
            let d: Vec<f64> = beta.iter().zip(&t.beta_star).map(|(a, b)| a - b).collect();
            json!({
                "linf": d.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                "l2": d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            })
        }
    }
}

fn positive_set(beta: &[f64]) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta[j] > 0.0).collect()
}

fn cmd_solve(path: &Path, settings: &Settings, out: Option<&Path>, format: Option<Format>) -> Result<()> {
    let (inst, manifest) = load_instance(path)?;
    let method: String = settings.get("method", "nnls".to_string())?;
    let tol: f64 = settings.get("tol", 1e-10)?;
    let (beta, extra) = match method.as_str() {
        "nnls" => {
            let sol = nnls_solve(&inst, NnlsOptions { tol, max_iter: None })?;
            let kkt = kkt_check(&inst, &sol.beta, 1e-8)?;
            let extra = json!({
                "objective": sol.objective,
                "iterations": sol.iterations,
                "kkt": { "optimal": kkt.is_optimal, "maxViolation": kkt.max_violation },
            });
            (sol.beta, extra)
        }
        "nnlasso" => {
            let lambda: f64 = settings.require("lambda")?;
            let beta = nn_lasso(&inst, lambda, tol.max(1e-9))?;
            let extra = json!({ "lambda": lambda, "kkt": { "maxViolation": nn_lasso_kkt(&inst, &beta, lambda) } });
            (beta, extra)
        }
        "omp" => {
            let default = inst.truth.as_ref().map(|t| t.sparsity());
            let steps: usize = match default {
                Some(s) => settings.get("steps", s)?,
                None => settings.require("steps")?,
            };
            let r = omp(&inst, steps)?;
            (r.beta, json!({ "steps": steps, "earlyStop": r.early_stop }))
        }
        "ridge" => {
            let gamma: f64 = settings.require("gamma")?;
            (ridge(&inst, gamma)?, json!({ "gamma": gamma }))
        }
        "threshold" => {
            let t: f64 = settings.require("t")?;
            let sol = nnls_solve(&inst, NnlsOptions { tol, max_iter: None })?;
            let est = threshold_hard(&sol, t)?;
            (est.refit, json!({ "t": t, "support": est.estimated_support }))
        }
        other => bail!("unknown method {other:?}"),
    };
    if format == Some(Format::Csv) {
        let mut text = String::from("j,beta\n");
        for (j, b) in beta.iter().enumerate() {
            text.push_str(&format!("{j},{b:?}\n"));
        }
        return match out {
            Some(p) => Ok(fs::write(p, text)?),
            None => {
                print!("{text}");
                Ok(())
            }
        };
    }
    let value = json!({
        "method": method,
        "instance": path.display().to_string(),
        "matrixSha256": manifest.matrix_sha256,
        "beta": beta,
        "activeSet": positive_set(&beta),
        "details": extra,
        "errors": errors_vs_truth(&inst, &beta),
        "config": settings.to_json(),
    });
    emit(&value, out)
}

fn cmd_diagnose(path: &Path, settings: &Settings, out: Option<&Path>) -> Result<()> {
    let (inst, _) = load_instance(path)?;
    let support: Vec<usize> = match settings.raw("support") {
        Some("") => Vec::new(),
        Some(_) => settings.list("support", &[])?,
        None => inst.truth.as_ref().map(|t| t.support.clone()).unwrap_or_default(),
    };
    let m: f64 = settings.get("M", DEFAULT_M)?;
    let sigma: f64 = match settings.raw("sigma") {
        Some(_) => settings.require("sigma")?,
        None => inst.truth.as_ref().map_or(1.0, |t| t.sigma),
    };
    let t0 = tau0(&inst.x)?;
    let report = if support.is_empty() || support.len() >= inst.p() {
        Value::Null
    } else {
        let beta_star = inst.truth.as_ref().map(|t| t.beta_star.as_slice());
        serde_json::to_value(constants_for_support(&inst.x, &support, beta_star, sigma, m)?)?
    };
    let value = json!({
        "instance": path.display().to_string(),
        "n": inst.n(),
        "p": inst.p(),
        "support": support,
        "tau0Sq": t0.value,
        "tau0Note": t0.conditioning_note,
        "constants": report,
        "config": settings.to_json(),
    });
    emit(&value, out)
}

fn cmd_recover(path: &Path, settings: &Settings, out: Option<&Path>) -> Result<()> {
    let (inst, _) = load_instance(path)?;
    let sigma: Option<f64> = settings.raw("sigma").map(|_| settings.require("sigma")).transpose()?;
    let m: f64 = settings.get("M", DEFAULT_M)?;
    let est = recover_support(&inst, sigma, m)?;
    let exact = inst.truth.as_ref().map(|t| t.support == est.estimated_support);
    let value = json!({
        "instance": path.display().to_string(),
        "sHat": est.s_hat,
        "estimatedSupport": est.estimated_support,
        "sigmaHat": est.sigma_hat,
        "deltas": est.deltas,
        "refit": est.refit,
        "exactRecovery": exact,
        "errors": errors_vs_truth(&inst, &est.refit),
        "config": settings.to_json(),
    });
    emit(&value, out)
}

// ---------------------------------------------------------------------------
// experiment

fn experiment_keys(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "prop2" => &["n", "p", "s", "rho", "sigma", "reps", "band_draws"],
        "tau-contour" => &["n", "p_ratios", "s_ratios", "ensemble", "a", "pi", "reps"],
        "deconv" => &["n", "p", "width", "sigma", "reps", "folds"],
        "recovery-phase" => &["design", "n", "p_ratios", "s_ratios", "b", "reps", "M", "scale"],
        other => bail!("unknown experiment {other:?}"),
    })
}

fn cmd_experiment(name: &str, settings: &Settings, seed: u64) -> Result<ExperimentReport> {
    Ok(match name {
        "prop2" => {
            let n = settings.get("n", 200)?;
            let cfg = Prop2Config {
                n,
                p: settings.get("p", n)?,
                s: settings.get("s", 10)?,
                rho: settings.get("rho", 0.5)?,
                sigma: settings.get("sigma", 1.0)?,
                reps: settings.get("reps", 50)?,
                band_draws: settings.get("band_draws", 10_000)?,
            };
            prop2_empirical(&cfg, seed)?
        }
        "tau-contour" => {
            let cfg = ContourConfig {
                n: settings.get("n", 120)?,
                p_ratios: settings.list("p_ratios", &[1.5, 3.0])?,
                s_ratios: settings.list("s_ratios", &[0.05, 0.2])?,
                kind: DesignKind::EnsPlus { ensemble: ensemble(settings)? },
                reps: settings.get("reps", 20)?,
            };
            tau_contour_study(&cfg, seed)?
        }
        "deconv" => {
            let d = DeconvConfig::default();
            let cfg = DeconvConfig {
                spec: DeconvSpec {
                    n: settings.get("n", d.spec.n)?,
                    p: settings.get("p", d.spec.p)?,
                    width: settings.get("width", d.spec.width)?,
                    ..d.spec
                },
                sigma: settings.get("sigma", d.sigma)?,
                reps: settings.get("reps", d.reps)?,
                folds: settings.get("folds", d.folds)?,
            };
            deconv_experiment(&cfg, seed)?
        }
        "recovery-phase" => {
            let design = match settings.get("design", "I".to_string())?.as_str() {
                "I" | "1" => RecoveryDesign::I,
                "II" | "2" => RecoveryDesign::II,
                other => bail!("unknown recovery design {other:?}"),
            };
            let full = match settings.get("scale", "desk".to_string())?.as_str() {
                "desk" => false,
                "full" => true,
                other => bail!("scale must be desk or full, got {other:?}"),
            };
            let (n0, reps0) = if full { (500, 100) } else { (200, 20) };
            let default_b = if design == RecoveryDesign::I { 0.5 } else { 0.55 };
            let p_ratios: Vec<f64> = settings.list("p_ratios", &[2.0])?;
            let s_ratios: Vec<f64> = settings.list("s_ratios", &[0.05, 0.1])?;
            let bs: Vec<f64> = settings.list("b", &[default_b])?;
            let mut cells = Vec::new();
            for &p_ratio in &p_ratios {
                for &s_ratio in &s_ratios {
                    for &b in &bs {
                        cells.push(RecoveryCell { p_ratio, s_ratio, b });
                    }
                }
            }
            let cfg = RecoveryConfig {
                design,
                n: settings.get("n", n0)?,
                cells,
                reps: settings.get("reps", reps0)?,
                m: settings.get("M", DEFAULT_M)?,
            };
            recovery_phase_experiment(&cfg, seed)?
        }
        other => bail!("unknown experiment {other:?}"),
    })
}

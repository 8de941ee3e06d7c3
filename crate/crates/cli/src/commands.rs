use std::path::PathBuf;
use std::sync::Arc;

use serde_json::{json, Value};

use pathsmooth::functional::Functional;
use pathsmooth::jump_augment::Construct;
use pathsmooth::kernel::PathspaceKernel;
use pathsmooth::model::{builtin_model, canonicalize, ModelOptions, SdeModel};
use pathsmooth::model_select::{bic_difference, BicTrack};
use pathsmooth::oracle::{kalman_loglik_and_score, LinearGaussian};
use pathsmooth::resample::{ResampleConfig, ResampleScheme};
use pathsmooth::rml::{online_gradient_ascent, score_functional, AdamConfig, FitConfig, GradMode, StepRule};
use pathsmooth::rng::{child_seed, stream};
use pathsmooth::simulate::{simulate_dataset, SimulationOptions};
use pathsmooth::smoother::{SmootherConfig, DEFAULT_PRUNE};
use pathsmooth::validation::{self, mean_se, quantile, ValidateConfig, CHECK_NAMES};

use crate::io::{columns, fmt, read_dataset, write_manifest, write_rows, DataFile};
use crate::settings::Settings;
use crate::CliError;

fn model_from(s: &Settings, name: &str) -> Result<Arc<dyn SdeModel>, CliError> {
    let opts = ModelOptions {
        obs_sd: s.get("obs_noise")?,
        jump_rate: s.get("jump_rate")?,
        jump_half_width: s.get("jump_width")?,
        x0: s.get("x0")?,
    };
    Ok(builtin_model(name, &opts)?)
}

/// Reads a parameter vector, falling back to the model default and
/// recording the value used.
fn theta_from(s: &mut Settings, key: &str, model: &dyn SdeModel) -> Result<Vec<f64>, CliError> {
    let theta = match s.vector(key)? {
        Some(t) => t,
        None => model.default_theta(),
    };
    if theta.len() != model.dim_theta() {
        return Err(CliError::Config(format!(
            "{key} has {} entries but {} takes {} ({})",
            theta.len(),
            model.name(),
            model.dim_theta(),
            model.param_names().join(", ")
        )));
    }
    model.check_admissible(&theta)?;
    s.set(key, join(&theta));
    Ok(theta)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(",")
}

fn out_path(s: &Settings) -> Result<PathBuf, CliError> {
    s.require::<String>("out").map(PathBuf::from)
}

fn load_data(s: &mut Settings, model: &dyn SdeModel) -> Result<DataFile, CliError> {
    let path = PathBuf::from(s.require::<String>("data")?);
    let data = read_dataset(&path)?;
    if let Some(y) = data.ys.first() {
        let expected = model.dim_y();
        if y.len() != expected {
            return Err(CliError::Config(format!(
                "{} has {} observation columns, {} expects {expected}",
                path.display(),
                y.len(),
                model.name()
            )));
        }
    }
    // observation spacing: explicit setting, else the time column, else 1
    if !s.has("delta") {
        let inferred = match data.times.as_deref() {
            Some([t0, t1, ..]) => t1 - t0,
            _ => 1.0,
        };
        s.set("delta", fmt(inferred));
    }
    let delta: f64 = s.require("delta")?;
    if !(delta > 0.0) {
        return Err(CliError::Config(format!("delta must be positive, got {delta}")));
    }
    Ok(data)
}

fn resample_from(s: &mut Settings) -> Result<ResampleConfig, CliError> {
    s.set_default("resample", "multinomial");
    let scheme: ResampleScheme = s.require::<String>("resample")?.parse().map_err(CliError::Config)?;
    let ess: Option<f64> = s.get("ess")?;
    if let Some(c) = ess {
        if !(0.0..=1.0).contains(&c) {
            return Err(CliError::Config(format!("ess must lie in [0, 1], got {c}")));
        }
    }
    Ok(ResampleConfig {
        scheme,
        ess_threshold: ess,
    })
}

fn construct_from(s: &mut Settings) -> Result<Construct, CliError> {
    s.set_default("construct", "one");
    match s.require::<String>("construct")?.as_str() {
        "one" | "1" => Ok(Construct::One),
        "two" | "2" => Ok(Construct::Two),
        other => Err(CliError::Config(format!("construct must be `one` or `two`, got `{other}`"))),
    }
}

fn positive(s: &mut Settings, key: &str, default: usize) -> Result<usize, CliError> {
    s.set_default(key, default.to_string());
    let v: usize = s.require(key)?;
    if v == 0 {
        return Err(CliError::Config(format!("{key} must be at least 1")));
    }
    Ok(v)
}

/// Pathspace kernel and score functional shared by `score`, `fit` and
/// `select`.
fn kernel_from(s: &mut Settings, model: Arc<dyn SdeModel>) -> Result<(PathspaceKernel, Box<dyn Functional<PathspaceKernel>>), CliError> {
    let steps = positive(s, "M", 10)?;
    let construct = construct_from(s)?;
    s.set_default("grad", "fd");
    let grad: GradMode = s.require::<String>("grad")?.parse().map_err(CliError::Config)?;
    let kernel = PathspaceKernel::new(model, s.require("delta")?, steps, construct);
    let functional = score_functional(&kernel, grad)?;
    Ok((kernel, functional))
}

pub fn simulate(mut s: Settings) -> Result<(), CliError> {
    let name: String = s.require("model")?;
    let model = model_from(&s, &name)?;
    let theta = theta_from(&mut s, "theta", model.as_ref())?;
    s.set_default("n", "100");
    s.set_default("delta", "1");
    s.set_default("M", "1000");
    let n: usize = s.require("n")?;
    let delta: f64 = s.require("delta")?;
    let steps = positive(&mut s, "M", 1000)?;
    if !(delta > 0.0) {
        return Err(CliError::Config(format!("delta must be positive, got {delta}")));
    }
    let seed: u64 = s.require("seed")?;
    let latent = s.flag("latent")?;
    let out = out_path(&s)?;

    let dy = model.dim_y();
    let mut header = vec!["index".to_string(), "time".to_string()];
    header.extend(columns("y", dy));
    if latent {
        header.extend(columns("x", model.dim_x()));
    }
    let mut rows = Vec::new();
    if n > 0 {
        let mut rng = stream(seed, 0, 0);
        let data = simulate_dataset(model.as_ref(), &theta, n - 1, delta, steps, &SimulationOptions::default(), &mut rng)?;
        for k in 0..n {
            let mut row = vec![k.to_string(), fmt(data.times[k])];
            row.extend(data.ys[k].iter().map(|v| fmt(*v)));
            if latent {
                row.extend(data.xs[k].iter().map(|v| fmt(*v)));
            }
            rows.push(row);
        }
    }
    write_rows(&out, &header, &rows)?;
    write_manifest(&out, "simulate", &s, json!({ "rows": n }))?;
    println!("wrote {n} observations to {}", out.display());
    Ok(())
}

fn summary(names: &[&str], reps: &[Vec<f64>]) -> Value {
    let mut out = serde_json::Map::new();
    for (i, name) in names.iter().enumerate() {
        let col: Vec<f64> = reps.iter().map(|r| r[i]).collect();
        let (mean, se) = mean_se(&col);
        out.insert(
            name.to_string(),
            json!({
                "mean": mean,
                "se": if se.is_finite() { json!(se) } else { Value::Null },
                "min": quantile(&col, 0.0),
                "q25": quantile(&col, 0.25),
                "median": quantile(&col, 0.5),
                "q75": quantile(&col, 0.75),
                "max": quantile(&col, 1.0),
            }),
        );
    }
    Value::Object(out)
}

pub fn score(mut s: Settings) -> Result<(), CliError> {
    let name: String = s.require("model")?;
    let model = model_from(&s, &name)?;
    let theta = theta_from(&mut s, "theta", model.as_ref())?;
    let data = load_data(&mut s, model.as_ref())?;
    if data.ys.is_empty() {
        return Err(CliError::Config("the dataset has no observations".into()));
    }
    let particles = positive(&mut s, "N", 100)?;
    let replicates = positive(&mut s, "R", 1)?;
    let resample = resample_from(&mut s)?;
    let seed: u64 = s.require("seed")?;
    let out = out_path(&s)?;
    let (kernel, functional) = kernel_from(&mut s, model.clone())?;
    let config = SmootherConfig {
        particles,
        resample,
        prune: DEFAULT_PRUNE,
        seed,
    };
    let reps = validation::smoothed_replicates(&kernel, functional.as_ref(), &theta, &data.ys, config, replicates)?;

    let names = model.param_names();
    let mut header = vec!["replicate".to_string()];
    header.extend(names.iter().map(|p| format!("score_{p}")));
    let rows: Vec<Vec<String>> = reps
        .iter()
        .enumerate()
        .map(|(r, est)| std::iter::once(r.to_string()).chain(est.iter().map(|v| fmt(*v))).collect())
        .collect();
    write_rows(&out, &header, &rows)?;

    let mut extra = json!({ "summary": summary(names, &reps) });
    if s.flag("oracle")? {
        if name != "ou" {
            return Err(CliError::Config("the Kalman oracle covers the `ou` model only".into()));
        }
        let obs_sd = s.get::<f64>("obs_noise")?.unwrap_or(pathsmooth::model::DEFAULT_OBS_SD);
        let x0 = s.get::<f64>("x0")?.unwrap_or(0.0);
        let delta: f64 = s.require("delta")?;
        let ys: Vec<f64> = data.ys.iter().map(|y| y[0]).collect();
        let (ll, exact) = kalman_loglik_and_score(|t| LinearGaussian::from_ou(t, delta, obs_sd, x0), &theta, &ys)?;
        extra["oracle"] = json!({ "loglik": ll, "score": exact });
        println!("Kalman score: {}", join(&exact));
    }
    for p in names {
        let v = &extra["summary"][*p];
        println!("{p}: mean {} median {} IQR [{}, {}]", v["mean"], v["median"], v["q25"], v["q75"]);
    }
    write_manifest(&out, "score", &s, extra)?;
    Ok(())
}

fn rule_from(s: &mut Settings) -> Result<StepRule, CliError> {
    s.set_default("rule", "adam");
    match s.require::<String>("rule")?.as_str() {
        "adam" => {
            let mut cfg = AdamConfig::default();
            if let Some(a) = s.get("alpha")? {
                cfg.alpha = a;
            }
            s.set("alpha", fmt(cfg.alpha));
            Ok(StepRule::Adam(cfg))
        }
        "rm" | "robbins-monro" => {
            s.set_default("gamma0", "0.01");
            s.set_default("kappa", "0.6");
            Ok(StepRule::RobbinsMonro {
                gamma0: s.require("gamma0")?,
                exponent: s.require("kappa")?,
            })
        }
        other => Err(CliError::Config(format!("rule must be `adam` or `rm`, got `{other}`"))),
    }
}

fn fit_config(s: &mut Settings) -> Result<FitConfig, CliError> {
    Ok(FitConfig {
        particles: positive(s, "N", 100)?,
        seed: s.require("seed")?,
        resample: resample_from(s)?,
        rule: rule_from(s)?,
    })
}

pub fn fit(mut s: Settings) -> Result<(), CliError> {
    let name: String = s.require("model")?;
    let model = model_from(&s, &name)?;
    let mut theta0 = theta_from(&mut s, "theta0", model.as_ref())?;
    canonicalize(model.as_ref(), &mut theta0);
    let data = load_data(&mut s, model.as_ref())?;
    let config = fit_config(&mut s)?;
    let out = out_path(&s)?;
    let (kernel, functional) = kernel_from(&mut s, model.clone())?;
    let result = online_gradient_ascent(&kernel, functional.as_ref(), &data.ys, &theta0, &config)?;

    let mut header = vec!["n".to_string()];
    header.extend(model.param_names().iter().map(|p| p.to_string()));
    header.push("loglik_increment".into());
    let rows: Vec<Vec<String>> = result
        .trajectory
        .iter()
        .enumerate()
        .map(|(k, theta)| {
            let mut row = vec![k.to_string()];
            row.extend(theta.iter().map(|v| fmt(*v)));
            row.push(result.loglik_increments.get(k).map_or(String::new(), |v| fmt(*v)));
            row
        })
        .collect();
    write_rows(&out, &header, &rows)?;
    write_manifest(
        &out,
        "fit",
        &s,
        json!({ "final_theta": result.final_theta(), "loglik": result.loglik }),
    )?;
    println!("final θ̂: {}", join(result.final_theta()));
    Ok(())
}

pub fn select(mut s: Settings) -> Result<(), CliError> {
    let names: Vec<String> = s
        .require::<String>("model")?
        .split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::Config("select needs at least one model".into()));
    }
    let labels: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}.{}", i + 1)
            } else {
                n.clone()
            }
        })
        .collect();
    let models = names.iter().map(|n| model_from(&s, n)).collect::<Result<Vec<_>, _>>()?;
    let data = load_data(&mut s, models[0].as_ref())?;
    let base = fit_config(&mut s)?;
    let shared_theta0 = names.len() == 1 && s.has("theta0");
    let mut tracks = Vec::new();
    for (i, (model, label)) in models.iter().zip(&labels).enumerate() {
        let key = if shared_theta0 { "theta0".to_string() } else { format!("theta0.{label}") };
        let theta0 = theta_from(&mut s, &key, model.as_ref())?;
        let (kernel, functional) = kernel_from(&mut s, model.clone())?;
        let config = FitConfig {
            seed: child_seed(base.seed, i as u64),
            ..base
        };
        let fit = online_gradient_ascent(&kernel, functional.as_ref(), &data.ys, &theta0, &config)?;
        tracks.push(BicTrack::from_fit(label.clone(), &fit)?);
    }
    let out = out_path(&s)?;

    let mut header = vec!["n".to_string()];
    if data.dates.is_some() {
        header.push("date".into());
    }
    for l in &labels {
        header.push(format!("loglik_{l}"));
        header.push(format!("bic_{l}"));
    }
    let mut diffs = Vec::new();
    for a in 0..tracks.len() {
        for b in a + 1..tracks.len() {
            header.push(format!("bic_{}_minus_{}", labels[a], labels[b]));
            diffs.push(bic_difference(&tracks[a], &tracks[b])?);
        }
    }
    let bics: Vec<Vec<f64>> = tracks.iter().map(BicTrack::bic_series).collect();
    let rows: Vec<Vec<String>> = (0..data.ys.len())
        .map(|k| {
            let mut row = vec![(k + 1).to_string()];
            if let Some(dates) = &data.dates {
                row.push(dates[k].clone());
            }
            for (t, b) in tracks.iter().zip(&bics) {
                row.push(fmt(t.loglik[k]));
                row.push(fmt(b[k]));
            }
            row.extend(diffs.iter().map(|d| fmt(d[k])));
            row
        })
        .collect();
    write_rows(&out, &header, &rows)?;
    let finals: serde_json::Map<String, Value> = tracks
        .iter()
        .map(|t| {
            (
                t.model.clone(),
                json!({
                    "dim_theta": t.dim_theta,
                    "loglik": t.current_loglik(),
                    "bic": t.bic().ok(),
                    "theta": t.theta.last(),
                }),
            )
        })
        .collect();
    write_manifest(&out, "select", &s, json!({ "models": finals }))?;
    for t in &tracks {
        match t.bic() {
            Ok(b) => println!("{}: ℓ̂ = {:.3}, BIC = {b:.3}", t.model, t.current_loglik()),
            Err(_) => println!("{}: no observations", t.model),
        }
    }
    Ok(())
}

pub fn validate(mut s: Settings) -> Result<(), CliError> {
    let mut cfg = ValidateConfig::default();
    if let Some(seed) = s.get("seed")? {
        cfg.seed = seed;
    }
    if let Some(scale) = s.get("tolerance_scale")? {
        cfg.tolerance_scale = scale;
    }
    s.set("seed", cfg.seed.to_string());
    s.set("tolerance_scale", fmt(cfg.tolerance_scale));
    let names: Vec<String> = match s.raw("checks") {
        Some(list) => list.split(',').map(|c| c.trim().to_string()).collect(),
        None => CHECK_NAMES.iter().map(|c| c.to_string()).collect(),
    };
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for name in &names {
        let check = validation::run_check(name, &cfg)?;
        println!(
            "{} {} ({:.1}s): {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.elapsed.as_secs_f64(),
            check.detail
        );
        if !check.passed {
            failed.push(check.name);
        }
        rows.push(vec![
            check.name.to_string(),
            check.passed.to_string(),
            check.detail.clone(),
            fmt(check.elapsed.as_secs_f64()),
        ]);
    }
    if let Some(out) = s.get::<String>("out")?.map(PathBuf::from) {
        let header: Vec<String> = ["check", "passed", "detail", "seconds"].iter().map(|h| h.to_string()).collect();
        write_rows(&out, &header, &rows)?;
        write_manifest(&out, "validate", &s, json!({ "failed": failed }))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

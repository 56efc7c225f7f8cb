use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use constrained_rep::algo::{curve_to_csv, train_with, CurvePoint, TrainConfig};
use constrained_rep::gradsuite::{run_grad_suite, Fault, GradSuiteConfig};
use constrained_rep::nn::Checkpoint;
use constrained_rep::theory::{run_theorem, Theorem, TheoremReport, TheoryOverrides};
use constrained_rep::Error;

use crate::artifacts::{unix_now, write_atomic, RunManifest};
use crate::{CorruptOp, GradcheckArgs, TheoryArgs, TrainArgs, Which};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => EXIT_NUMERIC,
        Error::Env { source, .. } => exit_code(source),
        _ => EXIT_CHECK,
    }
}

/// Run `job(i)` for `i in 0..n` on up to `workers` threads.
fn fan_out<R: Send>(n: usize, workers: usize, job: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn build_config(a: &TrainArgs) -> constrained_rep::Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::from_kv_str(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = &a.env {
        cfg.env = v.clone();
    }
    macro_rules! copy {
        ($($f:ident),*) => {$( if let Some(v) = a.$f { cfg.$f = v; } )*};
    }
    copy!(steps, seed, smr, lambda, c, gamma, depth, warmup, eval_every);
    if let Some(h) = a.hidden {
        cfg.hidden = h;
        cfg.actor_hidden = vec![h; cfg.actor_hidden.len().max(1)];
    }
    if let Some(act) = &a.activation {
        if a.no_tanh && act != "none" {
            return Err(Error::Config(format!("--no-tanh conflicts with --activation {act}")));
        }
        cfg.set("activation", act)?;
    }
    if a.no_tanh {
        cfg.set("activation", "none")?;
    }
    if a.no_ln {
        cfg.layer_norm = false;
    }
    if a.no_skip {
        cfg.skip = false;
    }
    if a.no_ent {
        cfg.entropy_in_target = false;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_one(cfg: &TrainConfig, dir: &Path, quiet: bool) -> constrained_rep::Result<f64> {
    fs::create_dir_all(dir)?;
    let curve_path = dir.join("curve.csv");
    let outputs = ["curve.csv", "summary.json", "checkpoint.json", "config.txt", "manifest.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let mut manifest = RunManifest::new(cfg, outputs);
    if manifest.config()? != *cfg {
        return Err(Error::Config("config echo does not parse back to the same config".into()));
    }
    write_atomic(&dir.join("config.txt"), cfg.to_kv_string().as_bytes())?;
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    let mut curve: Vec<CurvePoint> = Vec::new();
    let outcome = train_with::<f64>(cfg, |p| {
        curve.push(p.clone());
        write_atomic(&curve_path, curve_to_csv(&curve).as_bytes())?;
        if !quiet {
            eprintln!("seed {} step {:>7} eval {:>10.2}", cfg.seed, p.env_step, p.eval_return);
        }
        Ok(())
    })?;

    let mut ck = Checkpoint::new();
    let st = &outcome.state;
    ck.insert("critic1", &st.critics[0].params);
    ck.insert("critic2", &st.critics[1].params);
    ck.insert("target1", &st.targets[0].params);
    ck.insert("target2", &st.targets[1].params);
    ck.insert("actor", &st.actor.params);
    ck.insert("log_alpha", &st.log_alpha);
    write_atomic(&dir.join("checkpoint.json"), ck.to_json()?.as_bytes())?;
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)?.as_bytes())?;
    manifest.finished_unix = Some(unix_now());
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(outcome.summary.final_return)
}

pub fn train(a: TrainArgs) -> u8 {
    let base = match build_config(&a) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let n = a.seeds.max(1) as usize;
    let results = fan_out(n, a.workers, |i| {
        let cfg = TrainConfig {
            seed: base.seed + i as u64,
            ..base.clone()
        };
        let dir = a.out.join(format!("seed-{}", cfg.seed));
        (cfg.seed, dir.clone(), train_one(&cfg, &dir, a.quiet))
    });
    let mut code = EXIT_OK;
    for (seed, dir, res) in results {
        match res {
            Ok(ret) => println!("seed {seed}: final return {ret:.2} ({})", dir.display()),
            Err(e) => {
                eprintln!("seed {seed}: error: {e}");
                code = code.max(exit_code(&e));
            }
        }
    }
    code
}

fn report_path(out: &Path, r: &TheoremReport) -> PathBuf {
    let lambda = r.parameters.get("lambda").and_then(|v| v.as_f64());
    match (r.theorem, lambda) {
        (Theorem::T5, Some(l)) => out.join(format!("{}-seed{}-lambda{l}.json", r.theorem, r.seed)),
        _ => out.join(format!("{}-seed{}.json", r.theorem, r.seed)),
    }
}

pub fn theory(a: TheoryArgs) -> u8 {
    let theorems: Vec<Theorem> = match a.which {
        Which::All => Theorem::ALL.to_vec(),
        Which::T1 => vec![Theorem::T1],
        Which::T2 => vec![Theorem::T2],
        Which::T3 => vec![Theorem::T3],
        Which::T4 => vec![Theorem::T4],
        Which::T5 => vec![Theorem::T5],
    };
    let o = TheoryOverrides {
        c: a.c,
        lambda: a.lambda,
        gamma: a.gamma,
        steps: a.steps,
    };
    let jobs: Vec<(Theorem, u64)> = theorems
        .iter()
        .flat_map(|&t| (0..a.seeds.max(1)).map(move |i| (t, a.seed + i)))
        .collect();
    let results = fan_out(jobs.len(), a.workers, |i| run_theorem(jobs[i].0, jobs[i].1, &o));

    let mut code = EXIT_OK;
    let mut all = Vec::new();
    println!("{:<4} {:>6} {:>8} {:>5} {:>12} {:>12}  check", "thm", "seed", "lambda", "pass", "observed", "bound");
    for ((t, seed), res) in jobs.iter().zip(results) {
        match res {
            Ok(reports) => {
                for r in reports {
                    let path = report_path(&a.out, &r);
                    let written = serde_json::to_string_pretty(&r)
                        .map_err(Error::from)
                        .and_then(|s| Ok(write_atomic(&path, s.as_bytes())?));
                    let lambda = r.parameters.get("lambda").and_then(|v| v.as_f64()).map_or("-".into(), |l| format!("{l}"));
                    println!(
                        "{:<4} {:>6} {:>8} {:>5} {:>12.4e} {:>12.4e}  {}",
                        r.theorem.as_str(),
                        r.seed,
                        lambda,
                        if r.pass { "ok" } else { "FAIL" },
                        r.observed,
                        r.bound,
                        r.theorem.description()
                    );
                    if let Err(e) = written {
                        eprintln!("cannot write {}: {e}", path.display());
                        code = code.max(EXIT_CHECK);
                    }
                    if !r.pass {
                        eprintln!("failed: {}", path.display());
                        code = code.max(EXIT_CHECK);
                    }
                    all.push(r);
                }
            }
            Err(e) => {
                eprintln!("{t} seed {seed}: error: {e}");
                code = code.max(exit_code(&e));
            }
        }
    }
    let passed = all.iter().filter(|r| r.pass).count();
    println!("{passed}/{} reports pass", all.len());
    code
}

pub fn gradcheck(a: GradcheckArgs) -> u8 {
    let cfg = GradSuiteConfig {
        points: a.points,
        threshold: a.threshold,
        eps: a.eps,
        seed: a.seed,
        fault: a.corrupt.map(|CorruptOp::Tanh| Fault::Tanh),
        ..Default::default()
    };
    let report = match run_grad_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    for e in &report.entries {
        println!("{:<20} {:>11.3e} {:>8} {}", e.name, e.max_rel_err, e.elements, if e.pass { "ok" } else { "FAIL" });
    }
    if let Some(path) = &a.out {
        let written = serde_json::to_string_pretty(&report)
            .map_err(Error::from)
            .and_then(|s| Ok(write_atomic(path, s.as_bytes())?));
        if let Err(e) = written {
            eprintln!("cannot write {}: {e}", path.display());
            return EXIT_CHECK;
        }
    }
    if report.pass() {
        EXIT_OK
    } else {
        eprintln!("gradient check failed: {}", report.failures().join(", "));
        EXIT_CHECK
    }
}

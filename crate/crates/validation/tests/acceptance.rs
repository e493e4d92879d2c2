//! End-to-end acceptance run: two clean full pipelines at the default
//! configuration plus the fast numerical checks. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pkml::allometry::{train, AllometryConfig, AllometryModel, TrainingView};
use pkml::io;
use pkml_cli::commands::{arm_samples, Outcome, Runner, DATA_DIR};
use pkml_cli::config::ExperimentConfig;
use pkml_cli::selftest::{self, Check};

const ABLATION_BUDGET_S: f64 = 600.0;
const TRANSFORMER_BUDGET_S: f64 = 300.0;
const LOSO_BUDGET_S: f64 = 300.0;

fn metric(o: &Outcome, key: &str) -> f64 {
    o.manifest.metrics.get(key).copied().unwrap_or(f64::NAN)
}

fn timing(o: &Outcome, key: &str) -> f64 {
    o.manifest.timings_s.get(key).copied().unwrap_or(f64::INFINITY)
}

fn full_run(dir: &Path) -> Result<(Runner, Outcome), String> {
    let runner = Runner::new(ExperimentConfig::default(), dir.to_path_buf()).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let out = runner.reproduce_figures(true).map_err(|e| e.to_string())?;
    println!(
        "  pipeline in {} finished in {:.1} s",
        dir.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok((runner, out))
}

fn ablation(o: &Outcome) -> Check {
    let u = metric(o, "ablation.violation_pct_lambda0");
    let c = metric(o, "ablation.violation_pct_lambda1");
    let ratio = u / c;
    let t = timing(o, "ablation");
    let ok_u = (0.5..=5.0).contains(&u);
    let ok_c = c <= 1.0;
    let ok_r = ratio >= 2.0;
    let ok_t = t <= ABLATION_BUDGET_S;
    Check::new(
        "1 constraint ablation",
        ok_u && ok_c && ok_r && ok_t,
        format!(
            "lambda=0 {u:.2}% in [0.5, 5] [{}]; lambda=1 {c:.2}% <= 1 [{}]; ratio {ratio:.3} >= 2 [{}]; runtime {t:.0} s <= {ABLATION_BUDGET_S} [{}]",
            mark(ok_u),
            mark(ok_c),
            mark(ok_r),
            mark(ok_t)
        ),
    )
}

fn mark(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn forecasting(o: &Outcome) -> Check {
    let (mse, locf) = (metric(o, "transformer.test_mse"), metric(o, "transformer.locf_mse"));
    let (first, last) = (
        metric(o, "transformer.train_mse_first"),
        metric(o, "transformer.train_mse_last"),
    );
    let t = timing(o, "train_transformer");
    let ok_m = mse <= 0.2 * locf;
    let ok_l = last < first;
    let ok_t = t <= TRANSFORMER_BUDGET_S;
    Check::new(
        "2 transformer forecasting",
        ok_m && ok_l && ok_t,
        format!(
            "test MSE {mse:.5} <= 0.2 x last-value {locf:.5} (ratio {:.4}) [{}]; train loss {first:.4} -> {last:.5} [{}]; runtime {t:.0} s <= {TRANSFORMER_BUDGET_S} [{}]",
            mse / locf,
            mark(ok_m),
            mark(ok_l),
            mark(ok_t)
        ),
    )
}

/// Training on data whose held-out rows are all NaN must give a model and
/// loss curve identical to training on clean data.
fn nan_poisoning(data: &pkml::synthdata::CrossSpeciesDataset) -> Result<bool, String> {
    let held = data.species_by_name("Human").map_err(|e| e.to_string())?.index;
    let mut poisoned = data.clone();
    for r in poisoned.records.iter_mut().filter(|r| r.species_index == held) {
        r.profile.concentrations.iter_mut().for_each(|c| *c = f64::NAN);
    }
    let cfg = AllometryConfig {
        epochs: 5,
        ..AllometryConfig::default()
    };
    let run = |d| -> Result<_, String> {
        let view = TrainingView::build(d, "Human").map_err(|e| e.to_string())?;
        let mut m = AllometryModel::new(cfg.clone(), &view.species, 42).map_err(|e| e.to_string())?;
        let log = train(&mut m, &view, 42).map_err(|e| e.to_string())?;
        Ok((m, log))
    };
    let (a, la) = run(data)?;
    let (b, lb) = run(&poisoned)?;
    Ok(a == b && la == lb && la.iter().all(|l| l.is_finite()))
}

fn loso(o: &Outcome, runner: &Runner) -> Check {
    let (mse, base) = (metric(o, "loso.test_mse"), metric(o, "loso.baseline_mse"));
    let t = timing(o, "train_allometry");
    let poison = io::read_all(&runner.data_dir())
        .map_err(|e| e.to_string())
        .and_then(|(d, _)| nan_poisoning(&d.xspecies));
    let ok_m = mse < base;
    let ok_p = matches!(poison, Ok(true));
    let ok_t = t <= LOSO_BUDGET_S;
    Check::new(
        "3 cross-species leave-one-out",
        ok_m && ok_p && ok_t,
        format!(
            "human test MSE {mse:.5} < mean-profile baseline {base:.5} [{}]; NaN-poisoned human rows leave training unchanged [{}]; runtime {t:.0} s <= {LOSO_BUDGET_S} [{}]",
            mark(ok_m),
            match &poison {
                Ok(b) => mark(*b).to_string(),
                Err(e) => format!("FAIL: {e}"),
            },
            mark(ok_t)
        ),
    )
}

fn column_means(rows: &[pkml::synthdata::PhysioVector]) -> [f64; 5] {
    let mut m = [0.0; 5];
    for r in rows {
        for (acc, v) in m.iter_mut().zip(r.to_array()) {
            *acc += v;
        }
    }
    m.map(|s| s / rows.len() as f64)
}

fn diffusion_sanity(runner: &Runner) -> Check {
    let sched = selftest::schedule_check();
    let means = (|| -> pkml::Result<(usize, [f64; 5], [f64; 5])> {
        let train = io::read_physio(&runner.data_dir().join(io::PHYSIO_FILE))?;
        let samples = io::read_physio(&runner.out.join(arm_samples(0.0)))?;
        Ok((samples.len(), column_means(&train), column_means(&samples)))
    })();
    let (ok_m, detail) = match means {
        Ok((n, t, s)) => {
            let rel: Vec<f64> = t.iter().zip(&s).map(|(a, b)| (b - a).abs() / a.abs()).collect();
            let ok = n == 2000 && rel.iter().all(|r| *r <= 0.10);
            (
                ok,
                format!(
                    "lambda=0 sample means (n={n}) within 10% of training means: rel. dev. [{}] [{}]",
                    rel.iter().map(|r| format!("{:.3}", r)).collect::<Vec<_>>().join(", "),
                    mark(ok)
                ),
            )
        }
        Err(e) => (false, format!("sample means unavailable: {e}")),
    };
    Check::new(
        "6 diffusion sanity",
        sched.passed && ok_m,
        format!("{} [{}]; {detail}", sched.detail, mark(sched.passed)),
    )
}

fn determinism(a: (&Runner, &Outcome), b: (&Runner, &Outcome)) -> Check {
    let data_files: Vec<_> =
        a.1.manifest
            .artifacts
            .iter()
            .filter(|x| x.file.starts_with(DATA_DIR))
            .collect();
    let mut mismatched = Vec::new();
    for art in &data_files {
        let x = fs::read(a.0.out.join(&art.file)).ok();
        let y = fs::read(b.0.out.join(&art.file)).ok();
        if x.is_none() || x != y {
            mismatched.push(art.file.clone());
        }
    }
    let ma: &BTreeMap<String, f64> = &a.1.manifest.metrics;
    let mb = &b.1.manifest.metrics;
    let differing: Vec<_> = ma
        .iter()
        .filter(|(k, v)| mb.get(*k).map(|w| w.to_bits()) != Some(v.to_bits()))
        .map(|(k, _)| k.clone())
        .collect();
    let ok = !data_files.is_empty() && mismatched.is_empty() && differing.is_empty() && ma.len() == mb.len();
    Check::new(
        "7 determinism",
        ok,
        format!(
            "{} dataset files byte-identical{}; {} metrics bit-identical{}",
            data_files.len() - mismatched.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!(" (differ: {})", mismatched.join(", "))
            },
            ma.len() - differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" (differ: {})", differing.join(", "))
            }
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; there are no
    // individually addressable tests here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    println!("acceptance: two full pipeline runs at the default configuration");
    let mut checks = Vec::new();

    let fast = Instant::now();
    let grad = selftest::gradcheck_summary(20);
    let e2e = selftest::gradcheck_end_to_end();
    checks.push(Check::new(
        "4 autodiff correctness",
        grad.passed && e2e.passed,
        format!(
            "{} [{}]; {} [{}]",
            grad.detail,
            mark(grad.passed),
            e2e.detail,
            mark(e2e.passed)
        ),
    ));
    let rk4 = selftest::rk4_check();
    let mass = selftest::mass_check();
    checks.push(Check::new(
        "5 solver correctness",
        rk4.passed && mass.passed,
        format!(
            "{} [{}]; {} [{}]",
            rk4.detail,
            mark(rk4.passed),
            mass.detail,
            mark(mass.passed)
        ),
    ));
    println!("  numerical checks in {:.1} s", fast.elapsed().as_secs_f64());

    let tmp = tempfile::tempdir().expect("temp dir");
    let runs = [tmp.path().join("run_a"), tmp.path().join("run_b")].map(|d| full_run(&d));
    match &runs {
        [Ok(a), Ok(b)] => {
            checks.push(ablation(&a.1));
            checks.push(forecasting(&a.1));
            checks.push(loso(&a.1, &a.0));
            checks.push(diffusion_sanity(&a.0));
            checks.push(determinism((&a.0, &a.1), (&b.0, &b.1)));
            if let Some(v) = a.1.manifest.metrics.get("loso.interpolated_mse") {
                println!(
                    "  info: log-weight interpolated human embedding test MSE {v:.5} (baseline {:.5})",
                    metric(&a.1, "loso.baseline_mse")
                );
            }
        }
        _ => {
            for r in &runs {
                if let Err(e) = r {
                    println!("  pipeline error: {e}");
                }
            }
            for name in [
                "1 constraint ablation",
                "2 transformer forecasting",
                "3 cross-species leave-one-out",
                "6 diffusion sanity",
                "7 determinism",
            ] {
                checks.push(Check::new(name, false, "pipeline did not complete"));
            }
        }
    }

    checks.sort_by(|a, b| a.name.cmp(&b.name));
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use survcontour_core::bootstrap::quantile_type7;
use survcontour_core::competing::{fit_fine_gray, FineGrayOptions, FineGrayProblem};
use survcontour_core::contour::{
    build_quantile_curves, build_surface, to_json_bytes, to_surface3d, ContourOptions, ContourSurface,
};
use survcontour_core::cox::{fit_cox, CoxOptions, CoxProblem, SurvivalFrame, Ties};
use survcontour_core::data::{
    default_adjuster_profile, ingest_csv, Column, ColumnRoles, IngestOptions, SurvivalDataset,
};
use survcontour_core::metrics::{brier_grid, c_index, default_tau, integrated_brier};
use survcontour_core::newton::Objective;
use survcontour_core::nonparametric::{aalen_johansen, censoring_km, kaplan_meier, nelson_aalen};
use survcontour_core::parametric::{fit_parametric, Distribution, ParametricOptions, ParametricProblem};
use survcontour_core::registry::{fit, Family, FittedModel, ModelSpec};
use survcontour_service::{router, AppState, Config};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(label: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{label} took {elapsed:.2?}, limit {limit:?}"))
}

fn dataset(time: &[f64], status: &[u32], x: &[f64]) -> SurvivalDataset {
    SurvivalDataset::new(
        ColumnRoles::new("time", "status", "x"),
        time.to_vec(),
        status.to_vec(),
        vec![("x".into(), Column::Continuous { values: x.to_vec() })],
    )
    .unwrap()
}

fn ingest(csv: &str, roles: &ColumnRoles) -> SurvivalDataset {
    ingest_csv(csv.as_bytes(), roles, &IngestOptions::default()).unwrap().0
}

fn veteran_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/veteran.csv")
}

/// Exponential times with log-hazard `beta * x + 0.3 z`, uniform censoring,
/// optional second cause, and a three-level group.
fn synthetic_csv(n: usize, beta: f64, causes: u32, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("time,status,x,z,g\n");
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..10.0);
        let z: f64 = rng.random_range(-1.0..1.0);
        let g = ["a", "b", "c"][rng.random_range(0..3)];
        let rate = 0.1 * (beta * (x - 5.0) + 0.3 * z).exp();
        let t = -rng.random::<f64>().ln() / rate;
        let c = rng.random_range(0.0..30.0);
        let (time, status) = if t <= c { (t, 1 + rng.random_range(0..causes)) } else { (c, 0) };
        csv.push_str(&format!("{time:.6},{status},{x:.6},{z:.6},{g}\n"));
    }
    csv
}

fn exact_log_pl(t: &[f64], e: &[bool], x: &[f64], beta: f64) -> f64 {
    (0..t.len())
        .filter(|&i| e[i])
        .map(|i| {
            let denom: f64 = (0..t.len()).filter(|&j| t[j] >= t[i]).map(|j| (beta * x[j]).exp()).sum();
            beta * x[i] - denom.ln()
        })
        .sum()
}

fn partial_likelihood_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 25 {
        let n = rng.random_range(5..=8);
        let mut t: Vec<f64> = (1..=n).map(f64::from).collect();
        for i in (1..t.len()).rev() {
            t.swap(i, rng.random_range(0..=i));
        }
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.75)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if e.iter().filter(|&&v| v).count() < 2 {
            continue;
        }
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for k in 0..=100_000 {
            let b = -5.0 + f64::from(k) * 1e-4;
            let l = exact_log_pl(&t, &e, &x, b);
            if l > best {
                best = l;
                arg = b;
            }
        }
        // a maximizer on the search boundary means the likelihood is monotone
        if arg.abs() > 4.99 {
            continue;
        }
        let status: Vec<u32> = e.iter().map(|&v| u32::from(v)).collect();
        let f = fit_cox(&dataset(&t, &status, &x), &CoxOptions::default()).map_err(|err| err.to_string())?;
        let diff = (f.beta[0] - arg).abs();
        worst = worst.max(diff);
        ensure(diff < 1e-3, || format!("dataset {done}: fit {} vs grid {arg}", f.beta[0]))?;
        done += 1;
    }
    within("25 datasets", start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("max |beta - grid argmax| = {worst:.2e}, {:.2?}", start.elapsed()))
}

fn fd_relative_error<O: Objective>(obj: &O, theta: &[f64]) -> f64 {
    let g = obj.evaluate(theta).gradient;
    let mut err: f64 = 0.0;
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let (mut up, mut down) = (theta.to_vec(), theta.to_vec());
        up[k] += h;
        down[k] -= h;
        let fd = (obj.evaluate(&up).loglik - obj.evaluate(&down).loglik) / (2.0 * h);
        err = err.max((fd - g[k]).abs());
    }
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    err / scale
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut record = |name: &str, e: f64| -> Result<(), String> {
        worst = worst.max(e);
        ensure(e < 1e-4, || format!("{name}: relative error {e:.2e}"))
    };
    let (n, p) = (40, 2);
    for inst in 0..10 {
        // integer times produce ties
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..12))).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.5..1.5)).collect();
        let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        for ties in [Ties::Efron, Ties::Breslow] {
            let prob = CoxProblem::new(&SurvivalFrame::new(&t, &e), x.clone(), p, ties).unwrap();
            record(&format!("cox {ties:?} #{inst}"), fd_relative_error(&prob, &theta))?;
        }

        let status: Vec<u32> = (0..n).map(|_| [0, 1, 1, 2][rng.random_range(0..4)]).collect();
        let fg = FineGrayProblem::new(&t, &status, 1, x.clone(), p).unwrap();
        record(&format!("fine_gray #{inst}"), fd_relative_error(&fg, &theta))?;

        let pt: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..8.0)).collect();
        for dist in [
            Distribution::Exponential,
            Distribution::Weibull,
            Distribution::LogNormal,
            Distribution::LogLogistic,
        ] {
            let prob = ParametricProblem::new(dist, &pt, &e, &x, p, None).unwrap();
            let mut th: Vec<f64> = vec![rng.random_range(0.0..1.5)];
            th.extend((0..p).map(|_| rng.random_range(-0.5..0.5)));
            if prob.dim() > p + 1 {
                th.push(rng.random_range(-0.7..0.5));
            }
            record(&format!("{dist:?} #{inst}"), fd_relative_error(&prob, &th))?;
        }
    }
    Ok(format!("max relative error {worst:.2e} over 70 instances"))
}

fn nonparametric_oracles() -> Check {
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= 1e-10, || format!("{what}: {a} vs {b}"));
    let km = kaplan_meier(&[1.0, 2.0, 3.0, 4.0, 5.0], &[true, false, true, false, true]).unwrap();
    close(km.survival.eval(1.0), 0.8, "KM(1)")?;
    close(km.survival.eval(3.0), 0.8 * 2.0 / 3.0, "KM(3)")?;
    close(km.survival.eval(5.0), 0.0, "KM(5)")?;
    let na = nelson_aalen(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
    close(na.eval(3.0), 1.0 / 3.0 + 0.5 + 1.0, "NA(3)")?;
    let na1 = nelson_aalen(&[2.0, 3.0, 4.0, 5.0], &[true, false, false, false]).unwrap();
    close(na1.eval(2.0), 0.25, "NA single event")?;
    let g = censoring_km(&[1.0, 2.0, 3.0], &[false, true, false]).unwrap();
    close(g.eval(1.0), 2.0 / 3.0, "G(1)")?;
    // product limit: the censoring at 3 has a risk set of one
    close(g.eval(3.0), 0.0, "G(3)")?;
    let aj = aalen_johansen(&[1.0, 2.0, 3.0], &[1, 2, 1], 2).unwrap();
    close(aj.cause(1).unwrap().eval(3.0), 2.0 / 3.0, "CIF1(3)")?;
    close(aj.cause(2).unwrap().eval(3.0), 1.0 / 3.0, "CIF2(3)")?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..25))).collect();
        let s: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let aj = aalen_johansen(&t, &s, 3).unwrap();
        for u in (0..=26).map(f64::from) {
            let total = aj.causes.iter().map(|c| c.cif.eval(u)).sum::<f64>() + aj.overall.eval(u);
            worst = worst.max((total - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("sum CIF + S deviates by {worst:.2e}"))?;
    Ok(format!("hand values to 1e-10; max |sum CIF + S - 1| = {worst:.1e} on 50 datasets"))
}

fn reductions() -> Check {
    let mut worst = [0.0f64; 4];
    for seed in 0..5 {
        let roles = ColumnRoles::new("time", "status", "x").with_adjusters(&["z"]);
        let data = ingest(&synthetic_csv(150, 0.3, 1, seed), &roles);

        let cox = fit_cox(&data, &CoxOptions::default()).map_err(|e| format!("cox: {e}"))?;
        let fg = fit_fine_gray(&data, &FineGrayOptions::default()).map_err(|e| format!("fine_gray: {e}"))?;
        let d = cox.beta.iter().zip(&fg.beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst[0] = worst[0].max(d);

        let csv = synthetic_csv(150, 0.3, 1, seed).replace(",g\n", ",one\n");
        let one: String = csv
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{},a\n", l.rsplit_once(',').unwrap().0) })
            .collect();
        let strat = ingest(&one, &roles.clone().with_strata("one"));
        let sc = fit_cox(&strat, &CoxOptions::default()).map_err(|e| format!("one stratum: {e}"))?;
        let d = cox.beta.iter().zip(&sc.beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst[1] = worst[1].max(d.max((cox.log_partial_likelihood() - sc.log_partial_likelihood()).abs()));

        let wb = fit_parametric(
            &data,
            Distribution::Weibull,
            &ParametricOptions {
                fixed_scale: Some(1.0),
                ..ParametricOptions::default()
            },
        )
        .map_err(|e| format!("weibull: {e}"))?;
        let ex = fit_parametric(&data, Distribution::Exponential, &ParametricOptions::default())
            .map_err(|e| format!("exponential: {e}"))?;
        worst[2] = worst[2].max((wb.log_likelihood - ex.log_likelihood).abs());

        let breslow = fit_cox(
            &data,
            &CoxOptions {
                ties: Ties::Breslow,
                ..CoxOptions::default()
            },
        )
        .map_err(|e| format!("breslow: {e}"))?;
        let d = cox.beta.iter().zip(&breslow.beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst[3] = worst[3].max(d);
    }
    let limits = [1e-8, 1e-10, 1e-8, 1e-10];
    let names = ["fine_gray vs cox", "one stratum vs cox", "weibull(sigma=1) vs exponential", "efron vs breslow"];
    for k in 0..4 {
        ensure(worst[k] <= limits[k], || format!("{}: {:.2e} > {:.0e}", names[k], worst[k], limits[k]))?;
    }
    Ok(format!(
        "max differences {:.1e}, {:.1e}, {:.1e}, {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn veterans() -> Check {
    let start = Instant::now();
    let roles = ColumnRoles::new("time", "status", "karno")
        .with_adjusters(&["age", "diagtime", "prior", "trt"])
        .with_strata("celltype");
    let bytes = std::fs::read(veteran_path()).map_err(|e| e.to_string())?;
    let (data, report) = ingest_csv(&bytes, &roles, &IngestOptions::default()).map_err(|e| e.to_string())?;
    ensure(data.n() == 137, || format!("{} rows kept of {}", data.n(), report.rows_in))?;
    let model = fit(&ModelSpec::new(Family::StratifiedCox, roles), &data).map_err(|e| e.to_string())?;
    let profile = default_adjuster_profile(&data);
    let surface = build_surface(&model, &data, &profile, &ContourOptions::default()).map_err(|e| e.to_string())?;
    let panels = surface.panels.as_ref().ok_or("no panels")?;
    ensure(panels.len() == 4, || format!("{} panels", panels.len()))?;
    let mut summary = Vec::new();
    for p in panels {
        let six_months: Vec<f64> = p
            .surface
            .predictor_grid
            .iter()
            .map(|&k| model.predict(&profile.covariates("karno", k), Some(&p.stratum), &[182.625]).unwrap().values[0])
            .collect();
        ensure(six_months.windows(2).all(|w| w[1] >= w[0]), || {
            format!("stratum {}: 6-month survival decreases in karno", p.stratum)
        })?;
        summary.push(format!("{} {:.2}->{:.2}", p.stratum, six_months[0], six_months[six_months.len() - 1]));
    }
    within("veterans", start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("{}; {:.2?}", summary.join(", "), start.elapsed()))
}

fn u_shape_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut csv = String::from("time,status,x\n");
    for _ in 0..2000 {
        let x: f64 = rng.random_range(10.0..40.0);
        let z = (x - 25.0) / 15.0;
        let rate = 0.15 * (2.5 * z * z).exp();
        let t = -rng.random::<f64>().ln() / rate;
        let c = rng.random_range(0.0..5.0);
        let (time, status) = if t <= c { (t, 1) } else { (c, 0) };
        csv.push_str(&format!("{time:.6},{status},{x:.6}\n"));
    }
    let roles = ColumnRoles::new("time", "status", "x");
    let data = ingest(&csv, &roles);
    let profile = default_adjuster_profile(&data);

    let start = Instant::now();
    let rsf = fit(&ModelSpec::new(Family::Rsf, roles.clone()), &data).map_err(|e| e.to_string())?;
    let s = build_surface(&rsf, &data, &profile, &ContourOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let col = (0..s.cols())
        .min_by(|&a, &b| (s.time_grid[a] - 1.0).abs().total_cmp(&(s.time_grid[b] - 1.0).abs()))
        .unwrap();
    let column: Vec<f64> = (0..s.rows()).map(|i| s.at(i, col)).collect();
    let best = (0..column.len()).max_by(|&a, &b| column[a].total_cmp(&column[b])).unwrap();
    let mut sorted = data.predictor_values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile_type7(&sorted, 1.0 / 3.0), quantile_type7(&sorted, 2.0 / 3.0));
    let peak = s.predictor_grid[best];
    ensure(peak > lo && peak < hi, || format!("forest peak at x={peak:.2}, middle tercile ({lo:.2}, {hi:.2})"))?;

    let cox = fit(&ModelSpec::new(Family::Cox, roles), &data).map_err(|e| e.to_string())?;
    let c = build_surface(&cox, &data, &profile, &ContourOptions::default()).map_err(|e| e.to_string())?;
    let ccol: Vec<f64> = (0..c.rows()).map(|i| c.at(i, col)).collect();
    let monotone = ccol.windows(2).all(|w| w[1] >= w[0]) || ccol.windows(2).all(|w| w[1] <= w[0]);
    ensure(monotone, || "cox column is not monotone".into())?;
    within("forest fit + surface", elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "t={:.3}: forest peak {:.3} at x={peak:.2} in ({lo:.2}, {hi:.2}), ends {:.3}/{:.3}; cox monotone; {elapsed:.2?}",
        s.time_grid[col],
        column[best],
        column[0],
        column[column.len() - 1]
    ))
}

fn brute_force_c(t: &[f64], e: &[bool], s: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t.len() {
        for j in 0..t.len() {
            if e[i] && t[i] < t[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Integrated Brier score straight from its definition.
fn brier_oracle(t: &[f64], e: &[bool], rates: &[f64]) -> (f64, f64) {
    let n = t.len();
    let g = |u: f64, strict: bool| -> f64 {
        let mut cens: Vec<f64> = (0..n).filter(|&i| !e[i]).map(|i| t[i]).collect();
        cens.sort_by(f64::total_cmp);
        cens.dedup();
        let mut v = 1.0;
        for c in cens {
            if c > u || (strict && c == u) {
                break;
            }
            let at_risk = (0..n).filter(|&j| t[j] > c || (t[j] == c && !e[j])).count() as f64;
            let censored = (0..n).filter(|&j| t[j] == c && !e[j]).count() as f64;
            v *= 1.0 - censored / at_risk;
        }
        v
    };
    let tau = (0..n)
        .filter(|&i| e[i] && g(t[i], false) > 0.05)
        .map(|i| t[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut grid: Vec<f64> = (0..n).filter(|&i| e[i] && t[i] < tau).map(|i| t[i]).collect();
    grid.extend([0.0, tau]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let bs: Vec<f64> = grid
        .iter()
        .map(|&u| {
            (0..n)
                .map(|i| {
                    let s = (-rates[i] * u).exp();
                    if t[i] <= u && e[i] {
                        s * s / g(t[i], true)
                    } else if t[i] > u {
                        (1.0 - s) * (1.0 - s) / g(u, false)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let area: f64 = (1..grid.len()).map(|k| 0.5 * (bs[k] + bs[k - 1]) * (grid[k] - grid[k - 1])).sum();
    (area / tau, tau)
}

fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.random_range(3..25);
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..10))).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-5..5))).collect();
        let Ok(c) = c_index(&t, &e, &s) else { continue };
        let brute = brute_force_c(&t, &e, &s);
        ensure(c.c_index == brute, || format!("c-index {} vs brute force {brute}", c.c_index))?;
        checked += 1;
    }
    let t: Vec<f64> = (1..=20).map(f64::from).collect();
    let scores: Vec<f64> = t.iter().map(|v| -v).collect();
    let perfect = c_index(&t, &[true; 20], &scores).unwrap().c_index;
    ensure(perfect == 1.0, || format!("perfect ordering gives {perfect}"))?;

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(8..30);
        let t: Vec<f64> = (0..n).map(|_| (rng.random_range(0.1..10.0f64) * 4.0).round() / 4.0 + 0.25).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.65)).collect();
        let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.5)).collect();
        let g = censoring_km(&t, &e).unwrap();
        let Ok(tau) = default_tau(&t, &e, &g) else { continue };
        let grid = brier_grid(&t, &e, tau, usize::MAX);
        if grid.len() < 2 {
            continue;
        }
        let preds: Vec<Vec<f64>> = rates.iter().map(|r| grid.iter().map(|u| (-r * u).exp()).collect()).collect();
        let got = integrated_brier(&preds, &t, &e, &grid, &g).map_err(|e| e.to_string())?;
        let (want, want_tau) = brier_oracle(&t, &e, &rates);
        ensure(got.tau == want_tau, || format!("tau {} vs {want_tau}", got.tau))?;
        worst = worst.max((got.integrated - want).abs());
    }
    ensure(worst <= 1e-10, || format!("IBS differs from the direct formula by {worst:.2e}"))?;
    Ok(format!("c-index exact on 50 datasets; perfect case 1.0; IBS max diff {worst:.1e}"))
}

fn family_cases() -> Vec<(Family, ColumnRoles, u32)> {
    let base = ColumnRoles::new("time", "status", "x").with_adjusters(&["z", "g"]);
    let mut out = vec![
        (Family::KaplanMeier, base.clone(), 1),
        (Family::Cox, base.clone(), 1),
        (
            Family::StratifiedCox,
            ColumnRoles::new("time", "status", "x").with_adjusters(&["z"]).with_strata("g"),
            1,
        ),
        (Family::FineGray { cause: 1 }, base.clone(), 2),
        (Family::Rsf, base.clone(), 1),
    ];
    for dist in [
        Distribution::Exponential,
        Distribution::Weibull,
        Distribution::LogNormal,
        Distribution::LogLogistic,
    ] {
        out.push((Family::Parametric { dist }, base.clone(), 1));
    }
    out
}

fn consistent(model: &FittedModel, s: &ContourSurface, stratum: Option<&str>, data: &SurvivalDataset) -> bool {
    let profile = default_adjuster_profile(data);
    s.predictor_grid.iter().enumerate().all(|(i, &x)| {
        model.predict(&profile.covariates(&s.predictor, x), stratum, &s.time_grid).unwrap().values == s.row(i)
    })
}

fn cli_fit(out: &Path) -> Result<(), String> {
    let data = veteran_path();
    let o = Command::new(env!("CARGO_BIN_EXE_survcontour"))
        .args(["fit", "--data", data.to_str().unwrap()])
        .args(["--time", "time", "--status", "status", "--predictor", "karno"])
        .args(["--adjusters", "age,diagtime,prior,trt", "--family", "rsf", "--n-trees", "50", "--seed", "3"])
        .args(["--surface3d", "--out", out.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())
}

fn surface_contract() -> Check {
    for (family, roles, causes) in family_cases() {
        let tag = family.tag();
        let data = ingest(&synthetic_csv(300, 0.25, causes, 17), &roles);
        let mut spec = ModelSpec::new(family, roles);
        spec.options.n_trees = 40;
        let model = fit(&spec, &data).map_err(|e| format!("{tag}: {e}"))?;
        let s = build_surface(&model, &data, &default_adjuster_profile(&data), &ContourOptions::default())
            .map_err(|e| format!("{tag}: {e}"))?;
        let bad = s.check_invariants(data.n());
        ensure(bad.is_empty(), || format!("{tag}: {bad:?}"))?;
        ensure(s.predictor_grid.len() == 50, || format!("{tag}: grid length"))?;
        match &s.panels {
            None => ensure(consistent(&model, &s, None, &data), || format!("{tag}: surface != model"))?,
            Some(panels) => {
                let (levels, codes) = data.strata().unwrap();
                for p in panels {
                    let code = levels.iter().position(|l| *l == p.stratum).unwrap();
                    let n = codes.iter().filter(|&&c| c == code).count();
                    let bad = p.surface.check_invariants(n);
                    ensure(bad.is_empty(), || format!("{tag}/{}: {bad:?}", p.stratum))?;
                    ensure(consistent(&model, &p.surface, Some(&p.stratum), &data), || {
                        format!("{tag}/{}: surface != model", p.stratum)
                    })?;
                }
            }
        }
        let bytes = to_json_bytes(&s).unwrap();
        let back: ContourSurface = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        ensure(back == s, || format!("{tag}: JSON round trip changed values"))?;
    }
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cli_fit(a.path())?;
    cli_fit(b.path())?;
    for name in ["contour.json", "quantiles.json", "metrics.json", "surface3d.json"] {
        let same = std::fs::read(a.path().join(name)).ok() == std::fs::read(b.path().join(name)).ok();
        ensure(same, || format!("CLI {name} differs between runs"))?;
    }
    Ok("invariants and model consistency on 9 families; JSON round trip; CLI byte-stable".into())
}

const BOUNDARY: &str = "XBOUNDARYX";

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

async fn upload(app: &Router, csv: &str, roles: &ColumnRoles) -> (StatusCode, Value) {
    let mut body = Vec::new();
    let roles = serde_json::to_vec(roles).unwrap();
    for (name, bytes) in [("file", csv.as_bytes()), ("roles", roles.as_slice())] {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    let req = Request::post("/datasets")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn submit(app: &Router, dataset: &str, spec: &ModelSpec) -> Result<String, String> {
    let (s, b) = post_json(app, "/models", &json!({"dataset_id": dataset, "spec": spec})).await;
    ensure(s == StatusCode::ACCEPTED, || format!("submit: {s} {}", String::from_utf8_lossy(&b)))?;
    Ok(serde_json::from_slice::<Value>(&b).unwrap()["job_id"].as_str().unwrap().to_string())
}

async fn poll(app: &Router, job: &str) -> Value {
    loop {
        let (_, b) = get(app, &format!("/jobs/{job}")).await;
        let v: Value = serde_json::from_slice(&b).unwrap();
        if matches!(v["state"].as_str(), Some("done" | "failed")) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

async fn service_flow() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(Config {
        data_dir: dir.path().to_path_buf(),
        workers: 1,
        ..Config::default()
    })
    .await
    .map_err(|e| e.to_string())?;
    let app = router(state);
    let mut families = 0;
    for (family, roles, causes) in family_cases() {
        let tag = family.tag();
        let csv = synthetic_csv(150, 0.25, causes, 23);
        let (s, v) = upload(&app, &csv, &roles).await;
        ensure(s == StatusCode::CREATED, || format!("{tag} upload: {s} {v}"))?;
        let ds = v["dataset_id"].as_str().unwrap().to_string();
        let mut spec = ModelSpec::new(family, roles.clone());
        spec.options.n_trees = 20;
        let job = submit(&app, &ds, &spec).await?;
        let record = poll(&app, &job).await;
        ensure(record["state"] == "done", || format!("{tag}: {record}"))?;

        let data = ingest(&csv, &roles);
        let model = fit(&spec, &data).map_err(|e| e.to_string())?;
        let profile = default_adjuster_profile(&data);
        let opts = ContourOptions {
            n_pred: 20,
            n_time: 40,
            ..ContourOptions::default()
        };
        let surface = build_surface(&model, &data, &profile, &opts).map_err(|e| e.to_string())?;
        let expected = [
            ("contour?n_pred=20&n_time=40", to_json_bytes(&surface).unwrap()),
            (
                "quantile-curves?n_time=40",
                to_json_bytes(&build_quantile_curves(&model, &data, &profile, &opts).unwrap()).unwrap(),
            ),
            ("surface3d?n_pred=20&n_time=40", to_json_bytes(&to_surface3d(&surface)).unwrap()),
            ("metrics", to_json_bytes(&model.metrics(&data).unwrap()).unwrap()),
        ];
        for (path, want) in expected {
            let (s, got) = get(&app, &format!("/models/{job}/{path}")).await;
            ensure(s == StatusCode::OK && got == want, || format!("{tag} {path}: {s}, bytes differ from library"))?;
        }
        families += 1;
    }

    let roles = ColumnRoles::new("time", "status", "x").with_adjusters(&["z"]);
    let csv = synthetic_csv(120, 0.25, 1, 29);
    let (s, _) = upload(&app, &csv, &ColumnRoles::new("time", "status", "weight")).await;
    ensure(s == StatusCode::BAD_REQUEST, || format!("missing column gave {s}"))?;
    let (s, _) = get(&app, "/models/unknown/contour").await;
    ensure(s == StatusCode::NOT_FOUND, || format!("unknown model gave {s}"))?;
    let (_, v) = upload(&app, &csv, &roles).await;
    let ds = v["dataset_id"].as_str().unwrap().to_string();
    let (s, _) = post_json(&app, "/models", &json!({"dataset_id": ds, "spec": {"family": "fine_gray", "roles": roles}})).await;
    ensure(s == StatusCode::UNPROCESSABLE_ENTITY, || format!("fine_gray on single cause gave {s}"))?;
    let slow = ModelSpec {
        options: survcontour_core::registry::ModelOptions {
            n_trees: 600,
            nodesize: 3,
            ..Default::default()
        },
        ..ModelSpec::new(Family::Rsf, roles.clone())
    };
    let first = submit(&app, &ds, &slow).await?;
    let mut queued = slow.clone();
    queued.options.seed = 9;
    let second = submit(&app, &ds, &queued).await?;
    let (s, _) = get(&app, &format!("/models/{second}/contour")).await;
    ensure(s == StatusCode::CONFLICT, || format!("queued job gave {s}"))?;
    poll(&app, &first).await;
    poll(&app, &second).await;
    let (s, _) = get(&app, &format!("/models/{second}/contour?ci=true")).await;
    ensure(s == StatusCode::UNPROCESSABLE_ENTITY, || format!("ci on forest gave {s}"))?;
    Ok(format!("{families} families byte-identical to the library; 400/404/409/422 observed"))
}

fn performance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let names: Vec<String> = (1..10).map(|k| format!("a{k}")).collect();
    let mut csv = format!("time,status,x,{}\n", names.join(","));
    for _ in 0..10_000 {
        let cov: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lp: f64 = cov.iter().enumerate().map(|(k, v)| v * 0.1 * k as f64).sum();
        let t = -rng.random::<f64>().ln() / (0.2 * lp.exp());
        let c = rng.random_range(0.0..15.0);
        let (time, status) = if t <= c { (t, 1) } else { (c, 0) };
        let row: Vec<String> = cov.iter().map(|v| format!("{v:.6}")).collect();
        csv.push_str(&format!("{time:.6},{status},{}\n", row.join(",")));
    }
    let roles = ColumnRoles::new("time", "status", "x").with_adjusters(&names);
    let data = ingest(&csv, &roles);
    let spec = ModelSpec::new(Family::Cox, roles);
    let start = Instant::now();
    let model = fit(&spec, &data).map_err(|e| e.to_string())?;
    let fit_time = start.elapsed();
    let start = Instant::now();
    let s = build_surface(&model, &data, &default_adjuster_profile(&data), &ContourOptions::default())
        .map_err(|e| e.to_string())?;
    let surface_time = start.elapsed();
    ensure(s.rows() == 50 && s.cols() == 200, || format!("surface is {}x{}", s.rows(), s.cols()))?;
    within("cox fit", fit_time, Duration::from_secs(5))?;
    within("surface", surface_time, Duration::from_millis(500))?;
    Ok(format!("cox 10000x10 fit {fit_time:.2?}; 50x200 surface {surface_time:.2?}"))
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("partial-likelihood oracle", Box::new(partial_likelihood_oracle)),
        ("gradient checks", Box::new(gradient_checks)),
        ("nonparametric oracles", Box::new(nonparametric_oracles)),
        ("reductions", Box::new(reductions)),
        ("veterans stratified cox", Box::new(veterans)),
        ("non-monotone recovery", Box::new(u_shape_recovery)),
        ("metrics", Box::new(metrics)),
        ("surface contract", Box::new(surface_contract)),
        ("service contract", Box::new(|| runtime.block_on(service_flow()))),
        ("performance", Box::new(performance)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Criteria 3–6 and 10 are exact properties: a failure makes the target exit
//! non-zero. Criteria 1, 2, 7, 8 and 9 are empirical training outcomes; they
//! are reported but do not fail the build. Criteria 7 and 8 train on the
//! predator-prey grid for hours per run and only execute when
//! `PAC_ACCEPTANCE_PREDATOR_PREY=1`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pac_algo::pac::{counterfactual_predict, lambda_returns, loss_lp};
use pac_algo::selfcheck::{kl_monte_carlo_gap, mixer_gradient_violations, run_suite};
use pac_algo::{Algo, LearnerConfig};
use pac_autodiff::{Tape, Tensor};
use pac_envs::PredatorPreyConfig;
use pac_nets::{LinearMixer, MonotonicMixer, ParamStore};
use pac_trainer::checkpoint::load_learner;
use pac_trainer::{
    evaluate, matrix_game_report, train_to_dir, EnvConfig, MatrixGameReport, MetricsRow, TrainConfig, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const MATRIX_BUDGET: Duration = Duration::from_secs(15 * 60);
const PREDATOR_PREY_BUDGET: Duration = Duration::from_secs(4 * 60 * 60);
const PAC_MIN_RETURN: f64 = 3.9;
const QMIX_MAX_RETURN: f64 = 2.1;
const QSTAR_TOL: f64 = 0.5;
const SOLVED_FRACTION: f64 = 0.7;
const MISCAPTURE: f32 = -1.5;
const EXACT_TOL: f64 = 1e-4;
const KL_REL_TOL: f64 = 0.01;

struct Verdict {
    id: u32,
    passed: bool,
    hard: bool,
    detail: String,
}

fn out_root() -> PathBuf {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).expect("acceptance dir");
    root
}

struct Run {
    rows: Vec<MetricsRow>,
    elapsed: Duration,
    report: Option<MatrixGameReport>,
}

impl Run {
    fn final_return(&self) -> f64 {
        self.rows
            .iter()
            .rev()
            .find_map(|r| r.test_return_mean)
            .unwrap_or(f64::NAN)
    }

    fn best_return(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.test_return_mean)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn run(cfg: &TrainConfig, label: &str) -> Run {
    let dir = out_root().join(label);
    let t0 = Instant::now();
    let out = train_to_dir(cfg, &dir).unwrap_or_else(|e| panic!("{label}: {e}"));
    let elapsed = t0.elapsed();
    let report = match &cfg.env {
        EnvConfig::MatrixGame(g) => {
            let r = matrix_game_report(&out.learner, g).expect("report");
            std::fs::write(dir.join("report.txt"), r.render()).expect("write report");
            Some(r)
        }
        _ => None,
    };
    eprintln!(
        "  {label}: {:.0}s, final return {:?}",
        elapsed.as_secs_f64(),
        out.rows.last().and_then(|r| r.test_return_mean)
    );
    Run {
        rows: out.rows,
        elapsed,
        report,
    }
}

fn matrix_cfg(algo: Algo, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_env("matrix_game").unwrap();
    cfg.learner = LearnerConfig::for_algo(algo);
    cfg.seed = seed;
    cfg.log_interval = 200;
    cfg
}

fn qstar_cell(report: &MatrixGameReport, state: usize, cell: (usize, usize)) -> f64 {
    report.states[state]
        .qstar
        .as_ref()
        .map_or(f64::NAN, |q| q[cell.0][cell.1])
}

fn decile_mean(rows: &[MetricsRow], total: u64, decile: u64) -> f64 {
    let (lo, hi) = ((decile - 1) * total / 10, decile * total / 10);
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.env_steps > lo && r.env_steps <= hi)
        .filter_map(|r| r.alpha)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn temperature_verdict(runs: &[(String, &Run, u64)]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, r, total) in runs {
        let (fifth, last) = (decile_mean(&r.rows, *total, 5), decile_mean(&r.rows, *total, 10));
        passed &= last <= fifth;
        parts.push(format!("{label}: alpha d5 {fifth:.4} d10 {last:.4}"));
    }
    Verdict {
        id: 9,
        passed,
        hard: false,
        detail: parts.join("; "),
    }
}

fn matrix_game() -> (Verdict, Verdict, Vec<Run>) {
    let mut pac_runs = Vec::new();
    let mut ok1 = true;
    let mut d1 = Vec::new();
    for seed in SEEDS {
        let r = run(&matrix_cfg(Algo::Pac, seed), &format!("matrix_pac_s{seed}"));
        let rep = r.report.as_ref().unwrap();
        let both = rep.states.iter().all(|s| s.greedy_payoff == 4.0);
        let q1 = qstar_cell(rep, 0, (0, 0));
        let q2 = qstar_cell(rep, 1, (1, 0));
        let ret = r.final_return();
        let ok = both
            && ret >= PAC_MIN_RETURN
            && (q1 - 4.0).abs() <= QSTAR_TOL
            && (q2 - 4.0).abs() <= QSTAR_TOL
            && r.elapsed <= MATRIX_BUDGET;
        ok1 &= ok;
        d1.push(format!(
            "seed {seed}: greedy {:?}/{:?} return {ret:.3} Q* {q1:.2}/{q2:.2} {:.0}s",
            rep.states[0].greedy,
            rep.states[1].greedy,
            r.elapsed.as_secs_f64()
        ));
        pac_runs.push(r);
    }

    let mut ok2 = true;
    let mut d2 = Vec::new();
    for seed in SEEDS {
        let r = run(&matrix_cfg(Algo::Qmix, seed), &format!("matrix_qmix_s{seed}"));
        let rep = r.report.as_ref().unwrap();
        let hits = rep.states.iter().filter(|s| s.greedy_payoff == 4.0).count();
        let ret = r.final_return();
        ok2 &= hits <= 1 && ret <= QMIX_MAX_RETURN && r.elapsed <= MATRIX_BUDGET;
        d2.push(format!("qmix seed {seed}: optimal states {hits} return {ret:.3}"));
    }
    let mut s2_failures = 0;
    for seed in SEEDS {
        let r = run(&matrix_cfg(Algo::OwQmix, seed), &format!("matrix_ow_qmix_s{seed}"));
        let rep = r.report.as_ref().unwrap();
        let q1 = qstar_cell(rep, 0, (0, 0));
        ok2 &= (q1 - 4.0).abs() <= QSTAR_TOL && r.elapsed <= MATRIX_BUDGET;
        let s2_fail = rep.states[1].greedy_payoff != 4.0;
        s2_failures += s2_fail as usize;
        d2.push(format!(
            "ow_qmix seed {seed}: Q*(s1) {q1:.2} s2 greedy {:?}",
            rep.states[1].greedy
        ));
    }
    ok2 &= s2_failures >= 2;
    (
        Verdict {
            id: 1,
            passed: ok1,
            hard: false,
            detail: d1.join("; "),
        },
        Verdict {
            id: 2,
            passed: ok2,
            hard: false,
            detail: d2.join("; "),
        },
        pac_runs,
    )
}

fn counterfactual_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0;
    let s_dim = 3;
    for _ in 0..200 {
        let n = rng.random_range(2..=3usize);
        let k = rng.random_range(2..=5usize);
        let a: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..s_dim * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let critic = |s: &[f64], q: &[f64]| -> f64 {
            (0..5)
                .map(|h| {
                    let z = (0..n).map(|j| a[j * 5 + h] * q[j]).sum::<f64>()
                        + (0..s_dim).map(|j| b[j * 5 + h] * s[j]).sum::<f64>();
                    w[h] * (z.tanh() + 0.3 * z * z)
                })
                .sum()
        };
        let s: Vec<f64> = (0..s_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qs: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let taken: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let avail = vec![true; n * k];
        let batched = |st: &[f64], q: &[f64], m: usize| {
            Ok((0..m)
                .map(|r| critic(&st[r * s_dim..][..s_dim], &q[r * n..][..n]))
                .collect())
        };
        let pred = counterfactual_predict(batched, &s, s_dim, &qs, &taken, &avail, &[true], n, k).expect("predict");
        for i in 0..n {
            let mut best = (0, f64::NEG_INFINITY);
            for u in 0..k {
                let joint: Vec<f64> = (0..n).map(|j| qs[j * k + if j == i { u } else { taken[j] }]).collect();
                let v = critic(&s, &joint);
                if v > best.1 {
                    best = (u, v);
                }
            }
            mismatches += (pred.labels[i] != best.0) as usize;
        }
    }
    Verdict {
        id: 3,
        passed: mismatches == 0,
        hard: true,
        detail: format!("200 instances, {mismatches} mismatched labels"),
    }
}

fn gradient_suite() -> Verdict {
    let lines = run_suite(false).expect("gradient suite");
    let worst = lines.iter().map(|l| l.max_relative_error).fold(0.0, f64::max);
    let all = lines.iter().all(|l| l.passed());
    let (closed, mc) = kl_monte_carlo_gap(1_000_000, 77);
    let gap = ((mc - closed) / closed).abs();
    let violations = mixer_gradient_violations(1000, 78);
    Verdict {
        id: 4,
        passed: all && worst < 1e-3 && gap < KL_REL_TOL && violations == 0,
        hard: true,
        detail: format!(
            "{} checks, worst rel err {worst:.2e}; KL {closed:.5} vs MC {mc:.5} (gap {:.3}%); {violations} negative mixer gradients in 1000 draws",
            lines.len(),
            100.0 * gap
        ),
    }
}

fn single_layer_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, k, s_dim) = (3, 4, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut store = ParamStore::new();
        let lin = LinearMixer::new(&mut store, &mut rng, "m", s_dim, n);
        let params = store.cast::<f64>();
        let mixer = MonotonicMixer::Linear(lin.clone());
        let alpha = rng.random_range(0.0..2.0);
        let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s: Vec<f64> = (0..s_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut tape = Tape::<f64>::new();
        let p = params.bind(&mut tape, false);
        let lg = tape.constant(Tensor::from_f64(&[n, k], &logits).unwrap());
        let lp = tape.log_softmax(lg, 1).unwrap();
        let state = tape.constant(Tensor::from_f64(&[1, s_dim], &s).unwrap());
        let loss = loss_lp(
            &mut tape,
            |t: &mut Tape<f64>, st, v| mixer.forward(t, &p, st, v),
            state,
            lp,
            &q,
            alpha,
            &vec![true; n * k],
            &[true],
            n,
        )
        .unwrap();
        let loss = tape.value(loss).item();

        let w = params.get(lin.k.w).to_f64_vec();
        let c = params.get(lin.k.b).to_f64_vec();
        let bw = params.get(lin.b.w).to_f64_vec();
        let bb = params.get(lin.b.b).to_f64_vec();
        let kw: Vec<f64> = (0..n)
            .map(|i| ((0..s_dim).map(|j| s[j] * w[j * n + i]).sum::<f64>() + c[i]).abs())
            .collect();
        let bias = (0..s_dim).map(|j| s[j] * bw[j]).sum::<f64>() + bb[0];
        let logp: Vec<f64> = (0..n)
            .flat_map(|i| {
                let row = &logits[i * k..][..k];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
                row.iter().map(move |x| x - z).collect::<Vec<_>>()
            })
            .collect();
        let pi: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let mut e_qtot = 0.0;
        for joint in 0..k.pow(n as u32) {
            let (mut prob, mut qt, mut code) = (1.0, bias, joint);
            for i in 0..n {
                let u = code % k;
                code /= k;
                prob *= pi[i * k + u];
                qt += kw[i] * q[i * k + u];
            }
            e_qtot += prob * qt;
        }
        let ent: f64 = (0..n)
            .map(|i| kw[i] * alpha * (0..k).map(|u| pi[i * k + u] * logp[i * k + u]).sum::<f64>())
            .sum();
        worst = worst.max((loss - (-e_qtot + ent)).abs());
    }
    Verdict {
        id: 5,
        passed: worst < EXACT_TOL,
        hard: true,
        detail: format!("100 fixtures, max |diff| {worst:.2e}"),
    }
}

fn td_lambda() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut exact = true;
    for _ in 0..100 {
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gamma = rng.random_range(0.5..1.0);
        let term = rng.random_bool(0.5);
        let one = lambda_returns(&r, &v, term, gamma, 0.0);
        exact &= (0..10).all(|t| one[t] == r[t] + gamma * if term && t == 9 { 0.0 } else { v[t] });
        let mc = lambda_returns(&r, &v, true, gamma, 1.0);
        let mut g = 0.0;
        for t in (0..10).rev() {
            g = r[t] + gamma * g;
            exact &= mc[t] == g;
        }
    }
    let g = lambda_returns(&[1.0, 1.0, 1.0], &[2.0, 2.0, 0.0], true, 0.9, 0.6);
    let h2 = 1.0;
    let h1 = 1.0 + 0.9 * (0.4 * 2.0 + 0.6 * h2);
    let h0 = 1.0 + 0.9 * (0.4 * 2.0 + 0.6 * h1);
    let hand = g == vec![h0, h1, h2];
    Verdict {
        id: 6,
        passed: exact && hand,
        hard: true,
        detail: format!("limits exact {exact}; 3-step fixture {g:?} vs hand [{h0}, {h1}, {h2}]"),
    }
}

fn determinism() -> Verdict {
    let mut cases = Vec::new();
    let mut m = matrix_cfg(Algo::Pac, 5);
    m.total_env_steps = 600;
    m.batch_size = 32;
    m.eval_interval = 200;
    m.log_interval = 50;
    let mut pp = TrainConfig::for_env("predator_prey").unwrap();
    pp.env = EnvConfig::PredatorPrey(PredatorPreyConfig::desk(MISCAPTURE));
    pp.total_env_steps = 800;
    pp.batch_size = 4;
    pp.buffer_capacity = 8;
    pp.eval_interval = 400;
    pp.eval_episodes = 2;
    cases.push(("matrix", m));
    cases.push(("predator_prey", pp));
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, cfg) in cases {
        let root = out_root().join(format!("determinism_{name}"));
        let read = |d: &str, f: &str| std::fs::read(root.join(d).join(f)).expect("artifact");
        let mut inline = cfg.clone();
        inline.workers = 0;
        let mut threaded = cfg.clone();
        threaded.workers = 1;
        train_to_dir(&threaded, &root.join("a")).expect("run a");
        train_to_dir(&threaded, &root.join("b")).expect("run b");
        train_to_dir(&inline, &root.join("inline")).expect("inline run");
        let repeat =
            read("a", "metrics.csv") == read("b", "metrics.csv") && read("a", "final.ckpt") == read("b", "final.ckpt");
        let workers = read("a", "metrics.csv") == read("inline", "metrics.csv");

        let out = pac_trainer::train(&threaded).expect("in-memory run");
        let spec = cfg.env.spec().unwrap();
        let loaded = load_learner(&root.join("a").join("final.ckpt"), cfg.learner.clone(), &spec).expect("load");
        let mut env = cfg.env.build().unwrap();
        let e1 = evaluate(env.as_mut(), &out.learner.model, &out.learner.params, 8, 9).unwrap();
        let e2 = evaluate(env.as_mut(), &loaded.model, &loaded.params, 8, 9).unwrap();
        let ckpt = e1 == e2 && out.learner.params.fingerprint() == loaded.params.fingerprint();
        passed &= repeat && workers && ckpt;
        parts.push(format!(
            "{name}: repeat {repeat}, W=1 vs inline {workers}, checkpoint {ckpt}"
        ));
    }
    Verdict {
        id: 10,
        passed,
        hard: true,
        detail: parts.join("; "),
    }
}

fn predator_prey_cfg(algo: Algo, seed: u64, penalty: f32, variant: Option<Variant>) -> TrainConfig {
    let mut cfg = TrainConfig::for_env("predator_prey").unwrap();
    cfg.env = EnvConfig::PredatorPrey(PredatorPreyConfig::desk(penalty));
    cfg.learner = LearnerConfig::for_algo(algo);
    if let Some(v) = variant {
        v.apply(&mut cfg.learner);
    }
    cfg.seed = seed;
    cfg.log_interval = 10_000;
    cfg
}

fn predator_prey() -> (Verdict, Verdict, Vec<(String, Run, u64)>) {
    let total = TrainConfig::for_env("predator_prey").unwrap().total_env_steps;
    let mut within = true;
    let mut go = |algo: Algo, seed: u64, p: f32, v: Option<Variant>, label: String| {
        let r = run(&predator_prey_cfg(algo, seed, p, v), &label);
        within &= r.elapsed <= PREDATOR_PREY_BUDGET;
        r
    };
    let mut easy = Vec::new();
    let mut hard_pac = Vec::new();
    let mut hard_ow = Vec::new();
    let mut hard_qmix = Vec::new();
    let mut disabled = Vec::new();
    let mut no_qstar = Vec::new();
    for seed in SEEDS {
        easy.push((
            go(Algo::Pac, seed, 0.0, None, format!("pp0_pac_s{seed}")),
            go(Algo::Qmix, seed, 0.0, None, format!("pp0_qmix_s{seed}")),
        ));
        hard_pac.push(go(Algo::Pac, seed, MISCAPTURE, None, format!("pp15_pac_s{seed}")));
        hard_ow.push(go(
            Algo::OwQmix,
            seed,
            MISCAPTURE,
            None,
            format!("pp15_ow_qmix_s{seed}"),
        ));
        hard_qmix.push(go(Algo::Qmix, seed, MISCAPTURE, None, format!("pp15_qmix_s{seed}")));
        disabled.push(go(
            Algo::Pac,
            seed,
            MISCAPTURE,
            Some(Variant::Disabled),
            format!("pp15_disabled_s{seed}"),
        ));
        no_qstar.push(go(
            Algo::Pac,
            seed,
            MISCAPTURE,
            Some(Variant::NoQstar),
            format!("pp15_no_qstar_s{seed}"),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let best = easy
        .iter()
        .flat_map(|(a, b)| [a.best_return(), b.best_return()])
        .fold(f64::NEG_INFINITY, f64::max);
    let pac0 = mean(&easy.iter().map(|(a, _)| a.final_return()).collect::<Vec<_>>());
    let qmix0 = mean(&easy.iter().map(|(_, b)| b.final_return()).collect::<Vec<_>>());
    let finals = |v: &[Run]| v.iter().map(Run::final_return).collect::<Vec<_>>();
    let (pac15, ow15, qmix15) = (finals(&hard_pac), finals(&hard_ow), finals(&hard_qmix));
    let qmix_fails = qmix15.iter().filter(|&&r| r <= 0.0).count();
    let ok7 = within
        && pac0 >= SOLVED_FRACTION * best
        && qmix0 >= SOLVED_FRACTION * best
        && mean(&pac15) > 0.0
        && mean(&ow15) > 0.0
        && qmix_fails >= 2;
    let v7 = Verdict {
        id: 7,
        passed: ok7,
        hard: false,
        detail: format!(
            "p=0 best {best:.2}, PAC {pac0:.2}, QMIX {qmix0:.2}; p={MISCAPTURE} PAC {pac15:?} OW-QMIX {ow15:?} QMIX {qmix15:?}"
        ),
    };
    let beaten = |v: &[Run]| {
        v.iter()
            .zip(&pac15)
            .filter(|(r, &full)| r.final_return() < full)
            .count()
    };
    let (bd, bq) = (beaten(&disabled), beaten(&no_qstar));
    let v8 = Verdict {
        id: 8,
        passed: bd >= 2 && bq >= 2,
        hard: false,
        detail: format!(
            "full PAC beats disabled in {bd}/3 seeds, no_qstar in {bq}/3 (disabled {:?}, no_qstar {:?})",
            finals(&disabled),
            finals(&no_qstar)
        ),
    };
    let runs = hard_pac
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("pp15_pac_s{}", SEEDS[i]), r, total))
        .collect();
    (v7, v8, runs)
}

fn main() {
    let mut verdicts = vec![
        counterfactual_oracle(),
        gradient_suite(),
        single_layer_identity(),
        td_lambda(),
        determinism(),
    ];
    let (v1, v2, pac_runs) = matrix_game();
    let total = TrainConfig::for_env("matrix_game").unwrap().total_env_steps;
    let mut temperature: Vec<(String, &Run, u64)> = pac_runs
        .iter()
        .zip(SEEDS)
        .map(|(r, s)| (format!("matrix_pac_s{s}"), r, total))
        .collect();
    verdicts.extend([v1, v2]);
    let pp_runs;
    if std::env::var("PAC_ACCEPTANCE_PREDATOR_PREY").is_ok_and(|v| v == "1") {
        let (v7, v8, runs) = predator_prey();
        pp_runs = runs;
        temperature.extend(pp_runs.iter().map(|(l, r, t)| (l.clone(), r, *t)));
        verdicts.extend([v7, v8]);
    } else {
        let skipped = "not run: 21 predator-prey runs of 300k steps; set PAC_ACCEPTANCE_PREDATOR_PREY=1";
        for id in [7, 8] {
            verdicts.push(Verdict {
                id,
                passed: false,
                hard: false,
                detail: skipped.into(),
            });
        }
    }
    verdicts.push(temperature_verdict(&temperature));
    verdicts.sort_by_key(|v| v.id);

    println!("acceptance artifacts in {}", out_root().display());
    for v in &verdicts {
        println!(
            "{} criterion {:>2}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.id,
            v.detail
        );
    }
    let hard_failures: Vec<u32> = verdicts.iter().filter(|v| v.hard && !v.passed).map(|v| v.id).collect();
    if !hard_failures.is_empty() {
        eprintln!("exact criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}

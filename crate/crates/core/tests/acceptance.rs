//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and a
//! summary, and writes the same text to `acceptance_report.txt` in the cargo
//! target tmpdir.
//!
//! Criteria 1, 2, 3 and 9 are closed-form or mechanical and fail the target
//! when they fail. Criteria 4 to 8 are empirical learning outcomes; their
//! verdicts are reported as measured and do not change the exit status.
//!
//! `CRL_ACCEPTANCE_QUICK=1` shrinks seeds and step counts for a smoke run.
//! Quick-mode verdicts are not acceptance results.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use common::FdCase;
use continual_rl::bandit::{concentration_run, exp3_eta, BanditConfig, BanditState, FeedbackSignal, ETA_TD};
use continual_rl::continual::{RegMode, RegularizerSet};
use continual_rl::dqn::{DqnAgent, DqnConfig, Mode};
use continual_rl::envs::{make_task, GridEnv, TaskSpec};
use continual_rl::harness::{
    choose_rehearsal_task, cumulative_performance, final_performance, generalization_eval, interference_demo,
    train_continual, unseen_crossing_seeds, ExperimentConfig, InterferenceConfig, Method, RunOutput, Selection,
    Variant,
};
use continual_rl::nn::{HeadKind, Loss};
use continual_rl::replay::{ReplayBuffer, Transition, WarmStartBank};
use continual_rl::rng;
use rand::Rng as _;

struct Suite {
    quick: bool,
    seeds: Vec<u64>,
    text: String,
    results: Vec<(u32, bool, bool)>,
}

impl Suite {
    fn say(&mut self, line: impl AsRef<str>) {
        let line = line.as_ref();
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        self.text.push_str(line);
        self.text.push('\n');
    }

    fn verdict(&mut self, id: u32, gating: bool, pass: bool, title: &str, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        self.say(format!("[{tag}] criterion {id}: {title} | {detail}"));
        self.results.push((id, gating, pass));
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Suffix flagging comparisons whose every operand is zero.
fn degenerate(values: impl IntoIterator<Item = f64>) -> &'static str {
    if values.into_iter().all(|v| v == 0.0) {
        " [degenerate: every compared value is 0, the inequality holds trivially]"
    } else {
        ""
    }
}

fn fmt_map(m: &BTreeMap<usize, f64>) -> String {
    let parts: Vec<String> = m.iter().map(|(k, v)| format!("t{k}={v:.2}")).collect();
    parts.join(" ")
}

/// Per-task median over runs of the final success of `sel`.
fn median_final(runs: &[RunOutput], sel: Selection) -> BTreeMap<usize, f64> {
    let mut per_task: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (t, v) in final_performance(&r.records, sel) {
            per_task.entry(t).or_default().push(v);
        }
    }
    per_task.into_iter().map(|(t, v)| (t, median(v))).collect()
}

fn mean_final(r: &RunOutput, sel: Selection) -> f64 {
    let f = final_performance(&r.records, sel);
    f.values().sum::<f64>() / f.len().max(1) as f64
}

fn run_many(suite: &mut Suite, label: &str, cfg: &ExperimentConfig) -> Vec<RunOutput> {
    let mut out = Vec::new();
    for &seed in &suite.seeds.clone() {
        let t0 = Instant::now();
        let run = train_continual(cfg, seed, &mut |_| {}).expect("training run");
        let goals: u64 = run.phases.iter().map(|p| p.goals).sum();
        let episodes: u64 = run.phases.iter().map(|p| p.episodes).sum();
        suite.say(format!(
            "    {label} seed {seed}: {:.0} s, training goals {goals}/{episodes}",
            t0.elapsed().as_secs_f64()
        ));
        out.push(run);
    }
    out
}

fn criterion_1(suite: &mut Suite) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut params = 0;
    let mut depths = [0usize; 3];
    let mut kinds = [0usize; 2];
    let mut losses = BTreeMap::new();
    let cases = 24;
    for seed in 0..cases {
        let case = FdCase::random(seed);
        let (err, n) = case.max_rel_error();
        worst = worst.max(err);
        params += n;
        depths[case.net.spec().hidden_dims.len()] += 1;
        kinds[(case.net.head_kind() == HeadKind::LinearRegression) as usize] += 1;
        let name = match case.loss {
            Loss::Huber { .. } => "huber",
            Loss::SquaredError => "squared",
            Loss::GaussianNll => "gaussian_nll",
        };
        *losses.entry(name).or_insert(0) += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    let covered = depths.iter().all(|&d| d > 0) && kinds.iter().all(|&k| k > 0) && losses.len() >= 2;
    suite.verdict(
        1,
        true,
        worst < 1e-4 && covered && secs < 10.0,
        "analytic vs central-difference gradients",
        format!(
            "{cases} nets, {params} params, max rel err {worst:.2e} (< 1e-4), hidden depths {depths:?}, heads dueling/linear {kinds:?}, losses {losses:?}, {secs:.2} s (< 10 s)"
        ),
    );
}

fn criterion_2(suite: &mut Suite) {
    let t0 = Instant::now();
    let cfg = |eta| BanditConfig { eta, cap: 50.0 };
    let mut b = BanditState::new(2, cfg(0.5), 0).unwrap();
    b.update(0, FeedbackSignal::Reward(1.0)).unwrap();
    let e = std::f64::consts::E;
    let p0 = b.distribution()[0];
    let a_ok = (p0 - e / (e + 1.0)).abs() <= 1e-9;

    let mut b = BanditState::new(4, cfg(ETA_TD), 3).unwrap();
    let mut b_ok = true;
    for step in 0..200 {
        let before = b.weights().to_vec();
        let i = b.select();
        b.update(i, FeedbackSignal::TdError(step as f64 * 0.05)).unwrap();
        b_ok &= before
            .iter()
            .zip(b.weights())
            .enumerate()
            .all(|(k, (x, y))| k == i || x.to_bits() == y.to_bits());
    }

    let gains = [0.2, 0.2, 1.0];
    let eta = exp3_eta(3, 500);
    let hits = (0..100u64)
        .filter(|&s| concentration_run(&gains, 500, cfg(eta), s).unwrap() > 0.9)
        .count();
    let secs = t0.elapsed().as_secs_f64();
    let td_hits = (0..100u64)
        .filter(|&s| concentration_run(&gains, 500, cfg(ETA_TD), s).unwrap() > 0.9)
        .count();
    suite.verdict(
        2,
        true,
        a_ok && b_ok && hits >= 95 && secs < 5.0,
        "bandit mechanics",
        format!(
            "(a) p(chosen) = {p0:.12} vs e/(e+1) = {:.12}; (b) unselected arms bit-identical: {b_ok}; (c) p(best) > 0.9 in {hits}/100 runs (>= 95) with gains {gains:?} and eta = {eta:.4}; {secs:.2} s (< 5 s). For reference eta = {ETA_TD} gives {td_hits}/100",
            e / (e + 1.0)
        ),
    );
}

fn criterion_3(suite: &mut Suite) {
    let t0 = Instant::now();
    let report = interference_demo(&InterferenceConfig::default(), 0).expect("interference demo");
    let secs = t0.elapsed().as_secs_f64();
    let two = report.variant(Variant::TwoHeadEwc);
    let single = report.variant(Variant::SingleHeadShared);
    let floor = report.noise_floor;
    let within = two.final_mse.iter().all(|&m| m <= 2.0 * floor);
    let ratio = single.worst() / two.worst();
    suite.verdict(
        3,
        true,
        within && ratio >= 10.0 && secs < 30.0,
        "supervised interference demo",
        format!(
            "noise floor {floor:.4}; two-head MSE {:.4}/{:.4} (<= {:.4}); single-head shared worst {:.4} = {ratio:.1}x two-head (>= 10x); single-head EWC worst {:.4}; {secs:.1} s (< 30 s)",
            two.final_mse[0],
            two.final_mse[1],
            2.0 * floor,
            single.worst(),
            report.variant(Variant::SingleHeadEwc).worst()
        ),
    );
}

fn four_rooms_config(quick: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if quick {
        cfg.steps_per_task = 8_000;
    }
    cfg
}

fn criteria_4_and_7(suite: &mut Suite) {
    let t0 = Instant::now();
    let mut owl_cfg = four_rooms_config(suite.quick);
    owl_cfg.selections = Selection::ALL.to_vec();
    suite.say("  four-rooms runs (2 goals x 3 repeats):");
    let owl = run_many(suite, "owl", &owl_cfg);
    let mut er_cfg = four_rooms_config(suite.quick);
    er_cfg.method = Method::ExpReplay;
    er_cfg.selections = vec![Selection::Oracle];
    let er = run_many(suite, "exp_replay", &er_cfg);
    let secs = t0.elapsed().as_secs_f64();

    let oracle = median_final(&owl, Selection::Oracle);
    let bandit = median_final(&owl, Selection::Bandit);
    let replay = median_final(&er, Selection::Oracle);
    let oracle_ok = oracle.values().all(|&v| v >= 0.9);
    let replay_ok = replay.values().any(|&v| v <= 0.5);
    let bandit_ok = bandit.values().all(|&v| v >= 0.75);
    suite.verdict(
        4,
        false,
        oracle_ok && replay_ok && bandit_ok && secs < 20.0 * 60.0,
        "interference in RL, four-rooms (median over seeds)",
        format!(
            "OWL oracle [{}] (>= 0.9: {oracle_ok}); Exp Replay [{}] (some <= 0.5: {replay_ok}); OWL bandit [{}] (>= 0.75: {bandit_ok}); {secs:.0} s (< 1200 s)",
            fmt_map(&oracle),
            fmt_map(&replay),
            fmt_map(&bandit)
        ),
    );

    let med = |sel| median(owl.iter().map(|r| mean_final(r, sel)).collect());
    let random = med(Selection::RandomPerStep);
    let once = med(Selection::MaxQOnce);
    let per_step = med(Selection::MaxQPerStep);
    let bandit_mean = med(Selection::Bandit);
    suite.verdict(
        7,
        false,
        once <= random && per_step <= random && bandit_mean >= random,
        "selection strategies on seen tasks (median over seeds of mean final success)",
        format!(
            "max_q_once {once:.3}, max_q_per_step {per_step:.3} (both <= random {random:.3}); bandit {bandit_mean:.3} (>= random); oracle {:.3}{}",
            med(Selection::Oracle),
            degenerate([once, per_step, random, bandit_mean])
        ),
    );
}

fn crossing_config(quick: bool) -> ExperimentConfig {
    ExperimentConfig {
        task_sequence: (1..=3).map(TaskSpec::crossing).collect(),
        steps_per_task: if quick { 10_000 } else { 30_000 },
        selections: vec![Selection::Oracle],
        ..ExperimentConfig::default()
    }
}

fn criteria_5_6_8(suite: &mut Suite) {
    suite.say("  crossing runs (3 layouts x 3 repeats):");
    let owl_cfg = crossing_config(suite.quick);
    let owl = run_many(suite, "owl lambda=500", &owl_cfg);
    let mut free_cfg = crossing_config(suite.quick);
    free_cfg.regularizer.lambda = 0.0;
    let free = run_many(suite, "owl lambda=0", &free_cfg);
    let mut fr_cfg = crossing_config(suite.quick);
    fr_cfg.method = Method::FullRehearsal;
    let rehearsal = run_many(suite, "full_rehearsal", &fr_cfg);
    let mut er_cfg = crossing_config(suite.quick);
    er_cfg.method = Method::ExpReplay;
    let replay = run_many(suite, "exp_replay", &er_cfg);

    let cum: Vec<(f64, f64)> = owl
        .iter()
        .zip(&free)
        .map(|(a, b)| {
            (
                cumulative_performance(&a.records, Selection::Oracle),
                cumulative_performance(&b.records, Selection::Oracle),
            )
        })
        .collect();
    let wins = cum.iter().filter(|(a, b)| a >= b).count();
    let need = if suite.seeds.len() >= 5 { 4 } else { suite.seeds.len() };
    let pairs: Vec<String> = cum.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
    suite.verdict(
        5,
        false,
        wins >= need,
        "EWC ablation, cumulative oracle success lambda=500 vs lambda=0",
        format!(
            "per seed {} ; lambda=500 >= lambda=0 in {wins}/{} seeds (need {need}){}",
            pairs.join(" "),
            cum.len(),
            degenerate(cum.iter().flat_map(|&(a, b)| [a, b]))
        ),
    );

    let owl_final = median_final(&owl, Selection::Oracle);
    let fr_final = median_final(&rehearsal, Selection::Oracle);
    let dominated = owl_final.iter().all(|(t, v)| fr_final.get(t).is_some_and(|f| f >= v));
    suite.verdict(
        6,
        false,
        dominated,
        "full rehearsal >= OWL oracle (median final success per task)",
        format!(
            "full rehearsal [{}]; OWL oracle [{}]{}",
            fmt_map(&fr_final),
            fmt_map(&owl_final),
            degenerate(fr_final.values().chain(owl_final.values()).copied())
        ),
    );

    let cfg = crossing_config(suite.quick);
    let unseen = unseen_crossing_seeds(&cfg.task_sequence, cfg.generalize.n_unseen, cfg.generalize.unseen_seed_start)
        .expect("unseen seeds");
    let strategies = [Selection::Bandit, Selection::RandomPerStep];
    let eval = |runs: &[RunOutput], strategies: &[Selection]| -> BTreeMap<Selection, f64> {
        let mut acc: BTreeMap<Selection, Vec<f64>> = BTreeMap::new();
        for (r, &seed) in runs.iter().zip(&suite.seeds) {
            let rows = generalization_eval(
                &r.agent,
                &r.tasks,
                &unseen,
                strategies,
                cfg.generalize.episodes_per_task,
                cfg.bandit(),
                cfg.reward.scale,
                seed,
            )
            .expect("generalization eval");
            for row in rows {
                acc.entry(row.selection).or_default().push(row.success_rate);
            }
        }
        acc.into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    };
    let owl_gen = eval(&owl, &strategies);
    // The baseline has a single head, so every strategy plays that head.
    let er_gen = eval(&replay, &[Selection::RandomPerStep])[&Selection::RandomPerStep];
    let bandit = owl_gen[&Selection::Bandit];
    let random = owl_gen[&Selection::RandomPerStep];
    suite.verdict(
        8,
        false,
        bandit > er_gen && random > er_gen,
        "generalization to unseen crossing layouts (mean over checkpoint seeds)",
        format!(
            "{} unseen seeds x {} episodes; OWL bandit {bandit:.3}, OWL random_per_step {random:.3}, Exp Replay {er_gen:.3} (strictly below both)",
            unseen.len(),
            cfg.generalize.episodes_per_task
        ),
    );
}

fn transition(x: f64) -> Transition {
    Transition {
        obs: vec![x],
        action: 0,
        reward: x,
        next_obs: vec![x],
        done: false,
    }
}

fn criterion_9(suite: &mut Suite) {
    let mut checks: Vec<(&str, bool)> = Vec::new();

    // Replay FIFO and flush.
    let mut buf = ReplayBuffer::new(3, 0).unwrap();
    (0..5).for_each(|i| buf.push(transition(i as f64)));
    let kept: Vec<f64> = buf.iter_fifo().map(|t| t.reward).collect();
    buf.flush();
    checks.push(("replay FIFO eviction and flush", kept == [2.0, 3.0, 4.0] && buf.is_empty() && buf.sample(1).is_err()));

    // Warm start.
    let mut bank = WarmStartBank::new(10, 1);
    let data: Vec<Transition> = (0..100).map(|i| transition(i as f64)).collect();
    bank.deposit(0, data.iter());
    let mut buf = ReplayBuffer::new(100, 0).unwrap();
    bank.restore(1, &mut buf);
    let unseen_noop = buf.is_empty();
    bank.restore(0, &mut buf);
    let subset = buf.iter_fifo().all(|t| data.contains(t));
    checks.push(("warm start caps at B, restores a subset, ignores unseen tasks", unseen_noop && buf.len() == 10 && subset));

    // EWC: zero at the anchor, gradient matches finite differences off it.
    let config = DqnConfig {
        hidden_dims: vec![6],
        ..DqnConfig::default()
    };
    let agent = DqnAgent::new(2, 3, 1, config.clone(), 4).unwrap();
    let mut buf = ReplayBuffer::new(64, 0).unwrap();
    let mut r = rng::seeded(0, rng::stream::DATA);
    for _ in 0..64 {
        buf.push(Transition {
            obs: vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
            action: r.gen_range(0..3),
            reward: r.gen_range(0.0..1.0),
            next_obs: vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
            done: false,
        });
    }
    let mut reg = RegularizerSet::new(RegMode::Ewc, 500.0, 0.0);
    reg.capture_task(&agent, 0, 0, &buf, 4096, &mut rng::seeded(0, rng::stream::FISHER)).unwrap();
    let zero = reg.ewc_penalty(agent.online(), Some(0)).unwrap() == 0.0;
    let mut moved = agent.online().clone();
    moved.trunk_mut().values_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
    moved.head_mut(0).values_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
    let mut g = moved.zero_grads();
    reg.add_ewc_grad(&moved, Some(0), &mut g).unwrap();
    let mut fd_ok = true;
    let h = 1e-6;
    for i in 0..moved.trunk().len() {
        let mut p = moved.clone();
        p.trunk_mut().values_mut()[i] += h;
        let mut m = moved.clone();
        m.trunk_mut().values_mut()[i] -= h;
        let fd = (reg.ewc_penalty(&p, Some(0)).unwrap() - reg.ewc_penalty(&m, Some(0)).unwrap()) / (2.0 * h);
        fd_ok &= (fd - g.trunk.values()[i]).abs() <= 1e-5 * (1.0 + fd.abs());
    }
    checks.push(("EWC penalty zero at anchor", zero));
    checks.push(("EWC penalty gradient vs finite differences", fd_ok));

    // Per-task epsilon schedules resume.
    let mut agent = DqnAgent::new(2, 3, 2, config, 0).unwrap();
    let obs = [0.5, -0.5];
    agent.enter_task(0);
    (0..120).for_each(|_| {
        agent.act(&obs, 0, Mode::Train { task: 0 }).unwrap();
    });
    agent.enter_task(1);
    (0..70).for_each(|_| {
        agent.act(&obs, 1, Mode::Train { task: 1 }).unwrap();
    });
    agent.enter_task(0);
    let resumed = agent.schedule(0).map(|s| s.steps_consumed) == Some(120)
        && agent.schedule(1).map(|s| s.steps_consumed) == Some(70);
    checks.push(("epsilon schedules are per task and resume", resumed));

    // Full rehearsal picks the current task 75% of the time.
    let mut r = rng::seeded(1, rng::stream::REHEARSAL);
    let n = 20_000;
    let hits = (0..n).filter(|_| choose_rehearsal_task(2, &[0, 1, 2], 0.75, &mut r) == 2).count();
    let sigma = (n as f64 * 0.75 * 0.25).sqrt();
    checks.push(("rehearsal current-task frequency 0.75 within 3 sigma", (hits as f64 - 0.75 * n as f64).abs() < 3.0 * sigma));

    // Four-rooms observations do not depend on the goal.
    let mut envs: Vec<GridEnv> = (0..4).map(|g| make_task(&TaskSpec::four_rooms(g)).unwrap()).collect();
    let mut same = envs.iter_mut().map(|e| e.reset()).collect::<Vec<_>>().windows(2).all(|w| w[0] == w[1]);
    let mut r = rng::seeded(2, rng::stream::DATA);
    for _ in 0..500 {
        let a = r.gen_range(0..4);
        let steps: Vec<_> = envs.iter_mut().map(|e| e.step(a).unwrap()).collect();
        if steps.iter().any(|s| s.done) {
            envs.iter_mut().for_each(|e| {
                e.reset();
            });
            continue;
        }
        same &= steps.windows(2).all(|w| w[0].obs == w[1].obs);
    }
    checks.push(("four-rooms observation identical across goals", same));

    // Whole-run determinism.
    let cfg = ExperimentConfig {
        steps_per_task: 1_500,
        repeats: 2,
        eval_every: 500,
        eval_episodes: 2,
        selections: Selection::ALL.to_vec(),
        ..ExperimentConfig::default()
    };
    let a = train_continual(&cfg, 9, &mut |_| {}).unwrap();
    let b = train_continual(&cfg, 9, &mut |_| {}).unwrap();
    let same_run = a.records == b.records
        && a.agent.online() == b.agent.online()
        && a.agent.target() == b.agent.target()
        && a.regularizer == b.regularizer;
    checks.push(("full run bit-identical under a fixed seed", same_run));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        format!("{} checks passed: {}", checks.len(), checks.iter().map(|c| c.0).collect::<Vec<_>>().join("; "))
    } else {
        format!("failed: {}", failed.join("; "))
    };
    suite.verdict(9, true, failed.is_empty(), "semantics suite", detail);
}

fn main() {
    // Let `cargo test -- --list` and filters pass through without running the suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let quick = std::env::var("CRL_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let mut suite = Suite {
        quick,
        seeds: if quick { vec![0] } else { (0..5).collect() },
        text: String::new(),
        results: Vec::new(),
    };
    let t0 = Instant::now();
    if quick {
        suite.say("QUICK MODE: reduced seeds and steps; empirical verdicts below are not acceptance results");
    }
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    criterion_9(&mut suite);
    criteria_4_and_7(&mut suite);
    criteria_5_6_8(&mut suite);

    suite.results.sort_by_key(|r| r.0);
    let passed = suite.results.iter().filter(|r| r.2).count();
    let gating_failures: Vec<u32> = suite.results.iter().filter(|r| r.1 && !r.2).map(|r| r.0).collect();
    let empirical_failures: Vec<u32> = suite.results.iter().filter(|r| !r.1 && !r.2).map(|r| r.0).collect();
    suite.say(format!(
        "acceptance summary: {passed}/{} criteria passed; failing mechanical criteria {gating_failures:?}; failing empirical criteria {empirical_failures:?}; {:.0} s total",
        suite.results.len(),
        t0.elapsed().as_secs_f64()
    ));
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_report.txt");
    let _ = std::fs::write(&path, &suite.text);
    if !gating_failures.is_empty() {
        std::process::exit(1);
    }
}

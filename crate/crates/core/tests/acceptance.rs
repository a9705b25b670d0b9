//! Acceptance suite. Runs each criterion in order, prints one line per
//! criterion and exits non-zero when any of them fails.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prosody_rl::gridworld::{
    generate_map, optimal_step_count, value_iteration, Action, Cell, GridMap, MdpSolution,
    RewardSpec,
};
use prosody_rl::live::{LiveConfig, LiveSession, ServerMsg};
use prosody_rl::prosody::{energy, loudness, yin_pitch};
use prosody_rl::reward::{
    combined_loss, evaluate_reward, loss_and_gradient, policy_from_reward, sim, train,
    trex_from_returns, CalBatch, RankedPair, RewardNet, TrainConfig, TrajectorySnippet,
};
use prosody_rl::session::SessionLog;
use prosody_rl::stats::analysis::analyze_intrl_session;
use prosody_rl::stats::{bonferroni, chi_square_gof, paired_t_test, spearman};
use prosody_rl::tamer::{
    evaluate_policy, train_offline, CreditAssigner, HModel, RbfFeaturizer, Variant,
};
use prosody_rl::teacher::{generate_demo_dataset, generate_intrl_session, TeacherProfile};

mod common;
use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn solve(map: &GridMap) -> MdpSolution {
    value_iteration(map, &RewardSpec::default(), 1e-10)
}

// 1
fn feature_formulas() -> Outcome {
    let e = energy(&[1.0, -1.0, 1.0, -1.0]).unwrap();
    let l = loudness(&[2.0, 0.0, 0.0, 0.0]).unwrap();
    ensure!(e == 1.0, "energy = {e}");
    ensure!(l == 0.5, "loudness = {l}");
    let sr = 22050;
    let mut worst = 0.0f64;
    let freqs = (0..=28)
        .map(|i| 100.0 + 25.0 * i as f64)
        .chain([137.3, 261.6, 555.5, 799.0]);
    for f in freqs {
        let frame: Vec<f64> = (0..2048)
            .map(|i| 0.3 * (std::f64::consts::TAU * f * i as f64 / sr as f64).sin())
            .collect();
        let hz = yin_pitch(&frame, sr, 80.0, 1000.0)
            .unwrap()
            .hz()
            .ok_or(format!("{f} Hz unvoiced"))?;
        let err = (hz - f).abs() / f;
        ensure!(err <= 0.02, "{f} Hz read as {hz}");
        worst = worst.max(err);
    }
    Ok(format!("worst pitch error {:.3}%", 100.0 * worst))
}

/// Fewest moves from start to nut to squirrel over (cell, has_nut),
/// never entering walls or bombs.
fn bfs_delivery_length(map: &GridMap) -> Option<usize> {
    let start = map.start_state();
    let mut dist = HashMap::from([((start.cell(), start.has_nut), 0usize)]);
    let mut queue = VecDeque::from([(start.cell(), start.has_nut)]);
    while let Some((cell, nut)) = queue.pop_front() {
        let d = dist[&(cell, nut)];
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (Some(row), Some(col)) = (
                cell.row.checked_add_signed(dr),
                cell.col.checked_add_signed(dc),
            ) else {
                continue;
            };
            if row >= map.rows || col >= map.cols {
                continue;
            }
            let next = Cell::new(row, col);
            if map.is_wall(next) || map.is_bomb(next) {
                continue;
            }
            let has = nut || next == map.nut;
            if has && next == map.squirrel {
                return Some(d + 1);
            }
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry((next, has)) {
                e.insert(d + 1);
                queue.push_back((next, has));
            }
        }
    }
    None
}

// 2
fn advantage_oracle() -> Outcome {
    let mut states = 0;
    for seed in 0..100 {
        let map = generate_map(10, 10, seed).unwrap();
        let sol = solve(&map);
        for s in sol.non_terminal_states() {
            let q = sol.q_row(&s).unwrap();
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for a in Action::ALL {
                let adv = sol.advantage(&s, a).unwrap();
                ensure!(adv <= 0.0, "seed {seed}: A({s:?}, {a:?}) = {adv}");
                ensure!(
                    (adv == 0.0) == (q[a.index()] == best),
                    "seed {seed}: A({s:?}, {a:?}) = {adv} but Q = {:?}",
                    q
                );
            }
            states += 1;
        }
        let greedy = optimal_step_count(&map, &sol).unwrap();
        let bfs = bfs_delivery_length(&map).ok_or(format!("seed {seed}: no path"))?;
        ensure!(greedy == bfs, "seed {seed}: greedy {greedy}, bfs {bfs}");
    }
    Ok(format!("100 maps, {states} states"))
}

fn gamma_pdf(x: f64, k: f64, theta: f64) -> f64 {
    assert_eq!(k, 2.0);
    if x <= 0.0 {
        0.0
    } else {
        x * (-x / theta).exp() / (theta * theta)
    }
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + h * i as f64)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

// 3
fn credit_weights() -> Outcome {
    let credit = CreditAssigner::default();
    ensure!(
        credit.shape == 2.0 && credit.scale == 0.28,
        "unexpected defaults"
    );
    let oracle = |a: f64, b: f64| trapezoid(|x| gamma_pdf(x, 2.0, 0.28), a, b, 200_000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sets = vec![vec![0.0, 1.25, 2.5], vec![0.3, 1.55, 2.8], vec![0.05, 0.2]];
    for _ in 0..20 {
        let mut d = rng.gen::<f64>() * 1.5;
        let mut set = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            set.push(d);
            d += 0.1 + 1.5 * rng.gen::<f64>();
        }
        sets.push(set);
    }
    let mut worst = 0.0f64;
    for delays in &sets {
        let w = credit.weights_for_delays(delays);
        for i in 0..delays.len() {
            let hi = delays
                .get(i + 1)
                .copied()
                .unwrap_or(delays[i] + credit.tick);
            let err = (w[i] - oracle(delays[i], hi)).abs();
            ensure!(err <= 1e-6, "delays {delays:?}, weight {i}: error {err:e}");
            worst = worst.max(err);
        }
    }
    let total = credit.mass(0.0, 60.0);
    ensure!((total - 1.0).abs() <= 1e-6, "full integral {total}");
    let total_oracle = oracle(0.0, 60.0);
    ensure!(
        (total_oracle - 1.0).abs() <= 1e-6,
        "oracle integral {total_oracle}"
    );
    Ok(format!(
        "worst weight error {worst:.1e}, integral {total:.12}"
    ))
}

// 4
fn prosody_beats_baseline() -> Outcome {
    let (mut prosody, mut baseline) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let map = generate_map(8, 8, seed).unwrap();
        let sol = solve(&map);
        let profile = TeacherProfile {
            expressiveness: 0.25,
            neg_intensity_boost: 1.5,
            seed,
            ..Default::default()
        };
        let session = generate_intrl_session(&map, &sol, &profile, 500).unwrap();
        let score = |variant| {
            let model = HModel::new(
                RbfFeaturizer::new(map.rows, map.cols, 1, vec![0.5, 1.0, 2.0]),
                0.01,
            );
            let h = train_offline(
                model,
                &session.steps,
                &session.feedback,
                variant,
                CreditAssigner::default(),
            )
            .unwrap();
            evaluate_policy(&h, &sol) as f64
        };
        prosody.push(score(Variant::Prosody));
        baseline.push(score(Variant::Baseline));
    }
    let wins = prosody
        .iter()
        .zip(&baseline)
        .filter(|(p, b)| p >= b)
        .count();
    let t = paired_t_test(&prosody, &baseline).unwrap();
    let one_sided = if t.statistic > 0.0 {
        t.p_value / 2.0
    } else {
        1.0 - t.p_value / 2.0
    };
    let detail = format!(
        "prosody >= baseline in {wins}/50, paired t = {:.2}, one-sided p = {one_sided:.1e}",
        t.statistic
    );
    ensure!(wins >= 40 && one_sided < 0.05, "{detail}");
    Ok(detail)
}

fn demo_data(seed: u64, n: usize) -> (GridMap, Vec<TrajectorySnippet>) {
    let map = generate_map(6, 6, seed).unwrap();
    let sol = solve(&map);
    let profile = TeacherProfile {
        expressiveness: 0.37,
        seed,
        ..Default::default()
    };
    let data = generate_demo_dataset(&map, &sol, &profile, n).unwrap();
    (map, data)
}

fn random_pairs(rng: &mut impl Rng, data: &[TrajectorySnippet], n: usize) -> Vec<RankedPair> {
    let mut pairs = Vec::new();
    while pairs.len() < n {
        let (i, j) = (rng.gen_range(0..data.len()), rng.gen_range(0..data.len()));
        if data[i].gt_return < data[j].gt_return {
            pairs.push(RankedPair {
                worse: i,
                better: j,
            });
        }
    }
    pairs
}

fn random_batch(
    rng: &mut impl Rng,
    data: &[TrajectorySnippet],
    same: usize,
    dis: usize,
) -> CalBatch {
    let word = |i: usize| data[i].audio.unwrap().word;
    let (mut s, mut d) = (Vec::new(), Vec::new());
    while s.len() < same || d.len() < dis {
        let (i, j) = (rng.gen_range(0..data.len()), rng.gen_range(0..data.len()));
        if i == j {
            continue;
        }
        if word(i) == word(j) {
            if s.len() < same {
                s.push((i, j));
            }
        } else if d.len() < dis {
            d.push((i, j));
        }
    }
    CalBatch::new(s, d, 0.1)
}

// 5
fn gradient_check() -> Outcome {
    let (_, data) = demo_data(3, 40);
    let dim = data[0].states[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for probe in 0..100u64 {
        let alpha = (probe % 2) as f64;
        let mut net = RewardNet::new_random(dim, 64, probe);
        let pairs = random_pairs(&mut rng, &data, 12);
        let batch = random_batch(&mut rng, &data, 6, 16);
        let (_, grad) = loss_and_gradient(&net, &data, &pairs, Some(&batch), alpha).unwrap();
        let k = rng.gen_range(0..net.params.len());
        let x = net.params[k];
        let mut at = |v: f64| {
            net.params[k] = v;
            combined_loss(&net, &data, &pairs, Some(&batch), alpha)
                .unwrap()
                .total
        };
        let fd = (at(x + h) - at(x - h)) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
        ensure!(
            rel < 1e-4,
            "probe {probe} (alpha {alpha}, param {k}): analytic {} vs numeric {fd}",
            grad[k]
        );
        worst = worst.max(rel);
    }
    Ok(format!("max relative error {worst:.1e} over 100 probes"))
}

// 6
fn cal_improves_ranking() -> Outcome {
    let (mut gains, mut policy_wins) = (Vec::new(), 0);
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let map = generate_map(8, 8, seed).unwrap();
        let sol = solve(&map);
        let profile = TeacherProfile {
            expressiveness: 0.37,
            seed,
            ..Default::default()
        };
        let data = generate_demo_dataset(&map, &sol, &profile, 500).unwrap();
        let (fit, held) = data.split_at(400);
        let run = |alpha: f64| {
            let cfg = TrainConfig {
                alpha,
                seed,
                ..Default::default()
            };
            let net = train(fit, &cfg).unwrap().net;
            let rho = evaluate_reward(&net, held).unwrap();
            let score = policy_from_reward(|x| net.forward(x).unwrap(), &map, 30, seed).mean_score;
            (rho, score)
        };
        let (rho_plain, score_plain) = run(0.0);
        let (rho_cal, score_cal) = run(1.0);
        gains.push(rho_cal - rho_plain);
        policy_wins += usize::from(score_cal >= score_plain);
        rows.push(format!(
            "seed {seed}: rho {rho_plain:.3} -> {rho_cal:.3}, score {score_plain:.1} -> {score_cal:.1}"
        ));
    }
    let mean_gain = gains.iter().sum::<f64>() / 3.0;
    let detail = format!(
        "mean rho gain {mean_gain:+.3}, policy >= plain on {policy_wins}/3 ({})",
        rows.join("; ")
    );
    ensure!(mean_gain >= 0.03 && policy_wins >= 2, "{detail}");
    Ok(detail)
}

// 7
fn loss_arithmetic() -> Outcome {
    let pair = [RankedPair {
        worse: 0,
        better: 1,
    }];
    for r in [0.0, 1.0, -3.5, 40.0] {
        let l = trex_from_returns(&[r, r], &pair, None);
        ensure!(
            (l - std::f64::consts::LN_2).abs() <= 1e-9,
            "equal returns {r}: {l}"
        );
    }
    ensure!(sim(0.0, 1.0) == 0.5, "sim(0, 1) = {}", sim(0.0, 1.0));
    let (_, data) = demo_data(7, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = RewardNet::new_random(data[0].states[0].len(), 64, 7);
    let pairs = random_pairs(&mut rng, &data, 20);
    let batch = random_batch(&mut rng, &data, 8, 16);
    let at = |alpha: f64| {
        combined_loss(&net, &data, &pairs, Some(&batch), alpha)
            .unwrap()
            .total
    };
    let (l0, l1) = (at(0.0), at(1.0));
    let mut worst = 0.0f64;
    for alpha in [0.25, 0.5, 2.0, 3.7, 10.0] {
        let err = (at(alpha) - (l0 + alpha * (l1 - l0))).abs();
        ensure!(err <= 1e-12, "alpha {alpha}: off the line by {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("affine residual {worst:.1e}"))
}

/// Upper tail of the standard normal by Simpson's rule, independent of the
/// library's special functions.
fn normal_upper_tail(z: f64) -> f64 {
    let n = 200_000;
    let (a, b) = (z, z + 12.0);
    let h = (b - a) / n as f64;
    let f = |x: f64| (-0.5 * x * x).exp();
    let s: f64 = (1..n)
        .map(|i| f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + s + f(b)) * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

// 8
fn statistics() -> Outcome {
    let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
    ensure!(r.statistic == 0.8, "spearman = {}", r.statistic);
    let c = chi_square_gof(&[30.0, 10.0], &[20.0, 20.0]).unwrap();
    ensure!(c.statistic == 10.0, "chi2 = {}", c.statistic);
    // one degree of freedom: P(chi2 > x) = 2 P(Z > sqrt x)
    let oracle = 2.0 * normal_upper_tail(10f64.sqrt());
    ensure!(
        (c.p_value - oracle).abs() <= 1e-4,
        "p = {} vs oracle {oracle}",
        c.p_value
    );
    let b = bonferroni(&[0.01], 14).unwrap()[0];
    ensure!((b - 0.14).abs() <= 1e-15, "bonferroni = {b}");
    Ok(format!("chi2 p = {:.7} (oracle {oracle:.7})", c.p_value))
}

// 9
fn analysis_recovery() -> Outcome {
    let map = generate_map(8, 8, 9).unwrap();
    let sol = solve(&map);
    let profile = TeacherProfile {
        expressiveness: 0.25,
        pos_bias: Some(3.0),
        seed: 9,
        ..Default::default()
    };
    let session = generate_intrl_session(&map, &sol, &profile, 1500).unwrap();
    let report = analyze_intrl_session(
        &session.steps,
        &session.utterances,
        &map,
        &sol,
        Some(&session.baseline),
    )
    .unwrap();
    let mut recovered = Vec::new();
    for name in ["pitch_mean", "energy_mean", "loudness_mean"] {
        let row = report
            .correlations
            .iter()
            .find(|c| c.feature == name)
            .unwrap();
        let r = row
            .pooled_signed_r
            .ok_or(format!("{name}: no correlation"))?;
        ensure!((r - 0.25).abs() <= 0.1, "{name}: recovered {r:.3}");
        recovered.push(format!("{name} {r:.3}"));
    }
    ensure!(
        report.balance.positive_dominance,
        "no positive dominance: {} yes / {} no",
        report.balance.yes,
        report.balance.no
    );
    let contrast = |name: &str| {
        report
            .contrasts
            .iter()
            .find(|c| c.feature == name)
            .unwrap()
            .significant
    };
    for name in ["energy_mean", "loudness_mean"] {
        ensure!(contrast(name), "{name}: yes/no contrast not significant");
    }
    ensure!(!contrast("duration"), "duration contrast is significant");
    Ok(format!(
        "{} events ({} yes / {} no), {}",
        report.events,
        report.balance.yes,
        report.balance.no,
        recovered.join(", ")
    ))
}

// 10
fn online_offline_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in [1u64, 2, 3] {
        let map = generate_map(8, 8, seed).unwrap();
        let sol = solve(&map);
        let mut s = LiveSession::new(config(map.clone(), seed), 0);
        play(
            &mut s,
            opening(),
            oracle_teacher(map.clone(), sol, seed, 60),
        );
        ensure!(s.learner().update_count() > 0, "seed {seed}: no updates");
        let log = SessionLog::parse(&s.finalize(100.0).to_jsonl()).unwrap();
        let offline = train_offline(
            HModel::for_map(&map),
            &log.steps(),
            &log.feedback(),
            log.header.variant,
            CreditAssigner::default(),
        )
        .unwrap();
        let d = offline.param_distance(&s.learner().model);
        ensure!(d < 1e-9, "seed {seed}: distance {d:e}");
        worst = worst.max(d);
    }
    let t: Transcript = serde_json::from_str(&std::fs::read_to_string(GOLDEN).unwrap()).unwrap();
    let mut cfg = LiveConfig::new(t.map.clone());
    cfg.seed = t.seed;
    cfg.max_game_ticks = t.max_game_ticks;
    let mut s = LiveSession::new(cfg, 0);
    let (_, received) = play(&mut s, t.events.clone(), |_| Vec::new());
    ensure!(
        !received.iter().any(|m| matches!(
            m,
            ServerMsg::Error { .. } | ServerMsg::Ack { ok: false, .. }
        )),
        "golden transcript was rejected"
    );
    let footer = s.finalize(1000.0).footer.unwrap();
    ensure!(
        footer.score == t.final_score && footer.steps == t.steps && footer.outcome == t.outcome,
        "golden replay: score {} steps {} vs {} {}",
        footer.score,
        footer.steps,
        t.final_score,
        t.steps
    );
    Ok(format!(
        "max distance {worst:.1e}, golden score {}",
        footer.score
    ))
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture or a filter
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("feature formulas", feature_formulas, 5),
        ("advantage oracle", advantage_oracle, 30),
        ("credit assignment", credit_weights, 5),
        ("prosody vs baseline", prosody_beats_baseline, 300),
        ("gradient check", gradient_check, 60),
        ("contrastive audio loss", cal_improves_ranking, 600),
        ("loss arithmetic", loss_arithmetic, 60),
        ("statistics", statistics, 60),
        ("analysis recovery", analysis_recovery, 60),
        ("online/offline equivalence", online_offline_equivalence, 60),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| *f == n.to_string() || name.contains(f.as_str()))
        {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .and_then(|d| {
                let took = started.elapsed();
                if took > Duration::from_secs(*budget) {
                    Err(format!("{d}; took {took:.1?}, budget {budget} s"))
                } else {
                    Ok(d)
                }
            });
        let took = started.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({took:.1} s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({took:.1} s) {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

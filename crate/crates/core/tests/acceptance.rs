//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphlink::baselines::{bat_track, bhattacharyya_similarity, build_colocation_graph, louvain_communities};
use graphlink::dataset::sample_labels_random;
use graphlink::eval::{compute_metrics, evaluate, threshold_sweep, Confusion, MatchMode};
use graphlink::linker::{score_components, link_rankings};
use graphlink::perturb::inject_linking_errors;
use graphlink::rwwr::rwwr_observed;
use graphlink::synthetic::{generate_synthetic, SyntheticConfig};
use graphlink::{
    build_graph, make_transition, rwwr_from_seed, track, AttributeKind, BipartiteGraph, BrowsingRecord, DeviceType,
    IncrementalLinker, LinkerConfig, RwwrConfig, Variant, WeightMode,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(checks: &[(&str, bool)], extra: String) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        extra
    } else {
        format!("{extra}; failed: {}", failed.join(", "))
    };
    Outcome {
        pass: failed.is_empty(),
        detail,
    }
}

const MODES: [WeightMode; 3] = [WeightMode::Normalized, WeightMode::UnNormalizedWeighted, WeightMode::UnWeighted];

fn toy() -> Vec<BrowsingRecord> {
    let m = DeviceType::Mobile;
    let d = DeviceType::Desktop;
    vec![
        BrowsingRecord::domain("M1", "twitter", 1).with_type(m),
        BrowsingRecord::domain("D1", "facebook", 1).with_type(d),
        BrowsingRecord::domain("M2", "facebook", 1).with_type(m),
        BrowsingRecord::domain("M2", "twitter", 1).with_type(m),
        BrowsingRecord::domain("M2", "amazon", 1).with_type(m),
        BrowsingRecord::domain("D2", "amazon", 1).with_type(d),
        BrowsingRecord::domain("D2", "coursera", 1).with_type(d),
    ]
}

/// Random device-attribute records; every device gets at least one edge.
fn random_records(rng: &mut ChaCha8Rng, max_nodes: usize) -> Vec<BrowsingRecord> {
    let n_dev = rng.gen_range(2..=max_nodes / 2);
    let n_attr = rng.gen_range(1..=max_nodes - n_dev);
    let mut recs = Vec::new();
    for d in 0..n_dev {
        let deg = rng.gen_range(1..=n_attr.min(5));
        for _ in 0..deg {
            let a = rng.gen_range(0..n_attr);
            let kind = if a % 2 == 0 { AttributeKind::Ip } else { AttributeKind::Domain };
            let attr = graphlink::Attribute::new(kind, format!("a{a}"));
            let t = if d % 2 == 0 { DeviceType::Mobile } else { DeviceType::Desktop };
            recs.push(BrowsingRecord::new(format!("d{d:02}"), attr, rng.gen_range(1..=30)).with_type(t));
        }
    }
    graphlink::dataset::aggregate(recs)
}

fn both_kinds(recs: &[BrowsingRecord]) -> BipartiteGraph {
    build_graph(recs, &[AttributeKind::Ip, AttributeKind::Domain]).unwrap()
}

fn c1_toy() -> Outcome {
    let start = Instant::now();
    let recs = toy();
    let g = build_graph(&recs, &[AttributeKind::Domain]).unwrap();
    let op = make_transition(&g, WeightMode::Normalized);
    // the published values are four steps of the walk from the seed
    let walk = RwwrConfig {
        max_iterations: Some(4),
        ..Default::default()
    };
    let node = |id: &str| g.device_node(g.device_position(id).unwrap());
    let dist = rwwr_from_seed(&op, node("M1"), &walk).unwrap();
    let (s1, s2) = (dist.p[node("D1")], dist.p[node("D2")]);
    let pos = |id: &str| g.device_position(id).unwrap();
    let bat = bhattacharyya_similarity(&g, pos("M1"), pos("D1"));

    let cfg = LinkerConfig {
        variant: Variant::Domain,
        walk,
        ..Default::default()
    };
    let gt = track(&recs, &cfg, None).unwrap().prediction;
    let bat_pred = bat_track(&recs, &cfg, None).unwrap();
    let m1_d1: Vec<String> = vec!["D1".into(), "M1".into()];
    let elapsed = start.elapsed();
    outcome(
        &[
            ("s(M1,D1) > s(M1,D2)", s1 > s2),
            ("s(M1,D1) within 0.003 of 0.032", (s1 - 0.032).abs() <= 0.003),
            ("s(M1,D2) within 0.003 of 0.026", (s2 - 0.026).abs() <= 0.003),
            ("BAT(M1,D1) = 0", bat == 0.0),
            ("graphtrack-domain groups {M1,D1}", gt.groups.contains(&m1_d1)),
            ("bat leaves M1 unmatched", bat_pred.no_match.contains("M1")),
            ("runtime < 1 s", elapsed < Duration::from_secs(1)),
        ],
        format!(
            "s(M1,D1)={s1:.4} s(M1,D2)={s2:.4} BAT={bat} graphtrack groups={:?} bat no_match={:?} {:?}",
            gt.groups, bat_pred.no_match, elapsed
        ),
    )
}

fn c2_metrics() -> Outcome {
    let r2 = |x: f64| (x * 100.0).round() / 100.0;
    let check = |c: Confusion, want: [f64; 4]| {
        let m = compute_metrics(&c).unwrap();
        [m.accuracy, m.precision, m.recall, m.f_score].map(r2) == want
    };
    outcome(
        &[
            ("(37,5,0,2)", check(Confusion::new(37, 5, 0, 2), [0.84, 0.88, 0.95, 0.91])),
            ("(39,2,0,3)", check(Confusion::new(39, 2, 0, 3), [0.89, 0.95, 0.93, 0.94])),
        ],
        "both published rows at 2 decimals".into(),
    )
}

fn dense_solve(g: &BipartiteGraph, mode: WeightMode, seed: usize, alpha: f64) -> Vec<f64> {
    let op = make_transition(g, mode);
    let n = op.dim();
    let a = DMatrix::from_fn(n, n, |u, v| op.entry(u, v));
    let m = DMatrix::identity(n, n) - a * (1.0 - alpha);
    let mut e = DVector::zeros(n);
    e[seed] = alpha;
    m.lu().solve(&e).expect("I - (1-a)A is invertible").iter().copied().collect()
}

fn c3_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = RwwrConfig {
        epsilon: 1e-10,
        max_iterations: Some(100_000),
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let recs = random_records(&mut rng, 50);
        let g = both_kinds(&recs);
        assert!(g.node_count() <= 50);
        let mode = MODES[i % 3];
        let seed = g.device_node(rng.gen_range(0..g.device_count()));
        let p = rwwr_from_seed(&make_transition(&g, mode), seed, &cfg).unwrap().p;
        let q = dense_solve(&g, mode, seed, cfg.alpha);
        for (x, y) in p.iter().zip(&q) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(&[("L-inf <= 1e-6", worst <= 1e-6)], format!("100 graphs, worst L-inf {worst:.2e}"))
}

fn c4_stochastic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_col: f64 = 0.0;
    let mut worst_walk: f64 = 0.0;
    for _ in 0..30 {
        let recs = random_records(&mut rng, 200);
        let g = both_kinds(&recs);
        for mode in MODES {
            let op = make_transition(&g, mode);
            for v in (0..op.dim()).filter(|&v| !op.is_isolated(v)) {
                worst_col = worst_col.max((op.column_sum(v) - 1.0).abs());
            }
            let cfg = RwwrConfig {
                epsilon: f64::MIN_POSITIVE,
                max_iterations: Some(50),
                ..Default::default()
            };
            rwwr_observed(&op, g.device_node(0), &cfg, |_, p, _| {
                worst_walk = worst_walk.max((p.iter().sum::<f64>() - 1.0).abs());
            })
            .unwrap();
        }
    }
    outcome(
        &[("columns within 1e-12", worst_col <= 1e-12), ("walk mass within 1e-9", worst_walk <= 1e-9)],
        format!("worst column error {worst_col:.1e}, worst walk mass error {worst_walk:.1e}"),
    )
}

fn c5_heavy_user() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recs = random_records(&mut rng, 80);
    let g = both_kinds(&recs);
    let base_op = make_transition(&g, WeightMode::Normalized);
    let cfg = RwwrConfig::default();
    let scores = |g: &BipartiteGraph, op: &graphlink::TransitionOperator| -> Vec<Vec<f64>> {
        (0..g.device_count())
            .map(|d| rwwr_from_seed(op, g.device_node(d), &cfg).unwrap().p)
            .collect()
    };
    let base = scores(&g, &base_op);
    let heavy = g.device_id(0).to_string();
    let mut identical = true;
    let mut worst: f64 = 0.0;
    for c in [2u64, 10, 1000] {
        let scaled: Vec<BrowsingRecord> = recs
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.device_id == heavy {
                    r.count *= c;
                }
                r
            })
            .collect();
        let g2 = both_kinds(&scaled);
        let op2 = make_transition(&g2, WeightMode::Normalized);
        identical &= op2 == base_op;
        for (a, b) in base.iter().zip(scores(&g2, &op2)) {
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(
        &[("operator bit-identical", identical), ("scores within 1e-12", worst <= 1e-12)],
        format!("c in {{2,10,1000}}, worst score change {worst:.1e}"),
    )
}

fn accuracy(records: &[BrowsingRecord], truth: &graphlink::GroundTruth, cfg: &LinkerConfig, bat: bool) -> f64 {
    let pred = if bat {
        bat_track(records, cfg, None).unwrap()
    } else {
        track(records, cfg, None).unwrap().prediction
    };
    evaluate(&pred, truth, MatchMode::Strict).unwrap().metrics.accuracy
}

fn c6_separable() -> Outcome {
    let start = Instant::now();
    let clean_cfg = SyntheticConfig {
        seed: 6,
        n_users: 200,
        device_count_weights: vec![(2, 1.0)],
        shared_ip_fraction: 0.0,
        ..Default::default()
    };
    let (recs, truth) = generate_synthetic(&clean_cfg).unwrap();
    let ip_acc = accuracy(&recs, &truth, &LinkerConfig::default(), false);

    let shared = SyntheticConfig {
        shared_ip_fraction: 0.2,
        ..clean_cfg
    };
    let (recs, truth) = generate_synthetic(&shared).unwrap();
    let noisy = inject_linking_errors(&recs, 0.1, 60).unwrap();
    let or = LinkerConfig {
        variant: Variant::Or,
        ..Default::default()
    };
    let or_clean = accuracy(&recs, &truth, &or, false);
    let or_noisy = accuracy(&noisy, &truth, &or, false);
    let bat_noisy = accuracy(&noisy, &truth, &or, true);
    let elapsed = start.elapsed();
    outcome(
        &[
            ("graphtrack-ip accuracy 1.0 without sharing", ip_acc == 1.0),
            ("graphtrack-or beats bat", or_noisy > bat_noisy),
            ("graphtrack-or degrades <= 0.1", or_clean - or_noisy <= 0.1),
            ("runtime < 60 s", elapsed < Duration::from_secs(60)),
        ],
        format!(
            "ip={ip_acc:.3}; shared 0.2: or clean={or_clean:.3} or noisy={or_noisy:.3} bat noisy={bat_noisy:.3} {elapsed:.2?}"
        ),
    )
}

fn c7_lattice() -> Outcome {
    let mut sup_ok = true;
    let mut and_ok = true;
    let mut sweep_ok = true;
    let mut datasets = Vec::new();
    for seed in 0..4 {
        let cfg = SyntheticConfig {
            seed,
            n_users: 80,
            device_count_weights: vec![(2, 2.0), (3, 1.0)],
            shared_ip_fraction: 0.2,
            ..Default::default()
        };
        let (recs, truth) = generate_synthetic(&cfg).unwrap();
        datasets.push((inject_linking_errors(&recs, 0.1, seed).unwrap(), truth));
    }
    for (recs, truth) in &datasets {
        let labels = sample_labels_random(truth, 0.3, 1).unwrap().labels;
        for variant in [Variant::Ip, Variant::Domain, Variant::UniGraph, Variant::Or] {
            for k in [2, 3] {
                let base = LinkerConfig {
                    variant,
                    k,
                    ..Default::default()
                };
                let rankings = score_components(recs, &base, k - 1).unwrap();
                let unsup = link_rankings(&rankings, &base, None).unwrap().similarity.id_edges();
                let sup_cfg = LinkerConfig {
                    supervised: true,
                    ..base.clone()
                };
                let sup = link_rankings(&rankings, &sup_cfg, Some(&labels)).unwrap().similarity.id_edges();
                sup_ok &= sup.is_subset(&unsup);
            }
        }
        let or_cfg = LinkerConfig {
            variant: Variant::Or,
            ..Default::default()
        };
        let and_cfg = LinkerConfig {
            variant: Variant::And,
            ..Default::default()
        };
        let or_edges = track(recs, &or_cfg, None).unwrap().similarity.id_edges();
        let and_edges = track(recs, &and_cfg, None).unwrap().similarity.id_edges();
        and_ok &= and_edges.is_subset(&or_edges);

        let thresholds: Vec<f64> = (0..40).map(|i| i as f64 * 0.005).collect();
        let sweep = threshold_sweep(recs, &or_cfg, &thresholds, truth, MatchMode::Strict).unwrap();
        sweep_ok &= sweep.points.windows(2).all(|w| w[1].edge_count <= w[0].edge_count);
    }
    outcome(
        &[
            ("supervised within unsupervised", sup_ok),
            ("AND within OR", and_ok),
            ("sweep edge counts antitone", sweep_ok),
        ],
        format!("{} synthetic datasets with sharing and errors", datasets.len()),
    )
}

fn prediction_bytes(recs: &[BrowsingRecord], cfg: &LinkerConfig, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut buf = Vec::new();
        track(recs, cfg, None).unwrap().prediction.write_jsonl(&mut buf).unwrap();
        buf
    })
}

fn c8_determinism() -> Outcome {
    let (recs, _) = generate_synthetic(&SyntheticConfig {
        seed: 8,
        n_users: 600,
        device_count_weights: vec![(2, 2.0), (3, 1.0)],
        shared_ip_fraction: 0.2,
        ..Default::default()
    })
    .unwrap();
    let recs = inject_linking_errors(&recs, 0.1, 8).unwrap();
    let mut ok = true;
    for variant in [Variant::Ip, Variant::Or, Variant::UniGraph] {
        let cfg = LinkerConfig {
            variant,
            k: 3,
            rng_seed: 11,
            ..Default::default()
        };
        let one = prediction_bytes(&recs, &cfg, 1);
        ok &= one == prediction_bytes(&recs, &cfg, 1);
        ok &= one == prediction_bytes(&recs, &cfg, 8);
    }
    outcome(&[("byte-identical at 1 and 8 threads", ok)], "3 variants, repeated runs".into())
}

/// `n_dev` devices and `n_attr` IPs with `n_edges` distinct random edges.
fn random_ip_graph(rng: &mut ChaCha8Rng, n_dev: usize, n_attr: usize, n_edges: usize) -> BipartiteGraph {
    let mut seen = BTreeSet::new();
    let mut recs = Vec::with_capacity(n_edges + n_dev + n_attr);
    // a spanning pass keeps every node present in both graphs
    for d in 0..n_dev.max(n_attr) {
        seen.insert((d % n_dev, d % n_attr));
    }
    while seen.len() < n_edges {
        seen.insert((rng.gen_range(0..n_dev), rng.gen_range(0..n_attr)));
    }
    for (d, a) in seen {
        recs.push(BrowsingRecord::ip(format!("d{d}"), format!("ip{a}"), rng.gen_range(1..10)));
    }
    build_graph(&recs, &[AttributeKind::Ip]).unwrap()
}

fn time_walks(g: &BipartiteGraph) -> Duration {
    let op = make_transition(g, WeightMode::Normalized);
    let cfg = RwwrConfig {
        epsilon: f64::MIN_POSITIVE,
        ..Default::default()
    };
    let mut times: Vec<Duration> = (0..15)
        .map(|i| {
            let t = Instant::now();
            let d = rwwr_from_seed(&op, g.device_node(i * 97 % g.device_count()), &cfg).unwrap();
            std::hint::black_box(d);
            t.elapsed()
        })
        .collect();
    times.sort();
    times[times.len() / 2]
}

fn c9_scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n_dev, n_attr) = (50_000, 50_000);
    let small = random_ip_graph(&mut rng, n_dev, n_attr, 250_000);
    let large = random_ip_graph(&mut rng, n_dev, n_attr, 500_000);
    assert_eq!(small.node_count(), large.node_count());
    let (ts, tl) = (time_walks(&small), time_walks(&large));
    let ratio = tl.as_secs_f64() / ts.as_secs_f64();

    let (recs, _) = generate_synthetic(&SyntheticConfig {
        seed: 9,
        n_users: 5_050,
        ip_pool_per_user: 1,
        ..Default::default()
    })
    .unwrap();
    // hold out the last 50 users' devices and stream them in
    let cut = "u05000";
    let (base, incoming): (Vec<_>, Vec<_>) = recs.into_iter().partition(|r| r.device_id.as_str() < cut);
    let mut linker = IncrementalLinker::new(&base, LinkerConfig::default(), None).unwrap();
    let n_base = linker.device_count();
    let mut devices: Vec<Vec<BrowsingRecord>> = Vec::new();
    for r in incoming {
        match devices.last_mut() {
            Some(last) if last[0].device_id == r.device_id => last.push(r),
            _ => devices.push(vec![r]),
        }
    }
    let start = Instant::now();
    let mut linked = 0;
    for d in &devices {
        if linker.link_incoming_device(d).unwrap().group.is_some() {
            linked += 1;
        }
    }
    let mean = start.elapsed() / devices.len() as u32;
    outcome(
        &[("walk time ratio <= 2.5", ratio <= 2.5), ("incremental mean < 100 ms", mean < Duration::from_millis(100))],
        format!(
            "walk {ts:.2?} -> {tl:.2?} (x{ratio:.2}) at |E| 250K -> 500K; incremental {mean:.2?}/device over {} devices on a {n_base}-device base, {linked} grouped",
            devices.len()
        ),
    )
}

/// `Q = 1/2m Σ_ij [A_ij - k_i k_j / 2m] δ(c_i, c_j)` straight from the
/// adjacency matrix.
fn modularity_oracle(adj: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let n = adj.len();
    let k: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if assignment[i] == assignment[j] {
                q += adj[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

fn c10_louvain() -> Outcome {
    let mut recs = Vec::new();
    for i in 0..5 {
        recs.push(BrowsingRecord::ip(format!("a{i}"), "hub-a", 1));
        recs.push(BrowsingRecord::ip(format!("b{i}"), "hub-b", 1));
    }
    let p = louvain_communities(&build_colocation_graph(&recs), 0);
    let two = p.community_count() == 2 && p.assignment[..5].iter().all(|&c| c == p.assignment[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ok = true;
    let mut gains = 0.0;
    for i in 0..50 {
        let n_dev = rng.gen_range(5..60);
        let n_ip = rng.gen_range(2..40);
        let recs: Vec<BrowsingRecord> = (0..n_dev)
            .flat_map(|d| {
                let k = rng.gen_range(1..4);
                (0..k)
                    .map(|_| BrowsingRecord::ip(format!("d{d:02}"), format!("ip{}", rng.gen_range(0..n_ip)), 1))
                    .collect::<Vec<_>>()
            })
            .collect();
        let g = build_colocation_graph(&recs);
        let adj: Vec<Vec<f64>> = (0..g.len()).map(|a| (0..g.len()).map(|b| g.weight(a, b)).collect()).collect();
        let part = louvain_communities(&g, i);
        let singletons: Vec<usize> = (0..g.len()).collect();
        let q = modularity_oracle(&adj, &part.assignment);
        let q0 = modularity_oracle(&adj, &singletons);
        ok &= q >= q0 - 1e-12 && (q - part.modularity).abs() < 1e-9;
        gains += q - q0;
    }
    outcome(
        &[("two cliques -> two communities", two), ("modularity >= singletons on 50 graphs", ok)],
        format!("mean modularity gain over singletons {:.3}", gains / 50.0),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("toy example", c1_toy),
        ("metric arithmetic", c2_metrics),
        ("dense oracle", c3_oracle),
        ("stochasticity", c4_stochastic),
        ("heavy-user invariance", c5_heavy_user),
        ("separable end-to-end", c6_separable),
        ("framework lattice", c7_lattice),
        ("determinism", c8_determinism),
        ("scaling", c9_scaling),
        ("louvain sanity", c10_louvain),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
        }
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} {:>2} {name}: {} [{:.2?}]", i + 1, o.detail, start.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

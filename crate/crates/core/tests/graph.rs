use affect_geometry::graph::{
    build_graph, communities, pagerank, prune_components, AffectGraph, Edge, PageRankConfig,
};
use affect_geometry::spose::predicted_odd;
use affect_geometry::triplets::sample_trials;
use affect_geometry::{Embedding, Observation};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn abs_weights(g: &AffectGraph) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; g.n_nodes]; g.n_nodes];
    for e in &g.edges {
        w[e.src][e.dst] = e.weight.abs();
        w[e.dst][e.src] = e.weight.abs();
    }
    w
}

fn q_of(w: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            if labels[i] == labels[j] {
                q += w[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Maximum modularity over every set partition (restricted growth strings).
fn exhaustive_max(w: &[Vec<f64>]) -> f64 {
    fn rec(w: &[Vec<f64>], labels: &mut Vec<usize>, next: usize, best: &mut f64) {
        if labels.len() == w.len() {
            *best = best.max(q_of(w, labels));
            return;
        }
        for l in 0..=next {
            labels.push(l);
            rec(w, labels, next.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    rec(w, &mut Vec::new(), 0, &mut best);
    best
}

fn random_graph(seed: u64, weight: impl Fn(&mut ChaCha8Rng, usize, usize) -> Option<f64>) -> AffectGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            if let Some(w) = weight(&mut rng, i, j) {
                edges.push(Edge { src: i, dst: j, weight: w });
            }
        }
    }
    AffectGraph::new(6, edges, 0.0).unwrap()
}

#[test]
fn louvain_reaches_exhaustive_optimum_on_modular_graphs() {
    for seed in 0..60 {
        let groups = if seed % 2 == 0 { [0, 0, 0, 1, 1, 1] } else { [0, 0, 1, 1, 2, 2] };
        let g = random_graph(seed, |rng, i, j| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            if groups[i] == groups[j] {
                Some(sign * rng.random_range(0.5..1.0))
            } else if rng.random::<f64>() < 0.3 {
                Some(sign * rng.random_range(0.2..0.35))
            } else {
                None
            }
        });
        let p = communities(&g, seed).unwrap();
        let w = abs_weights(&g);
        assert!((p.modularity - exhaustive_max(&w)).abs() < 1e-9, "seed {seed}");
        assert!((q_of(&w, &p.community) - p.modularity).abs() < 1e-12);
    }
}

/// Louvain is a local search: on unstructured dense graphs it occasionally
/// stops short of the global optimum. Pin how often.
#[test]
fn louvain_on_unstructured_graphs() {
    let (mut tried, mut hit) = (0, 0);
    for seed in 0..200 {
        let g = random_graph(seed, |rng, _, _| (rng.random::<f64>() < 0.6).then(|| rng.random_range(-1.0..1.0)));
        if !g.isolated().is_empty() {
            continue;
        }
        tried += 1;
        let p = communities(&g, 0).unwrap();
        if (p.modularity - exhaustive_max(&abs_weights(&g))).abs() < 1e-9 {
            hit += 1;
        }
    }
    assert!(hit as f64 >= 0.95 * tried as f64, "{hit} of {tried}");
}

fn pagerank_oracle(g: &AffectGraph, d: f64) -> Vec<f64> {
    let n = g.n_nodes;
    let w = abs_weights(g);
    let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let out: f64 = w[i].iter().sum();
        for j in 0..n {
            let p = if out > 0.0 { w[i][j] / out } else { 1.0 / n as f64 };
            m[(j, i)] -= d * p;
        }
    }
    let b = nalgebra::DVector::from_element(n, (1.0 - d) / n as f64);
    m.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn pagerank_matches_linear_solve_and_scales() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 9;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.35 {
                    edges.push(Edge { src: i, dst: j, weight: rng.random_range(-1.0..1.0) });
                }
            }
        }
        let g = AffectGraph::new(n, edges.clone(), 0.0).unwrap();
        let r = pagerank(&g, &PageRankConfig::default()).unwrap();
        let oracle = pagerank_oracle(&g, 0.85);
        for (a, b) in r.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let scaled: Vec<Edge> = edges.iter().map(|e| Edge { weight: e.weight * 0.1, ..*e }).collect();
        let r2 = pagerank(&AffectGraph::new(n, scaled, 0.0).unwrap(), &PageRankConfig::default()).unwrap();
        for (a, b) in r.iter().zip(&r2) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn graph_edges_match_correlations_and_permute() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = Array2::from_shape_simple_fn((50, 3), || rng.random::<f64>());
    // Columns 3..6 mix the first three so some pairs clear the threshold.
    let mut x = Array2::zeros((50, 6));
    for i in 0..50 {
        for j in 0..3 {
            x[[i, j]] = base[[i, j]];
        }
        x[[i, 3]] = base[[i, 0]] + 0.3 * base[[i, 1]];
        x[[i, 4]] = base[[i, 1]] - 0.8 * base[[i, 2]];
        x[[i, 5]] = base[[i, 2]] * 0.2 + rng.random::<f64>();
    }
    let g = build_graph(x.view(), 0.2).unwrap();
    let corr = |a: usize, b: usize| {
        let (ca, cb) = (x.column(a), x.column(b));
        let (ma, mb) = (ca.mean().unwrap(), cb.mean().unwrap());
        let c: f64 = ca.iter().zip(cb).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let va: f64 = ca.iter().map(|u| (u - ma).powi(2)).sum();
        let vb: f64 = cb.iter().map(|v| (v - mb).powi(2)).sum();
        c / (va * vb).sqrt()
    };
    let mut expected = Vec::new();
    for a in 0..6 {
        for b in a + 1..6 {
            if corr(a, b).abs() > 0.2 {
                expected.push((a, b));
            }
        }
    }
    assert!(!expected.is_empty());
    assert_eq!(g.edges.iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>(), expected);
    for e in &g.edges {
        assert!((e.weight - corr(e.src, e.dst)).abs() < 1e-10);
    }
    let perm = [4, 2, 0, 5, 1, 3];
    let xp = x.select(ndarray::Axis(1), &perm);
    let gp = build_graph(xp.view(), 0.2).unwrap();
    let mut relabeled: Vec<(usize, usize)> = gp
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (perm[e.src], perm[e.dst]);
            (a.min(b), a.max(b))
        })
        .collect();
    relabeled.sort_unstable();
    assert_eq!(relabeled, expected);
}

#[test]
fn pruning_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 24;
    // Each stimulus loads on two of five components.
    let mut v = Array2::zeros((n, 5));
    for i in 0..n {
        v[[i, i % 5]] = 1.0 + rng.random::<f64>();
        v[[i, (i + 2) % 5]] = 0.2 + 0.3 * rng.random::<f64>();
    }
    let e = Embedding::new(v.clone()).unwrap();
    let obs: Vec<Observation> = sample_trials(n, 3, 5)
        .unwrap()
        .iter()
        .map(|t| Observation::new(t, predicted_odd(&e, t.members())).unwrap())
        .collect();
    let targets = [0.95, 0.96, 0.97, 0.98, 0.99];
    let curve = prune_components(&e, &obs, &targets).unwrap();

    let accuracy = |x: &Array2<f64>| {
        let pe = Embedding::new(x.clone()).unwrap();
        obs.iter().filter(|o| predicted_odd(&pe, o.members) == o.odd).count() as f64 / obs.len() as f64
    };
    let full = accuracy(&v);
    let by_k: Vec<f64> = (1..=5)
        .map(|k| {
            let mut p = Array2::zeros((n, 5));
            for i in 0..n {
                let mut cols: Vec<usize> = (0..5).collect();
                cols.sort_by(|&a, &b| v[[i, b]].total_cmp(&v[[i, a]]).then(a.cmp(&b)));
                for &c in &cols[..k] {
                    p[[i, c]] = v[[i, c]];
                }
            }
            accuracy(&p)
        })
        .collect();
    assert_eq!(curve.full_accuracy, full);
    assert_eq!(curve.accuracy_by_k, by_k);
    let mut prev = 0.0;
    for (p, &t) in curve.points.iter().zip(&targets) {
        let k = (1..=5).find(|&k| by_k[k - 1] >= t * full).unwrap();
        assert_eq!(p.k, k);
        assert_eq!(p.mean_k, k.min(2) as f64);
        assert!(p.mean_k >= prev);
        prev = p.mean_k;
    }
}

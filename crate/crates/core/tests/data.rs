//! Dataset format, generator statistics, GNN invariances and mask sampling.

use std::collections::BTreeMap;

use dive_core::diffmath::{NumArray, ParamStore, Tape};
use dive_core::dive::{gumbel_sigmoid_mask, Mode};
use dive_core::exec::Execution;
use dive_core::gnn::{readout_classify, GnnParams, MlpParams};
use dive_core::graphdata::{adjacency, dataset_to_string, load_dataset, parse_dataset, Graph, Label};
use dive_core::motifgen::{
    gen_dataset, gen_dataset_with, gen_motif, BaseKind, GenConfig, MotifKind, NodeFeatures, ShiftMode,
};
use dive_core::noise::RngNoise;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/fixture10.jsonl");

#[test]
fn fixture_graph_zero_attributes() {
    let ds = load_dataset(FIXTURE).unwrap();
    assert_eq!(ds.graphs.len(), 10);
    let g = &ds.graphs[0];
    assert_eq!(g.num_nodes(), 10);
    assert_eq!(g.num_edges(), 12);
    assert_eq!(g.label, Label::Class(1));
    assert_eq!(g.env, "wheel");
    assert_eq!(g.gt_mask().unwrap().iter().filter(|&&b| b).count(), 3);
    assert_eq!(g.degrees()[9], 0);
    let a = adjacency(g);
    let deg = g.degrees();
    for i in 0..g.num_nodes() {
        let row: f64 = (0..g.num_nodes()).map(|j| a.get2(i, j)).sum();
        assert_eq!(row, deg[i] as f64);
        assert_eq!(a.get2(i, i), 0.0);
        for j in 0..g.num_nodes() {
            assert_eq!(a.get2(i, j), a.get2(j, i));
        }
    }
}

#[test]
fn fixture_canonicalizes_and_handles_edge_cases() {
    let ds = load_dataset(FIXTURE).unwrap();
    assert!(ds.graphs[1].edges().iter().all(|&(i, j)| i < j));
    assert!(ds.graphs[1].edges().contains(&(0, 3)));
    let lone = &ds.graphs[2];
    assert_eq!((lone.num_nodes(), lone.num_edges()), (1, 0));
    assert_eq!(ds.split("val").unwrap(), &[6, 7]);
}

#[test]
fn fixture_round_trips() {
    let ds = load_dataset(FIXTURE).unwrap();
    let text = dataset_to_string(&ds);
    let back = parse_dataset(text.as_bytes()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(dataset_to_string(&back), text);
}

#[test]
fn malformed_lines_are_rejected() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = lines[2].replace("[[0,1]", "[[0,0]");
    assert!(parse_dataset(lines.join("\n").as_bytes()).is_err());
    let truncated = text.lines().take(5).collect::<Vec<_>>().join("\n");
    assert!(parse_dataset(truncated.as_bytes()).is_err(), "split indices past the end");
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let x = NumArray::matrix(n, width, (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    Graph::new(n, edges, x, None, Label::Class(0), None, "r").unwrap()
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    let w = g.node_features().cols();
    let mut x = NumArray::zeros(&[g.num_nodes(), w]);
    for i in 0..g.num_nodes() {
        for c in 0..w {
            x.set2(perm[i], c, g.node_features().get2(i, c));
        }
    }
    let edges = g.edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
    Graph::new(g.num_nodes(), edges, x, None, g.label, None, g.env.clone()).unwrap()
}

fn doubled(g: &Graph) -> Graph {
    let n = g.num_nodes();
    let w = g.node_features().cols();
    let mut data = g.node_features().data().to_vec();
    data.extend_from_slice(g.node_features().data());
    let mut edges = g.edges().to_vec();
    edges.extend(g.edges().iter().map(|&(i, j)| (i + n, j + n)));
    Graph::new(2 * n, edges, NumArray::matrix(2 * n, w, data).unwrap(), None, g.label, None, "d").unwrap()
}

struct Net {
    store: ParamStore,
    gnn: GnnParams,
    head: MlpParams,
}

impl Net {
    fn new(width: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gnn = GnnParams::new(&mut store, "g", width, 8, 3, &mut rng);
        let head = MlpParams::new(&mut store, "h", 8, 8, 3, &mut rng);
        Self { store, gnn, head }
    }

    fn logits(&self, g: &Graph) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let a = tape.constant(adjacency(g));
        let x = tape.constant(g.node_features().clone());
        let out = readout_classify(&mut tape, &bound, &self.gnn, &self.head, a, x, None).unwrap();
        tape.value(out).data().to_vec()
    }
}

#[test]
fn readout_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Net::new(3, 1);
    for _ in 0..100 {
        let n = rng.gen_range(1..15);
        let g = random_graph(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = net.logits(&g);
        let b = net.logits(&permuted(&g, &perm));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

#[test]
fn mean_pooling_ignores_disjoint_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Net::new(2, 2);
    for _ in 0..20 {
        let g = random_graph(&mut rng, 9, 2);
        for (u, v) in net.logits(&g).iter().zip(&net.logits(&doubled(&g))) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

fn canon(edges: &[(usize, usize)], perm: &[usize]) -> Vec<(usize, usize)> {
    let mut e: Vec<_> = edges.iter().map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j]))).collect();
    e.sort();
    e
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn motifs_are_pairwise_non_isomorphic() {
    let perms = permutations(5);
    assert_eq!(perms.len(), 120);
    for (a, ka) in MotifKind::ALL.iter().enumerate() {
        for kb in &MotifKind::ALL[a + 1..] {
            let (na, ea) = gen_motif(*ka);
            let (nb, eb) = gen_motif(*kb);
            assert_eq!((na, nb), (5, 5));
            let target = canon(&eb, &[0, 1, 2, 3, 4]);
            assert!(perms.iter().all(|p| canon(&ea, p) != target), "{ka:?} ≅ {kb:?}");
        }
    }
}

fn concept(count: usize, bias: f64, seed: u64) -> GenConfig {
    GenConfig {
        shift_mode: ShiftMode::Concept,
        train_count: count,
        id_val_count: 0,
        val_count: 10,
        test_count: 10,
        bias_train: bias,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn realized_bias_within_three_sigma() {
    for bias in [1.0 / 3.0, 0.6, 0.9] {
        let (_, manifest) = gen_dataset(&concept(3000, bias, 17)).unwrap();
        let got = manifest.splits["train"].realized_bias;
        let sigma = (bias * (1.0 - bias) / 3000.0).sqrt();
        assert!((got - bias).abs() <= 3.0 * sigma, "bias {bias}: realized {got}");
    }
}

#[test]
fn base_choice_passes_chi_square() {
    let bias = 0.7;
    let (ds, _) = gen_dataset(&concept(3000, bias, 23)).unwrap();
    // per label: paired base with prob b, each other base (1−b)/2
    let mut stat = 0.0;
    for motif in MotifKind::ALL {
        let mut counts: BTreeMap<&str, f64> = BaseKind::ALL.iter().map(|b| (b.name(), 0.0)).collect();
        let mut n = 0.0;
        for &i in ds.split("train").unwrap() {
            let g = &ds.graphs[i];
            if g.label.class() == Some(motif.label()) {
                *counts.get_mut(g.env.as_str()).unwrap() += 1.0;
                n += 1.0;
            }
        }
        for base in BaseKind::ALL {
            let p = if base == motif.paired_base() { bias } else { (1.0 - bias) / 2.0 };
            let e = n * p;
            stat += (counts[base.name()] - e).powi(2) / e;
        }
    }
    let p_value = 1.0 - ChiSquared::new(6.0).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi-square {stat}, p {p_value}");
}

#[test]
fn labels_are_balanced() {
    let (_, manifest) = gen_dataset(&concept(3000, 0.9, 3)).unwrap();
    for m in &manifest.splits["train"].label_marginals {
        assert!((m - 1.0 / 3.0).abs() < 1e-3);
    }
}

#[test]
fn covariate_shift_separates_bases() {
    let cfg = GenConfig { shift_mode: ShiftMode::Covariate, train_count: 300, test_count: 100, ..GenConfig::default() };
    let (ds, _) = gen_dataset(&cfg).unwrap();
    let kinds = |split: &str| -> std::collections::BTreeSet<String> {
        ds.split(split).unwrap().iter().map(|&i| ds.graphs[i].env.clone()).collect()
    };
    let train = kinds("train");
    let test = kinds("test");
    assert!(train.is_disjoint(&test), "{train:?} vs {test:?}");
    assert!(train.len() >= 2);
}

#[test]
fn generation_is_deterministic_across_modes() {
    let cfg = GenConfig { train_count: 200, seed: 99, node_features: NodeFeatures::Degree, ..GenConfig::default() };
    let (a, ma) = gen_dataset_with(&cfg, Execution::Sequential).unwrap();
    let (b, mb) = gen_dataset_with(&cfg, Execution::Parallel).unwrap();
    assert_eq!(dataset_to_string(&a), dataset_to_string(&b));
    assert_eq!(ma, mb);
    let (c, _) = gen_dataset(&GenConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(dataset_to_string(&a), dataset_to_string(&c));
}

#[test]
fn generated_graphs_are_connected_with_one_bridge() {
    let (ds, _) = gen_dataset(&GenConfig { train_count: 300, ..GenConfig::default() }).unwrap();
    for g in &ds.graphs {
        let gt = g.gt_mask().unwrap();
        assert_eq!(gt.iter().filter(|&&b| b).count(), gen_motif(MotifKind::from_label(g.label.class().unwrap()).unwrap()).1.len());
        let mut seen = vec![false; g.num_nodes()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(i, j) in g.edges() {
                for (a, b) in [(i, j), (j, i)] {
                    if a == u && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn gumbel_keep_rate_matches_closed_form() {
    const N: usize = 100_000;
    let mut rng_seed = 0;
    for p in [0.1, 0.5, 0.9] {
        for tau in [0.5, 1.0, 2.0] {
            rng_seed += 1;
            let mut tape = Tape::new();
            let pv = tape.constant(NumArray::vector(vec![p; N]));
            let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(rng_seed));
            let m = gumbel_sigmoid_mask(&mut tape, pv, tau, Some(&mut noise), Mode::Train).unwrap();
            let rate = tape.value(m).data().iter().sum::<f64>() / N as f64;
            let expect = 1.0 - (-p).exp();
            let sigma = (expect * (1.0 - expect) / N as f64).sqrt();
            assert!((rate - expect).abs() <= 3.0 * sigma, "p {p} tau {tau}: {rate} vs {expect}");
        }
    }
}

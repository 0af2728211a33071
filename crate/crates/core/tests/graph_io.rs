mod support;

use std::collections::BTreeSet;

use phenograph_core::graph::{
    parse_edge_records, parse_node_records, render_dot, render_edge_file, render_node_file, EdgeRecord, NodeRecord,
};
use phenograph_core::{ArcId, KnowledgeGraph, NodeId, NodeType, SubgraphExport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::random_graph;

fn big_records(seed: u64, n: usize, m: usize) -> (Vec<NodeRecord>, Vec<EdgeRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = [NodeType::Phenotype, NodeType::Gene, NodeType::Disease, NodeType::Other];
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| NodeRecord {
            key: format!("K:{i}"),
            node_type: types[rng.gen_range(0..4)],
            name: format!("name with spaces {i}"),
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    while edges.len() < m {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            continue;
        }
        edges.push(EdgeRecord {
            src: nodes[u].key.clone(),
            relation: format!("rel{}", rng.gen_range(0..5)),
            dst: nodes[v].key.clone(),
        });
    }
    (nodes, edges)
}

fn undirected(edges: &[EdgeRecord]) -> BTreeSet<(String, String, String)> {
    edges
        .iter()
        .map(|e| {
            let (a, b) = if e.src <= e.dst { (&e.src, &e.dst) } else { (&e.dst, &e.src) };
            (a.clone(), e.relation.clone(), b.clone())
        })
        .collect()
}

#[test]
fn files_round_trip_at_scale() {
    let (nodes, edges) = big_records(4, 2000, 6000);
    let dir = tempfile::tempdir().unwrap();
    let (np, ep) = (dir.path().join("n.tsv"), dir.path().join("e.tsv"));
    std::fs::write(&np, render_node_file(&nodes)).unwrap();
    std::fs::write(&ep, render_edge_file(&edges)).unwrap();
    let g = KnowledgeGraph::load(&np, &ep).unwrap();
    assert_eq!(g.node_count(), 2000);
    assert_eq!(g.arc_count(), 12_000);
    assert_eq!(g.node_records(), nodes);
    assert_eq!(undirected(&g.edge_records()), undirected(&edges));

    // Written back and reloaded, the graph is unchanged.
    let (np2, ep2) = (dir.path().join("n2.tsv"), dir.path().join("e2.tsv"));
    g.write_node_file(&np2).unwrap();
    g.write_edge_file(&ep2).unwrap();
    let h = KnowledgeGraph::load(&np2, &ep2).unwrap();
    assert_eq!(h.node_records(), g.node_records());
    for a in 0..g.arc_count() {
        assert_eq!(g.arc_endpoints(ArcId(a)), h.arc_endpoints(ArcId(a)));
        assert_eq!(g.arc_relation(ArcId(a)), h.arc_relation(ArcId(a)));
    }
}

#[test]
fn malformed_inputs_are_rejected() {
    let nodes = parse_node_records("a\tgene\tA\nb\tphenotype\tB\n".as_bytes(), "n").unwrap();
    assert!(parse_node_records("a\tgene\n".as_bytes(), "n").is_err());
    assert!(parse_node_records("a\tprotein\tA\n".as_bytes(), "n").is_err());
    let dangling = parse_edge_records("a\tr\tzz\n".as_bytes(), "e").unwrap();
    assert!(KnowledgeGraph::from_records(nodes.clone(), &dangling, "e").is_err());
    let dup = parse_node_records("a\tgene\tA\na\tgene\tA\n".as_bytes(), "n").unwrap();
    assert!(KnowledgeGraph::from_records(dup, &[], "e").is_err());
}

#[test]
fn dot_export_parses_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_graph(&mut rng, 40, 0.1, [0.3, 0.3, 0.1, 0.3]);
    let chosen: Vec<NodeId> = (0..40).step_by(3).map(NodeId).collect();
    let mut export = SubgraphExport::induced(&g, chosen.iter().copied());
    export.node_annotations.insert(chosen[0], "note \"quoted\"".into());
    let dot = render_dot(&g, &export, "p1").unwrap();
    assert!(dot.starts_with("graph \"p1\" {"));
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for line in dot.lines().map(str::trim) {
        if let Some((a, b)) = line.strip_suffix(';').and_then(|l| l.split_once(" -- ")) {
            let id = |s: &str| s.trim_start_matches('n').parse::<usize>().unwrap();
            edges.insert((id(a), id(b)));
        } else if let Some(rest) = line.strip_prefix('n') {
            nodes.insert(rest.split_once(' ').unwrap().0.parse::<usize>().unwrap());
        }
    }
    let want_nodes: BTreeSet<usize> = chosen.iter().map(|v| v.0).collect();
    assert_eq!(nodes, want_nodes);
    let want_edges: BTreeSet<(usize, usize)> = export
        .arcs
        .iter()
        .map(|&a| {
            let (u, v) = g.arc_endpoints(a);
            (u.0.min(v.0), u.0.max(v.0))
        })
        .collect();
    assert_eq!(edges, want_edges);
    assert!(dot.contains("\\\"quoted\\\""));
}

#[test]
fn export_with_foreign_arc_is_invalid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&mut rng, 20, 0.3, [0.3, 0.3, 0.1, 0.3]);
    let (u, _) = g.arc_endpoints(ArcId(0));
    let export = SubgraphExport {
        nodes: [u].into(),
        arcs: [ArcId(0)].into(),
        ..SubgraphExport::default()
    };
    assert!(render_dot(&g, &export, "x").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjacency_is_symmetric_and_sorted(seed in 0u64..10_000, n in 1usize..50, p in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, p, [1.0, 1.0, 1.0, 1.0]);
        prop_assert_eq!(g.arc_count() % 2, 0);
        let mut total = 0;
        for v in g.nodes() {
            let nb = g.neighbors(v).unwrap();
            prop_assert_eq!(nb.len(), g.degree(v));
            total += nb.len();
            prop_assert!(nb.windows(2).all(|w| w[0].1 < w[1].1));
            for (a, u) in nb {
                prop_assert_eq!(g.arc_endpoints(a), (v, u));
                let back = g.find_arc(u, v);
                prop_assert!(back.is_some());
                prop_assert_eq!(g.arc_relation(back.unwrap()), g.arc_relation(a));
            }
        }
        prop_assert_eq!(total, g.arc_count());
        prop_assert!(g.neighbors(NodeId(n)).is_err());
    }
}

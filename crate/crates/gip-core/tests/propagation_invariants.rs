use std::collections::BTreeSet;

use gip_core::bench::random_cover_like;
use gip_core::filter::{build_cover, filter_memories, FilterConfig, LabelFilter};
use gip_core::metrics::omega_index;
use gip_core::propagation::{run_propagation, NeighborMode, PropagationConfig};
use gip_core::spatial_graph::{build_graph, SpatialGraph};
use gip_core::synth::{generate_planted, PlantedConfig};

fn planted(seed: u64) -> (SpatialGraph, gip_core::filter::Cover) {
    let inst = generate_planted(&PlantedConfig { seed, ..Default::default() }).unwrap();
    (build_graph(&inst.flows, &inst.zones).unwrap(), inst.ground_truth)
}

#[test]
fn state_is_invariant_under_uniform_weight_scaling() {
    let (g, _) = planted(0);
    for seed in 0..10 {
        let cfg = PropagationConfig::with_seed(seed);
        let base = run_propagation(&g, &cfg).unwrap();
        for factor in [1024.0, 1000.0, 1e-3, 7.3] {
            let scaled = run_propagation(&g.with_scaled_weights(factor), &cfg).unwrap();
            assert_eq!(base, scaled, "seed {seed}, factor {factor}");
        }
    }
}

#[test]
fn same_seed_same_state() {
    let (g, _) = planted(1);
    let a = run_propagation(&g, &PropagationConfig::with_seed(9)).unwrap();
    let b = run_propagation(&g, &PropagationConfig::with_seed(9)).unwrap();
    let c = run_propagation(&g, &PropagationConfig::with_seed(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// Weakly connected component of every node.
fn components(g: &SpatialGraph) -> Vec<usize> {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in g.edges() {
        let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
        parent[a] = b;
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

#[test]
fn labels_stay_inside_their_component() {
    // two disconnected chains and an isolated node
    let g =
        SpatialGraph::from_weights(9, &[(0, 1, 2.0), (1, 2, 1.0), (2, 3, 0.5), (4, 5, 1.0), (5, 6, 3.0), (6, 7, 1.0)])
            .unwrap();
    let comp = components(&g);
    for mode in [NeighborMode::Symmetrized, NeighborMode::InEdges, NeighborMode::OutEdges] {
        for seed in 0..5 {
            let cfg = PropagationConfig { iterations: 40, seed, neighbor_mode: mode };
            let state = run_propagation(&g, &cfg).unwrap();
            for (node, mem) in state.memories().iter().enumerate() {
                assert_eq!(mem.total(), 41);
                for &(label, _) in mem.entries() {
                    assert!((label as usize) < g.node_count());
                    assert_eq!(comp[label as usize], comp[node], "{mode:?}: label {label} reached node {node}");
                }
            }
            assert_eq!(state.memories()[8].entries(), &[(8, 41)]);
        }
    }
}

#[test]
fn two_dense_blocks_settle_on_their_own_labels() {
    let mut edges = Vec::new();
    for b in 0..2 {
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    edges.push((b * 8 + i, b * 8 + j, 1.0));
                }
            }
        }
    }
    edges.push((7, 8, 0.1));
    let g = SpatialGraph::from_weights(16, &edges).unwrap();
    let mut ok = 0;
    for seed in 0..10 {
        let state = run_propagation(&g, &PropagationConfig::with_seed(seed)).unwrap();
        let dom: Vec<u32> = state.memories().iter().map(|m| m.dominant().unwrap()).collect();
        let left: BTreeSet<u32> = dom[..8].iter().copied().collect();
        let right: BTreeSet<u32> = dom[8..].iter().copied().collect();
        if left.len() == 1 && right.len() == 1 && left != right {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10");
}

#[test]
fn detected_cover_beats_random_baseline() {
    let mut wins = 0;
    for seed in 0..10 {
        let (g, truth) = planted(seed);
        let state = run_propagation(&g, &PropagationConfig::with_seed(seed)).unwrap();
        let cover =
            build_cover(&filter_memories(&state, &LabelFilter::Ocsvm(FilterConfig::default())).unwrap()).unwrap();
        let detected = omega_index(&cover, &truth).unwrap();
        let baseline = omega_index(&random_cover_like(&cover, seed).unwrap(), &truth).unwrap();
        wins += (detected > baseline) as u32;
    }
    assert!(wins >= 9, "{wins}/10");
}

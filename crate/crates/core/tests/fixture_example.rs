//! Fixture walkthrough of the hierarchical retrieval procedure on a
//! hand-built five-type world, plus a numeric fixture checked against an
//! independent step-by-step reimplementation of the construction.

use hknn::clusterstore::{build_type_clusters, TypeCluster, TypeClusterMap};
use hknn::datastore::{
    build_faster_cluster_store, build_faster_cluster_store_from_vecs, TrainingStates,
};
use hknn::decode::faster_knn_step;
use hknn::synth::{gen_corpus, AlignmentMap, SynthEncoder, TokenId, VocabSpec};
use hknn::vector::l2_distance;

/// Types 1..=5 play the five source kinds; targets mirror them.
/// Token 2 ("B") has two clusters; the test sentence must pick the first
/// one, map it through the alignments, and decode from the cached ranks.
#[test]
fn hand_built_walkthrough_selects_maps_and_decodes() {
    let dim = 4;

    // source occurrences, named by (pair, position):
    //   global 0: h12 = pair0 pos1 (B)     global 1: h21 = pair1 pos0 (B)
    //   global 2: h32 = pair2 pos1 (B)     global 3: h41 = pair3 pos0 (B)
    //   global 4: h13 = pair0 pos2 (C)     global 5: h22 = pair1 pos1 (C)
    //   global 6: h34 = pair2 pos3 (E)     global 7: h52 = pair4 pos1 (E)
    let src_pair_pos: Vec<(u32, u32)> = vec![
        (0, 1),
        (1, 0),
        (2, 1),
        (3, 0),
        (0, 2),
        (1, 1),
        (2, 3),
        (4, 1),
    ];
    let src_types: Vec<TokenId> = vec![2, 2, 2, 2, 3, 3, 5, 5];
    let src_vecs: Vec<Vec<f32>> = vec![
        vec![1.0, 0.1, 0.0, 0.0],   // h12, cluster 1B
        vec![1.0, -0.1, 0.0, 0.0],  // h21, cluster 1B
        vec![-1.0, 0.1, 0.0, 0.0],  // h32, cluster 2B
        vec![-1.0, -0.1, 0.0, 0.0], // h41, cluster 2B
        vec![0.0, 1.0, 0.1, 0.0],   // h13, cluster 1C
        vec![0.0, 1.0, -0.1, 0.0],  // h22, cluster 1C
        vec![0.0, 0.0, 1.0, 0.1],   // h34, cluster 1E
        vec![0.0, 0.0, 1.0, -0.1],  // h52, cluster 1E
    ];

    // target states per pair, five positions each; the aligned positions
    // carry the named z vectors, the rest is filler
    let filler = vec![9.0f32, 9.0, 9.0, 9.0];
    let mut tgt_keys: Vec<Vec<f32>> = Vec::new();
    let mut tgt_values: Vec<TokenId> = Vec::new();
    let mut tgt_offsets = vec![0usize];
    let mut push_pair = |states: Vec<(usize, Vec<f32>, TokenId)>| {
        let mut keys = vec![filler.clone(); 5];
        let mut values = vec![1u32; 5];
        for (pos, key, value) in states {
            keys[pos] = key;
            values[pos] = value;
        }
        tgt_keys.extend(keys);
        tgt_values.extend(values);
        tgt_offsets.push(tgt_keys.len());
    };
    push_pair(vec![
        (1, vec![1.0, 0.1, 0.0, 0.0], 2), // z12 <- h12
        (2, vec![0.0, 1.0, 0.2, 0.0], 3), // z13 <- h13
    ]);
    push_pair(vec![
        (3, vec![1.0, -0.3, 0.0, 0.0], 2), // z24 <- h21
        (0, vec![0.0, 1.0, -0.2, 0.0], 3), // z21 <- h22
    ]);
    push_pair(vec![
        (4, vec![0.0, 0.0, 1.0, 0.3], 5), // z35 <- h34
    ]);
    push_pair(vec![]);
    push_pair(vec![
        (1, vec![0.0, 0.0, 1.0, -0.3], 5), // z52 <- h52
    ]);

    let states = TrainingStates {
        dim,
        src_vecs: src_vecs.clone(),
        src_types,
        src_pair_pos,
        tgt_keys,
        tgt_values,
        tgt_offsets,
    };

    let alignments = AlignmentMap {
        links: vec![
            vec![(1, 1), (2, 2)],
            vec![(0, 3), (1, 0)],
            vec![(3, 4)],
            vec![],
            vec![(1, 1)],
        ],
    };

    // hand-built clusters: B -> {h12, h21} and {h32, h41}; C -> {h13, h22};
    // E -> {h34, h52}
    let cluster = |ty: TokenId, ids: Vec<u64>| {
        let members: Vec<&Vec<f32>> = ids.iter().map(|&i| &src_vecs[i as usize]).collect();
        let centroid: Vec<f32> = (0..dim)
            .map(|j| members.iter().map(|m| m[j]).sum::<f32>() / members.len() as f32)
            .collect();
        let dists = members.iter().map(|m| l2_distance(m, &centroid)).collect();
        TypeCluster::new(ty, centroid, ids, dists)
    };
    let mut clusters = std::collections::BTreeMap::new();
    clusters.insert(2, vec![cluster(2, vec![0, 1]), cluster(2, vec![2, 3])]);
    clusters.insert(3, vec![cluster(3, vec![4, 5])]);
    clusters.insert(5, vec![cluster(5, vec![6, 7])]);
    let cluster_map = TypeClusterMap {
        clusters,
        m: 2,
        dim,
    };

    // the test sentence {B, C, E}, with vectors nearest to clusters 1B, 1C, 1E
    let test_types: Vec<TokenId> = vec![2, 3, 5];
    let test_vecs: Vec<Vec<f32>> = vec![
        vec![0.9, 0.0, 0.0, 0.0],
        vec![0.0, 0.9, 0.0, 0.0],
        vec![0.0, 0.0, 0.9, 0.0],
    ];

    let (store, skipped) = build_faster_cluster_store_from_vecs(
        &test_vecs,
        &test_types,
        &cluster_map,
        &alignments,
        &states,
        true,
    );
    assert_eq!(skipped, 0);

    // three selected source clusters, three aligned target clusters
    assert_eq!(store.n(), 3);
    assert_eq!(store.source_refs.len(), store.clusters.len());
    let picks: Vec<(TokenId, u32)> = store
        .source_refs
        .iter()
        .map(|r| (r.type_id, r.cluster_idx))
        .collect();
    assert_eq!(picks, vec![(2, 0), (3, 0), (5, 0)]);

    // target memberships are exactly the aligned states with their values
    let b = &store.clusters[0];
    assert_eq!(b.member_vecs[0], vec![1.0, 0.1, 0.0, 0.0]);
    assert_eq!(b.member_vecs[1], vec![1.0, -0.3, 0.0, 0.0]);
    assert_eq!(b.member_values, vec![2, 2]);
    let c = &store.clusters[1];
    assert_eq!(c.member_values, vec![3, 3]);
    let e = &store.clusters[2];
    assert_eq!(e.member_vecs[0], vec![0.0, 0.0, 1.0, 0.3]);
    assert_eq!(e.member_vecs[1], vec![0.0, 0.0, 1.0, -0.3]);
    assert_eq!(e.member_values, vec![5, 5]);

    // centroids average the target representations
    for (got, want) in b.centroid.iter().zip([1.0f32, -0.1, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-6);
    }
    for (got, want) in e.centroid.iter().zip([0.0f32, 0.0, 1.0, 0.0]) {
        assert!((got - want).abs() < 1e-6);
    }

    // decoding step: a query near the B cluster centroid retrieves both
    // cached members, with distances d(c', h) + d(c', z)
    let h = vec![0.95f32, 0.0, 0.0, 0.0];
    let (ns, stats) = faster_knn_step(&h, &store, 2);
    assert_eq!(stats.dist_ops, 3); // one distance per selected cluster
    assert_eq!(ns.len(), 2);
    assert!(ns.entries.iter().all(|n| n.value == 2));
    let d_c_h = l2_distance(&h, &b.centroid);
    for (entry, &rank) in ns.entries.iter().zip(&b.rank_order) {
        assert_eq!(entry.dist, d_c_h + b.member_dists[rank as usize]);
    }
}

/// Numeric fixture over the real pipeline (d=4, 5 types, 40 occurrences,
/// at most 3 clusters per type): the built store must match an independent
/// replay of the procedure written with none of the library's search code.
#[test]
fn numeric_fixture_matches_scripted_replay() {
    let spec = VocabSpec::with_identity_dictionary(5, 5, 0.0, 1.0).unwrap();
    let corpus = gen_corpus(&spec, 14, 5, 99).unwrap();
    let total: usize = corpus.pairs.iter().map(|(s, _)| s.len()).sum();
    assert!(total >= 35, "fixture corpus too small: {total}");

    let encoder: SynthEncoder<f32> = SynthEncoder::new(4, 7);
    let states = TrainingStates::from_corpus(&corpus, &encoder);
    // m chosen so every type gets at most 3 clusters
    let m = states.src_types.len() / 5 / 2;
    let cluster_map = build_type_clusters(&states.src_vecs, &states.src_types, m.max(1), 1);
    for list in cluster_map.clusters.values() {
        assert!(list.len() <= 3, "expected g <= 3, got {}", list.len());
    }

    let (sentence, _) = &corpus.pairs[0];
    let (store, skipped) = build_faster_cluster_store(
        sentence,
        &encoder,
        &cluster_map,
        &corpus.alignments,
        &states,
    );
    assert_eq!(skipped, 0);

    // --- independent replay -------------------------------------------
    let test_vecs = encoder.encode_source(sentence);
    assert_eq!(store.n(), sentence.len());
    for (i, (&ty, q)) in sentence.iter().zip(&test_vecs).enumerate() {
        // 1. nearest cluster of the token's type, linear scan
        let clusters = cluster_map.clusters_for(ty).unwrap();
        let mut best = 0usize;
        let mut best_d = f32::INFINITY;
        for (ci, cl) in clusters.iter().enumerate() {
            let d = l2_distance(q, &cl.centroid);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        assert_eq!(store.source_refs[i].cluster_idx as usize, best);
        assert_eq!(store.source_refs[i].type_id, ty);

        // 2. aligned target states of the cluster members, in member order
        let mut want_vecs: Vec<Vec<f32>> = Vec::new();
        let mut want_values: Vec<TokenId> = Vec::new();
        for &gid in &clusters[best].member_ids {
            let (pair, spos) = states.src_pair_pos[gid as usize];
            let links = &corpus.alignments.links[pair as usize];
            let mut tpos: Option<u32> = None;
            for &(s, t) in links {
                if s == spos && tpos.is_none_or(|old| t < old) {
                    tpos = Some(t);
                }
            }
            if let Some(t) = tpos {
                let gi = states.tgt_offsets[pair as usize] + t as usize;
                want_vecs.push(states.tgt_keys[gi].clone());
                want_values.push(states.tgt_values[gi]);
            }
        }
        let got = &store.clusters[i];
        assert_eq!(got.member_vecs, want_vecs);
        assert_eq!(got.member_values, want_values);

        // 3. centroid = mean of member states, distances to it, rank order
        let dim = 4usize;
        let mut centroid = vec![0.0f64; dim];
        for v in &want_vecs {
            for j in 0..dim {
                centroid[j] += v[j] as f64;
            }
        }
        let centroid: Vec<f32> = centroid
            .iter()
            .map(|&x| (x / want_vecs.len() as f64) as f32)
            .collect();
        for (a, b) in got.centroid.iter().zip(&centroid) {
            assert!((a - b).abs() < 1e-6);
        }
        let dists: Vec<f32> = want_vecs
            .iter()
            .map(|v| l2_distance(v, &centroid))
            .collect();
        let mut order: Vec<u32> = (0..dists.len() as u32).collect();
        order.sort_by(|&x, &y| {
            dists[x as usize]
                .partial_cmp(&dists[y as usize])
                .unwrap()
                .then(x.cmp(&y))
        });
        assert_eq!(got.rank_order, order);
    }
}

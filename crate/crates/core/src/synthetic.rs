//! Clustered synthetic knowledge graphs with composable relations.
//!
//! Entities are grouped into clusters. Each base relation is a random
//! permutation of the clusters; every entity links to one or more members of
//! its image cluster. Extra relations are compositions of two base relations,
//! so a two-hop path and its shortcut agree on the cluster level. A fraction
//! of the edges is held out and split evenly between valid and test.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{KgError, KnowledgeGraph, Triple, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_clusters: usize,
    pub cluster_size: usize,
    /// Relations drawn as independent cluster permutations.
    pub num_permutations: usize,
    /// Extra relations `r_a` followed by `r_b`, as index pairs into the permutations.
    pub compositions: Vec<(usize, usize)>,
    /// Each entity links to between `min_out` and `max_out` members of the image cluster.
    pub min_out: usize,
    pub max_out: usize,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_clusters: 66,
            cluster_size: 3,
            num_permutations: 6,
            compositions: vec![(0, 1), (2, 3)],
            min_out: 2,
            max_out: 3,
            holdout: 0.1,
            seed: 0,
        }
    }
}

/// Builds the graph. Deterministic for a fixed config.
pub fn generate(cfg: &SyntheticConfig) -> Result<KnowledgeGraph, KgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, m) = (cfg.num_clusters, cfg.cluster_size.max(1));
    let entities: Vec<String> = (0..k * m).map(|i| format!("c{}_{}", i / m, i % m)).collect();

    let mut perms: Vec<Vec<usize>> = (0..cfg.num_permutations)
        .map(|_| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    for &(a, b) in &cfg.compositions {
        let composed = (0..k).map(|c| perms[b][perms[a][c]]).collect();
        perms.push(composed);
    }
    let relations: Vec<String> = (0..perms.len()).map(|i| format!("r{i}")).collect();

    let mut triples = Vec::new();
    for (r, perm) in perms.iter().enumerate() {
        for s in 0..k * m {
            let target = perm[s / m];
            let members: Vec<usize> = (target * m..(target + 1) * m).collect();
            let hi = cfg.max_out.clamp(1, m);
            let fanout = rng.random_range(cfg.min_out.clamp(1, hi)..=hi);
            for &o in members.choose_multiple(&mut rng, fanout) {
                triples.push(Triple::new(s as u32, r as u32, o as u32));
            }
        }
    }
    triples.shuffle(&mut rng);
    let held = ((triples.len() as f64) * cfg.holdout).round() as usize;
    let test = triples.split_off(triples.len() - held / 2);
    let valid = triples.split_off(triples.len() - (held - held / 2));
    KnowledgeGraph::from_base_triples(Vocab::new(entities, relations)?, triples, valid, test)
}

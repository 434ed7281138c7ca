//! Bounded random walks over the knowledge graph. Each seed entity gets its
//! own RNG stream derived from the global seed and the seed IRI, so results
//! never depend on seed-list order or on how work is scheduled.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kgstore::KnowledgeGraph;

/// Errors from walk generation.
#[derive(Debug, Error)]
pub enum WalkError {
    #[error("no seed entities given")]
    NoSeeds,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Walk generation parameters.
#[derive(Debug, Clone)]
pub struct WalkConfig {
    /// Maximum number of hops (edges) per walk.
    pub max_depth: usize,
    /// Walks attempted per seed, before dedup.
    pub max_walks: usize,
    /// Emit predicate IRIs between entity tokens.
    pub include_predicates: bool,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            max_depth: 4,
            max_walks: 50,
            include_predicates: true,
            seed: 1,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), WalkError> {
        if self.max_depth < 1 {
            return Err(WalkError::InvalidConfig("max_depth must be ≥ 1".into()));
        }
        if self.max_walks < 1 {
            return Err(WalkError::InvalidConfig("max_walks must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One random walk; the first token is always the seed entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub tokens: Vec<String>,
}

/// Walks per seed, plus the seeds that were not present in the graph
/// (reported, not fatal — they map to empty walk lists).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkSet {
    pub by_seed: BTreeMap<String, Vec<Walk>>,
    pub unknown_seeds: Vec<String>,
}

/// RNG stream seed for one walk seed: a hash of the global seed and the IRI,
/// so each seed's walks are reproducible in isolation.
fn stream_seed(global_seed: u64, seed_iri: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(seed_iri.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn walks_for_seed(g: &KnowledgeGraph, seed: &str, cfg: &WalkConfig) -> Vec<Walk> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, seed));
    let mut seen = HashSet::new();
    let mut walks = Vec::new();
    for _ in 0..cfg.max_walks {
        let mut tokens = vec![seed.to_string()];
        let mut current = seed.to_string();
        for _ in 0..cfg.max_depth {
            let neighbors = g.neighbors(&current);
            if neighbors.is_empty() {
                break;
            }
            let (predicate, object) = &neighbors[rng.random_range(0..neighbors.len())];
            if cfg.include_predicates {
                tokens.push(predicate.clone());
            }
            tokens.push(object.clone());
            current = object.clone();
        }
        let walk = Walk { tokens };
        if seen.insert(walk.clone()) {
            walks.push(walk);
        }
    }
    walks
}

/// Generates up to `max_walks` random walks per seed by uniform edge
/// sampling, stopping at `max_depth` hops or at a node with no out-edges.
/// Duplicates are removed after generation, keeping first-occurrence order.
pub fn generate_walks(
    g: &KnowledgeGraph,
    seeds: &[String],
    cfg: &WalkConfig,
) -> Result<WalkSet, WalkError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(WalkError::NoSeeds);
    }
    let mut by_seed = BTreeMap::new();
    let mut unknown_seeds = Vec::new();
    for seed in seeds {
        if by_seed.contains_key(seed) {
            continue;
        }
        if !g.contains_node(seed) {
            unknown_seeds.push(seed.clone());
            by_seed.insert(seed.clone(), Vec::new());
            continue;
        }
        by_seed.insert(seed.clone(), walks_for_seed(g, seed, cfg));
    }
    unknown_seeds.sort();
    unknown_seeds.dedup();
    Ok(WalkSet {
        by_seed,
        unknown_seeds,
    })
}

/// [`generate_walks`] fanned out over worker threads. Per-seed RNG streams
/// make the output identical to the sequential version.
pub fn generate_walks_parallel(
    g: &KnowledgeGraph,
    seeds: &[String],
    cfg: &WalkConfig,
    workers: usize,
) -> Result<WalkSet, WalkError> {
    if workers <= 1 {
        return generate_walks(g, seeds, cfg);
    }
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(WalkError::NoSeeds);
    }
    let unique: Vec<&String> = {
        let mut seen = HashSet::new();
        seeds.iter().filter(|s| seen.insert(s.as_str())).collect()
    };
    let mut results: Vec<Vec<(String, Option<Vec<Walk>>)>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let shard: Vec<&String> = unique
                .iter()
                .skip(worker)
                .step_by(workers)
                .copied()
                .collect();
            handles.push(scope.spawn(move || {
                shard
                    .into_iter()
                    .map(|seed| {
                        if g.contains_node(seed) {
                            (seed.clone(), Some(walks_for_seed(g, seed, cfg)))
                        } else {
                            (seed.clone(), None)
                        }
                    })
                    .collect::<Vec<_>>()
            }));
        }
        for handle in handles {
            results.push(handle.join().expect("walk worker panicked"));
        }
    });
    let mut by_seed = BTreeMap::new();
    let mut unknown_seeds = Vec::new();
    for (seed, walks) in results.into_iter().flatten() {
        match walks {
            Some(walks) => {
                by_seed.insert(seed, walks);
            }
            None => {
                unknown_seeds.push(seed.clone());
                by_seed.insert(seed, Vec::new());
            }
        }
    }
    unknown_seeds.sort();
    Ok(WalkSet {
        by_seed,
        unknown_seeds,
    })
}

/// Flattens a walk set into training sequences, ordered by seed then by walk.
pub fn walks_to_sequences(walks: &WalkSet) -> Vec<Vec<String>> {
    walks
        .by_seed
        .values()
        .flat_map(|walks| walks.iter().map(|w| w.tokens.clone()))
        .collect()
}

/// Dump format: one walk per line, tokens space-separated.
pub fn to_corpus_string(walks: &WalkSet) -> String {
    let mut out = String::new();
    for sequence in walks_to_sequences(walks) {
        out.push_str(&sequence.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a walk-corpus dump (or any line-per-sequence token file) back into
/// training sequences; blank lines are skipped.
pub fn sequences_from_corpus(content: &str) -> Vec<Vec<String>> {
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgstore::parse_ntriples;

    fn chain() -> KnowledgeGraph {
        parse_ntriples(concat!(
            "<http://A> <http://p> <http://B> .\n",
            "<http://B> <http://q> <http://C> .\n",
        ))
        .unwrap()
    }

    fn cfg(max_depth: usize, max_walks: usize) -> WalkConfig {
        WalkConfig {
            max_depth,
            max_walks,
            include_predicates: true,
            seed: 17,
        }
    }

    fn seeds(iris: &[&str]) -> Vec<String> {
        iris.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_collapses_to_one_distinct_walk() {
        let result = generate_walks(&chain(), &seeds(&["http://A"]), &cfg(4, 50)).unwrap();
        let walks = &result.by_seed["http://A"];
        assert_eq!(walks.len(), 1);
        assert_eq!(
            walks[0].tokens,
            vec!["http://A", "http://p", "http://B", "http://q", "http://C"]
        );
        assert!(result.unknown_seeds.is_empty());
    }

    #[test]
    fn sink_node_seed_yields_the_single_token_walk() {
        // C exists only as an object: present in the graph, no out-edges.
        let result = generate_walks(&chain(), &seeds(&["http://C"]), &cfg(4, 50)).unwrap();
        assert_eq!(
            result.by_seed["http://C"],
            vec![Walk {
                tokens: vec!["http://C".to_string()]
            }]
        );
    }

    #[test]
    fn star_at_depth_one_has_at_most_three_walks_of_three_tokens() {
        let star = parse_ntriples(concat!(
            "<http://A> <http://p> <http://B> .\n",
            "<http://A> <http://p> <http://C> .\n",
            "<http://A> <http://q> <http://D> .\n",
        ))
        .unwrap();
        let result = generate_walks(&star, &seeds(&["http://A"]), &cfg(1, 50)).unwrap();
        let walks = &result.by_seed["http://A"];
        assert!(walks.len() <= 3);
        assert!(walks.iter().all(|w| w.tokens.len() == 3));
        // 50 attempts over 3 edges all but guarantee full coverage.
        assert_eq!(walks.len(), 3);
    }

    #[test]
    fn unknown_seed_is_reported_with_empty_list() {
        let result =
            generate_walks(&chain(), &seeds(&["http://A", "http://nowhere"]), &cfg(4, 10)).unwrap();
        assert_eq!(result.unknown_seeds, vec!["http://nowhere".to_string()]);
        assert!(result.by_seed["http://nowhere"].is_empty());
        assert!(!result.by_seed["http://A"].is_empty());
    }

    #[test]
    fn empty_seed_list_is_an_error() {
        assert!(matches!(
            generate_walks(&chain(), &[], &cfg(4, 10)),
            Err(WalkError::NoSeeds)
        ));
    }

    #[test]
    fn zero_depth_or_zero_walks_rejected() {
        assert!(generate_walks(&chain(), &seeds(&["http://A"]), &cfg(0, 10)).is_err());
        assert!(generate_walks(&chain(), &seeds(&["http://A"]), &cfg(4, 0)).is_err());
    }

    fn random_graph(seed: u64, nodes: usize, edges: usize) -> KnowledgeGraph {
        use crate::kgstore::{Object, Triple};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples = (0..edges).map(|_| {
            let s = rng.random_range(0..nodes);
            let o = rng.random_range(0..nodes);
            let p = rng.random_range(0..4);
            Triple::new(
                format!("http://n{s}"),
                format!("http://p{p}"),
                Object::Iri(format!("http://n{o}")),
            )
        });
        KnowledgeGraph::from_triples(triples)
    }

    #[test]
    fn walks_validate_against_the_graph() {
        let g = random_graph(5, 12, 30);
        let all_seeds: Vec<String> = g.nodes().map(str::to_string).collect();
        let config = cfg(4, 20);
        let result = generate_walks(&g, &all_seeds, &config).unwrap();
        for (seed, walks) in &result.by_seed {
            assert!(walks.len() <= config.max_walks);
            for walk in walks {
                assert_eq!(&walk.tokens[0], seed);
                assert!(walk.tokens.len() % 2 == 1, "predicate form has odd length");
                assert!(walk.tokens.len() <= 2 * config.max_depth + 1);
                for start in (0..walk.tokens.len().saturating_sub(2)).step_by(2) {
                    let entity = &walk.tokens[start];
                    let predicate = &walk.tokens[start + 1];
                    let object = &walk.tokens[start + 2];
                    assert!(
                        g.neighbors(entity)
                            .iter()
                            .any(|(p, o)| p == predicate && o == object),
                        "edge {entity} -{predicate}-> {object} not in graph"
                    );
                }
            }
        }
    }

    #[test]
    fn deterministic_and_independent_of_seed_order() {
        let g = random_graph(8, 10, 25);
        let mut all_seeds: Vec<String> = g.nodes().map(str::to_string).collect();
        let config = cfg(3, 15);
        let forward = generate_walks(&g, &all_seeds, &config).unwrap();
        let again = generate_walks(&g, &all_seeds, &config).unwrap();
        assert_eq!(forward, again);
        all_seeds.reverse();
        let reversed = generate_walks(&g, &all_seeds, &config).unwrap();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn per_seed_streams_do_not_interact() {
        let g = random_graph(9, 10, 25);
        let all_seeds: Vec<String> = g.nodes().map(str::to_string).collect();
        let config = cfg(3, 15);
        let full = generate_walks(&g, &all_seeds, &config).unwrap();
        let solo = generate_walks(&g, &all_seeds[..1].to_vec(), &config).unwrap();
        assert_eq!(full.by_seed[&all_seeds[0]], solo.by_seed[&all_seeds[0]]);
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let g = random_graph(12, 20, 60);
        let all_seeds: Vec<String> = g.nodes().map(str::to_string).collect();
        let config = cfg(4, 25);
        let sequential = generate_walks(&g, &all_seeds, &config).unwrap();
        let parallel = generate_walks_parallel(&g, &all_seeds, &config, 4).unwrap();
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn every_walk_appears_in_exhaustive_enumeration() {
        fn enumerate(g: &KnowledgeGraph, from: &str, depth_left: usize) -> Vec<Vec<String>> {
            let neighbors = g.neighbors(from);
            if depth_left == 0 || neighbors.is_empty() {
                return vec![vec![from.to_string()]];
            }
            let mut walks = Vec::new();
            for (p, o) in neighbors {
                for tail in enumerate(g, o, depth_left - 1) {
                    let mut walk = vec![from.to_string(), p.clone()];
                    walk.extend(tail);
                    walks.push(walk);
                }
            }
            walks
        }
        let g = random_graph(33, 8, 14);
        let all_seeds: Vec<String> = g.nodes().map(str::to_string).collect();
        let config = cfg(4, 50);
        let result = generate_walks(&g, &all_seeds, &config).unwrap();
        for (seed, walks) in &result.by_seed {
            let universe = enumerate(&g, seed, config.max_depth);
            for walk in walks {
                assert!(
                    universe.contains(&walk.tokens),
                    "walk {:?} not reachable by enumeration",
                    walk.tokens
                );
            }
        }
    }

    #[test]
    fn predicate_free_mode_emits_entity_chains() {
        let config = WalkConfig {
            include_predicates: false,
            ..cfg(4, 50)
        };
        let result = generate_walks(&chain(), &seeds(&["http://A"]), &config).unwrap();
        assert_eq!(
            result.by_seed["http://A"][0].tokens,
            vec!["http://A", "http://B", "http://C"]
        );
    }

    #[test]
    fn sequences_flatten_and_round_trip_through_dump() {
        let result = generate_walks(&chain(), &seeds(&["http://A", "http://B"]), &cfg(4, 5)).unwrap();
        let sequences = walks_to_sequences(&result);
        assert_eq!(sequences.len(), 2);
        let dump = to_corpus_string(&result);
        assert_eq!(sequences_from_corpus(&dump), sequences);
        assert_eq!(sequences_from_corpus(""), Vec::<Vec<String>>::new());
    }
}

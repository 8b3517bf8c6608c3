use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Emotion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub category: Emotion,
    #[serde(default)]
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

/// Per-category sample counts of the full corpus.
pub const CORPUS_COUNTS: [(Emotion, usize); 6] = [
    (Emotion::Excitation, 11_739),
    (Emotion::Fear, 954),
    (Emotion::Neutral, 8_795),
    (Emotion::Relaxation, 2_214),
    (Emotion::Sadness, 2_090),
    (Emotion::Tension, 2_204),
];

impl DatasetManifest {
    /// Synthetic manifest with ids `{category}_{n:05}` and zero durations.
    pub fn from_counts(counts: &[(Emotion, usize)]) -> Self {
        let records = counts
            .iter()
            .flat_map(|&(e, n)| {
                (0..n).map(move |i| ManifestRecord {
                    id: format!("{}_{i:05}", e.name().to_lowercase()),
                    category: e,
                    duration: 0.0,
                })
            })
            .collect();
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> BTreeMap<Emotion, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.category).or_insert(0) += 1;
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid("manifest", format!("duplicate sample id {}", r.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    /// Categories capped to a fixed count; every other category is kept whole.
    pub quotas: BTreeMap<Emotion, usize>,
    pub test_total: usize,
    pub seed: u64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            quotas: BTreeMap::from([(Emotion::Excitation, 4000), (Emotion::Neutral, 3000)]),
            test_total: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSplit {
    pub balanced: DatasetManifest,
    /// Drawn from the whole manifest with its category proportions.
    pub test: DatasetManifest,
    pub test_allocation: BTreeMap<Emotion, usize>,
}

/// Splits `total` in proportion to `weights` with the largest-remainder rule.
/// Ties in the remainder go to the earlier entry.
pub fn largest_remainder(weights: &[usize], total: usize) -> Result<Vec<usize>> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return Err(Error::Empty("allocation weights"));
    }
    let mut alloc: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((weights[i] * total) % sum), i));
    for &i in order.iter().take(total - assigned) {
        alloc[i] += 1;
    }
    Ok(alloc)
}

fn pick(rng: &mut ChaCha8Rng, pool: &[&ManifestRecord], k: usize) -> Vec<ManifestRecord> {
    let mut idx = index::sample(rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Draws the class-balanced variant and the proportional test variant.
///
/// Categories are processed in index order from one seeded stream, and selections keep
/// the manifest order, so equal inputs and seeds give identical variants.
pub fn sample_variants(manifest: &DatasetManifest, cfg: &VariantConfig) -> Result<VariantSplit> {
    manifest.validate()?;
    let counts = manifest.counts();
    if let Some((&cat, &want)) = cfg.quotas.iter().find(|(c, _)| !counts.contains_key(c)) {
        return Err(Error::InsufficientSamples {
            category: cat.name().into(),
            requested: want,
            available: 0,
        });
    }
    if cfg.test_total > manifest.len() {
        return Err(Error::InsufficientSamples {
            category: "test variant".into(),
            requested: cfg.test_total,
            available: manifest.len(),
        });
    }
    let pools: Vec<(Emotion, Vec<&ManifestRecord>)> = counts
        .keys()
        .map(|&cat| (cat, manifest.records.iter().filter(|r| r.category == cat).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut balanced = Vec::new();
    for (cat, pool) in &pools {
        let want = cfg.quotas.get(cat).copied().unwrap_or(pool.len());
        if want > pool.len() {
            return Err(Error::InsufficientSamples {
                category: cat.name().into(),
                requested: want,
                available: pool.len(),
            });
        }
        balanced.extend(pick(&mut rng, pool, want));
    }
    let alloc = largest_remainder(&counts.values().copied().collect::<Vec<_>>(), cfg.test_total)?;
    let mut test = Vec::new();
    for ((_, pool), &k) in pools.iter().zip(&alloc) {
        test.extend(pick(&mut rng, pool, k));
    }
    Ok(VariantSplit {
        balanced: DatasetManifest { records: balanced },
        test: DatasetManifest { records: test },
        test_allocation: counts.keys().copied().zip(alloc).collect(),
    })
}

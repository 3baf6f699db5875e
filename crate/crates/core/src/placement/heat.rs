use crate::workload::{Catalog, ReviewCorpus, Trace};

/// Historical usage that drives placement: any mix of review corpora and
/// request traces.
#[derive(Debug, Clone, Copy, Default)]
pub struct UsageCorpus<'a> {
    pub reviews: &'a [crate::workload::ReviewRecord],
    pub traces: &'a [Trace],
}

impl<'a> UsageCorpus<'a> {
    pub fn new(reviews: &'a ReviewCorpus, traces: &'a [Trace]) -> Self {
        Self {
            reviews: &reviews.reviews,
            traces,
        }
    }

    pub fn reviews_only(reviews: &'a ReviewCorpus) -> Self {
        Self::new(reviews, &[])
    }

    pub fn traces_only(traces: &'a [Trace]) -> Self {
        Self {
            reviews: &[],
            traces,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty() && self.traces.iter().all(|t| t.is_empty())
    }
}

/// Access count per catalog item, indexed like the catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatMap {
    heat: Vec<u64>,
}

impl HeatMap {
    pub fn from_counts(heat: Vec<u64>) -> Self {
        Self { heat }
    }

    pub fn len(&self) -> usize {
        self.heat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heat.is_empty()
    }

    pub fn get(&self, idx: usize) -> u64 {
        self.heat[idx]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.heat
    }

    pub fn total(&self) -> u64 {
        self.heat.iter().sum()
    }

    /// Heat keyed by item id, for callers that do not hold the catalog index.
    pub fn by_id<'c>(&self, catalog: &'c Catalog) -> Vec<(&'c str, u64)> {
        catalog
            .iter()
            .zip(&self.heat)
            .map(|(item, &h)| (item.item_id.as_str(), h))
            .collect()
    }
}

/// Counts every reference to a catalog item: reviewed items, candidate
/// items and history items. References to items outside the catalog are
/// ignored.
pub fn compute_heat(catalog: &Catalog, usage: UsageCorpus<'_>) -> HeatMap {
    let mut heat = vec![0u64; catalog.len()];
    let mut bump = |id: &str| {
        if let Some(i) = catalog.index_of(id) {
            heat[i] += 1;
        }
    };
    for r in usage.reviews {
        bump(&r.item_id);
    }
    for t in usage.traces {
        for req in &t.requests {
            for c in &req.candidates {
                bump(c);
            }
            for h in &req.history {
                bump(&h.item_id);
            }
        }
    }
    HeatMap { heat }
}

/// Hot and cold catalog indices. `hot` is in descending heat order, `cold`
/// in catalog order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HotCold {
    pub hot: Vec<usize>,
    pub cold: Vec<usize>,
}

/// Takes the top `ceil(hot_fraction * n)` items by heat; ties go to the
/// lexicographically smaller item id.
pub fn split_hot_cold(catalog: &Catalog, heat: &HeatMap, hot_fraction: f64) -> HotCold {
    assert_eq!(catalog.len(), heat.len(), "heat map does not match catalog");
    let n = catalog.len();
    let n_hot = ((hot_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_hot = n_hot.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        heat.get(b)
            .cmp(&heat.get(a))
            .then_with(|| catalog.item(a).item_id.cmp(&catalog.item(b).item_id))
    });
    let hot: Vec<usize> = order[..n_hot].to_vec();
    let mut is_hot = vec![false; n];
    for &i in &hot {
        is_hot[i] = true;
    }
    let cold = (0..n).filter(|&i| !is_hot[i]).collect();
    HotCold { hot, cold }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ItemRecord, ReviewRecord};

    fn catalog(n: usize) -> Catalog {
        let mut c = Catalog::new();
        for i in 0..n {
            c.insert(ItemRecord {
                item_id: format!("i{i:04}"),
                token_count: 10,
                category: "c".into(),
            })
            .unwrap();
        }
        c
    }

    fn review(item: &str) -> ReviewRecord {
        ReviewRecord {
            user_id: "u".into(),
            item_id: item.into(),
            rating: 5,
            token_ids: vec![1],
            timestamp: 0,
        }
    }

    #[test]
    fn counts_reviews_and_ignores_unknown() {
        let cat = catalog(3);
        let mut reviews: Vec<_> = (0..5).map(|_| review("i0000")).collect();
        reviews.push(review("ghost"));
        let corpus = ReviewCorpus::new(reviews);
        let heat = compute_heat(&cat, UsageCorpus::reviews_only(&corpus));
        assert_eq!(heat.as_slice(), &[5, 0, 0]);
    }

    #[test]
    fn ceiling_and_boundaries() {
        let cat = catalog(1000);
        let mut counts = vec![1u64; 1000];
        counts[417] = 9;
        let heat = HeatMap::from_counts(counts);
        let s = split_hot_cold(&cat, &heat, 0.001);
        assert_eq!(s.hot, vec![417]);
        assert_eq!(s.cold.len(), 999);
        assert!(split_hot_cold(&cat, &heat, 0.0).hot.is_empty());
        assert_eq!(split_hot_cold(&cat, &heat, 0.0015).hot.len(), 2);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let cat = catalog(4);
        let heat = HeatMap::from_counts(vec![1, 7, 7, 0]);
        let s = split_hot_cold(&cat, &heat, 0.25);
        assert_eq!(s.hot, vec![1]);
        assert_eq!(s.cold, vec![0, 2, 3]);
    }
}

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// One parsed interaction row. External ids stay strings until a dataset
/// assigns dense indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: Option<i64>,
}

/// Parses a UTF-8 TSV of `user<TAB>item[<TAB>unix_timestamp]` rows, no
/// header. Duplicate (user, item) pairs are collapsed to one row keeping
/// the earliest timestamp; row order follows first occurrence.
pub fn load_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, &path.display().to_string())
}

pub fn parse_interactions(text: &str, source: &str) -> Result<Vec<RawInteraction>> {
    let mut out: Vec<RawInteraction> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let user = fields.next().unwrap_or("").trim();
        let item = fields.next().map(str::trim).unwrap_or("");
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: line_no,
                message: "expected user<TAB>item[<TAB>timestamp]".to_string(),
            });
        }
        let timestamp = match fields.next().map(str::trim) {
            None | Some("") => None,
            Some(ts) => Some(ts.parse::<i64>().map_err(|_| Error::Parse {
                path: source.to_string(),
                line: line_no,
                message: format!("non-integer timestamp {ts:?}"),
            })?),
        };
        let key = (user.to_string(), item.to_string());
        match seen.get(&key) {
            Some(&pos) => {
                // keep the earliest timestamp for the pair
                let keep_new = match (out[pos].timestamp, timestamp) {
                    (Some(old), Some(new)) => new < old,
                    (None, Some(_)) => true,
                    _ => false,
                };
                if keep_new {
                    out[pos].timestamp = timestamp;
                }
            }
            None => {
                seen.insert(key, out.len());
                out.push(RawInteraction {
                    user: user.to_string(),
                    item: item.to_string(),
                    timestamp,
                });
            }
        }
    }
    Ok(out)
}

/// Iteratively removes users and items with fewer than five interactions
/// until every remaining one has at least five. Order-independent: the
/// surviving set is the unique maximal 5-core.
pub fn five_core_filter(interactions: &[RawInteraction]) -> Result<Vec<RawInteraction>> {
    assert!(!interactions.is_empty(), "five_core_filter on empty input");
    let mut rows: Vec<&RawInteraction> = interactions.iter().collect();
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for r in &rows {
            *user_count.entry(r.user.as_str()).or_insert(0) += 1;
            *item_count.entry(r.item.as_str()).or_insert(0) += 1;
        }
        let before = rows.len();
        rows.retain(|r| user_count[r.user.as_str()] >= 5 && item_count[r.item.as_str()] >= 5);
        if rows.is_empty() {
            return Err(Error::Data(
                "5-core filtering annihilated the dataset".to_string(),
            ));
        }
        if rows.len() == before {
            return Ok(rows.into_iter().cloned().collect());
        }
    }
}

/// User/item vocabularies plus disjoint per-user train/valid/test splits.
/// All per-user lists hold dense item indices sorted ascending; splits are
/// immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl InteractionDataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_idx(&self, external: &str) -> Option<u32> {
        self.user_index.get(external).copied()
    }

    pub fn item_idx(&self, external: &str) -> Option<u32> {
        self.item_index.get(external).copied()
    }

    pub fn is_train_positive(&self, user: u32, item: u32) -> bool {
        self.train[user as usize].binary_search(&item).is_ok()
    }

    /// All training (user, item) pairs, ordered by (user, item).
    pub fn train_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::new();
        for (u, items) in self.train.iter().enumerate() {
            for &i in items {
                pairs.push((u as u32, i));
            }
        }
        pairs
    }

    pub fn n_train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }
}

/// Per-user random 8:1:1 partition: valid and test each get
/// max(1, floor(n/10)) interactions, the rest go to train. Requires every
/// user to have at least 3 interactions; seeded and reproducible.
pub fn split_811(interactions: &[RawInteraction], rng: &mut Rng) -> InteractionDataset {
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut per_user: Vec<Vec<u32>> = Vec::new();

    for r in interactions {
        let u = *user_index.entry(r.user.clone()).or_insert_with(|| {
            users.push(r.user.clone());
            per_user.push(Vec::new());
            (users.len() - 1) as u32
        });
        let i = *item_index.entry(r.item.clone()).or_insert_with(|| {
            items.push(r.item.clone());
            (items.len() - 1) as u32
        });
        per_user[u as usize].push(i);
    }

    let mut train = Vec::with_capacity(users.len());
    let mut valid = Vec::with_capacity(users.len());
    let mut test = Vec::with_capacity(users.len());
    for owned in &mut per_user {
        let n = owned.len();
        assert!(
            n >= 3,
            "split_811: user with {n} interactions cannot populate 3 splits (contract violation)"
        );
        rng.shuffle(owned);
        let n_valid = (n / 10).max(1);
        let n_test = (n / 10).max(1);
        let mut te: Vec<u32> = owned[..n_test].to_vec();
        let mut va: Vec<u32> = owned[n_test..n_test + n_valid].to_vec();
        let mut tr: Vec<u32> = owned[n_test + n_valid..].to_vec();
        tr.sort_unstable();
        va.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        valid.push(va);
        test.push(te);
    }

    InteractionDataset {
        users,
        items,
        user_index,
        item_index,
        train,
        valid,
        test,
    }
}

/// K uniform draws from the catalog, rejecting the user's training
/// positives; draws are independent (duplicates possible across the K).
pub fn sample_negatives(dataset: &InteractionDataset, user: u32, k: usize, rng: &mut Rng) -> Vec<u32> {
    let positives = &dataset.train[user as usize];
    let catalog = dataset.n_items();
    assert!(
        catalog > positives.len(),
        "sample_negatives: no eligible items for user {user} (contract violation)"
    );
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        loop {
            let cand = rng.below(catalog) as u32;
            if positives.binary_search(&cand).is_err() {
                out.push(cand);
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(u: &str, i: &str, ts: Option<i64>) -> RawInteraction {
        RawInteraction {
            user: u.to_string(),
            item: i.to_string(),
            timestamp: ts,
        }
    }

    #[test]
    fn parses_well_formed_rows() {
        let rows = parse_interactions("u1\ti1\nu1\ti2\t100\nu2\ti1\n", "mem").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], row("u1", "i2", Some(100)));
    }

    #[test]
    fn missing_item_column_names_the_line() {
        let err = parse_interactions("u1\ti1\nu2\n", "mem").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_integer_timestamp_is_rejected() {
        let err = parse_interactions("u1\ti1\tsoon\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicates_keep_earliest_timestamp() {
        let rows =
            parse_interactions("u1\ti1\t300\nu1\ti1\t100\nu1\ti1\t200\n", "mem").unwrap();
        assert_eq!(rows, vec![row("u1", "i1", Some(100))]);
    }

    #[test]
    fn five_core_keeps_an_existing_core() {
        // 5 users x 5 items, fully connected: already a 5-core.
        let mut rows = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                rows.push(row(&format!("u{u}"), &format!("i{i}"), None));
            }
        }
        let filtered = five_core_filter(&rows).unwrap();
        assert_eq!(filtered.len(), rows.len());
        // fixpoint: reapplying is the identity
        assert_eq!(five_core_filter(&filtered).unwrap(), filtered);
    }

    #[test]
    fn five_core_cascades_removals() {
        // A 5x5 complete block keeps itself alive. "weak" has only 4
        // interactions, all on block items plus one dangling item that
        // only "weak" and one block user touch; removing "weak" drops the
        // dangling item below threshold, which in turn drops nothing else.
        let mut rows = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                rows.push(row(&format!("u{u}"), &format!("i{i}"), None));
            }
        }
        rows.push(row("weak", "i0", None));
        rows.push(row("weak", "i1", None));
        rows.push(row("weak", "i2", None));
        rows.push(row("weak", "dangling", None));
        // dangling has 4 more hits from block users, who each now have 6
        for u in 0..4 {
            rows.push(row(&format!("u{u}"), "dangling", None));
        }
        // dangling: 5 hits total, weak: 4 -> weak removed first, dangling
        // then has 4 and cascades away too.
        let filtered = five_core_filter(&rows).unwrap();
        assert!(filtered.iter().all(|r| r.user != "weak"));
        assert!(filtered.iter().all(|r| r.item != "dangling"));
        assert_eq!(filtered.len(), 25);
    }

    #[test]
    fn five_core_annihilation_is_an_error() {
        let rows = vec![row("u1", "i1", None)];
        let err = five_core_filter(&rows).unwrap_err();
        assert!(err.to_string().contains("annihilated"));
    }

    #[test]
    fn split_ratios_follow_the_floor_rule() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(row("u10", &format!("i{i}"), None));
        }
        for i in 0..5 {
            rows.push(row("u5", &format!("i{i}"), None));
        }
        let ds = split_811(&rows, &mut Rng::new(1));
        let u10 = ds.user_idx("u10").unwrap() as usize;
        let u5 = ds.user_idx("u5").unwrap() as usize;
        assert_eq!(
            (ds.train[u10].len(), ds.valid[u10].len(), ds.test[u10].len()),
            (8, 1, 1)
        );
        assert_eq!(
            (ds.train[u5].len(), ds.valid[u5].len(), ds.test[u5].len()),
            (3, 1, 1)
        );
    }

    #[test]
    fn split_is_reproducible_under_seed() {
        let mut rows = Vec::new();
        for u in 0..4 {
            for i in 0..8 {
                rows.push(row(&format!("u{u}"), &format!("i{i}"), None));
            }
        }
        let a = split_811(&rows, &mut Rng::new(77));
        let b = split_811(&rows, &mut Rng::new(77));
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);
    }

    #[test]
    #[should_panic(expected = "cannot populate 3 splits")]
    fn split_rejects_tiny_users() {
        let rows = vec![row("u", "i1", None), row("u", "i2", None)];
        let _ = split_811(&rows, &mut Rng::new(0));
    }

    #[test]
    fn negatives_avoid_train_positives() {
        let mut rows = Vec::new();
        for i in 0..5 {
            rows.push(row("u", &format!("i{i}"), None));
        }
        let ds = split_811(&rows, &mut Rng::new(3));
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            for neg in sample_negatives(&ds, 0, 2, &mut rng) {
                assert!(!ds.is_train_positive(0, neg));
            }
        }
    }

    #[test]
    fn negatives_are_deterministic_and_near_uniform() {
        let mut rows = Vec::new();
        // user 0 has train positives; the rest of a 12-item catalog is
        // eligible
        for i in 0..5 {
            rows.push(row("u", &format!("i{i}"), None));
        }
        for u in 1..6 {
            for i in 0..12 {
                rows.push(row(&format!("v{u}"), &format!("i{i}"), None));
            }
        }
        let ds = split_811(&rows, &mut Rng::new(3));
        let a = sample_negatives(&ds, 0, 16, &mut Rng::new(4));
        let b = sample_negatives(&ds, 0, 16, &mut Rng::new(4));
        assert_eq!(a, b);

        let eligible: Vec<u32> = (0..12u32)
            .filter(|i| !ds.is_train_positive(0, *i))
            .collect();
        let mut counts: HashMap<u32, usize> = HashMap::new();
        let mut rng = Rng::new(5);
        let draws = 100_000;
        for neg in sample_negatives(&ds, 0, draws, &mut rng) {
            *counts.entry(neg).or_insert(0) += 1;
        }
        let p = 1.0 / eligible.len() as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for i in &eligible {
            let c = *counts.get(i).unwrap_or(&0) as f64;
            assert!(
                (c - draws as f64 * p).abs() < 3.0 * sigma,
                "item {i}: {c} draws"
            );
        }
    }
}

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{distinct, DataError, InteractionRecord};

pub const NUM_FOLDS: usize = 5;
/// Share of each fold's training complement carved off for validation.
pub const VALIDATION_FRACTION: f64 = 1.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitScheme {
    /// Every validation/test compound and target also occurs in training.
    Warm,
    /// Validation/test compounds never occur in training.
    ColdDrug,
    /// Validation/test targets never occur in training.
    ColdTarget,
}

impl SplitScheme {
    pub const ALL: [SplitScheme; 3] = [SplitScheme::Warm, SplitScheme::ColdDrug, SplitScheme::ColdTarget];

    pub fn name(self) -> &'static str {
        match self {
            SplitScheme::Warm => "warm",
            SplitScheme::ColdDrug => "cold_drug",
            SplitScheme::ColdTarget => "cold_target",
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitScheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown split scheme `{s}` (expected warm, cold_drug or cold_target)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

/// Record indices of one fold, each list sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub scheme: SplitScheme,
    pub seed: u64,
    pub n_records: usize,
    pub folds: Vec<Fold>,
}

pub fn make_folds(records: &[InteractionRecord], scheme: SplitScheme, seed: u64) -> Result<FoldSplit, DataError> {
    make_folds_with(records, scheme, seed, NUM_FOLDS, VALIDATION_FRACTION)
}

/// Splits `records` into `k` test folds under `scheme`; the remainder of each
/// fold is divided into training and validation under the same constraint.
pub fn make_folds_with(
    records: &[InteractionRecord],
    scheme: SplitScheme,
    seed: u64,
    k: usize,
    validation_fraction: f64,
) -> Result<FoldSplit, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let compounds = intern(records.iter().map(|r| r.compound_id.as_str()));
    let targets = intern(records.iter().map(|r| r.target_id.as_str()));

    let assignment = match scheme {
        SplitScheme::Warm => warm_assignment(records, &compounds, &targets, k, &mut rng)?,
        SplitScheme::ColdDrug => cold_assignment(&compounds, k, scheme, "compound", &mut rng)?,
        SplitScheme::ColdTarget => cold_assignment(&targets, k, scheme, "target", &mut rng)?,
    };

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] == f).collect();
        let rest: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] != f).collect();
        let target_size = (rest.len() as f64 * validation_fraction).round() as usize;
        let mut validation = match scheme {
            SplitScheme::Warm => warm_validation(&rest, &compounds, &targets, target_size, &mut rng),
            SplitScheme::ColdDrug => cold_validation(&rest, &compounds, target_size, &mut rng),
            SplitScheme::ColdTarget => cold_validation(&rest, &targets, target_size, &mut rng),
        };
        validation.sort_unstable();
        let train = rest.into_iter().filter(|i| validation.binary_search(i).is_err()).collect();
        folds.push(Fold { train, validation, test });
    }
    Ok(FoldSplit {
        scheme,
        seed,
        n_records: records.len(),
        folds,
    })
}

/// Dense entity index per record plus the id of each entity.
struct Interned<'a> {
    of_record: Vec<usize>,
    ids: Vec<&'a str>,
}

fn intern<'a>(ids: impl Iterator<Item = &'a str> + Clone) -> Interned<'a> {
    let names = distinct(ids.clone());
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    Interned {
        of_record: ids.map(|id| index[id]).collect(),
        ids: names,
    }
}

fn cold_assignment(
    entities: &Interned<'_>,
    k: usize,
    scheme: SplitScheme,
    entity: &'static str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DataError> {
    let n = entities.ids.len();
    if n < k {
        return Err(DataError::TooFewEntities {
            scheme,
            entity,
            found: n,
            needed: k,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut group = vec![0; n];
    for (pos, &e) in order.iter().enumerate() {
        group[e] = pos % k;
    }
    Ok(entities.of_record.iter().map(|&e| group[e]).collect())
}

/// Spreads every compound and every target over at least two folds, so that
/// whichever fold is held out each entity keeps a training record.
fn warm_assignment(
    records: &[InteractionRecord],
    compounds: &Interned<'_>,
    targets: &Interned<'_>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DataError> {
    let singletons = |e: &Interned<'_>| -> Vec<String> {
        let mut count = vec![0usize; e.ids.len()];
        for &i in &e.of_record {
            count[i] += 1;
        }
        (0..e.ids.len()).filter(|&i| count[i] < 2).map(|i| e.ids[i].to_string()).collect()
    };
    let (bad_c, bad_t) = (singletons(compounds), singletons(targets));
    if !bad_c.is_empty() || !bad_t.is_empty() || k < 2 {
        return Err(DataError::InfeasibleWarmSplit {
            compounds: bad_c,
            targets: bad_t,
        });
    }

    let n = records.len();
    let mut c_count = vec![vec![0usize; k]; compounds.ids.len()];
    let mut t_count = vec![vec![0usize; k]; targets.ids.len()];
    let mut size = vec![0usize; k];
    let mut fold = vec![0usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in &order {
        let (c, t) = (compounds.of_record[i], targets.of_record[i]);
        let f = (0..k)
            .min_by_key(|&f| (c_count[c][f] + t_count[t][f], size[f]))
            .unwrap_or(0);
        fold[i] = f;
        c_count[c][f] += 1;
        t_count[t][f] += 1;
        size[f] += 1;
    }

    let spread = |counts: &[usize]| counts.iter().filter(|&&x| x > 0).count();
    for _ in 0..4 * n {
        let stuck_c = (0..compounds.ids.len()).find(|&c| spread(&c_count[c]) < 2);
        let stuck_t = (0..targets.ids.len()).find(|&t| spread(&t_count[t]) < 2);
        let (record, partner_counts): (usize, &Vec<usize>) = match (stuck_c, stuck_t) {
            (Some(c), _) => {
                let i = *order.iter().find(|&&i| compounds.of_record[i] == c).unwrap();
                (i, &t_count[targets.of_record[i]])
            }
            (None, Some(t)) => {
                let i = *order.iter().find(|&&i| targets.of_record[i] == t).unwrap();
                (i, &c_count[compounds.of_record[i]])
            }
            (None, None) => return Ok(fold),
        };
        let from = fold[record];
        let to = (0..k)
            .filter(|&f| f != from)
            .min_by_key(|&f| (partner_counts[f] > 0, size[f]))
            .unwrap();
        let (c, t) = (compounds.of_record[record], targets.of_record[record]);
        c_count[c][from] -= 1;
        t_count[t][from] -= 1;
        size[from] -= 1;
        c_count[c][to] += 1;
        t_count[t][to] += 1;
        size[to] += 1;
        fold[record] = to;
        // rotate so a different record of the same entity moves next time
        if let Some(pos) = order.iter().position(|&i| i == record) {
            let r = order.remove(pos);
            order.push(r);
        }
    }

    let stuck = |e: &Interned<'_>, counts: &[Vec<usize>]| -> Vec<String> {
        (0..e.ids.len()).filter(|&i| spread(&counts[i]) < 2).map(|i| e.ids[i].to_string()).collect()
    };
    Err(DataError::InfeasibleWarmSplit {
        compounds: stuck(compounds, &c_count),
        targets: stuck(targets, &t_count),
    })
}

/// Moves records from `rest` to validation while both of their entities keep
/// at least one other training record.
fn warm_validation(
    rest: &[usize],
    compounds: &Interned<'_>,
    targets: &Interned<'_>,
    target_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut c_left: HashMap<usize, usize> = HashMap::new();
    let mut t_left: HashMap<usize, usize> = HashMap::new();
    for &i in rest {
        *c_left.entry(compounds.of_record[i]).or_default() += 1;
        *t_left.entry(targets.of_record[i]).or_default() += 1;
    }
    let mut order = rest.to_vec();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(target_size);
    for i in order {
        if out.len() >= target_size {
            break;
        }
        let (c, t) = (compounds.of_record[i], targets.of_record[i]);
        if c_left[&c] > 1 && t_left[&t] > 1 {
            *c_left.get_mut(&c).unwrap() -= 1;
            *t_left.get_mut(&t).unwrap() -= 1;
            out.push(i);
        }
    }
    out
}

/// Moves whole entities from `rest` to validation until it holds at least
/// `target_size` records, always leaving one entity for training.
fn cold_validation(rest: &[usize], entities: &Interned<'_>, target_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if target_size == 0 {
        return Vec::new();
    }
    let present: BTreeSet<usize> = rest.iter().map(|&i| entities.of_record[i]).collect();
    let mut order: Vec<usize> = present.into_iter().collect();
    order.shuffle(rng);
    let mut chosen = BTreeSet::new();
    let mut count = 0;
    for e in order.iter().take(order.len().saturating_sub(1)) {
        if count >= target_size {
            break;
        }
        chosen.insert(*e);
        count += rest.iter().filter(|&&i| entities.of_record[i] == *e).count();
    }
    rest.iter().copied().filter(|&i| chosen.contains(&entities.of_record[i])).collect()
}

impl FoldSplit {
    pub fn role(&self, fold: usize, index: usize) -> Role {
        let f = &self.folds[fold];
        if f.test.binary_search(&index).is_ok() {
            Role::Test
        } else if f.validation.binary_search(&index).is_ok() {
            Role::Validation
        } else {
            Role::Train
        }
    }

    /// Plain-text manifest: a comment line with the split settings, then one
    /// `index,fold,role` line per record and fold.
    pub fn to_manifest(&self) -> String {
        let mut out = format!(
            "# scheme={} seed={} folds={} records={}\n",
            self.scheme,
            self.seed,
            self.folds.len(),
            self.n_records
        );
        for f in 0..self.folds.len() {
            for i in 0..self.n_records {
                out.push_str(&format!("{i},{f},{}\n", self.role(f, i).name()));
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self, DataError> {
        let bad = |line: usize, reason: String| DataError::BadFile {
            what: "split manifest",
            line,
            reason,
        };
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let fields: HashMap<&str, &str> = head
            .strip_prefix("# ")
            .ok_or_else(|| bad(1, "missing settings line".into()))?
            .split(' ')
            .filter_map(|f| f.split_once('='))
            .collect();
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, format!("missing `{k}`")));
        let scheme: SplitScheme = get("scheme")?.parse().map_err(|e| bad(1, e))?;
        let num = |k: &str| -> Result<u64, DataError> { get(k)?.parse().map_err(|_| bad(1, format!("bad `{k}`"))) };
        let seed = num("seed")?;
        let k = num("folds")? as usize;
        let n_records = num("records")? as usize;

        let mut folds = vec![Fold::default(); k];
        let mut seen = 0usize;
        for (ln, line) in lines.enumerate() {
            let ln = ln + 2;
            let parts: Vec<&str> = line.split(',').collect();
            let [i, f, role] = parts.as_slice() else {
                return Err(bad(ln, "expected index,fold,role".into()));
            };
            let i: usize = i.parse().map_err(|_| bad(ln, format!("bad index `{i}`")))?;
            let f: usize = f.parse().map_err(|_| bad(ln, format!("bad fold `{f}`")))?;
            if i >= n_records || f >= k {
                return Err(bad(ln, "index or fold out of range".into()));
            }
            let slot = &mut folds[f];
            match *role {
                "train" => slot.train.push(i),
                "validation" => slot.validation.push(i),
                "test" => slot.test.push(i),
                other => return Err(bad(ln, format!("unknown role `{other}`"))),
            }
            seen += 1;
        }
        if seen != k * n_records {
            return Err(bad(seen + 1, format!("expected {} assignments, found {seen}", k * n_records)));
        }
        for f in &mut folds {
            f.train.sort_unstable();
            f.validation.sort_unstable();
            f.test.sort_unstable();
        }
        Ok(Self {
            scheme,
            seed,
            n_records,
            folds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nc: usize, nt: usize) -> Vec<InteractionRecord> {
        let mut out = Vec::new();
        for c in 0..nc {
            for t in 0..nt {
                out.push(InteractionRecord {
                    compound_id: format!("c{c}"),
                    smiles: "C".into(),
                    target_id: format!("t{t}"),
                    sequence: "AAA".into(),
                    affinity: (c * t) as f64,
                });
            }
        }
        out
    }

    #[test]
    fn warm_grid_covers_entities() {
        let recs = grid(12, 10);
        let split = make_folds(&recs, SplitScheme::Warm, 3).unwrap();
        for fold in &split.folds {
            let train_c: BTreeSet<_> = fold.train.iter().map(|&i| &recs[i].compound_id).collect();
            let train_t: BTreeSet<_> = fold.train.iter().map(|&i| &recs[i].target_id).collect();
            for &i in fold.test.iter().chain(&fold.validation) {
                assert!(train_c.contains(&recs[i].compound_id));
                assert!(train_t.contains(&recs[i].target_id));
            }
            let sizes = fold.test.len();
            assert!((20..=28).contains(&sizes), "{sizes}");
        }
    }

    #[test]
    fn singleton_entity_blocks_warm_split() {
        let mut recs = grid(6, 6);
        recs.push(InteractionRecord {
            compound_id: "lonely".into(),
            ..recs[0].clone()
        });
        match make_folds(&recs, SplitScheme::Warm, 0) {
            Err(DataError::InfeasibleWarmSplit { compounds, targets }) => {
                assert_eq!(compounds, vec!["lonely".to_string()]);
                assert!(targets.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cold_drug_needs_five_compounds() {
        let recs = grid(1, 20);
        assert!(matches!(
            make_folds(&recs, SplitScheme::ColdDrug, 0),
            Err(DataError::TooFewEntities { found: 1, needed: 5, .. })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let recs = grid(7, 6);
        for scheme in SplitScheme::ALL {
            let split = make_folds(&recs, scheme, 9).unwrap();
            let text = split.to_manifest();
            let back = FoldSplit::from_manifest(&text).unwrap();
            assert_eq!(back, split);
            assert_eq!(back.to_manifest(), text);
        }
    }
}

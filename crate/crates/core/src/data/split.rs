use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::RngStream;

pub const DEFAULT_SIZES: [usize; 5] = [1, 3, 5, 10, 20];
pub const DEFAULT_REPEATS: usize = 3;

/// Duration quartiles of a pool.
///
/// With the pool sorted by `(length, id)`, the boundaries are the lengths at 0-based
/// positions `ceil(k n / 4)` for `k = 1, 2, 3`; a record is in quartile `q` when
/// `lower <= length < upper`. Pools with distinct lengths split into equal quarters
/// (up to rounding), ties move records to the upper quartile.
#[derive(Clone, Debug, PartialEq)]
pub struct Quartiles {
    pub bounds: [usize; 3],
    pub members: [Vec<String>; 4],
}

pub fn duration_quartiles(pool: &[(String, usize)]) -> Result<Quartiles> {
    if pool.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 records for quartiles, got {}", pool.len())));
    }
    let mut sorted: Vec<&(String, usize)> = pool.iter().collect();
    sorted.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = sorted.len();
    let bounds = [1, 2, 3].map(|k| sorted[(k * n).div_ceil(4)].1);
    let mut members: [Vec<String>; 4] = Default::default();
    for (id, len) in sorted {
        let q = bounds.iter().filter(|&&b| *len >= b).count();
        members[q].push(id.clone());
    }
    Ok(Quartiles { bounds, members })
}

/// Per-stratum counts `(Q1, Q2 u Q3, Q4)` for a mini-training set of `size`.
///
/// Targets are `size * (20%, 60%, 20%)`; floors are topped up by largest remainder,
/// ties going to the middle stratum first, then Q1 before Q4. Size 1 is drawn from
/// the middle stratum only.
pub fn stratum_allocation(size: usize) -> [usize; 3] {
    if size == 1 {
        return [0, 1, 0];
    }
    let shares = [20, 60, 20];
    let mut counts = shares.map(|s| size * s / 100);
    let remainders = shares.map(|s| size * s % 100);
    let mut left = size - counts.iter().sum::<usize>();
    let mut order = [1usize, 0, 2];
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// `repeats` pairwise-disjoint id sets of `size` records each, stratified by duration
/// quartile. Each returned set is sorted.
pub fn stratified_sample(
    pool: &[(String, usize)],
    size: usize,
    repeats: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<String>>> {
    if size == 0 || repeats == 0 {
        return Err(Error::invalid("mini-training sets need a positive size and repeat count"));
    }
    if pool.len() < size * repeats {
        return Err(Error::invalid(format!(
            "pool of {} records cannot hold {repeats} disjoint sets of {size}",
            pool.len()
        )));
    }
    let q = duration_quartiles(pool)?;
    let [q1, q2, q3, q4] = q.members;
    let mut strata = [q1, [q2, q3].concat(), q4];
    let counts = stratum_allocation(size);
    for (stratum, (&c, name)) in strata.iter_mut().zip(counts.iter().zip(["Q1", "Q2+Q3", "Q4"])) {
        if stratum.len() < c * repeats {
            return Err(Error::invalid(format!(
                "stratum {name} has {} records, {repeats} sets need {}",
                stratum.len(),
                c * repeats
            )));
        }
        rng.shuffle(stratum);
    }
    Ok((0..repeats)
        .map(|j| {
            let mut set: Vec<String> = strata
                .iter()
                .zip(counts)
                .flat_map(|(s, c)| s[j * c..(j + 1) * c].iter().cloned())
                .collect();
            set.sort();
            set
        })
        .collect())
}

/// Test / validation / pool split plus the mini-training sets `E_{i,j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub pool: Vec<String>,
    /// `(size, repeat) -> ids`
    pub mini_sets: BTreeMap<(usize, usize), Vec<String>>,
}

impl SplitPlan {
    /// Shuffles `records` (id, length) into test / validation / pool, then samples
    /// the mini-training sets for every size from a stream derived per size.
    pub fn build(
        records: &[(String, usize)],
        n_test: usize,
        n_val: usize,
        sizes: &[usize],
        repeats: usize,
        rng: &RngStream,
    ) -> Result<SplitPlan> {
        if n_test + n_val >= records.len() {
            return Err(Error::invalid(format!(
                "{} records cannot be split into {n_test} test, {n_val} validation and a nonempty pool",
                records.len()
            )));
        }
        let mut ids: Vec<&(String, usize)> = records.iter().collect();
        ids.sort_by(|a, b| a.0.cmp(&b.0));
        let mut shuffle_rng = rng.derive(0);
        shuffle_rng.shuffle(&mut ids);
        let sorted = |part: &[&(String, usize)]| {
            let mut v: Vec<String> = part.iter().map(|r| r.0.clone()).collect();
            v.sort();
            v
        };
        let test = sorted(&ids[..n_test]);
        let validation = sorted(&ids[n_test..n_test + n_val]);
        let pool_records: Vec<(String, usize)> = ids[n_test + n_val..].iter().map(|r| (*r).clone()).collect();
        let pool = sorted(&ids[n_test + n_val..]);
        let mut mini_sets = BTreeMap::new();
        for &size in sizes {
            let mut r = rng.derive(1000 + size as u64);
            for (j, set) in stratified_sample(&pool_records, size, repeats, &mut r)?.into_iter().enumerate() {
                mini_sets.insert((size, j), set);
            }
        }
        Ok(SplitPlan {
            test,
            validation,
            pool,
            mini_sets,
        })
    }

    pub fn mini_set(&self, size: usize, repeat: usize) -> Result<&[String]> {
        self.mini_sets
            .get(&(size, repeat))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no mini-training set for size {size}, repeat {repeat}")))
    }

    /// `pool \ E_{i,j}`: the records that receive synthetic labels.
    pub fn complement(&self, size: usize, repeat: usize) -> Result<Vec<String>> {
        let e: BTreeSet<&String> = self.mini_set(size, repeat)?.iter().collect();
        Ok(self.pool.iter().filter(|id| !e.contains(id)).cloned().collect())
    }

    /// Disjointness of the three splits and of the repeats at each size, and
    /// containment of every mini set in the pool.
    pub fn validate(&self) -> Result<()> {
        let test: BTreeSet<&String> = self.test.iter().collect();
        let val: BTreeSet<&String> = self.validation.iter().collect();
        let pool: BTreeSet<&String> = self.pool.iter().collect();
        if !test.is_disjoint(&val) || !test.is_disjoint(&pool) || !val.is_disjoint(&pool) {
            return Err(Error::InvalidState("test, validation and pool overlap".into()));
        }
        let mut by_size: BTreeMap<usize, BTreeSet<&String>> = BTreeMap::new();
        for (&(size, repeat), ids) in &self.mini_sets {
            if ids.len() != size {
                return Err(Error::InvalidState(format!("E[{size},{repeat}] has {} members", ids.len())));
            }
            let used = by_size.entry(size).or_default();
            for id in ids {
                if !pool.contains(id) {
                    return Err(Error::InvalidState(format!("E[{size},{repeat}] member {id} not in pool")));
                }
                if !used.insert(id) {
                    return Err(Error::InvalidState(format!("{id} appears in two repeats of size {size}")));
                }
            }
        }
        Ok(())
    }

    /// Tab-separated `set  size  repeat  id`, with `-` for size and repeat outside mini sets.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("#set\tsize\trepeat\tid\n");
        for (name, ids) in [("test", &self.test), ("val", &self.validation), ("pool", &self.pool)] {
            for id in ids {
                out.push_str(&format!("{name}\t-\t-\t{id}\n"));
            }
        }
        for (&(size, repeat), ids) in &self.mini_sets {
            for id in ids {
                out.push_str(&format!("mini\t{size}\t{repeat}\t{id}\n"));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<SplitPlan> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = SplitPlan {
            test: Vec::new(),
            validation: Vec::new(),
            pool: Vec::new(),
            mini_sets: BTreeMap::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let loc = || format!("{} line {}", path.display(), lineno + 1);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(loc(), "expected 4 fields"));
            }
            let id = f[3].to_string();
            match f[0] {
                "test" => plan.test.push(id),
                "val" => plan.validation.push(id),
                "pool" => plan.pool.push(id),
                "mini" => {
                    let size = f[1].parse().map_err(|_| Error::parse(loc(), "bad size"))?;
                    let repeat = f[2].parse().map_err(|_| Error::parse(loc(), "bad repeat"))?;
                    plan.mini_sets.entry((size, repeat)).or_default().push(id);
                }
                other => return Err(Error::parse(loc(), format!("unknown set {other:?}"))),
            }
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize, rng: &mut RngStream) -> Vec<(String, usize)> {
        (0..n).map(|k| (format!("v{k:03}"), 150 + rng.below(451))).collect()
    }

    #[test]
    fn allocation_rule() {
        assert_eq!(stratum_allocation(10), [2, 6, 2]);
        assert_eq!(stratum_allocation(20), [4, 12, 4]);
        assert_eq!(stratum_allocation(5), [1, 3, 1]);
        assert_eq!(stratum_allocation(1), [0, 1, 0]);
        // 0.6 / 1.8 / 0.6: floors 0/1/0, the middle remainder (0.8) wins, then Q1 by tie order
        assert_eq!(stratum_allocation(3), [1, 2, 0]);
        for size in 1..60 {
            assert_eq!(stratum_allocation(size).iter().sum::<usize>(), size);
        }
    }

    #[test]
    fn quartiles_partition_the_pool() {
        let mut rng = RngStream::new(4);
        let p = pool(80, &mut rng);
        let q = duration_quartiles(&p).unwrap();
        let total: usize = q.members.iter().map(Vec::len).sum();
        assert_eq!(total, 80);
        let mut all: Vec<&String> = q.members.iter().flatten().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 80);
        assert!((q.members[0].len() as i64 - q.members[3].len() as i64).abs() <= 2);
    }

    #[test]
    fn distinct_lengths_split_evenly() {
        let p: Vec<(String, usize)> = (0..80).map(|k| (format!("v{k}"), 1000 - 7 * k)).collect();
        let q = duration_quartiles(&p).unwrap();
        assert!(q.members.iter().all(|m| m.len() == 20));
    }

    #[test]
    fn single_pick_comes_from_middle_quartiles() {
        let mut rng = RngStream::new(6);
        let p = pool(80, &mut rng);
        let q = duration_quartiles(&p).unwrap();
        let sets = stratified_sample(&p, 1, 3, &mut rng).unwrap();
        for s in sets {
            assert!(q.members[1].contains(&s[0]) || q.members[2].contains(&s[0]));
        }
    }

    #[test]
    fn size_ten_is_two_six_two() {
        let mut rng = RngStream::new(8);
        let p = pool(80, &mut rng);
        let q = duration_quartiles(&p).unwrap();
        let sets = stratified_sample(&p, 10, 3, &mut rng).unwrap();
        for s in &sets {
            let count = |k: usize| s.iter().filter(|id| q.members[k].contains(id)).count();
            assert_eq!((count(0), count(1) + count(2), count(3)), (2, 6, 2));
        }
        let all: BTreeSet<&String> = sets.iter().flatten().collect();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn pool_too_small_is_rejected() {
        let mut rng = RngStream::new(1);
        let p = pool(20, &mut rng);
        assert!(stratified_sample(&p, 10, 3, &mut rng).is_err());
    }

    #[test]
    fn plan_round_trips_and_validates() {
        let mut rng = RngStream::new(2);
        let records = pool(120, &mut rng);
        let plan = SplitPlan::build(&records, 30, 10, &DEFAULT_SIZES, 3, &RngStream::new(3)).unwrap();
        assert_eq!((plan.test.len(), plan.validation.len(), plan.pool.len()), (30, 10, 80));
        plan.validate().unwrap();
        for &i in &DEFAULT_SIZES {
            for j in 0..3 {
                let e = plan.mini_set(i, j).unwrap();
                let f = plan.complement(i, j).unwrap();
                assert_eq!(e.len() + f.len(), 80);
                assert!(f.iter().all(|id| !e.contains(id)));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.tsv");
        plan.write(&path).unwrap();
        assert_eq!(SplitPlan::read(&path).unwrap(), plan);
    }
}

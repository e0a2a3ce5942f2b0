use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{DatasetError, DatasetManifest, Result};
use crate::rng::stream;

/// Fractions of the whole dataset assigned to train and validation; the test
/// share is `1/k`. Only `val / (train + val)` matters for the cut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.70, val: 0.10 }
    }
}

impl SplitRatios {
    fn val_count(&self, remaining: usize) -> usize {
        (remaining as f64 * self.val / (self.train + self.val)).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FoldIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold over arbitrary class labels.
///
/// Per class: shuffle by `(seed, class)`, cut `k` test shards (the first
/// `n mod k` shards get one extra), and split the rest of each fold into
/// validation (the floor share) then train. Index lists come back sorted.
pub fn stratified_kfold_indices(labels: &[u32], k: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<FoldIndices>> {
    if k < 2 {
        return Err(DatasetError::Parameter(format!("k = {k}; need at least 2 folds")));
    }
    if !(ratios.train > 0.0 && ratios.val >= 0.0) {
        return Err(DatasetError::Parameter(format!("bad split ratios {ratios:?}")));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut folds = vec![FoldIndices::default(); k];
    for (&class, members) in &mut by_class {
        if members.len() < k {
            return Err(DatasetError::Parameter(format!("class {class} has {} samples, fewer than k = {k}", members.len())));
        }
        members.shuffle(&mut stream(seed, "split", u64::from(class)));
        let (base, extra) = (members.len() / k, members.len() % k);
        let mut bounds = vec![0usize];
        for s in 0..k {
            bounds.push(bounds[s] + base + usize::from(s < extra));
        }
        for (f, fold) in folds.iter_mut().enumerate() {
            let (a, b) = (bounds[f], bounds[f + 1]);
            fold.test.extend_from_slice(&members[a..b]);
            let rest: Vec<usize> = members[..a].iter().chain(&members[b..]).copied().collect();
            let nval = ratios.val_count(rest.len());
            fold.val.extend_from_slice(&rest[..nval]);
            fold.train.extend_from_slice(&rest[nval..]);
        }
    }
    for f in &mut folds {
        f.train.sort_unstable();
        f.val.sort_unstable();
        f.test.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub folds: Vec<Fold>,
}

pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, ratios: SplitRatios, seed: u64) -> Result<FoldPlan> {
    let labels: Vec<u32> = manifest.records.iter().map(|r| u32::from(r.label)).collect();
    let ids = |idx: &[usize]| idx.iter().map(|&i| manifest.records[i].id.clone()).collect();
    let folds = stratified_kfold_indices(&labels, k, ratios, seed)?
        .iter()
        .map(|f| Fold { train: ids(&f.train), val: ids(&f.val), test: ids(&f.test) })
        .collect();
    Ok(FoldPlan { seed, ratios, folds })
}

const PLAN_HEADER: &str = "foldplan 1";

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Line-oriented text: header, `seed`, `ratios`, `k`, then for every
    /// fold and set a `fold <i> <set> <count>` line followed by one id per line.
    /// `comments` become leading `#` lines.
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut s = String::new();
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "{PLAN_HEADER}\nseed {}\nratios {} {}\nk {}", self.seed, self.ratios.train, self.ratios.val, self.k());
        for (i, f) in self.folds.iter().enumerate() {
            for (name, ids) in [("train", &f.train), ("val", &f.val), ("test", &f.test)] {
                let _ = writeln!(s, "fold {i} {name} {}", ids.len());
                for id in ids {
                    let _ = writeln!(s, "{id}");
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| DatasetError::Format(format!("fold plan: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));
        if next("header")? != PLAN_HEADER {
            return Err(bad("missing or unsupported header".into()));
        }
        let field = |line: &str, key: &str| -> Result<Vec<String>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("expected `{key}`, found `{line}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s}")));
        let seed = field(next("seed")?, "seed")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad seed".into()))?;
        let r = field(next("ratios")?, "ratios")?;
        if r.len() != 2 {
            return Err(bad("ratios needs two values".into()));
        }
        let ratios = SplitRatios { train: num(&r[0])?, val: num(&r[1])? };
        let k: usize = field(next("k")?, "k")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad k".into()))?;
        let mut folds = Vec::with_capacity(k);
        for i in 0..k {
            let mut fold = Fold::default();
            for name in ["train", "val", "test"] {
                let head = field(next("fold block")?, "fold")?;
                if head.len() != 3 || head[0] != i.to_string() || head[1] != name {
                    return Err(bad(format!("expected `fold {i} {name} <n>`")));
                }
                let n: usize = head[2].parse().map_err(|_| bad(format!("bad count {}", head[2])))?;
                let ids = (0..n).map(|_| next("id").map(str::to_string)).collect::<Result<Vec<_>>>()?;
                match name {
                    "train" => fold.train = ids,
                    "val" => fold.val = ids,
                    _ => fold.test = ids,
                }
            }
            folds.push(fold);
        }
        Ok(Self { seed, ratios, folds })
    }
}

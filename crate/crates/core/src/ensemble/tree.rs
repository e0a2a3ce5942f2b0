//! CART trees: weighted-Gini classification trees and second-order
//! regression trees for boosting. Samples go left when `x[feature] <= threshold`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::Features;
use crate::container::TreeNodeRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
    /// L2 penalty on leaf weights (regression trees only).
    pub lambda: f64,
    /// Minimum hessian sum per child (regression trees only).
    pub min_child_weight: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 12, max_features: None, lambda: 0.0, min_child_weight: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNode {
    pub split: Option<(usize, f64)>,
    pub left: usize,
    pub right: usize,
    /// Class distribution `[p0, p1]` for classification; `[weight, 0]` for regression.
    pub value: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

/// Best threshold for one feature, or `None` if the values are constant.
/// `score` receives (left sums, right sums) and returns a value to minimise.
fn scan_feature<S: Copy + Default + std::ops::AddAssign + std::ops::Sub<Output = S>>(
    x: &Features,
    f: usize,
    samples: &mut [usize],
    stat: impl Fn(usize) -> S,
    total: S,
    score: impl Fn(S, S) -> Option<f64>,
) -> Option<(f64, f64)> {
    samples.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
    let mut left = S::default();
    let mut best: Option<(f64, f64)> = None;
    for w in 0..samples.len() - 1 {
        left += stat(samples[w]);
        let (lo, hi) = (x.get(samples[w], f), x.get(samples[w + 1], f));
        if lo == hi {
            continue;
        }
        if let Some(s) = score(left, total - left) {
            if best.map_or(true, |(b, _)| s < b) {
                let mid = lo + (hi - lo) / 2.0;
                best = Some((s, if mid < hi { mid } else { lo }));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Default, Debug)]
struct ClassSums([f64; 2]);

impl std::ops::AddAssign for ClassSums {
    fn add_assign(&mut self, o: Self) {
        self.0[0] += o.0[0];
        self.0[1] += o.0[1];
    }
}

impl std::ops::Sub for ClassSums {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

fn gini_mass(c: ClassSums) -> f64 {
    let w = c.0[0] + c.0[1];
    if w <= 0.0 {
        0.0
    } else {
        w - (c.0[0] * c.0[0] + c.0[1] * c.0[1]) / w
    }
}

#[derive(Clone, Copy, Default, Debug)]
struct GradSums {
    g: f64,
    h: f64,
}

impl std::ops::AddAssign for GradSums {
    fn add_assign(&mut self, o: Self) {
        self.g += o.g;
        self.h += o.h;
    }
}

impl std::ops::Sub for GradSums {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { g: self.g - o.g, h: self.h - o.h }
    }
}

fn candidate_features<R: Rng + ?Sized>(d: usize, max_features: Option<usize>, rng: &mut R) -> Vec<usize> {
    let mut all: Vec<usize> = (0..d).collect();
    if let Some(k) = max_features.filter(|&k| k < d) {
        all.partial_shuffle(rng, k);
        all.truncate(k);
        all.sort_unstable();
    }
    all
}

impl DecisionTree {
    /// Weighted-Gini classification tree over the samples with positive weight.
    pub fn fit_classifier<R: Rng + ?Sized>(x: &Features, y: &[u8], weights: &[f64], params: &TreeParams, rng: &mut R) -> Self {
        let samples: Vec<usize> = (0..x.n()).filter(|&i| weights[i] > 0.0).collect();
        let mut tree = Self { nodes: Vec::new() };
        tree.grow_classifier(x, y, weights, samples, 0, params, rng);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_classifier<R: Rng + ?Sized>(
        &mut self,
        x: &Features,
        y: &[u8],
        w: &[f64],
        mut samples: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        rng: &mut R,
    ) -> usize {
        let stat = |i: usize| {
            let mut c = ClassSums::default();
            c.0[y[i] as usize] = w[i];
            c
        };
        let mut total = ClassSums::default();
        samples.iter().for_each(|&i| total += stat(i));
        let mass = total.0[0] + total.0[1];
        let id = self.nodes.len();
        let dist = if mass > 0.0 { [total.0[0] / mass, total.0[1] / mass] } else { [1.0, 0.0] };
        self.nodes.push(TreeNode { split: None, left: 0, right: 0, value: dist });
        let parent = gini_mass(total);
        if depth >= params.max_depth || samples.len() < 2 || parent <= 1e-12 * mass {
            return id;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for f in candidate_features(x.d(), params.max_features, rng) {
            if let Some((s, thr)) = scan_feature(x, f, &mut samples, stat, total, |l, r| Some(gini_mass(l) + gini_mass(r))) {
                if best.map_or(true, |(b, _, _)| s < b) {
                    best = Some((s, f, thr));
                }
            }
        }
        let Some((score, f, thr)) = best else { return id };
        if score >= parent - 1e-12 * mass {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x.get(i, f) <= thr);
        let left = self.grow_classifier(x, y, w, l, depth + 1, params, rng);
        let right = self.grow_classifier(x, y, w, r, depth + 1, params, rng);
        self.nodes[id] = TreeNode { split: Some((f, thr)), left, right, value: dist };
        id
    }

    /// Regression tree on per-sample gradients `g` and hessians `h`. Splits
    /// maximise `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)` computed with
    /// `split_h` (pass all-ones for a squared-error fit to `−g`); leaves take
    /// the Newton value `−G/(H+λ)` computed with the true hessians.
    pub fn fit_gradient(x: &Features, g: &[f64], h: &[f64], split_h: &[f64], samples: &[usize], params: &TreeParams) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow_gradient(x, g, h, split_h, samples.to_vec(), 0, params);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_gradient(&mut self, x: &Features, g: &[f64], h: &[f64], sh: &[f64], mut samples: Vec<usize>, depth: usize, p: &TreeParams) -> usize {
        let lam = p.lambda;
        let leaf_g: f64 = samples.iter().map(|&i| g[i]).sum();
        let leaf_h: f64 = samples.iter().map(|&i| h[i]).sum();
        let weight = if leaf_h + lam > 1e-12 { -leaf_g / (leaf_h + lam) } else { 0.0 };
        let id = self.nodes.len();
        self.nodes.push(TreeNode { split: None, left: 0, right: 0, value: [weight, 0.0] });
        if depth >= p.max_depth || samples.len() < 2 {
            return id;
        }
        let stat = |i: usize| GradSums { g: g[i], h: sh[i] };
        let mut total = GradSums::default();
        samples.iter().for_each(|&i| total += stat(i));
        let obj = |s: GradSums| if s.h + lam > 0.0 { s.g * s.g / (s.h + lam) } else { 0.0 };
        let parent = obj(total);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..x.d() {
            let found = scan_feature(x, f, &mut samples, stat, total, |l, r| {
                if l.h < p.min_child_weight || r.h < p.min_child_weight {
                    None
                } else {
                    Some(-(obj(l) + obj(r)))
                }
            });
            if let Some((s, thr)) = found {
                if best.map_or(true, |(b, _, _)| s < b) {
                    best = Some((s, f, thr));
                }
            }
        }
        let Some((score, f, thr)) = best else { return id };
        if -score - parent <= 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x.get(i, f) <= thr);
        let left = self.grow_gradient(x, g, h, sh, l, depth + 1, p);
        let right = self.grow_gradient(x, g, h, sh, r, depth + 1, p);
        self.nodes[id] = TreeNode { split: Some((f, thr)), left, right, value: [weight, 0.0] };
        id
    }

    pub fn leaf(&self, row: &[f64]) -> &[f64; 2] {
        let mut k = 0;
        while let Some((f, thr)) = self.nodes[k].split {
            k = if row[f] <= thr { self.nodes[k].left } else { self.nodes[k].right };
        }
        &self.nodes[k].value
    }

    /// Majority class of the reached leaf; ties go to class 0.
    pub fn vote(&self, row: &[f64]) -> u8 {
        let v = self.leaf(row);
        u8::from(v[1] > v[0])
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, k: usize) -> usize {
            match t.nodes[k].split {
                None => 0,
                Some(_) => 1 + walk(t, t.nodes[k].left).max(walk(t, t.nodes[k].right)),
            }
        }
        walk(self, 0)
    }

    pub fn to_records(&self) -> Vec<TreeNodeRecord> {
        self.nodes
            .iter()
            .map(|n| match n.split {
                Some((f, thr)) => TreeNodeRecord { feature: f as u32, threshold: thr, left: n.left as u32, right: n.right as u32, value: n.value },
                None => TreeNodeRecord { feature: u32::MAX, threshold: 0.0, left: 0, right: 0, value: n.value },
            })
            .collect()
    }

    pub fn from_records(recs: &[TreeNodeRecord], d: usize) -> Option<Self> {
        let n = recs.len();
        if n == 0 {
            return None;
        }
        let mut nodes = Vec::with_capacity(n);
        for (k, r) in recs.iter().enumerate() {
            let split = if r.feature == u32::MAX {
                None
            } else {
                let (l, rt) = (r.left as usize, r.right as usize);
                // children always follow their parent, which also rules out cycles
                if r.feature as usize >= d || l <= k || rt <= k || l >= n || rt >= n {
                    return None;
                }
                Some((r.feature as usize, r.threshold))
            };
            nodes.push(TreeNode { split, left: r.left as usize, right: r.right as usize, value: r.value });
        }
        Some(Self { nodes })
    }
}

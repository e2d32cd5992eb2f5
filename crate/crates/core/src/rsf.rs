//! Random survival forest: bootstrap ensemble of survival trees grown with
//! the two-sample log-rank splitting rule, Nelson-Aalen estimates in the
//! leaves.
//!
//! Rows are put in a canonical order (by time, status, then covariates) before
//! any random draw, so the fit does not depend on input row order. Tree `i`
//! draws from a ChaCha8 stream seeded with `seed + i`.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{check_grid, PredictedCurve};
use crate::data::{Column, CovariateValue, Covariates, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::c_index;
use crate::nonparametric::{nelson_aalen, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsfOptions {
    pub n_trees: usize,
    /// Candidate covariates per node; `None` means ceil(sqrt(p)).
    pub mtry: Option<usize>,
    pub nodesize: usize,
    pub seed: u64,
}

impl Default for RsfOptions {
    fn default() -> Self {
        RsfOptions {
            n_trees: 200,
            mtry: None,
            nodesize: 15,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    /// Level labels for a categorical covariate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// Left when `x <= cut`.
    Threshold { feature: usize, cut: f64 },
    /// Left when the level code equals `level`.
    Level { feature: usize, level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { rule: SplitRule, left: usize, right: usize },
    Leaf { chf: StepFunction, size: usize, events: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// Canonical row indices drawn for this tree, with repeats.
    pub in_bag: Vec<usize>,
}

impl SurvivalTree {
    fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split { rule, left, right } => {
                    let go_left = match *rule {
                        SplitRule::Threshold { feature, cut } => x[feature] <= cut,
                        SplitRule::Level { feature, level } => x[feature] == level as f64,
                    };
                    k = if go_left { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    fn leaf_chf(&self, x: &[f64]) -> &StepFunction {
        match self.leaf_for(x) {
            Node::Leaf { chf, .. } => chf,
            Node::Split { .. } => unreachable!("descent ends at a leaf"),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestFit {
    pub features: Vec<Feature>,
    pub trees: Vec<SurvivalTree>,
    pub mtry: usize,
    pub nodesize: usize,
    pub seed: u64,
    /// Distinct event times of the training data.
    pub event_grid: Vec<f64>,
    /// Out-of-bag C-index with ensemble mortality as the risk score; `None`
    /// when no comparable out-of-bag pairs exist.
    pub oob_c_index: Option<f64>,
    pub cause: u32,
}

impl ForestFit {
    /// Numeric feature vector (categorical levels as codes).
    pub fn encode(&self, x: &Covariates) -> Result<Vec<f64>> {
        self.features
            .iter()
            .map(|f| match (x.get(&f.name), &f.levels) {
                (None, _) => Err(Error::MissingColumn(f.name.clone())),
                (Some(CovariateValue::Continuous(v)), None) => Ok(*v),
                (Some(CovariateValue::Level(l)), Some(levels)) => levels
                    .iter()
                    .position(|k| k == l)
                    .map(|p| p as f64)
                    .ok_or_else(|| Error::UnknownLevel {
                        column: f.name.clone(),
                        level: l.clone(),
                    }),
                (Some(CovariateValue::Continuous(v)), Some(levels)) => levels
                    .iter()
                    .position(|k| k.parse::<f64>().ok() == Some(*v))
                    .map(|p| p as f64)
                    .ok_or_else(|| Error::UnknownLevel {
                        column: f.name.clone(),
                        level: v.to_string(),
                    }),
                (Some(CovariateValue::Level(l)), None) => Err(Error::invalid(format!(
                    "covariate '{}' is continuous, got level '{l}'",
                    f.name
                ))),
            })
            .collect()
    }

    /// Ensemble cumulative hazard: the mean of the trees' leaf estimates.
    pub fn cumulative_hazard(&self, x: &Covariates, times: &[f64]) -> Result<Vec<f64>> {
        check_grid(times)?;
        let enc = self.encode(x)?;
        let mut sum = vec![0.0; times.len()];
        for tree in &self.trees {
            let chf = tree.leaf_chf(&enc);
            for (s, &t) in sum.iter_mut().zip(times) {
                *s += chf.eval(t);
            }
        }
        let k = self.trees.len() as f64;
        Ok(sum.into_iter().map(|s| s / k).collect())
    }

    pub fn predict_survival(&self, x: &Covariates, times: &[f64]) -> Result<PredictedCurve> {
        let h = self.cumulative_hazard(x, times)?;
        let last = self.event_grid.last().copied().unwrap_or(0.0);
        Ok(PredictedCurve {
            values: h.iter().map(|v| (-v).exp()).collect(),
            extrapolated: times.iter().map(|&t| t > last).collect(),
            clamped: Vec::new(),
        })
    }

    /// The forest restricted to tree `i`.
    pub fn single_tree(&self, i: usize) -> ForestFit {
        ForestFit {
            trees: vec![self.trees[i].clone()],
            ..self.clone()
        }
    }
}

/// Numeric view of the covariates in canonical row order.
struct FeatureMatrix {
    /// Column-major; categorical columns hold level codes.
    columns: Vec<Vec<f64>>,
    categorical: Vec<bool>,
    times: Vec<f64>,
    events: Vec<bool>,
}

fn canonical_order(data: &SurvivalDataset, names: &[String]) -> Result<Vec<usize>> {
    let cols = names
        .iter()
        .map(|n| data.column(n).ok_or_else(|| Error::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>>>()?;
    let (time, status) = (data.time(), data.status());
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| {
        time[a]
            .total_cmp(&time[b])
            .then(status[a].cmp(&status[b]))
            .then_with(|| {
                cols.iter()
                    .map(|c| match c {
                        Column::Continuous { values } => values[a].total_cmp(&values[b]),
                        Column::Categorical { levels, codes } => levels[codes[a]].cmp(&levels[codes[b]]),
                    })
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    Ok(order)
}

/// Fits a forest on the predictor and adjusters named by the dataset roles.
pub fn fit_rsf(data: &SurvivalDataset, options: &RsfOptions) -> Result<ForestFit> {
    let names = data.roles().covariate_names();
    let p = names.len();
    if options.n_trees < 1 {
        return Err(Error::invalid("nTrees must be at least 1"));
    }
    let mtry = options.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
    if mtry > p || mtry == 0 {
        return Err(Error::invalid(format!("mtry must lie in 1..={p}, got {mtry}")));
    }
    if options.nodesize < 1 {
        return Err(Error::invalid("nodesize must be at least 1"));
    }
    let all_events = data.events_of_interest();
    if all_events.iter().filter(|&&e| e).count() < 2 {
        return Err(Error::invalid("random survival forest needs at least 2 events"));
    }

    let order = canonical_order(data, &names)?;
    let mut features = Vec::with_capacity(p);
    let mut columns = Vec::with_capacity(p);
    let mut categorical = Vec::with_capacity(p);
    for name in &names {
        match data.column(name).expect("checked in canonical_order") {
            Column::Continuous { values } => {
                features.push(Feature {
                    name: name.clone(),
                    levels: None,
                });
                columns.push(order.iter().map(|&r| values[r]).collect());
                categorical.push(false);
            }
            Column::Categorical { levels, codes } => {
                features.push(Feature {
                    name: name.clone(),
                    levels: Some(levels.clone()),
                });
                columns.push(order.iter().map(|&r| codes[r] as f64).collect());
                categorical.push(true);
            }
        }
    }
    let m = FeatureMatrix {
        columns,
        categorical,
        times: order.iter().map(|&r| data.time()[r]).collect(),
        events: order.iter().map(|&r| all_events[r]).collect(),
    };
    let mut event_grid: Vec<f64> = m
        .times
        .iter()
        .zip(&m.events)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    event_grid.dedup();

    let trees = (0..options.n_trees)
        .into_par_iter()
        .map(|i| grow_tree(&m, mtry, options.nodesize, options.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let oob_c_index = oob_concordance(&m, &trees, &event_grid);
    Ok(ForestFit {
        features,
        trees,
        mtry,
        nodesize: options.nodesize,
        seed: options.seed,
        event_grid,
        oob_c_index,
        cause: data.roles().cause_of_interest,
    })
}

/// Mortality (sum of the CHF over the event grid) averaged over the trees for
/// which a row is out of bag.
fn oob_concordance(m: &FeatureMatrix, trees: &[SurvivalTree], grid: &[f64]) -> Option<f64> {
    let n = m.times.len();
    let per_tree: Vec<Vec<Option<f64>>> = trees
        .par_iter()
        .map(|tree| {
            let mut in_bag = vec![false; n];
            for &r in &tree.in_bag {
                in_bag[r] = true;
            }
            let mut row = vec![0.0; m.columns.len()];
            (0..n)
                .map(|i| {
                    if in_bag[i] {
                        return None;
                    }
                    for (v, c) in row.iter_mut().zip(&m.columns) {
                        *v = c[i];
                    }
                    Some(mortality(tree.leaf_chf(&row), grid))
                })
                .collect()
        })
        .collect();
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut scores = Vec::new();
    for i in 0..n {
        let (sum, count) = per_tree
            .iter()
            .filter_map(|t| t[i])
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count > 0 {
            times.push(m.times[i]);
            events.push(m.events[i]);
            scores.push(sum / count as f64);
        }
    }
    c_index(&times, &events, &scores).ok().map(|c| c.c_index)
}

fn mortality(chf: &StepFunction, grid: &[f64]) -> f64 {
    // sum_k H(g_k) = sum_j jump_j * #{k : g_k >= knot_j}
    let mut prev = 0.0;
    let mut total = 0.0;
    for (&knot, &v) in chf.knots().iter().zip(chf.values()) {
        let count = grid.len() - grid.partition_point(|&g| g < knot);
        total += (v - prev) * count as f64;
        prev = v;
    }
    total
}

fn grow_tree(m: &FeatureMatrix, mtry: usize, nodesize: usize, seed: u64) -> Result<SurvivalTree> {
    let n = m.times.len();
    let p = m.columns.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut nodes: Vec<Node> = Vec::new();
    // (node slot, samples); depth-first, left child first
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
    nodes.push(Node::Leaf {
        chf: StepFunction::constant(0.0),
        size: 0,
        events: 0,
    });
    stack.push((0, in_bag.clone()));
    while let Some((slot, samples)) = stack.pop() {
        let split = if samples.len() >= 2 * nodesize {
            let candidates = sample(&mut rng, p, mtry).into_vec();
            best_split(m, &samples, &candidates, nodesize)
        } else {
            None
        };
        match split {
            Some((rule, _)) => {
                let (left, right): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&r| match rule {
                    SplitRule::Threshold { feature, cut } => m.columns[feature][r] <= cut,
                    SplitRule::Level { feature, level } => m.columns[feature][r] == level as f64,
                });
                let l = nodes.len();
                nodes.push(Node::Leaf {
                    chf: StepFunction::constant(0.0),
                    size: 0,
                    events: 0,
                });
                nodes.push(Node::Leaf {
                    chf: StepFunction::constant(0.0),
                    size: 0,
                    events: 0,
                });
                nodes[slot] = Node::Split {
                    rule,
                    left: l,
                    right: l + 1,
                };
                stack.push((l + 1, right));
                stack.push((l, left));
            }
            None => {
                let times: Vec<f64> = samples.iter().map(|&r| m.times[r]).collect();
                let events: Vec<bool> = samples.iter().map(|&r| m.events[r]).collect();
                nodes[slot] = Node::Leaf {
                    chf: nelson_aalen(&times, &events)?,
                    size: samples.len(),
                    events: events.iter().filter(|&&e| e).count(),
                };
            }
        }
    }
    Ok(SurvivalTree { nodes, in_bag })
}

/// Node-level quantities for incremental log-rank statistics.
struct NodeRisk {
    /// Number of node event times <= each sample's time, by sample position.
    rank: Vec<usize>,
    /// Prefix sums over event times of d/Y, c/Y and c/Y^2 where
    /// c = d (Y - d) / (Y - 1).
    expected: Vec<f64>,
    var_linear: Vec<f64>,
    var_quadratic: Vec<f64>,
    n_event_times: usize,
}

impl NodeRisk {
    fn new(times: &[f64], events: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut event_times = Vec::new();
        let mut at_risk = Vec::new();
        let mut deaths = Vec::new();
        let n = times.len();
        let mut i = 0;
        while i < n {
            let t = times[order[i]];
            let mut j = i;
            let mut d = 0usize;
            while j < n && times[order[j]] == t {
                d += usize::from(events[order[j]]);
                j += 1;
            }
            if d > 0 {
                event_times.push(t);
                at_risk.push((n - i) as f64);
                deaths.push(d as f64);
            }
            i = j;
        }
        let k = event_times.len();
        let mut expected = vec![0.0; k + 1];
        let mut var_linear = vec![0.0; k + 1];
        let mut var_quadratic = vec![0.0; k + 1];
        for e in 0..k {
            let (y, d) = (at_risk[e], deaths[e]);
            let c = if y > 1.0 { d * (y - d) / (y - 1.0) } else { 0.0 };
            expected[e + 1] = expected[e] + d / y;
            var_linear[e + 1] = var_linear[e] + c / y;
            var_quadratic[e + 1] = var_quadratic[e] + c / (y * y);
        }
        let rank = times
            .iter()
            .map(|&t| event_times.partition_point(|&et| et <= t))
            .collect();
        NodeRisk {
            rank,
            expected,
            var_linear,
            var_quadratic,
            n_event_times: k,
        }
    }
}

/// Fenwick tree over f64 sums.
struct FenwickSum {
    tree: Vec<f64>,
}

impl FenwickSum {
    fn new(n: usize) -> Self {
        FenwickSum { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, i: usize, v: f64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, i: usize) -> f64 {
        let mut i = i;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Running log-rank numerator and variance for a growing left group.
struct LeftGroup<'a> {
    risk: &'a NodeRisk,
    observed: f64,
    expected: f64,
    var_linear: f64,
    var_quadratic: f64,
    weighted: FenwickSum,
    counts: FenwickSum,
    size: usize,
    events: usize,
}

impl<'a> LeftGroup<'a> {
    fn new(risk: &'a NodeRisk) -> Self {
        LeftGroup {
            risk,
            observed: 0.0,
            expected: 0.0,
            var_linear: 0.0,
            var_quadratic: 0.0,
            weighted: FenwickSum::new(risk.n_event_times + 1),
            counts: FenwickSum::new(risk.n_event_times + 1),
            size: 0,
            events: 0,
        }
    }

    fn add(&mut self, pos: usize, event: bool) {
        let r = self.risk;
        let k = r.rank[pos];
        let bk = r.var_quadratic[k];
        // sum over event times t <= T of b(t) * Y1(t) before adding
        let current = self.weighted.prefix(k + 1) + bk * (self.counts.prefix(self.risk.n_event_times + 1) - self.counts.prefix(k + 1));
        self.var_quadratic += 2.0 * current + bk;
        self.var_linear += r.var_linear[k];
        self.expected += r.expected[k];
        self.observed += f64::from(u8::from(event));
        self.weighted.add(k, bk);
        self.counts.add(k, 1.0);
        self.size += 1;
        self.events += usize::from(event);
    }

    fn statistic(&self) -> Option<f64> {
        let v = self.var_linear - self.var_quadratic;
        let scale = self.var_linear.abs().max(1.0);
        if v > 1e-12 * scale {
            let u = self.observed - self.expected;
            Some(u * u / v)
        } else {
            None
        }
    }
}

/// Log-rank statistics for every admissible threshold of one continuous
/// covariate within a node: `(cut, statistic)` pairs in ascending cut order.
/// Children must hold at least `nodesize` samples and one event each.
pub fn threshold_statistics(times: &[f64], events: &[bool], x: &[f64], nodesize: usize) -> Vec<(f64, f64)> {
    let risk = NodeRisk::new(times, events);
    let total_events = events.iter().filter(|&&e| e).count();
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut left = LeftGroup::new(&risk);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let v = x[order[i]];
        let mut j = i;
        while j < n && x[order[j]] == v {
            left.add(order[j], events[order[j]]);
            j += 1;
        }
        if j == n {
            break;
        }
        let admissible = left.size >= nodesize.max(1)
            && n - left.size >= nodesize.max(1)
            && left.events >= 1
            && total_events - left.events >= 1;
        if admissible {
            if let Some(s) = left.statistic() {
                out.push((0.5 * (v + x[order[j]]), s));
            }
        }
        i = j;
    }
    out
}

/// One-vs-rest log-rank statistics for each level code present in the node.
pub fn level_statistics(times: &[f64], events: &[bool], codes: &[f64], nodesize: usize) -> Vec<(usize, f64)> {
    let risk = NodeRisk::new(times, events);
    let total_events = events.iter().filter(|&&e| e).count();
    let n = times.len();
    let mut present: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
    present.sort_unstable();
    present.dedup();
    let mut out = Vec::new();
    for level in present {
        let mut left = LeftGroup::new(&risk);
        for pos in (0..n).filter(|&p| codes[p] as usize == level) {
            left.add(pos, events[pos]);
        }
        let admissible = left.size >= nodesize.max(1)
            && n - left.size >= nodesize.max(1)
            && left.events >= 1
            && total_events - left.events >= 1;
        if admissible {
            if let Some(s) = left.statistic() {
                out.push((level, s));
            }
        }
    }
    out
}

fn best_split(m: &FeatureMatrix, samples: &[usize], candidates: &[usize], nodesize: usize) -> Option<(SplitRule, f64)> {
    let times: Vec<f64> = samples.iter().map(|&r| m.times[r]).collect();
    let events: Vec<bool> = samples.iter().map(|&r| m.events[r]).collect();
    let mut best: Option<(SplitRule, f64)> = None;
    for &f in candidates {
        let x: Vec<f64> = samples.iter().map(|&r| m.columns[f][r]).collect();
        let found: Vec<(SplitRule, f64)> = if m.categorical[f] {
            level_statistics(&times, &events, &x, nodesize)
                .into_iter()
                .map(|(level, s)| (SplitRule::Level { feature: f, level }, s))
                .collect()
        } else {
            threshold_statistics(&times, &events, &x, nodesize)
                .into_iter()
                .map(|(cut, s)| (SplitRule::Threshold { feature: f, cut }, s))
                .collect()
        };
        for (rule, s) in found {
            if s > 0.0 && best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((rule, s));
            }
        }
    }
    best
}

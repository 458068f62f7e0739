//! Capacity-constrained assignment of instances to decision-makers.
//!
//! Column 0 of every problem is the classifier, columns `1..=J` the experts.
//! [`solve`] maximises the summed correctness probability exactly. It works
//! on integer costs `-round(p · COST_SCALE)` and inserts instances one at a
//! time, each along a shortest augmenting path in the residual graph
//! condensed onto decision-maker nodes (an edge `l → m` stands for the
//! cheapest instance currently in `l` to move to `m`). Among optimal
//! assignments the lexicographically smallest one (instances in row order,
//! lowest decision-maker first) is returned, found by walking the tight edges
//! of an optimal dual.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::data_model::{CapacityMode, CapacitySpec, Dataset, Matrix};
use crate::error::{ensure_len, Error, Result};
use crate::hem::Hem;
use crate::rng::Rng;
use crate::scorer::Scorer;

/// Probabilities are scaled by this factor and rounded to integer costs.
pub const COST_SCALE: f64 = 1e9;

/// Largest batch [`solve_exhaustive`] accepts.
pub const EXHAUSTIVE_MAX_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    /// `n × (J + 1)` correctness probabilities.
    pub prob: Matrix,
    pub capacities: Vec<i64>,
    pub mode: CapacityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Decision-maker index per row.
    pub assignment: Vec<usize>,
    /// `Σ_i prob[i, a_i]`, summed in row order.
    pub objective: f64,
    pub optimal: bool,
}

impl AssignmentProblem {
    pub fn new(prob: Matrix, capacities: Vec<i64>, mode: CapacityMode) -> Result<Self> {
        let p = Self { prob, capacities, mode };
        p.validate()?;
        Ok(p)
    }

    pub fn n_rows(&self) -> usize {
        self.prob.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.prob.cols()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_len("capacities vs decision-makers", self.capacities.len(), self.n_cols())?;
        if self.n_cols() == 0 {
            return Err(Error::invalid("assignment needs at least one decision-maker"));
        }
        for r in self.prob.iter_rows() {
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("correctness probabilities must lie in [0, 1]"));
            }
        }
        if let Some(c) = self.capacities.iter().find(|&&c| c < 0) {
            return Err(Error::Infeasible(format!("negative capacity {c}")));
        }
        let total: i64 = self.capacities.iter().sum();
        let n = self.n_rows() as i64;
        match self.mode {
            CapacityMode::Equality if total != n => Err(Error::Infeasible(format!(
                "capacities sum to {total} but the batch has {n} instances"
            ))),
            CapacityMode::UpperBound if total < n => Err(Error::Infeasible(format!(
                "capacities sum to {total}, fewer than the {n} instances"
            ))),
            _ => Ok(()),
        }
    }

    pub fn objective(&self, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(i, &k)| self.prob.get(i, k))
            .sum()
    }

    /// Confirms row exclusivity (one column per row, in range) and the
    /// column-count constraints.
    pub fn check(&self, assignment: &[usize]) -> Result<()> {
        ensure_len("assignment vs rows", assignment.len(), self.n_rows())?;
        let mut counts = vec![0i64; self.n_cols()];
        for &k in assignment {
            if k >= self.n_cols() {
                return Err(Error::invalid(format!("decision-maker {k} out of range")));
            }
            counts[k] += 1;
        }
        for (k, (&c, &cap)) in counts.iter().zip(&self.capacities).enumerate() {
            let ok = match self.mode {
                CapacityMode::Equality => c == cap,
                CapacityMode::UpperBound => c <= cap,
            };
            if !ok {
                return Err(Error::CapacityViolation {
                    batch: 0,
                    reason: format!("decision-maker {k} received {c}, capacity {cap}"),
                });
            }
        }
        Ok(())
    }

    fn integer_costs(&self) -> Vec<i64> {
        let mut c = Vec::with_capacity(self.n_rows() * self.n_cols());
        for r in self.prob.iter_rows() {
            c.extend(r.iter().map(|&p| -(p * COST_SCALE).round() as i64));
        }
        c
    }
}

/// Exact solve; see the module docs.
pub fn solve(problem: &AssignmentProblem) -> Result<AssignmentSolution> {
    problem.validate()?;
    let n = problem.n_rows();
    let k = problem.n_cols();
    let cost = problem.integer_costs();
    let mut state = FlowState::new(n, k, &cost, &problem.capacities);
    for i in 0..n {
        state.insert(i)?;
    }
    let mut assignment = state.assign.clone();
    let potentials = state.potentials(problem.mode)?;
    canonicalize(&mut assignment, &cost, k, &potentials, &problem.capacities);
    problem.check(&assignment)?;
    Ok(AssignmentSolution {
        objective: problem.objective(&assignment),
        assignment,
        optimal: true,
    })
}

struct FlowState<'a> {
    k: usize,
    cost: &'a [i64],
    cap: &'a [i64],
    assign: Vec<usize>,
    count: Vec<i64>,
    /// Per ordered pair `(l, m)`: `(C(i,m) − C(i,l), i)` for instances in `l`.
    /// Entries go stale when an instance leaves `l`; they are dropped lazily.
    moves: Vec<BinaryHeap<Reverse<(i64, usize)>>>,
}

const UNASSIGNED: usize = usize::MAX;

impl<'a> FlowState<'a> {
    fn new(n: usize, k: usize, cost: &'a [i64], cap: &'a [i64]) -> Self {
        Self {
            k,
            cost,
            cap,
            assign: vec![UNASSIGNED; n],
            count: vec![0; k],
            moves: (0..k * k).map(|_| BinaryHeap::new()).collect(),
        }
    }

    fn c(&self, i: usize, col: usize) -> i64 {
        self.cost[i * self.k + col]
    }

    fn place(&mut self, i: usize, col: usize) {
        if self.assign[i] != UNASSIGNED {
            self.count[self.assign[i]] -= 1;
        }
        self.assign[i] = col;
        self.count[col] += 1;
        for m in (0..self.k).filter(|&m| m != col) {
            let key = self.c(i, m) - self.c(i, col);
            self.moves[col * self.k + m].push(Reverse((key, i)));
        }
    }

    /// Cheapest move out of `l` into `m` with its instance.
    fn best_move(&mut self, l: usize, m: usize) -> Option<(i64, usize)> {
        let heap = &mut self.moves[l * self.k + m];
        while let Some(&Reverse((key, i))) = heap.peek() {
            if self.assign[i] == l {
                return Some((key, i));
            }
            heap.pop();
        }
        None
    }

    fn edge_weights(&mut self) -> Vec<Option<(i64, usize)>> {
        let k = self.k;
        let mut w = vec![None; k * k];
        for l in 0..k {
            if self.count[l] == 0 {
                continue;
            }
            for m in (0..k).filter(|&m| m != l) {
                w[l * k + m] = self.best_move(l, m);
            }
        }
        w
    }

    /// Adds row `i` along a shortest augmenting path.
    fn insert(&mut self, i: usize) -> Result<()> {
        let k = self.k;
        let w = self.edge_weights();
        let mut dist: Vec<i64> = (0..k).map(|col| self.c(i, col)).collect();
        let mut pred = vec![UNASSIGNED; k];
        for _ in 0..k {
            let mut changed = false;
            for l in 0..k {
                for m in 0..k {
                    if let Some((wt, _)) = w[l * k + m] {
                        if dist[l] + wt < dist[m] {
                            dist[m] = dist[l] + wt;
                            pred[m] = l;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let end = (0..k)
            .filter(|&col| self.count[col] < self.cap[col])
            .min_by_key(|&col| (dist[col], col))
            .ok_or_else(|| Error::Infeasible("no decision-maker has spare capacity".into()))?;
        let mut path = Vec::new();
        let mut at = end;
        let mut guard = 0;
        while pred[at] != UNASSIGNED {
            let from = pred[at];
            let (_, moved) = w[from * k + at].expect("path edge exists");
            path.push((moved, at));
            at = from;
            guard += 1;
            if guard > k {
                return Err(Error::invalid("assignment residual graph has a negative cycle"));
            }
        }
        for (moved, to) in path {
            self.place(moved, to);
        }
        self.place(i, at);
        Ok(())
    }

    /// Column potentials `p` with `C(i, a_i) − p_{a_i} = min_m C(i, m) − p_m`
    /// for every row; in upper-bound mode `p ≤ 0` and `p = 0` on columns with
    /// spare capacity.
    fn potentials(&mut self, mode: CapacityMode) -> Result<Vec<i64>> {
        let k = self.k;
        let w = self.edge_weights();
        // node k is the root
        let mut p = vec![0i64; k + 1];
        for _ in 0..=k + 1 {
            let mut changed = false;
            for l in 0..k {
                for m in 0..k {
                    if let Some((wt, _)) = w[l * k + m] {
                        if p[l] + wt < p[m] {
                            p[m] = p[l] + wt;
                            changed = true;
                        }
                    }
                }
                if mode == CapacityMode::UpperBound && self.count[l] < self.cap[l] && p[l] < p[k] {
                    p[k] = p[l];
                    changed = true;
                }
                if p[k] < p[l] {
                    p[l] = p[k];
                    changed = true;
                }
            }
            if !changed {
                let root = p[k];
                return Ok(p[..k].iter().map(|v| v - root).collect());
            }
        }
        Err(Error::invalid("dual potentials did not converge"))
    }
}

/// Rewrites an optimal assignment into the lexicographically smallest
/// optimal one. Optimal assignments are exactly those on tight edges that
/// keep columns with negative potential full.
fn canonicalize(assign: &mut [usize], cost: &[i64], k: usize, p: &[i64], cap: &[i64]) {
    let n = assign.len();
    let reduced = |i: usize, col: usize| cost[i * k + col] - p[col];
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let best = (0..k).map(|col| reduced(i, col)).min().unwrap();
            (0..k).filter(|&col| reduced(i, col) == best).collect()
        })
        .collect();
    let mut count = vec![0i64; k];
    // unfixed rows in column l that may move to m
    let mut movable: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k * k];
    for i in 0..n {
        count[assign[i]] += 1;
        for &m in tight[i].iter().filter(|&&m| m != assign[i]) {
            movable[assign[i] * k + m].insert(i);
        }
    }
    // node k stands for "absorb here / release from a non-binding column"
    let root = k;
    for i in 0..n {
        let from = assign[i];
        for &m in tight[i].iter().filter(|&&m| m != from) {
            movable[from * k + m].remove(&i);
        }
        for &target in tight[i].iter().filter(|&&c| c < from) {
            // BFS for a column path target → … → from
            let mut pred = vec![UNASSIGNED; k + 1];
            let mut seen = vec![false; k + 1];
            let mut queue = VecDeque::from([target]);
            seen[target] = true;
            while let Some(l) = queue.pop_front() {
                if l == from {
                    break;
                }
                let mut next: Vec<usize> = Vec::new();
                if l == root {
                    next.extend((0..k).filter(|&z| p[z] == 0));
                } else {
                    next.extend((0..k).filter(|&m| m != l && !movable[l * k + m].is_empty()));
                    if count[l] < cap[l] {
                        next.push(root);
                    }
                }
                for m in next {
                    if !seen[m] {
                        seen[m] = true;
                        pred[m] = l;
                        queue.push_back(m);
                    }
                }
            }
            if !seen[from] {
                continue;
            }
            let mut edges = Vec::new();
            let mut at = from;
            while at != target {
                edges.push((pred[at], at));
                at = pred[at];
            }
            for (l, m) in edges {
                if l == root || m == root {
                    continue;
                }
                let moved = *movable[l * k + m].iter().next().unwrap();
                for &t in tight[moved].iter().filter(|&&t| t != l) {
                    movable[l * k + t].remove(&moved);
                }
                assign[moved] = m;
                count[l] -= 1;
                count[m] += 1;
                for &t in tight[moved].iter().filter(|&&t| t != m) {
                    movable[m * k + t].insert(moved);
                }
            }
            assign[i] = target;
            count[from] -= 1;
            count[target] += 1;
            break;
        }
    }
}

/// Enumerates every assignment; the first maximum in lexicographic order wins.
pub fn solve_exhaustive(problem: &AssignmentProblem) -> Result<AssignmentSolution> {
    problem.validate()?;
    let n = problem.n_rows();
    let k = problem.n_cols();
    if n > EXHAUSTIVE_MAX_ROWS {
        return Err(Error::invalid(format!(
            "exhaustive search is limited to {EXHAUSTIVE_MAX_ROWS} rows, got {n}"
        )));
    }
    let mut current = vec![0usize; n];
    let mut counts = vec![0i64; k];
    let mut best: Option<(f64, Vec<usize>)> = None;
    enumerate(problem, 0, &mut current, &mut counts, &mut best);
    let (objective, assignment) =
        best.ok_or_else(|| Error::Infeasible("no assignment satisfies the capacities".into()))?;
    Ok(AssignmentSolution {
        assignment,
        objective,
        optimal: true,
    })
}

fn enumerate(
    problem: &AssignmentProblem,
    row: usize,
    current: &mut Vec<usize>,
    counts: &mut Vec<i64>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if row == current.len() {
        if problem.check(current).is_ok() {
            let obj = problem.objective(current);
            if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                *best = Some((obj, current.clone()));
            }
        }
        return;
    }
    for col in 0..problem.n_cols() {
        if counts[col] < problem.capacities[col] {
            counts[col] += 1;
            current[row] = col;
            enumerate(problem, row + 1, current, counts, best);
            counts[col] -= 1;
        }
    }
}

/// `n × (J + 1)` matrix: column 0 is `max(p, 1 − p)` of the classifier,
/// column `j` the HEM estimate for expert `j`.
pub fn correctness_matrix(classifier: &Scorer, hem: &Hem, batch: &Dataset, model_scores: &[f64]) -> Result<Matrix> {
    let experts = hem.correctness_matrix(batch, model_scores)?;
    let mut out = Matrix::zeros(batch.len(), hem.n_experts + 1);
    for (i, inst) in batch.iter().enumerate() {
        let p = classifier.probability(&inst.features);
        out.set(i, 0, p.max(1.0 - p));
        for j in 0..hem.n_experts {
            out.set(i, j + 1, experts.get(i, j));
        }
    }
    Ok(out)
}

/// Solves every batch of `spec` independently. Within a batch, rows are
/// ordered by instance id for tie-breaking. Returns the per-batch solutions
/// and the decision-maker of every instance in dataset order.
pub fn assign_batches(
    prob: &Matrix,
    dataset: &Dataset,
    spec: &CapacitySpec,
) -> Result<(Vec<AssignmentSolution>, Vec<usize>)> {
    ensure_len("probability rows vs instances", prob.rows(), dataset.len())?;
    let batches = spec.batches(dataset)?;
    let mut decision = vec![0usize; dataset.len()];
    let mut solutions = Vec::with_capacity(batches.len());
    for (b, mut members) in batches.into_iter().enumerate() {
        members.sort_by_key(|&pos| dataset.get(pos).id);
        let problem = AssignmentProblem {
            prob: prob.select_rows(&members),
            capacities: spec.capacities[b].clone(),
            mode: spec.mode,
        };
        let sol = solve(&problem).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!("batch {b}: {msg}")),
            other => other,
        })?;
        for (&pos, &a) in members.iter().zip(&sol.assignment) {
            decision[pos] = a;
        }
        solutions.push(sol);
    }
    Ok((solutions, decision))
}

/// Final decisions: the classifier's class for column 0, otherwise the
/// assigned expert's decision (`expert_decisions[i][j − 1]`).
pub fn final_predictions(decision_makers: &[usize], classifier_preds: &[bool], expert_decisions: &[Vec<bool>]) -> Result<Vec<bool>> {
    ensure_len("assignment vs classifier predictions", decision_makers.len(), classifier_preds.len())?;
    ensure_len("assignment vs expert decisions", decision_makers.len(), expert_decisions.len())?;
    decision_makers
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k == 0 {
                Ok(classifier_preds[i])
            } else {
                expert_decisions[i]
                    .get(k - 1)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no decision of expert {k} for row {i}")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralOutcome {
    pub batches: Vec<AssignmentSolution>,
    /// Decision-maker per instance, in dataset order.
    pub decision_makers: Vec<usize>,
    pub predictions: Vec<bool>,
}

/// Builds the correctness matrix, solves every batch and resolves the final
/// predictions.
pub fn run_deferral(
    classifier: &Scorer,
    hem: &Hem,
    dataset: &Dataset,
    model_scores: &[f64],
    spec: &CapacitySpec,
    expert_decisions: &[Vec<bool>],
) -> Result<DeferralOutcome> {
    let prob = correctness_matrix(classifier, hem, dataset, model_scores)?;
    let (batches, decision_makers) = assign_batches(&prob, dataset, spec)?;
    let classifier_preds: Vec<bool> = dataset.iter().map(|i| classifier.predict_class(&i.features)).collect();
    let predictions = final_predictions(&decision_makers, &classifier_preds, expert_decisions)?;
    Ok(DeferralOutcome {
        batches,
        decision_makers,
        predictions,
    })
}

/// Equal split of `n` over `n_dm` decision-makers; the remainder goes to
/// the lowest indices.
pub fn uniform_capacities(n: usize, n_dm: usize) -> Vec<i64> {
    (0..n_dm)
        .map(|k| (n / n_dm + usize::from(k < n % n_dm)) as i64)
        .collect()
}

/// Per decision-maker `round(N(n / n_dm, n / (5 n_dm)))` clipped at zero,
/// then re-totalled to `n` through the largest column.
pub fn sample_capacities(n: usize, n_dm: usize, rng: &mut Rng) -> Vec<i64> {
    use rand_distr::{Distribution, Normal};
    let mean = n as f64 / n_dm as f64;
    let normal = Normal::new(mean, mean / 5.0).expect("finite parameters");
    let mut caps: Vec<i64> = (0..n_dm)
        .map(|_| normal.sample(rng).round().max(0.0) as i64)
        .collect();
    let mut residual = n as i64 - caps.iter().sum::<i64>();
    while residual != 0 {
        let big = (0..n_dm).max_by_key(|&k| (caps[k], Reverse(k))).unwrap();
        let delta = residual.max(-caps[big]);
        caps[big] += delta;
        residual -= delta;
    }
    caps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn problem(rows: &[&[f64]], caps: &[i64], mode: CapacityMode) -> AssignmentProblem {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        AssignmentProblem::new(Matrix::from_rows(&rows), caps.to_vec(), mode).unwrap()
    }

    #[test]
    fn three_by_two_example() {
        let p = problem(&[&[0.9, 0.6], &[0.8, 0.7], &[0.2, 0.5]], &[2, 1], CapacityMode::Equality);
        let s = solve(&p).unwrap();
        assert_eq!(s.assignment, vec![0, 0, 1]);
        assert!((s.objective - 2.2).abs() < 1e-12);
        assert_eq!(solve_exhaustive(&p).unwrap(), s);
    }

    #[test]
    fn single_decision_maker_takes_all() {
        let p = problem(&[&[0.3], &[0.9], &[0.4]], &[3], CapacityMode::Equality);
        let s = solve(&p).unwrap();
        assert_eq!(s.assignment, vec![0, 0, 0]);
        assert_eq!(s.objective, 0.3 + 0.9 + 0.4);
    }

    #[test]
    fn ties_give_smallest_assignment() {
        let rows: Vec<&[f64]> = vec![&[0.7, 0.7, 0.7]; 5];
        let p = problem(&rows, &[1, 2, 2], CapacityMode::Equality);
        let s = solve(&p).unwrap();
        assert_eq!(s.assignment, vec![0, 1, 1, 2, 2]);
        assert!((s.objective - 3.5).abs() < 1e-12);
        let ub = problem(&rows, &[3, 3, 3], CapacityMode::UpperBound);
        assert_eq!(solve(&ub).unwrap().assignment, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn infeasible_capacities() {
        let m = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(matches!(
            AssignmentProblem::new(m.clone(), vec![1, 0], CapacityMode::Equality),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            AssignmentProblem::new(m, vec![1, 0], CapacityMode::UpperBound),
            Err(Error::Infeasible(_))
        ));
    }

    fn random_problem(rng: &mut crate::rng::Rng, mode: CapacityMode) -> AssignmentProblem {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let mut m = Matrix::zeros(n, k);
        for r in 0..n {
            for c in 0..k {
                // coarse grid to provoke ties
                let v = if rng.random::<bool>() {
                    (rng.random::<f64>() * 4.0).round() / 4.0
                } else {
                    rng.random::<f64>()
                };
                m.set(r, c, v);
            }
        }
        let extra = if mode == CapacityMode::UpperBound { rng.random_range(0..=3) } else { 0 };
        let mut caps = vec![0i64; k];
        for _ in 0..n + extra {
            caps[rng.random_range(0..k)] += 1;
        }
        AssignmentProblem::new(m, caps, mode).unwrap()
    }

    #[test]
    fn matches_enumeration_and_lexicographic_tie_break() {
        let mut rng = rng::from_seed(99);
        for t in 0..400 {
            let mode = if t % 2 == 0 { CapacityMode::Equality } else { CapacityMode::UpperBound };
            let p = random_problem(&mut rng, mode);
            let fast = solve(&p).unwrap();
            let slow = solve_exhaustive(&p).unwrap();
            assert_eq!(fast.objective, slow.objective, "{p:?}");
            p.check(&fast.assignment).unwrap();
        }
    }

    #[test]
    fn lexicographic_on_exact_ties() {
        // quarter-grid probabilities are exact in binary, so float ties are real ties
        let mut rng = rng::from_seed(5);
        for t in 0..300 {
            let n = rng.random_range(1..=7);
            let k = rng.random_range(1..=4);
            let mut m = Matrix::zeros(n, k);
            for r in 0..n {
                for c in 0..k {
                    m.set(r, c, rng.random_range(0..=4) as f64 / 4.0);
                }
            }
            let mode = if t % 2 == 0 { CapacityMode::Equality } else { CapacityMode::UpperBound };
            let extra = if mode == CapacityMode::UpperBound { 2 } else { 0 };
            let mut caps = vec![0i64; k];
            for _ in 0..n + extra {
                caps[rng.random_range(0..k)] += 1;
            }
            let p = AssignmentProblem::new(m, caps, mode).unwrap();
            assert_eq!(solve(&p).unwrap(), solve_exhaustive(&p).unwrap(), "{p:?}");
        }
    }

    #[test]
    fn relaxing_to_upper_bound_never_hurts() {
        let mut rng = rng::from_seed(8);
        for _ in 0..200 {
            let p = random_problem(&mut rng, CapacityMode::Equality);
            let relaxed = AssignmentProblem { mode: CapacityMode::UpperBound, ..p.clone() };
            assert!(solve(&relaxed).unwrap().objective >= solve(&p).unwrap().objective);
        }
    }

    #[test]
    fn larger_problem_matches_lp_bound_structure() {
        // with ample capacity every row takes its best column
        let mut rng = rng::from_seed(3);
        let n = 300;
        let mut m = Matrix::zeros(n, 5);
        for r in 0..n {
            for c in 0..5 {
                m.set(r, c, rng.random::<f64>());
            }
        }
        let p = AssignmentProblem::new(m.clone(), vec![n as i64; 5], CapacityMode::UpperBound).unwrap();
        let s = solve(&p).unwrap();
        for (i, &a) in s.assignment.iter().enumerate() {
            let best = (0..5).map(|c| m.get(i, c)).fold(f64::MIN, f64::max);
            assert_eq!(m.get(i, a), best);
        }
    }

    #[test]
    fn capacity_sampling_totals() {
        let mut rng = rng::from_seed(1);
        for n in [7usize, 100, 4321] {
            let caps = sample_capacities(n, 10, &mut rng);
            assert_eq!(caps.iter().sum::<i64>(), n as i64);
            assert!(caps.iter().all(|&c| c >= 0));
        }
        assert_eq!(uniform_capacities(23, 10), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn final_prediction_routing() {
        let preds = final_predictions(&[0, 2, 1], &[true, false, false], &[vec![false, false], vec![true, true], vec![true, false]]).unwrap();
        assert_eq!(preds, vec![true, true, true]);
    }

    proptest! {
        #[test]
        fn scaling_keeps_the_assignment(seed in any::<u64>(), kappa in 0.05f64..1.0) {
            let mut rng = rng::from_seed(seed);
            let p = random_problem(&mut rng, CapacityMode::Equality);
            let mut scaled = p.prob.clone();
            for r in 0..scaled.rows() {
                for c in 0..scaled.cols() {
                    scaled.set(r, c, p.prob.get(r, c) * kappa);
                }
            }
            let q = AssignmentProblem { prob: scaled, ..p.clone() };
            let a = solve(&p).unwrap().assignment;
            let b = solve(&q).unwrap().assignment;
            // integer rounding may merge near-ties; the objective must still be optimal
            let ob = p.objective(&b);
            prop_assert!(a == b || ob == p.objective(&a));
        }
    }
}

//! Tree builder random walk dynamics.
//!
//! At every step the walker attaches a random number of leaves (drawn from a
//! [`LeafLaw`]) to the vertex it occupies, then jumps to a uniformly chosen
//! neighbour in the enlarged tree. Trees live in a flat arena indexed by
//! vertex id; children of each vertex occupy one contiguous block of a shared
//! pool that is reallocated with doubling capacity when full.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Bernoulli;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parent sentinel stored for the root.
pub const NO_PARENT: u32 = u32::MAX;

/// Default ceiling on the memory a single recorded trajectory may use.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

const PMF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafKind {
    Bernoulli(f64),
    /// Finite pmf as `(count, mass)` pairs.
    General(Vec<(u32, f64)>),
}

/// Distribution of the number of leaves attached per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafLaw {
    kind: LeafKind,
    kappa: f64,
}

impl LeafLaw {
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidLaw(format!("p = {p} is not a probability")));
        }
        Ok(Self {
            kind: LeafKind::Bernoulli(p),
            kappa: p,
        })
    }

    /// Builds a law from `(count, mass)` pairs. Repeated counts are merged.
    pub fn general(pmf: Vec<(u32, f64)>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidLaw("empty pmf".into()));
        }
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(pmf.len());
        for (count, mass) in pmf {
            if !(0.0..=1.0).contains(&mass) || mass.is_nan() {
                return Err(Error::InvalidLaw(format!("mass {mass} at count {count}")));
            }
            match merged.iter_mut().find(|(c, _)| *c == count) {
                Some(entry) => entry.1 += mass,
                None => merged.push((count, mass)),
            }
        }
        merged.sort_by_key(|&(c, _)| c);
        let total: f64 = merged.iter().map(|&(_, m)| m).sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidLaw(format!("masses sum to {total}, not 1")));
        }
        let kappa = merged
            .iter()
            .filter(|&&(c, _)| c >= 1)
            .map(|&(_, m)| m)
            .sum();
        Ok(Self {
            kind: LeafKind::General(merged),
            kappa,
        })
    }

    /// The point mass at zero: the tree never grows.
    pub fn dirac_zero() -> Self {
        Self {
            kind: LeafKind::General(vec![(0, 1.0)]),
            kappa: 0.0,
        }
    }

    /// Parses either a Bernoulli parameter (`"0.5"`) or a pmf list
    /// (`"0:0.5,2:0.5"`). Errors name the offending token.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if !text.contains(':') {
            let p: f64 = text
                .parse()
                .map_err(|_| Error::InvalidLaw(format!("bad token `{text}`")))?;
            return Self::bernoulli(p);
        }
        let mut pmf = Vec::new();
        for token in text.split(',') {
            let token = token.trim();
            let (count, mass) = token
                .split_once(':')
                .ok_or_else(|| Error::InvalidLaw(format!("bad token `{token}`")))?;
            let count: u32 = count
                .trim()
                .parse()
                .map_err(|_| Error::InvalidLaw(format!("bad count in token `{token}`")))?;
            let mass: f64 = mass
                .trim()
                .parse()
                .map_err(|_| Error::InvalidLaw(format!("bad mass in token `{token}`")))?;
            pmf.push((count, mass));
        }
        Self::general(pmf)
    }

    pub fn kind(&self) -> &LeafKind {
        &self.kind
    }

    /// Mass placed on adding at least one leaf.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_degenerate(&self) -> bool {
        self.kappa == 0.0
    }

    pub fn bernoulli_p(&self) -> Option<f64> {
        match self.kind {
            LeafKind::Bernoulli(p) => Some(p),
            LeafKind::General(_) => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            LeafKind::Bernoulli(p) => *p,
            LeafKind::General(pmf) => pmf.iter().map(|&(c, m)| c as f64 * m).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match &self.kind {
            LeafKind::Bernoulli(p) => p * (1.0 - p),
            LeafKind::General(pmf) => {
                let mean = self.mean();
                pmf.iter()
                    .map(|&(c, m)| m * (c as f64 - mean).powi(2))
                    .sum()
            }
        }
    }

    pub fn sampler(&self) -> LeafSampler {
        match &self.kind {
            LeafKind::Bernoulli(p) if *p == 0.0 => LeafSampler::Zero,
            LeafKind::Bernoulli(p) => {
                LeafSampler::Coin(Bernoulli::new(*p).expect("validated probability"))
            }
            LeafKind::General(pmf) => {
                let positive: Vec<&(u32, f64)> = pmf.iter().filter(|(_, m)| *m > 0.0).collect();
                if positive.len() == 1 {
                    return match positive[0].0 {
                        0 => LeafSampler::Zero,
                        c => LeafSampler::Constant(c),
                    };
                }
                let counts = positive.iter().map(|&&(c, _)| c).collect();
                let index =
                    WeightedIndex::new(positive.iter().map(|&&(_, m)| m)).expect("validated pmf");
                LeafSampler::Table { index, counts }
            }
        }
    }
}

impl fmt::Display for LeafLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LeafKind::Bernoulli(p) => write!(f, "{p}"),
            LeafKind::General(pmf) => {
                let parts: Vec<String> = pmf.iter().map(|(c, m)| format!("{c}:{m}")).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Pre-built sampler for a [`LeafLaw`].
#[derive(Debug, Clone)]
pub enum LeafSampler {
    Zero,
    Constant(u32),
    Coin(Bernoulli),
    Table {
        index: WeightedIndex<f64>,
        counts: Vec<u32>,
    },
}

impl LeafSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            LeafSampler::Zero => 0,
            LeafSampler::Constant(c) => *c,
            LeafSampler::Coin(coin) => coin.sample(rng) as u32,
            LeafSampler::Table { index, counts } => counts[index.sample(rng)],
        }
    }
}

/// Seed pair identifying one replica's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub replica_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        Self {
            master_seed,
            replica_index,
        }
    }

    /// ChaCha8 keyed by the master seed, one stream per replica.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replica_index);
        rng
    }
}

/// Rooted tree stored as a flat arena.
#[derive(Debug, Clone)]
pub struct GrowingTree {
    root: u32,
    parent: Vec<u32>,
    depth: Vec<u32>,
    degree: Vec<u32>,
    child_start: Vec<u32>,
    child_len: Vec<u32>,
    child_cap: Vec<u32>,
    pool: Vec<u32>,
    height: u32,
}

impl GrowingTree {
    fn with_capacity(vertices: usize) -> Self {
        Self {
            root: 0,
            parent: Vec::with_capacity(vertices),
            depth: Vec::with_capacity(vertices),
            degree: Vec::with_capacity(vertices),
            child_start: Vec::with_capacity(vertices),
            child_len: Vec::with_capacity(vertices),
            child_cap: Vec::with_capacity(vertices),
            pool: Vec::with_capacity(2 * vertices),
            height: 0,
        }
    }

    /// A single root vertex.
    pub fn singleton() -> Self {
        let mut tree = Self::with_capacity(1);
        tree.push_vertex(NO_PARENT, 0);
        tree
    }

    /// Root `0` with a single child `1`.
    pub fn edge() -> Self {
        let mut tree = Self::singleton();
        tree.add_leaves(0, 1);
        tree
    }

    /// Validates a parent array (root marked by [`NO_PARENT`]) and builds
    /// the arena. Children keep the order of their ids.
    pub fn from_parents(parents: &[u32], root: u32) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::InvalidTree("no vertices".into()));
        }
        let root_idx = root as usize;
        if root_idx >= n {
            return Err(Error::InvalidTree(format!("root {root} out of range")));
        }
        if parents[root_idx] != NO_PARENT {
            return Err(Error::InvalidTree(format!("root {root} has a parent")));
        }
        let mut children: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (v, &p) in parents.iter().enumerate() {
            if v == root_idx {
                continue;
            }
            if p == NO_PARENT {
                return Err(Error::InvalidTree(format!("vertex {v} has no parent")));
            }
            if p as usize >= n {
                return Err(Error::InvalidTree(format!(
                    "vertex {v} has parent {p} out of range"
                )));
            }
            if p as usize == v {
                return Err(Error::InvalidTree(format!("vertex {v} is its own parent")));
            }
            children[p as usize].push(v as u32);
        }

        // Breadth-first from the root; unreached vertices sit on a cycle.
        let mut depth = vec![u32::MAX; n];
        depth[root_idx] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut reached = 1usize;
        while let Some(v) = queue.pop_front() {
            for &c in &children[v as usize] {
                depth[c as usize] = depth[v as usize] + 1;
                reached += 1;
                queue.push_back(c);
            }
        }
        if reached != n {
            return Err(Error::InvalidTree(format!(
                "{} vertices unreachable from the root (cycle)",
                n - reached
            )));
        }

        let mut tree = Self::with_capacity(n);
        tree.root = root;
        for v in 0..n {
            let len = children[v].len() as u32;
            tree.parent.push(parents[v]);
            tree.depth.push(depth[v]);
            tree.degree.push(len + u32::from(v != root_idx));
            tree.child_start.push(tree.pool.len() as u32);
            tree.child_len.push(len);
            tree.child_cap.push(len);
            tree.pool.extend_from_slice(&children[v]);
        }
        tree.height = depth.iter().copied().max().unwrap_or(0);
        Ok(tree)
    }

    fn push_vertex(&mut self, parent: u32, depth: u32) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(parent);
        self.depth.push(depth);
        self.degree.push(u32::from(parent != NO_PARENT));
        self.child_start.push(0);
        self.child_len.push(0);
        self.child_cap.push(0);
        if depth > self.height {
            self.height = depth;
        }
        id
    }

    /// Attaches `count` new leaves below `v`.
    pub fn add_leaves(&mut self, v: u32, count: u32) {
        if count == 0 {
            return;
        }
        let vi = v as usize;
        let len = self.child_len[vi];
        if len + count > self.child_cap[vi] {
            let cap = (2 * self.child_cap[vi]).max(len + count).max(2);
            let start = self.pool.len();
            let old = self.child_start[vi] as usize;
            self.pool.extend_from_within(old..old + len as usize);
            self.pool.resize(start + cap as usize, 0);
            self.child_start[vi] = start as u32;
            self.child_cap[vi] = cap;
        }
        let child_depth = self.depth[vi] + 1;
        let start = self.child_start[vi] as usize + len as usize;
        for k in 0..count {
            let id = self.push_vertex(v, child_depth);
            self.pool[start + k as usize] = id;
        }
        self.child_len[vi] = len + count;
        self.degree[vi] += count;
    }

    /// Neighbour number `index` of `v`: the father first (unless `v` is the
    /// root), then children in insertion order.
    #[inline]
    pub fn neighbor(&self, v: u32, index: u32) -> u32 {
        let vi = v as usize;
        let parent = self.parent[vi];
        let index = if parent != NO_PARENT {
            if index == 0 {
                return parent;
            }
            index - 1
        } else {
            index
        };
        self.pool[self.child_start[vi] as usize + index as usize]
    }

    pub fn children(&self, v: u32) -> &[u32] {
        let start = self.child_start[v as usize] as usize;
        &self.pool[start..start + self.child_len[v as usize] as usize]
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn parent(&self, v: u32) -> Option<u32> {
        match self.parent[v as usize] {
            NO_PARENT => None,
            p => Some(p),
        }
    }

    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    pub fn depth(&self, v: u32) -> u32 {
        self.depth[v as usize]
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn degree(&self, v: u32) -> u32 {
        self.degree[v as usize]
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn contains(&self, v: u32) -> bool {
        (v as usize) < self.parent.len()
    }

    /// Re-checks every structural invariant from scratch.
    pub fn check_invariants(&self) -> Result<()> {
        let rebuilt = Self::from_parents(&self.parent, self.root)?;
        if rebuilt.depth != self.depth {
            return Err(Error::InvalidTree("depth table out of sync".into()));
        }
        if rebuilt.degree != self.degree {
            return Err(Error::InvalidTree("degree table out of sync".into()));
        }
        if rebuilt.height != self.height {
            return Err(Error::InvalidTree("height out of sync".into()));
        }
        for v in 0..self.vertex_count() as u32 {
            if rebuilt.children(v) != self.children(v) {
                return Err(Error::InvalidTree(format!("children of {v} out of sync")));
            }
        }
        Ok(())
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tbrw {\n");
        for v in 0..self.vertex_count() {
            if v as u32 == self.root {
                out.push_str(&format!("  {v} [shape=doublecircle];\n"));
            } else {
                out.push_str(&format!("  {v};\n"));
            }
        }
        for (v, &p) in self.parent.iter().enumerate() {
            if p != NO_PARENT {
                out.push_str(&format!("  {p} -> {v};\n"));
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TreeJson::from(self)).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeJson = serde_json::from_str(text)?;
        let parents: Vec<u32> = doc.parent.iter().map(|p| p.unwrap_or(NO_PARENT)).collect();
        Self::from_parents(&parents, doc.root)
    }

    pub fn export(&self, format: TreeFormat) -> Vec<u8> {
        match format {
            TreeFormat::Dot => self.to_dot().into_bytes(),
            TreeFormat::Json => self.to_json().into_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeFormat {
    Dot,
    Json,
}

/// On-disk tree schema: `{"parent": [null, 0, ...], "root": 0, ...}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TreeJson {
    pub parent: Vec<Option<u32>>,
    pub root: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_count: Option<usize>,
}

impl From<&GrowingTree> for TreeJson {
    fn from(tree: &GrowingTree) -> Self {
        Self {
            parent: tree
                .parent
                .iter()
                .map(|&p| (p != NO_PARENT).then_some(p))
                .collect(),
            root: tree.root,
            depth: Some(tree.depth.clone()),
            vertex_count: Some(tree.vertex_count()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkerState {
    pub position: u32,
    pub step_index: u64,
}

#[derive(Debug, Clone)]
pub enum InitialState {
    /// Root with one child; the walker starts on the child.
    EdgeNonRootTip,
    Custom {
        tree: GrowingTree,
        position: u32,
    },
}

pub fn initial_state(kind: InitialState) -> Result<(GrowingTree, WalkerState)> {
    match kind {
        InitialState::EdgeNonRootTip => Ok((
            GrowingTree::edge(),
            WalkerState {
                position: 1,
                step_index: 0,
            },
        )),
        InitialState::Custom { tree, position } => {
            tree.check_invariants()?;
            if !tree.contains(position) {
                return Err(Error::InvalidTree(format!(
                    "walker position {position} is not a vertex"
                )));
            }
            if tree.degree(position) == 0 {
                return Err(Error::InvalidTree(
                    "walker sits on an isolated vertex".into(),
                ));
            }
            Ok((
                tree,
                WalkerState {
                    position,
                    step_index: 0,
                },
            ))
        }
    }
}

/// One step: grow at the walker's vertex, then move to a uniform neighbour.
/// Returns the number of leaves added.
#[inline]
pub fn step<R: Rng + ?Sized>(
    tree: &mut GrowingTree,
    walker: &mut WalkerState,
    sampler: &LeafSampler,
    rng: &mut R,
) -> u32 {
    let x = walker.position;
    let added = sampler.sample(rng);
    tree.add_leaves(x, added);
    let choice = rng.random_range(0..tree.degree(x));
    walker.position = tree.neighbor(x, choice);
    walker.step_index += 1;
    added
}

/// A running walk: tree, walker, sampler and random stream bundled.
pub struct Walk {
    tree: GrowingTree,
    walker: WalkerState,
    sampler: LeafSampler,
    rng: ChaCha8Rng,
}

impl Walk {
    pub fn new(law: &LeafLaw, init: InitialState, stream: RngStream) -> Result<Self> {
        let (tree, walker) = initial_state(init)?;
        Ok(Self {
            tree,
            walker,
            sampler: law.sampler(),
            rng: stream.rng(),
        })
    }

    #[inline]
    pub fn advance(&mut self) -> u32 {
        step(
            &mut self.tree,
            &mut self.walker,
            &self.sampler,
            &mut self.rng,
        )
    }

    pub fn tree(&self) -> &GrowingTree {
        &self.tree
    }

    pub fn walker(&self) -> WalkerState {
        self.walker
    }

    pub fn position(&self) -> u32 {
        self.walker.position
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth(self.walker.position)
    }

    pub fn degree(&self) -> u32 {
        self.tree.degree(self.walker.position)
    }

    pub fn into_tree(self) -> GrowingTree {
        self.tree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Keeps position ids and the final parent array.
    Full,
    /// Depth, degree, height and counts only.
    Summary,
}

/// Per-step record of a walk. Index `n` describes the state after `n` steps,
/// so every array has `horizon + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub depth: Vec<u32>,
    pub degree: Vec<u32>,
    pub height: Vec<u32>,
    pub vertex_count: Vec<u32>,
    /// `leaves_added[n]` leaves were attached during step `n`; entry 0 is 0.
    pub leaves_added: Vec<u32>,
    pub position: Option<Vec<u32>>,
    /// Parent array of the final tree (Full retention).
    pub parents: Option<Vec<u32>>,
    pub stream: RngStream,
    pub law: LeafLaw,
    pub retention: Retention,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.depth.len() - 1
    }

    pub fn is_full(&self) -> bool {
        self.position.is_some() && self.parents.is_some()
    }

    /// Checks the per-step invariants: unit depth moves, growth bookkeeping
    /// and monotone height.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.depth.len();
        let same_len = [
            self.degree.len(),
            self.height.len(),
            self.vertex_count.len(),
            self.leaves_added.len(),
        ]
        .iter()
        .all(|&l| l == n);
        if !same_len || n == 0 {
            return Err(Error::InvalidArgument("ragged trajectory arrays".into()));
        }
        for t in 1..n {
            if self.depth[t].abs_diff(self.depth[t - 1]) != 1 {
                return Err(Error::InvalidArgument(format!("depth jump at step {t}")));
            }
            if self.vertex_count[t] != self.vertex_count[t - 1] + self.leaves_added[t] {
                return Err(Error::InvalidArgument(format!(
                    "vertex count mismatch at step {t}"
                )));
            }
            if self.height[t] < self.height[t - 1] || self.height[t] > self.height[t - 1] + 1 {
                return Err(Error::InvalidArgument(format!("height jump at step {t}")));
            }
        }
        Ok(())
    }
}

fn bytes_per_step(retention: Retention) -> u64 {
    let per_step = 5 * 4;
    match retention {
        // positions plus roughly one arena vertex per step
        Retention::Full => per_step + 4 + 32,
        Retention::Summary => per_step,
    }
}

pub fn simulate(
    law: &LeafLaw,
    horizon: usize,
    init: InitialState,
    stream: RngStream,
    retention: Retention,
) -> Result<Trajectory> {
    simulate_with_budget(law, horizon, init, stream, retention, DEFAULT_MEMORY_BUDGET)
}

/// Runs `horizon` steps, refusing up front when the record would exceed
/// `memory_budget` bytes.
pub fn simulate_with_budget(
    law: &LeafLaw,
    horizon: usize,
    init: InitialState,
    stream: RngStream,
    retention: Retention,
    memory_budget: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let needed = (horizon as u64 + 1).saturating_mul(bytes_per_step(retention));
    if needed > memory_budget {
        return Err(Error::Capacity {
            what: format!("{retention:?} trajectory of {horizon} steps"),
            needed: needed.into(),
            limit: memory_budget.into(),
        });
    }

    let mut walk = Walk::new(law, init, stream)?;
    let len = horizon + 1;
    let mut depth = Vec::with_capacity(len);
    let mut degree = Vec::with_capacity(len);
    let mut height = Vec::with_capacity(len);
    let mut vertex_count = Vec::with_capacity(len);
    let mut leaves_added = Vec::with_capacity(len);
    let mut position = match retention {
        Retention::Full => Some(Vec::with_capacity(len)),
        Retention::Summary => None,
    };

    let mut record = |walk: &Walk, added: u32| {
        let tree = walk.tree();
        let x = walk.position();
        depth.push(tree.depth(x));
        degree.push(tree.degree(x));
        height.push(tree.height());
        vertex_count.push(tree.vertex_count() as u32);
        leaves_added.push(added);
        if let Some(pos) = position.as_mut() {
            pos.push(x);
        }
    };
    record(&walk, 0);
    for _ in 0..horizon {
        let added = walk.advance();
        record(&walk, added);
    }

    let parents = match retention {
        Retention::Full => Some(walk.tree().parents().to_vec()),
        Retention::Summary => None,
    };
    Ok(Trajectory {
        depth,
        degree,
        height,
        vertex_count,
        leaves_added,
        position,
        parents,
        stream,
        law: law.clone(),
        retention,
    })
}

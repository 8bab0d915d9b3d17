//! Renewal structure of a finite trajectory.
//!
//! A renewal time is a step at which the walker stands on a leaf at a strict
//! depth record and never again drops below that depth. On a finite horizon
//! "never" is replaced by a censoring rule: the walker must climb
//! `depth_margin` levels past the candidate without undercutting it, and the
//! candidate must leave at least `horizon_margin` steps of look-ahead.
//!
//! Two detectors live here and are kept independent of each other:
//! [`detect_tau`] applies the record/undercut definition to the depth and
//! degree sequences, while [`detect_cascade`] follows the attempt cascade
//! (record leaves and returns to their fathers) using vertex ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Trajectory, NO_PARENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensorPolicy {
    pub depth_margin: u32,
    pub horizon_margin: usize,
}

impl CensorPolicy {
    pub fn new(depth_margin: u32, horizon_margin: usize) -> Result<Self> {
        if depth_margin == 0 || horizon_margin == 0 {
            return Err(Error::InvalidArgument(
                "censoring margins must be at least 1".into(),
            ));
        }
        Ok(Self {
            depth_margin,
            horizon_margin,
        })
    }

    /// Last time at which a renewal can still be confirmed.
    pub fn usable_horizon(&self, horizon: usize) -> usize {
        horizon.saturating_sub(self.horizon_margin)
    }
}

impl Default for CensorPolicy {
    fn default() -> Self {
        Self {
            depth_margin: 50,
            horizon_margin: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauStatus {
    Confirmed,
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauCandidate {
    pub time: usize,
    pub status: TauStatus,
    /// Whether the walker's depth equalled the tree height at that time.
    pub at_height: bool,
}

/// Renewal candidates of a trajectory; the `Confirmed` entries form the
/// renewal ladder `tau_1 < tau_2 < ...`.
pub fn detect_tau(traj: &Trajectory, policy: &CensorPolicy) -> Result<Vec<TauCandidate>> {
    detect_tau_in(&traj.depth, &traj.degree, Some(&traj.height), policy)
}

/// [`detect_tau`] on bare sequences. `height` only feeds the `at_height`
/// flag; without it the flag is computed against the running maximum.
pub fn detect_tau_in(
    depth: &[u32],
    degree: &[u32],
    height: Option<&[u32]>,
    policy: &CensorPolicy,
) -> Result<Vec<TauCandidate>> {
    if depth.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if degree.len() != depth.len() || height.is_some_and(|h| h.len() != depth.len()) {
        return Err(Error::InvalidArgument("ragged trajectory arrays".into()));
    }
    let horizon = depth.len() - 1;
    let usable = policy.usable_horizon(horizon);

    // after_min[n] / after_max[n]: extremes of depth over (n, horizon].
    let mut after_min = vec![u32::MAX; depth.len()];
    let mut after_max = vec![0u32; depth.len()];
    for n in (0..horizon).rev() {
        after_min[n] = after_min[n + 1].min(depth[n + 1]);
        after_max[n] = after_max[n + 1].max(depth[n + 1]);
    }

    let mut out = Vec::new();
    let mut record = depth[0];
    for n in 1..=horizon {
        let d = depth[n];
        let is_record = d > record;
        if is_record {
            record = d;
        }
        if !is_record || degree[n] != 1 || after_min[n] < d {
            continue;
        }
        let confirmed = n <= usable && after_max[n] >= d + policy.depth_margin;
        let at_height = match height {
            Some(h) => h[n] == d,
            None => true,
        };
        out.push(TauCandidate {
            time: n,
            status: if confirmed {
                TauStatus::Confirmed
            } else {
                TauStatus::Censored
            },
            at_height,
        });
    }
    Ok(out)
}

/// Confirmed renewal times only.
pub fn tau_ladder(candidates: &[TauCandidate]) -> Vec<usize> {
    candidates
        .iter()
        .filter(|c| c.status == TauStatus::Confirmed)
        .map(|c| c.time)
        .collect()
}

/// Outcome of waiting for the walker to return to the father of an attempt
/// leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnStatus {
    Finite(usize),
    PresumedInfinite,
    Censored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    /// Attempt number inside its epoch; 0 is the starting vertex.
    pub index: usize,
    pub zeta: usize,
    pub depth: u32,
    pub h_tilde: ReturnStatus,
    /// Largest depth gained over the attempt depth before the return.
    pub excursion_max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch {
    pub base: usize,
    pub attempts: Vec<Attempt>,
    /// Time of the successful attempt, if the epoch closed.
    pub renewal: Option<usize>,
}

impl Epoch {
    /// Failed attempts, i.e. finite returns.
    pub fn failures(&self) -> usize {
        self.attempts
            .iter()
            .filter(|a| matches!(a.h_tilde, ReturnStatus::Finite(_)))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalReport {
    /// Renewal ladder from the cascade (times > 0).
    pub tau: Vec<usize>,
    pub epochs: Vec<Epoch>,
    /// Failure counts of the closed epochs, in order.
    pub k_per_epoch: Vec<usize>,
    /// Excursion maxima of every attempt that returned to its father.
    pub m: Vec<u32>,
    /// Step function of the renewal counter as `(t, N(t))` change points.
    pub n_of_t: Vec<(usize, usize)>,
    pub usable_horizon: usize,
    /// The cascade stopped before the horizon on a censored or unfinished
    /// attempt.
    pub censored_tail: bool,
    /// Leaf law with kappa = 0; no renewal can ever occur.
    pub degenerate: bool,
}

impl RenewalReport {
    pub fn zeta(&self) -> Vec<usize> {
        self.epochs
            .iter()
            .flat_map(|e| e.attempts.iter().map(|a| a.zeta))
            .collect()
    }

    pub fn h_tilde(&self) -> Vec<ReturnStatus> {
        self.epochs
            .iter()
            .flat_map(|e| e.attempts.iter().map(|a| a.h_tilde))
            .collect()
    }

    /// The first epoch's failure count, when that epoch closed.
    pub fn first_k(&self) -> Option<usize> {
        self.epochs
            .first()
            .filter(|e| e.renewal.is_some())
            .map(Epoch::failures)
    }

    /// Whether the starting vertex itself was never left through its father.
    pub fn escaped_at_start(&self) -> Option<bool> {
        let first = self.epochs.first()?.attempts.first()?;
        if first.index != 0 {
            return None;
        }
        match first.h_tilde {
            ReturnStatus::Finite(_) => Some(false),
            ReturnStatus::PresumedInfinite => Some(true),
            ReturnStatus::Censored => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Index of the first visit to `target` strictly after `from`.
struct VisitIndex<'a> {
    position: &'a [u32],
    next_same: Vec<usize>,
}

impl<'a> VisitIndex<'a> {
    fn new(position: &'a [u32], vertex_count: usize) -> Self {
        let mut next_same = vec![usize::MAX; position.len()];
        let mut seen = vec![usize::MAX; vertex_count];
        for t in (0..position.len()).rev() {
            let v = position[t] as usize;
            next_same[t] = seen[v];
            seen[v] = t;
        }
        Self {
            position,
            next_same,
        }
    }

    fn first_after(&self, target: u32, from: usize) -> Option<usize> {
        // Attempt leaves are entered from their father, so the previous
        // position is usually the target and the lookup is O(1).
        let hit = if from > 0 && self.position[from - 1] == target && self.position[from] != target
        {
            self.next_same[from - 1]
        } else {
            (from + 1..self.position.len())
                .find(|&t| self.position[t] == target)
                .unwrap_or(usize::MAX)
        };
        (hit != usize::MAX).then_some(hit)
    }
}

/// Reconstructs attempts, returns, epochs and the renewal ladder.
/// Needs Full retention.
pub fn detect_cascade(traj: &Trajectory, policy: &CensorPolicy) -> Result<RenewalReport> {
    let (position, parents) = match (&traj.position, &traj.parents) {
        (Some(p), Some(f)) => (p.as_slice(), f.as_slice()),
        _ => {
            return Err(Error::Capability(
                "cascade detection needs position ids and the parent array (Full retention)".into(),
            ))
        }
    };
    let depth = &traj.depth;
    if depth.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let horizon = depth.len() - 1;
    let usable = policy.usable_horizon(horizon);
    let visits = VisitIndex::new(position, parents.len());

    let mut after_max = vec![0u32; depth.len()];
    for n in (0..horizon).rev() {
        after_max[n] = after_max[n + 1].max(depth[n + 1]);
    }
    // record_before[n]: deepest point of [0, n).
    let mut record_before = vec![0u32; depth.len()];
    for n in 1..=horizon {
        record_before[n] = record_before[n - 1].max(depth[n - 1]);
    }
    let is_attempt =
        |n: usize| traj.degree[n] == 1 && depth[n] == traj.height[n] && depth[n] > record_before[n];

    let classify = |zeta: usize| -> Attempt {
        let father = parents[position[zeta] as usize];
        let d = depth[zeta];
        let (h_tilde, excursion_max) = match visits.first_after(father, zeta) {
            Some(ret) => {
                let m = depth[zeta..=ret].iter().max().copied().unwrap_or(d) - d;
                (ReturnStatus::Finite(ret), Some(m))
            }
            None if zeta <= usable && after_max[zeta] >= d + policy.depth_margin => {
                (ReturnStatus::PresumedInfinite, None)
            }
            None => (ReturnStatus::Censored, None),
        };
        Attempt {
            index: 0,
            zeta,
            depth: d,
            h_tilde,
            excursion_max,
        }
    };

    let mut epochs: Vec<Epoch> = Vec::new();
    let mut censored_tail = false;

    let starts_at_root = parents[position[0] as usize] == NO_PARENT;
    let mut epoch = Epoch {
        base: 0,
        attempts: Vec::new(),
        renewal: None,
    };
    // Next attempt may occur strictly after `gate`.
    let mut gate = 0usize;
    let mut next_index = 1usize;
    if !starts_at_root {
        let start = classify(0);
        match start.h_tilde {
            ReturnStatus::Finite(t) => gate = t,
            ReturnStatus::PresumedInfinite => epoch.renewal = Some(0),
            ReturnStatus::Censored => censored_tail = true,
        }
        epoch.attempts.push(start);
        if epoch.renewal.is_some() {
            epochs.push(std::mem::replace(
                &mut epoch,
                Epoch {
                    base: 0,
                    attempts: Vec::new(),
                    renewal: None,
                },
            ));
        }
    }

    let mut cursor = gate + 1;
    while !censored_tail {
        let Some(zeta) = (cursor..=horizon).find(|&n| is_attempt(n)) else {
            censored_tail = true;
            break;
        };
        let mut attempt = classify(zeta);
        attempt.index = next_index;
        next_index += 1;
        let status = attempt.h_tilde;
        epoch.attempts.push(attempt);
        match status {
            ReturnStatus::Finite(t) => cursor = t + 1,
            ReturnStatus::PresumedInfinite => {
                epoch.renewal = Some(zeta);
                epochs.push(std::mem::replace(
                    &mut epoch,
                    Epoch {
                        base: zeta,
                        attempts: Vec::new(),
                        renewal: None,
                    },
                ));
                next_index = 1;
                cursor = zeta + 1;
            }
            ReturnStatus::Censored => censored_tail = true,
        }
    }
    if !epoch.attempts.is_empty() {
        epochs.push(epoch);
    }

    let tau: Vec<usize> = epochs
        .iter()
        .filter_map(|e| e.renewal)
        .filter(|&t| t > 0)
        .collect();
    let k_per_epoch = epochs
        .iter()
        .filter(|e| e.renewal.is_some())
        .map(Epoch::failures)
        .collect();
    let m = epochs
        .iter()
        .flat_map(|e| e.attempts.iter().filter_map(|a| a.excursion_max))
        .collect();
    let mut n_of_t = vec![(0usize, 0usize)];
    n_of_t.extend(tau.iter().enumerate().map(|(k, &t)| (t, k + 1)));

    Ok(RenewalReport {
        tau,
        epochs,
        k_per_epoch,
        m,
        n_of_t,
        usable_horizon: usable,
        censored_tail,
        degenerate: traj.law.is_degenerate(),
    })
}

/// `N(t)`: number of renewals up to time `t`.
pub fn count_regenerations(report: &RenewalReport, t: usize) -> Result<usize> {
    if t > report.usable_horizon {
        return Err(Error::Range {
            value: t as u64,
            max: report.usable_horizon as u64,
        });
    }
    Ok(report.tau.partition_point(|&tau| tau <= t))
}

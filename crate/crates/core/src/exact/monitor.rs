//! Events over the first n steps, written as online monitors.
//!
//! A monitor only ever sees the walk one step at a time through a
//! [`StepView`] and must give its verdict once the horizon is reached, so
//! every expressible event is decided by the first n steps.

use std::hash::Hash;

/// What a monitor observes after a step (step 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepView {
    pub step: usize,
    /// A leaf was attached during this step.
    pub leaf_added: bool,
    pub depth: u32,
    pub degree: u32,
    pub height: u32,
    pub at_root: bool,
}

pub trait EventMonitor: Sync {
    /// Finite summary of the past; realizations with equal memory and equal
    /// tree and position are merged.
    type Memory: Clone + Eq + Hash + Send + Sync;

    /// `None` rules the event out at time 0.
    fn start(&self, view: &StepView) -> Option<Self::Memory>;

    /// `None` rules the event out for every continuation.
    fn advance(&self, memory: &Self::Memory, view: &StepView) -> Option<Self::Memory>;

    fn accept(&self, memory: &Self::Memory, horizon: usize) -> bool;
}

/// The whole trajectory space.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeSpace;

impl EventMonitor for WholeSpace {
    type Memory = ();

    fn start(&self, _: &StepView) -> Option<()> {
        Some(())
    }

    fn advance(&self, _: &(), _: &StepView) -> Option<()> {
        Some(())
    }

    fn accept(&self, _: &(), _: usize) -> bool {
        true
    }
}

/// `{H_o = target}`: the first visit to the root happens at `target`.
#[derive(Debug, Clone, Copy)]
pub struct HitRootAt {
    target: usize,
}

impl HitRootAt {
    pub fn new(target: usize) -> Self {
        Self { target }
    }

    pub fn target(&self) -> usize {
        self.target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RootMemory {
    Before,
    Hit,
}

impl EventMonitor for HitRootAt {
    type Memory = RootMemory;

    fn start(&self, view: &StepView) -> Option<RootMemory> {
        (!view.at_root).then_some(RootMemory::Before)
    }

    fn advance(&self, memory: &RootMemory, view: &StepView) -> Option<RootMemory> {
        match memory {
            RootMemory::Hit => Some(RootMemory::Hit),
            RootMemory::Before if view.at_root => {
                (view.step == self.target).then_some(RootMemory::Hit)
            }
            RootMemory::Before => (view.step < self.target).then_some(RootMemory::Before),
        }
    }

    fn accept(&self, memory: &RootMemory, _: usize) -> bool {
        *memory == RootMemory::Hit
    }
}

/// No time `m` in `[1, n]` is a leaf at a strict depth record that is not
/// undercut up to `n`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRenewalBy;

/// Running maximum depth, plus one bit per depth of a still-valid candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecordMemory {
    max_depth: u32,
    live: u64,
}

impl EventMonitor for NoRenewalBy {
    type Memory = RecordMemory;

    fn start(&self, view: &StepView) -> Option<RecordMemory> {
        Some(RecordMemory {
            max_depth: view.depth,
            live: 0,
        })
    }

    fn advance(&self, memory: &RecordMemory, view: &StepView) -> Option<RecordMemory> {
        // candidates deeper than the current depth are undercut
        let keep = if view.depth >= 63 {
            u64::MAX
        } else {
            (1u64 << (view.depth + 1)) - 1
        };
        let mut live = memory.live & keep;
        let mut max_depth = memory.max_depth;
        if view.depth > max_depth {
            max_depth = view.depth;
            if view.degree == 1 && view.depth < 64 {
                live |= 1 << view.depth;
            }
        }
        Some(RecordMemory { max_depth, live })
    }

    fn accept(&self, memory: &RecordMemory, _: usize) -> bool {
        memory.live == 0
    }
}

/// Complement of an event.
#[derive(Debug, Clone, Copy)]
pub struct Complement<E>(pub E);

impl<E: EventMonitor> EventMonitor for Complement<E> {
    /// `None` once the inner event has been ruled out.
    type Memory = Option<E::Memory>;

    fn start(&self, view: &StepView) -> Option<Self::Memory> {
        Some(self.0.start(view))
    }

    fn advance(&self, memory: &Self::Memory, view: &StepView) -> Option<Self::Memory> {
        Some(memory.as_ref().and_then(|m| self.0.advance(m, view)))
    }

    fn accept(&self, memory: &Self::Memory, horizon: usize) -> bool {
        match memory {
            None => true,
            Some(m) => !self.0.accept(m, horizon),
        }
    }
}

use std::any::Any;
use std::cell::Cell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RuntimeError;

const COLLECTIVE_TAG: u64 = 1 << 40;
const IDLE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulingPolicy {
    RoundRobin,
    Seeded(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub ranks: usize,
    pub policy: SchedulingPolicy,
}

impl RunConfig {
    pub fn new(ranks: usize) -> Self {
        Self { ranks, policy: SchedulingPolicy::RoundRobin }
    }

    pub fn seeded(ranks: usize, seed: u64) -> Self {
        Self { ranks, policy: SchedulingPolicy::Seeded(seed) }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    /// Messages per `(source, destination)` global rank pair.
    pub messages: BTreeMap<(usize, usize), u64>,
    pub context_switches: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MsgKey {
    ctx: u64,
    src: usize,
    dst: usize,
    tag: u64,
}

#[derive(Debug, Clone)]
enum Status {
    Runnable,
    Blocked(MsgKey, &'static str),
    Done,
}

struct State {
    mailbox: HashMap<MsgKey, VecDeque<Box<dyn Any + Send>>>,
    status: Vec<Status>,
    current: usize,
    rng: Option<ChaCha8Rng>,
    failure: Option<RuntimeError>,
    sent: BTreeMap<(usize, usize, u64, u64), u64>,
    received: BTreeMap<(usize, usize, u64, u64), u64>,
    switches: u64,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
}

/// Panic payload used to unwind ranks after another rank failed.
struct Abort;

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn ready(st: &State, r: usize) -> bool {
        match &st.status[r] {
            Status::Runnable => true,
            Status::Blocked(k, _) => st.mailbox.get(k).is_some_and(|q| !q.is_empty()),
            Status::Done => false,
        }
    }

    /// Hands the turn to a ready rank; flags a deadlock if there is none.
    fn pick_next(&self, st: &mut State, from: usize) {
        let n = st.status.len();
        let ready: Vec<usize> = (0..n).filter(|&r| Self::ready(st, r)).collect();
        if ready.is_empty() {
            st.current = IDLE;
            if st.status.iter().any(|s| !matches!(s, Status::Done)) && st.failure.is_none() {
                let mut diag = String::new();
                for (r, s) in st.status.iter().enumerate() {
                    match s {
                        Status::Blocked(k, op) => diag.push_str(&format!(
                            "  rank {r}: blocked in {op} waiting for message from rank {} (tag {}, context {:#x})\n",
                            k.src, k.tag, k.ctx
                        )),
                        Status::Done => diag.push_str(&format!("  rank {r}: finished\n")),
                        Status::Runnable => diag.push_str(&format!("  rank {r}: runnable\n")),
                    }
                }
                st.failure = Some(RuntimeError::Deadlock(diag));
            }
        } else {
            let next = match st.rng.as_mut() {
                Some(rng) => ready[rng.gen_range(0..ready.len())],
                None => {
                    let start = if from == IDLE { 0 } else { (from + 1) % n };
                    (0..n).map(|k| (start + k) % n).find(|r| ready.contains(r)).unwrap()
                }
            };
            if next != from {
                st.switches += 1;
            }
            st.current = next;
        }
        self.cv.notify_all();
    }

    fn wait_turn<'a>(&'a self, mut st: MutexGuard<'a, State>, me: usize) -> MutexGuard<'a, State> {
        loop {
            if st.failure.is_some() {
                drop(st);
                panic::resume_unwind(Box::new(Abort));
            }
            if st.current == me {
                return st;
            }
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }
}

/// Communicator of one rank inside a group.
pub struct Comm<'a> {
    shared: &'a Shared,
    ctx: u64,
    members: Vec<usize>,
    rank: usize,
    seq: Cell<u64>,
    splits: Cell<u64>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'a> Comm<'a> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Rank of this process in the world group.
    pub fn world_rank(&self) -> usize {
        self.members[self.rank]
    }

    /// World ranks of the group members, by local rank.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    fn raw_send(&self, dest: usize, tag: u64, value: Box<dyn Any + Send>) {
        let src = self.members[self.rank];
        let dst = self.members[dest];
        let key = MsgKey { ctx: self.ctx, src, dst, tag };
        let mut st = self.shared.lock();
        st.mailbox.entry(key).or_default().push_back(value);
        *st.sent.entry((src, dst, self.ctx, tag)).or_default() += 1;
    }

    fn raw_recv(&self, source: usize, tag: u64, op: &'static str) -> Box<dyn Any + Send> {
        let me = self.members[self.rank];
        let key = MsgKey { ctx: self.ctx, src: self.members[source], dst: me, tag };
        let mut st = self.shared.lock();
        st.status[me] = Status::Blocked(key, op);
        self.shared.pick_next(&mut st, me);
        let mut st = self.shared.wait_turn(st, me);
        let msg = st.mailbox.get_mut(&key).and_then(|q| q.pop_front()).expect("scheduled without a message");
        st.status[me] = Status::Runnable;
        *st.received.entry((key.src, key.dst, key.ctx, tag)).or_default() += 1;
        msg
    }

    fn next_tag(&self) -> u64 {
        let s = self.seq.get();
        self.seq.set(s + 1);
        COLLECTIVE_TAG + s
    }

    pub fn send<T: Send + 'static>(&self, dest: usize, tag: u32, value: T) {
        self.raw_send(dest, tag as u64, Box::new(value));
    }

    pub fn recv<T: 'static>(&self, source: usize, tag: u32) -> T {
        *self
            .raw_recv(source, tag as u64, "recv")
            .downcast::<T>()
            .unwrap_or_else(|_| panic!("message type mismatch from rank {source}, tag {tag}"))
    }

    fn coll_recv<T: 'static>(&self, source: usize, tag: u64, op: &'static str) -> T {
        *self.raw_recv(source, tag, op).downcast::<T>().expect("collective type mismatch")
    }

    pub fn gather_to<T: Send + 'static>(&self, root: usize, value: T) -> Option<Vec<T>> {
        let tag = self.next_tag();
        if self.rank == root {
            let mut slots: Vec<Option<T>> = (0..self.size()).map(|_| None).collect();
            slots[root] = Some(value);
            for r in 0..self.size() {
                if r != root {
                    slots[r] = Some(self.coll_recv(r, tag, "gather"));
                }
            }
            Some(slots.into_iter().map(Option::unwrap).collect())
        } else {
            self.raw_send(root, tag, Box::new(value));
            None
        }
    }

    pub fn scatter_from<T: Send + 'static>(&self, root: usize, values: Option<Vec<T>>) -> T {
        let tag = self.next_tag();
        if self.rank == root {
            let values = values.expect("root must supply scatter values");
            assert_eq!(values.len(), self.size());
            let mut mine = None;
            for (r, v) in values.into_iter().enumerate() {
                if r == root {
                    mine = Some(v);
                } else {
                    self.raw_send(r, tag, Box::new(v));
                }
            }
            mine.unwrap()
        } else {
            self.coll_recv(root, tag, "scatter")
        }
    }

    pub fn broadcast<T: Clone + Send + 'static>(&self, root: usize, value: Option<T>) -> T {
        let tag = self.next_tag();
        if self.rank == root {
            let v = value.expect("root must supply broadcast value");
            for r in 0..self.size() {
                if r != root {
                    self.raw_send(r, tag, Box::new(v.clone()));
                }
            }
            v
        } else {
            self.coll_recv(root, tag, "broadcast")
        }
    }

    pub fn all_gather<T: Clone + Send + 'static>(&self, value: T) -> Vec<T> {
        let g = self.gather_to(0, value);
        self.broadcast(0, g)
    }

    pub fn barrier(&self) {
        self.all_gather(());
    }

    /// Sum over ranks, accumulated in ascending rank order and broadcast.
    pub fn reduce_sum(&self, value: f64) -> f64 {
        let g = self.gather_to(0, value).map(|v| v.iter().fold(0.0, |a, b| a + b));
        self.broadcast(0, g)
    }

    pub fn reduce_sum_vec(&self, values: Vec<f64>) -> Vec<f64> {
        let g = self.gather_to(0, values).map(|all| {
            let mut acc = vec![0.0; all[0].len()];
            for v in &all {
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
            acc
        });
        self.broadcast(0, g)
    }

    /// Sum of keyed terms in ascending key order, independent of how the terms
    /// are spread over ranks.
    pub fn sum_keyed(&self, terms: Vec<(u64, f64)>) -> f64 {
        let g = self.gather_to(0, terms).map(|all| {
            let mut flat: Vec<(u64, f64)> = all.into_iter().flatten().collect();
            flat.sort_by_key(|t| t.0);
            flat.iter().fold(0.0, |a, t| a + t.1)
        });
        self.broadcast(0, g)
    }

    pub fn all_reduce_max(&self, value: f64) -> f64 {
        let g = self.gather_to(0, value).map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max));
        self.broadcast(0, g)
    }

    pub fn all_reduce_max_usize(&self, value: usize) -> usize {
        let g = self.gather_to(0, value).map(|v| v.into_iter().max().unwrap_or(0));
        self.broadcast(0, g)
    }

    /// Splits the group; members passing the same `color` form a new group
    /// ordered by `(key, current rank)`. `None` opts out.
    pub fn split_by_color(&self, color: Option<u64>, key: usize) -> Option<Comm<'a>> {
        let all = self.all_gather((color, key));
        let split = self.splits.get();
        self.splits.set(split + 1);
        let color = color?;
        let mut group: Vec<(usize, usize)> = all
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| *c == Some(color))
            .map(|(r, (_, k))| (*k, r))
            .collect();
        group.sort_unstable();
        let members: Vec<usize> = group.iter().map(|&(_, r)| self.members[r]).collect();
        let rank = group.iter().position(|&(_, r)| r == self.rank).unwrap();
        Some(Comm {
            shared: self.shared,
            ctx: mix(mix(self.ctx, split + 1), color),
            members,
            rank,
            seq: Cell::new(0),
            splits: Cell::new(0),
        })
    }
}

/// Runs `body` on `config.ranks` simulated ranks and returns their results in rank order.
pub fn run<R, F>(config: RunConfig, body: F) -> Result<Vec<R>, RuntimeError>
where
    R: Send,
    F: Fn(&Comm) -> R + Sync,
{
    run_with_stats(config, body).map(|(r, _)| r)
}

pub fn run_with_stats<R, F>(config: RunConfig, body: F) -> Result<(Vec<R>, RunStats), RuntimeError>
where
    R: Send,
    F: Fn(&Comm) -> R + Sync,
{
    let n = config.ranks;
    if n == 0 {
        return Err(RuntimeError::NoRanks);
    }
    let shared = Shared {
        state: Mutex::new(State {
            mailbox: HashMap::new(),
            status: vec![Status::Runnable; n],
            current: IDLE,
            rng: match config.policy {
                SchedulingPolicy::RoundRobin => None,
                SchedulingPolicy::Seeded(s) => Some(ChaCha8Rng::seed_from_u64(s)),
            },
            failure: None,
            sent: BTreeMap::new(),
            received: BTreeMap::new(),
            switches: 0,
        }),
        cv: Condvar::new(),
    };
    {
        let mut st = shared.lock();
        shared.pick_next(&mut st, IDLE);
    }
    let results: Vec<Option<R>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|me| {
                let shared = &shared;
                let body = &body;
                scope.spawn(move || {
                    let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                        let st = shared.lock();
                        drop(shared.wait_turn(st, me));
                        let comm = Comm {
                            shared,
                            ctx: 0,
                            members: (0..n).collect(),
                            rank: me,
                            seq: Cell::new(0),
                            splits: Cell::new(0),
                        };
                        body(&comm)
                    }));
                    let mut st = shared.lock();
                    match outcome {
                        Ok(r) => {
                            st.status[me] = Status::Done;
                            shared.pick_next(&mut st, me);
                            Some(r)
                        }
                        Err(payload) => {
                            if payload.downcast_ref::<Abort>().is_none() && st.failure.is_none() {
                                let message = payload
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_else(|| "unknown panic".into());
                                st.failure = Some(RuntimeError::RankPanicked { rank: me, message });
                            }
                            st.status[me] = Status::Done;
                            st.current = IDLE;
                            shared.cv.notify_all();
                            None
                        }
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(None)).collect()
    });
    let st = shared.into_inner();
    if let Some(f) = st.failure {
        return Err(f);
    }
    if st.sent != st.received {
        let mut diag = Vec::new();
        for (k, s) in &st.sent {
            let r = st.received.get(k).copied().unwrap_or(0);
            if *s != r {
                diag.push(format!("{}->{} tag {} sent {s} received {r}", k.0, k.1, k.3));
            }
        }
        return Err(RuntimeError::Undelivered(diag.join("; ")));
    }
    let mut stats = RunStats { context_switches: st.switches, ..Default::default() };
    for ((s, d, _, _), c) in &st.sent {
        *stats.messages.entry((*s, *d)).or_default() += c;
    }
    Ok((results.into_iter().map(|r| r.expect("rank result")).collect(), stats))
}

impl Shared {
    fn into_inner(self) -> State {
        self.state.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

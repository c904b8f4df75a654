use std::any::Any;
use std::cell::{Cell, RefCell};
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{BlockBuffer, Communicator, Element, GroupId, TResult};
use crate::error::TransportError;

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct LocalOptions {
    /// How long a rank waits on a peer inside one collective.
    pub timeout: Duration,
    /// Seed for random yields and short sleeps before every send, used to
    /// shake out ordering assumptions in tests.
    pub perturb_seed: Option<u64>,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            timeout: Duration::from_secs(30),
            perturb_seed: None,
        }
    }
}

struct Envelope {
    seq: u64,
    op: &'static str,
    payload: Box<dyn Any + Send>,
}

#[derive(Default)]
struct Mailbox {
    queue: Mutex<VecDeque<Envelope>>,
    ready: Condvar,
}

struct World {
    abort: AtomicBool,
    next_group: AtomicU64,
}

struct Group {
    id: GroupId,
    size: usize,
    /// Indexed `dst * size + src`; FIFO per ordered pair.
    boxes: Vec<Mailbox>,
    /// Subgroups under construction, keyed by `(split sequence, color)`,
    /// with the number of members that have not yet picked them up.
    children: Mutex<HashMap<(u64, u64), (Arc<Group>, usize)>>,
    world: Arc<World>,
}

impl Group {
    fn new(id: GroupId, size: usize, world: Arc<World>) -> Arc<Self> {
        Arc::new(Group {
            id,
            size,
            boxes: (0..size * size).map(|_| Mailbox::default()).collect(),
            children: Mutex::new(HashMap::new()),
            world,
        })
    }
}

/// In-process rank handle. Movable to its worker thread, not shareable.
pub struct LocalComm {
    group: Arc<Group>,
    rank: usize,
    seq: Cell<u64>,
    opts: LocalOptions,
    rng: RefCell<Option<StdRng>>,
}

impl LocalComm {
    /// Handles for a fresh world group of `size` ranks, in rank order.
    pub fn create_world(size: usize, opts: LocalOptions) -> Vec<LocalComm> {
        assert!(size > 0, "a group needs at least one rank");
        let world = Arc::new(World {
            abort: AtomicBool::new(false),
            next_group: AtomicU64::new(1),
        });
        let group = Group::new(0, size, world);
        (0..size)
            .map(|rank| LocalComm::member(group.clone(), rank, opts.clone()))
            .collect()
    }

    fn member(group: Arc<Group>, rank: usize, opts: LocalOptions) -> Self {
        let rng = opts
            .perturb_seed
            .map(|s| StdRng::seed_from_u64(s ^ (group.id << 32) ^ rank as u64));
        LocalComm {
            group,
            rank,
            seq: Cell::new(0),
            opts,
            rng: RefCell::new(rng),
        }
    }

    /// Marks the whole launch as failed; peers blocked in a collective
    /// return [`TransportError::Aborted`].
    pub fn abort(&self) {
        self.group.world.abort.store(true, Ordering::SeqCst);
    }

    fn next_seq(&self) -> u64 {
        let s = self.seq.get();
        self.seq.set(s + 1);
        s
    }

    fn perturb(&self) {
        let mut rng = self.rng.borrow_mut();
        if let Some(rng) = rng.as_mut() {
            match rng.random_range(0..4u8) {
                0 => {}
                1 => thread::yield_now(),
                _ => thread::sleep(Duration::from_micros(rng.random_range(0..40))),
            }
        }
    }

    fn post<T: Element>(&self, dst: usize, seq: u64, op: &'static str, data: Vec<T>) {
        self.perturb();
        let mb = &self.group.boxes[dst * self.group.size + self.rank];
        mb.queue.lock().unwrap().push_back(Envelope {
            seq,
            op,
            payload: Box::new(data),
        });
        mb.ready.notify_one();
    }

    fn take<T: Element>(&self, src: usize, seq: u64, op: &'static str) -> TResult<Vec<T>> {
        let mb = &self.group.boxes[self.rank * self.group.size + src];
        let deadline = Instant::now() + self.opts.timeout;
        let mut queue = mb.queue.lock().unwrap();
        loop {
            if let Some(env) = queue.pop_front() {
                if env.seq != seq || env.op != op {
                    return Err(self.protocol(
                        op,
                        format!(
                            "rank {src} sent `{}` #{} while this rank expected `{op}` #{seq}",
                            env.op, env.seq
                        ),
                    ));
                }
                return env
                    .payload
                    .downcast::<Vec<T>>()
                    .map(|b| *b)
                    .map_err(|_| self.protocol(op, format!("element type mismatch from rank {src}")));
            }
            if self.group.world.abort.load(Ordering::SeqCst) {
                return Err(TransportError::Aborted { rank: self.rank });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout {
                    rank: self.rank,
                    peer: src,
                    op,
                    timeout: self.opts.timeout,
                });
            }
            let wait = (deadline - now).min(POLL);
            queue = mb.ready.wait_timeout(queue, wait).unwrap().0;
        }
    }

    fn protocol(&self, op: &'static str, detail: String) -> TransportError {
        TransportError::Protocol {
            rank: self.rank,
            op,
            detail,
        }
    }

    /// Every rank's contribution, in rank order.
    fn all_gather<T: Element>(&self, op: &'static str, data: Vec<T>) -> TResult<Vec<Vec<T>>> {
        let seq = self.next_seq();
        let size = self.group.size;
        for off in 1..size {
            self.post((self.rank + off) % size, seq, op, data.clone());
        }
        let mut out: Vec<Option<Vec<T>>> = (0..size).map(|_| None).collect();
        for off in 1..size {
            let src = (self.rank + size - off) % size;
            out[src] = Some(self.take(src, seq, op)?);
        }
        out[self.rank] = Some(data);
        Ok(out.into_iter().map(|v| v.unwrap()).collect())
    }

    fn reduce(&self, op: &'static str, values: &mut [f64], f: impl Fn(f64, f64) -> f64) -> TResult<()> {
        let parts = self.all_gather(op, values.to_vec())?;
        for (r, part) in parts.iter().enumerate() {
            if part.len() != values.len() {
                return Err(self.protocol(
                    op,
                    format!("rank {r} contributed {} values, this rank {}", part.len(), values.len()),
                ));
            }
        }
        for (i, v) in values.iter_mut().enumerate() {
            let mut acc = parts[0][i];
            for part in &parts[1..] {
                acc = f(acc, part[i]);
            }
            *v = acc;
        }
        Ok(())
    }
}

impl Communicator for LocalComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.group.size
    }

    fn group_id(&self) -> GroupId {
        self.group.id
    }

    fn all_to_all_into<T: Element>(&self, send: &BlockBuffer<T>, recv: &mut BlockBuffer<T>) -> TResult<()> {
        const OP: &str = "all_to_all";
        let size = self.group.size;
        if send.num_blocks() != size || recv.num_blocks() != size {
            return Err(self.protocol(
                OP,
                format!(
                    "block tables have {}/{} entries for a group of size {size}",
                    send.num_blocks(),
                    recv.num_blocks()
                ),
            ));
        }
        let seq = self.next_seq();
        for off in 1..size {
            let dst = (self.rank + off) % size;
            self.post(dst, seq, OP, send.block(dst).to_vec());
        }
        let me = self.rank;
        if send.counts()[me] != recv.counts()[me] {
            return Err(self.protocol(
                OP,
                format!("self block: sending {} but expecting {}", send.counts()[me], recv.counts()[me]),
            ));
        }
        recv.block_mut(me).copy_from_slice(send.block(me));
        for off in 1..size {
            let src = (self.rank + size - off) % size;
            let block: Vec<T> = self.take(src, seq, OP)?;
            if block.len() != recv.counts()[src] {
                return Err(self.protocol(
                    OP,
                    format!(
                        "rank {src} sent {} elements but this rank expected {}",
                        block.len(),
                        recv.counts()[src]
                    ),
                ));
            }
            recv.block_mut(src).copy_from_slice(&block);
        }
        Ok(())
    }

    fn allreduce_sum(&self, values: &mut [f64]) -> TResult<()> {
        self.reduce("allreduce_sum", values, |a, b| a + b)
    }

    fn allreduce_max(&self, values: &mut [f64]) -> TResult<()> {
        self.reduce("allreduce_max", values, f64::max)
    }

    fn broadcast<T: Element>(&self, payload: Vec<T>, root: usize) -> TResult<Vec<T>> {
        const OP: &str = "broadcast";
        let size = self.group.size;
        if root >= size {
            return Err(self.protocol(OP, format!("root {root} out of range for a group of size {size}")));
        }
        let seq = self.next_seq();
        if self.rank == root {
            for off in 1..size {
                self.post((root + off) % size, seq, OP, payload.clone());
            }
            Ok(payload)
        } else {
            self.take(root, seq, OP)
        }
    }

    fn barrier(&self) -> TResult<()> {
        self.all_gather::<u8>("barrier", Vec::new()).map(|_| ())
    }

    fn split(&self, color: u64, key: i64) -> TResult<Self> {
        let seq = self.seq.get();
        let all = self.all_gather("split", vec![(color, key)])?;
        let mut members: Vec<(i64, usize)> = all
            .iter()
            .enumerate()
            .filter(|(_, v)| v[0].0 == color)
            .map(|(r, v)| (v[0].1, r))
            .collect();
        members.sort_unstable();
        let new_rank = members.iter().position(|&(_, r)| r == self.rank).unwrap();

        let child = {
            let mut children = self.group.children.lock().unwrap();
            let entry = children.entry((seq, color)).or_insert_with(|| {
                let id = self.group.world.next_group.fetch_add(1, Ordering::SeqCst);
                (Group::new(id, members.len(), self.group.world.clone()), members.len())
            });
            let group = entry.0.clone();
            entry.1 -= 1;
            if entry.1 == 0 {
                children.remove(&(seq, color));
            }
            group
        };
        let mut opts = self.opts.clone();
        opts.perturb_seed = opts.perturb_seed.map(|s| s.wrapping_mul(31).wrapping_add(color));
        Ok(LocalComm::member(child, new_rank, opts))
    }
}

struct AbortOnPanic<'a>(&'a World);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.abort.store(true, Ordering::SeqCst);
        }
    }
}

/// Runs `f` on `size` worker threads, one per rank of a fresh world group,
/// and returns the per-rank results in rank order. A worker that fails or
/// panics aborts the group so its peers stop waiting.
pub fn launch<R, E, F>(size: usize, opts: LocalOptions, f: F) -> Vec<Result<R, E>>
where
    F: Fn(LocalComm) -> Result<R, E> + Sync,
    R: Send,
    E: Send,
{
    let comms = LocalComm::create_world(size, opts);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                thread::Builder::new()
                    .name(format!("rank-{}", comm.rank))
                    .spawn_scoped(s, move || {
                        let world = comm.group.world.clone();
                        let _guard = AbortOnPanic(&world);
                        let res = f(comm);
                        if res.is_err() {
                            world.abort.store(true, Ordering::SeqCst);
                        }
                        res
                    })
                    .expect("failed to spawn rank worker")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

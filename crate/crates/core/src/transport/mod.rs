//! Rank-collective contract used by the distributed FFT and diagnostics.
//!
//! Two backends implement [`Communicator`]:
//!
//! * [`Loopback`]: a single rank, every collective is the identity.
//! * [`LocalComm`]: `p` workers in one process exchanging blocks through
//!   shared per-pair mailboxes; see [`launch`].
//!
//! Every rank of a group must issue the same collectives in the same order.
//! Each collective carries a sequence number so a mismatch surfaces as a
//! [`TransportError::Protocol`] instead of silently pairing wrong messages.

mod buffer;
mod local;
mod loopback;

pub use buffer::BlockBuffer;
pub use local::{launch, LocalComm, LocalOptions};
pub use loopback::Loopback;

use crate::error::TransportError;

pub type TResult<T> = std::result::Result<T, TransportError>;

/// Plain data that can travel between ranks.
pub trait Element: Copy + Send + 'static {}
impl<T: Copy + Send + 'static> Element for T {}

/// Identifier of a rank group. The world group of a launch is `0`.
pub type GroupId = u64;

pub trait Communicator: Send + Sized {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn group_id(&self) -> GroupId;

    /// Variable-block all-to-all: block `j` of `send` goes to rank `j`, and
    /// block `i` of `recv` is filled from rank `i`. `recv` carries the block
    /// table this rank expects; a length disagreement with the sender is a
    /// protocol error.
    fn all_to_all_into<T: Element>(&self, send: &BlockBuffer<T>, recv: &mut BlockBuffer<T>) -> TResult<()>;

    /// By-value all-to-all returning a freshly assembled receive buffer.
    fn all_to_all<T: Element + Default>(&self, send: BlockBuffer<T>, recv_counts: &[usize]) -> TResult<BlockBuffer<T>> {
        let mut recv = BlockBuffer::zeroed(recv_counts.to_vec());
        self.all_to_all_into(&send, &mut recv)?;
        Ok(recv)
    }

    /// Elementwise sum over ranks, accumulated in ascending rank order so
    /// every rank holds the bit-identical result.
    fn allreduce_sum(&self, values: &mut [f64]) -> TResult<()>;

    /// Elementwise maximum over ranks.
    fn allreduce_max(&self, values: &mut [f64]) -> TResult<()>;

    /// Returns `root`'s payload on every rank. Non-root payloads are ignored.
    fn broadcast<T: Element>(&self, payload: Vec<T>, root: usize) -> TResult<Vec<T>>;

    fn barrier(&self) -> TResult<()>;

    /// Ranks passing the same `color` form a new group ordered by
    /// `(key, old rank)`.
    fn split(&self, color: u64, key: i64) -> TResult<Self>;

    fn allreduce_sum_scalar(&self, x: f64) -> TResult<f64> {
        let mut v = [x];
        self.allreduce_sum(&mut v)?;
        Ok(v[0])
    }

    fn allreduce_max_scalar(&self, x: f64) -> TResult<f64> {
        let mut v = [x];
        self.allreduce_max(&mut v)?;
        Ok(v[0])
    }
}

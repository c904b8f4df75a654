use super::{BlockBuffer, Communicator, Element, GroupId, TResult};
use crate::error::TransportError;

/// Single-rank communicator. Collectives return their input.
#[derive(Debug, Default, Clone, Copy)]
pub struct Loopback;

fn check_single(counts: &[usize], op: &'static str) -> TResult<()> {
    if counts.len() != 1 {
        return Err(TransportError::Protocol {
            rank: 0,
            op,
            detail: format!("block table has {} entries for a group of size 1", counts.len()),
        });
    }
    Ok(())
}

impl Communicator for Loopback {
    fn rank(&self) -> usize {
        0
    }

    fn size(&self) -> usize {
        1
    }

    fn group_id(&self) -> GroupId {
        0
    }

    fn all_to_all_into<T: Element>(&self, send: &BlockBuffer<T>, recv: &mut BlockBuffer<T>) -> TResult<()> {
        check_single(send.counts(), "all_to_all")?;
        check_single(recv.counts(), "all_to_all")?;
        if send.len() != recv.len() {
            return Err(TransportError::Protocol {
                rank: 0,
                op: "all_to_all",
                detail: format!("sent {} elements but expected {}", send.len(), recv.len()),
            });
        }
        recv.as_mut_slice().copy_from_slice(send.as_slice());
        Ok(())
    }

    fn all_to_all<T: Element + Default>(&self, send: BlockBuffer<T>, recv_counts: &[usize]) -> TResult<BlockBuffer<T>> {
        check_single(send.counts(), "all_to_all")?;
        if recv_counts != send.counts() {
            return Err(TransportError::Protocol {
                rank: 0,
                op: "all_to_all",
                detail: format!("sent {:?} but expected {:?}", send.counts(), recv_counts),
            });
        }
        Ok(send)
    }

    fn allreduce_sum(&self, _values: &mut [f64]) -> TResult<()> {
        Ok(())
    }

    fn allreduce_max(&self, _values: &mut [f64]) -> TResult<()> {
        Ok(())
    }

    fn broadcast<T: Element>(&self, payload: Vec<T>, root: usize) -> TResult<Vec<T>> {
        if root != 0 {
            return Err(TransportError::Protocol {
                rank: 0,
                op: "broadcast",
                detail: format!("root {root} out of range for a group of size 1"),
            });
        }
        Ok(payload)
    }

    fn barrier(&self) -> TResult<()> {
        Ok(())
    }

    fn split(&self, _color: u64, _key: i64) -> TResult<Self> {
        Ok(Loopback)
    }
}

use std::ops::Range;

/// Contiguous storage cut into per-peer blocks of possibly unequal length.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBuffer<T> {
    data: Vec<T>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

fn offsets_of(counts: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    counts
        .iter()
        .map(|&c| {
            let o = acc;
            acc += c;
            o
        })
        .collect()
}

impl<T> BlockBuffer<T> {
    /// Panics if the block lengths do not sum to `data.len()`.
    pub fn new(data: Vec<T>, counts: Vec<usize>) -> Self {
        assert_eq!(
            counts.iter().sum::<usize>(),
            data.len(),
            "block table does not cover the buffer"
        );
        let offsets = offsets_of(&counts);
        BlockBuffer { data, counts, offsets }
    }

    pub fn from_blocks(blocks: Vec<Vec<T>>) -> Self {
        let counts = blocks.iter().map(Vec::len).collect();
        BlockBuffer::new(blocks.into_iter().flatten().collect(), counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_blocks(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.counts[i]
    }

    pub fn block(&self, i: usize) -> &[T] {
        &self.data[self.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [T] {
        let r = self.range(i);
        &mut self.data[r]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T: Default + Clone> BlockBuffer<T> {
    pub fn zeroed(counts: Vec<usize>) -> Self {
        let len = counts.iter().sum();
        BlockBuffer::new(vec![T::default(); len], counts)
    }
}

//! Overlapping sliding-window chunks of consecutive utterances.

use std::collections::VecDeque;

use crate::corpus::{Conversation, Corpus, Utterance};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_STRIDE: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub conversation_id: String,
    pub start: usize,
    pub utterances: Vec<Utterance>,
    pub label: u8,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSet {
    pub chunks: Vec<Chunk>,
    pub window: usize,
    pub stride: usize,
}

fn check_geometry(window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid(format!(
            "window and stride must be positive, got window={window} stride={stride}"
        )));
    }
    Ok(())
}

/// Start offsets of the windows over a sequence of length `len`.
///
/// A sequence shorter than the window yields a single start at 0.
pub fn window_starts(len: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    let end = if len == 0 { 0 } else { len.saturating_sub(window) + 1 };
    (0..end).step_by(stride.max(1))
}

/// Splits a conversation into windows starting at `0, stride, 2*stride, ...`.
///
/// Conversations shorter than `window` produce one truncated chunk.
pub fn make_chunks(conversation: &Conversation, window: usize, stride: usize) -> Result<ChunkSet> {
    check_geometry(window, stride)?;
    let len = conversation.len();
    let chunks = window_starts(len, window, stride)
        .map(|start| Chunk {
            conversation_id: conversation.id.clone(),
            start,
            utterances: conversation.utterances[start..(start + window).min(len)].to_vec(),
            label: conversation.label,
        })
        .collect();
    Ok(ChunkSet {
        chunks,
        window,
        stride,
    })
}

/// Overwrites every chunk label with the conversation's label.
pub fn label_chunks(mut chunkset: ChunkSet, conversation: &Conversation) -> Result<ChunkSet> {
    for chunk in &mut chunkset.chunks {
        if chunk.conversation_id != conversation.id {
            return Err(Error::ForeignChunk {
                expected: conversation.id.clone(),
                found: chunk.conversation_id.clone(),
            });
        }
        chunk.label = conversation.label;
    }
    Ok(chunkset)
}

/// Chunks every conversation of a corpus, in corpus order.
pub fn chunk_corpus(corpus: &Corpus, window: usize, stride: usize) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for c in &corpus.conversations {
        let set = label_chunks(make_chunks(c, window, stride)?, c)?;
        out.extend(set.chunks);
    }
    Ok(out)
}

/// Incremental chunker for live conversations.
///
/// Holds at most `window` utterances. Emits a chunk each time a window
/// boundary completes, so replaying a whole conversation of length
/// `L >= window` yields exactly the output of [`make_chunks`].
#[derive(Debug, Clone)]
pub struct StreamChunker {
    conversation_id: String,
    label: u8,
    window: usize,
    stride: usize,
    buffer: VecDeque<Utterance>,
    next_index: usize,
}

impl StreamChunker {
    pub fn new(conversation_id: impl Into<String>, window: usize, stride: usize) -> Result<Self> {
        check_geometry(window, stride)?;
        Ok(StreamChunker {
            conversation_id: conversation_id.into(),
            label: 0,
            window,
            stride,
            buffer: VecDeque::with_capacity(window),
            next_index: 0,
        })
    }

    /// Label stamped on emitted chunks. Live sessions have no ground truth; default 0.
    pub fn with_label(mut self, label: u8) -> Self {
        self.label = label;
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of utterances fed so far.
    pub fn fed(&self) -> usize {
        self.next_index
    }

    pub fn feed(&mut self, utterance: Utterance) -> Result<Option<Chunk>> {
        if utterance.index != self.next_index {
            return Err(Error::OutOfOrder {
                expected: self.next_index,
                actual: utterance.index,
            });
        }
        self.next_index += 1;
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(utterance);
        if self.next_index < self.window {
            return Ok(None);
        }
        let start = self.next_index - self.window;
        if start % self.stride != 0 {
            return Ok(None);
        }
        Ok(Some(Chunk {
            conversation_id: self.conversation_id.clone(),
            start,
            utterances: self.buffer.iter().cloned().collect(),
            label: self.label,
        }))
    }

    /// End of input. For a conversation that never filled a window, returns
    /// the single truncated chunk the batch chunker would have produced.
    pub fn finish(&self) -> Option<Chunk> {
        if self.next_index == 0 || self.next_index >= self.window {
            return None;
        }
        Some(Chunk {
            conversation_id: self.conversation_id.clone(),
            start: 0,
            utterances: self.buffer.iter().cloned().collect(),
            label: self.label,
        })
    }
}

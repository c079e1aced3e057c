//! Soft diagnostics: conditions the pipeline recovers from but reports.
//!
//! Hard failures (divergence, zero-norm prototypes, shape errors) are
//! [`Error`](crate::Error)s and abort the episode instead.

use core::ops::AddAssign;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    /// Cosine similarities involving a zero vector (reported as 0).
    pub zero_vectors: u64,
    /// Graph vertices whose degree after sparsification was not positive.
    pub isolated_vertices: u64,
    /// Head training epochs whose loss rose by more than the slack.
    pub head_loss_increases: u64,
    /// Prototype training epochs (after warm-up) whose loss rose by more than the slack.
    pub proto_loss_increases: u64,
    /// Zero query vectors, classified as class 0.
    pub zero_queries: u64,
}

impl Diagnostics {
    pub fn total(&self) -> u64 {
        self.zero_vectors
            + self.isolated_vertices
            + self.head_loss_increases
            + self.proto_loss_increases
            + self.zero_queries
    }

    pub fn is_clean(&self) -> bool {
        self.total() == 0
    }
}

impl AddAssign for Diagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.zero_vectors += rhs.zero_vectors;
        self.isolated_vertices += rhs.isolated_vertices;
        self.head_loss_increases += rhs.head_loss_increases;
        self.proto_loss_increases += rhs.proto_loss_increases;
        self.zero_queries += rhs.zero_queries;
    }
}

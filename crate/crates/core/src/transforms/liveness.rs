//! Whether an intermediate buffer must survive a pipeline transform.

use crate::host::{HostModel, HostOp, KernelDfg};

/// A buffer is live-out of a producer/consumer pair when the host reads it
/// back or any kernel invocation other than the consumer reads it.
pub fn is_live_out(host: &HostModel, dfg: &KernelDfg, buffer: &str, consumer: usize) -> bool {
    let host_reads = host
        .ops
        .iter()
        .any(|op| matches!(op, HostOp::Read { buffer: b, .. } if b == buffer));
    host_reads
        || dfg
            .nodes
            .iter()
            .any(|n| n.id != consumer && n.reads.contains(buffer))
}

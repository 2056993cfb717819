//! Host-side analysis: the host model, the C scanner and the kernel DFG.

pub mod dfg;
pub mod model;
pub mod scan;

pub use dfg::{
    build_dfg, exclude_cpu_dependent, DfgEdge, DfgNode, EdgeKind, KernelDfg, LoopRegion,
};
pub use model::{Arg, BufferInfo, Enqueue, HostModel, HostOp, Init, Invocation, Launch, Trips};
pub use scan::{scan_host, ScanInfo, ScannedHost, Span};

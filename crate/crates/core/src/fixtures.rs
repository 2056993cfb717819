//! Bundled miniature workloads used by tests, examples and the CLI.

use crate::error::Result;
use crate::frontend::{parse_program, KernelProgram};
use crate::host::HostModel;

/// Kernel source, host manifest and profile of one workload.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub name: &'static str,
    pub kernels: String,
    pub host: String,
    pub profile: String,
}

impl Bundle {
    pub fn program(&self) -> Result<KernelProgram> {
        parse_program(&self.kernels)
    }

    pub fn host_model(&self) -> Result<HostModel> {
        HostModel::from_toml(&self.host)
    }
}

pub fn cfd() -> Bundle {
    Bundle {
        name: "cfd",
        kernels: include_str!("../fixtures/cfd/kernels.cl").into(),
        host: include_str!("../fixtures/cfd/host.toml").into(),
        profile: include_str!("../fixtures/cfd/profile.toml").into(),
    }
}

/// C host equivalent to the CFD manifest.
pub fn cfd_host_c() -> &'static str {
    include_str!("../fixtures/cfd/host.c")
}

/// LUD on a 4x4 block grid.
pub fn lud() -> Bundle {
    lud_grid(4)
}

/// LUD miniature with `grid` x `grid` internal workgroups of 4x4 items.
pub fn lud_grid(grid: u64) -> Bundle {
    let bsize = 4;
    let mat_dim = (grid + 1) * bsize;
    let n = grid * bsize;
    let host = format!(
        r#"[[op]]
op = "buffer"
name = "m"
elem = "float"
len = {len}

[[op]]
op = "write"
buffer = "m"

[[op]]
op = "enqueue"
kernel = "lud_perimeter"
global = [{n}]
local = [{bsize}]
args = [{{ buffer = "m" }}, {{ int = {mat_dim} }}, {{ int = 0 }}]

[[op]]
op = "finish"

[[op]]
op = "enqueue"
kernel = "lud_internal"
global = [{n}, {n}]
local = [{bsize}, {bsize}]
args = [{{ buffer = "m" }}, {{ int = {mat_dim} }}, {{ int = 0 }}]

[[op]]
op = "finish"

[[op]]
op = "read"
buffer = "m"
into = "h_m"
"#,
        len = mat_dim * mat_dim
    );
    Bundle {
        name: "lud",
        kernels: include_str!("../fixtures/lud/kernels.cl").into(),
        host,
        profile: include_str!("../fixtures/lud/profile.toml").into(),
    }
}

pub fn hist() -> Bundle {
    Bundle {
        name: "hist",
        kernels: include_str!("../fixtures/hist/kernels.cl").into(),
        host: include_str!("../fixtures/hist/host.toml").into(),
        profile: include_str!("../fixtures/hist/profile.toml").into(),
    }
}

pub fn bp() -> Bundle {
    Bundle {
        name: "bp",
        kernels: include_str!("../fixtures/bp/kernels.cl").into(),
        host: include_str!("../fixtures/bp/host.toml").into(),
        profile: include_str!("../fixtures/bp/profile.toml").into(),
    }
}

pub fn all() -> Vec<Bundle> {
    vec![cfd(), lud(), hist(), bp()]
}

pub fn by_name(name: &str) -> Option<Bundle> {
    all().into_iter().find(|b| b.name == name)
}

//! Links the reference BLAS/LAPACK archives needed by the semidefinite cones.
//!
//! The system OpenBLAS mis-factors matrices larger than 32×32 on some AVX-512
//! machines, so the Netlib archives are linked statically instead. Set
//! `IRS_URLLC_LAPACK_DIRS` (colon separated) to override the search path.

use std::env;
use std::path::Path;

const DEFAULT_DIRS: &[&str] = &[
    "/usr/lib/x86_64-linux-gnu/lapack",
    "/usr/lib/x86_64-linux-gnu/blas",
    "/usr/lib/aarch64-linux-gnu/lapack",
    "/usr/lib/aarch64-linux-gnu/blas",
    "/usr/lib64",
    "/usr/lib",
];

fn main() {
    println!("cargo:rerun-if-env-changed=IRS_URLLC_LAPACK_DIRS");
    if env::var_os("CARGO_FEATURE_SDP").is_none() {
        return;
    }
    let dirs: Vec<String> = match env::var("IRS_URLLC_LAPACK_DIRS") {
        Ok(v) => v.split(':').filter(|s| !s.is_empty()).map(String::from).collect(),
        Err(_) => DEFAULT_DIRS.iter().map(|s| s.to_string()).collect(),
    };
    let find = |name: &str| {
        dirs.iter()
            .find(|d| Path::new(d).join(format!("lib{name}.a")).exists())
            .cloned()
    };
    let (Some(lapack), Some(blas)) = (find("lapack"), find("blas")) else {
        panic!(
            "static liblapack.a / libblas.a not found in {dirs:?}; install the reference \
             LAPACK development package or set IRS_URLLC_LAPACK_DIRS"
        );
    };
    println!("cargo:rustc-link-search=native={lapack}");
    if blas != lapack {
        println!("cargo:rustc-link-search=native={blas}");
    }
    println!("cargo:rustc-link-lib=static=lapack");
    println!("cargo:rustc-link-lib=static=blas");
    println!("cargo:rustc-link-lib=dylib=gfortran");
}

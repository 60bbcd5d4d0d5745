fn main() {
    // LAPACK symbols (dsyevd/dposv/dgemm) are resolved from the system
    // OpenBLAS; no vendored BLAS build.
    println!("cargo:rustc-link-lib=dylib=openblas");
}

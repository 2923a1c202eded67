fn main() {
    // System LAPACK/BLAS from liblapack-dev; only dgeev is used.
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=blas");
}

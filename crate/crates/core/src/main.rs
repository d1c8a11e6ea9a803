fn main() {
    std::process::exit(mmd_drift::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(modsurf::cli::run(std::env::args_os()));
}

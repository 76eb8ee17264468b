fn main() {
    mor_core::cli::init_threads();
    std::process::exit(mor_core::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(fifo_core::cli::run_from(std::env::args_os()));
}

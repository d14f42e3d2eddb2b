fn main() {
    std::process::exit(sipl_core::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(gmem::cli::main_with_args(std::env::args_os()));
}

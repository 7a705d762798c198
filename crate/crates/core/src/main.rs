fn main() {
    std::process::exit(adlab::cli::main_with_args(std::env::args_os()));
}

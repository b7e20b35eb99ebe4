fn main() {
    std::process::exit(tailcast::cli::main_with_args(std::env::args_os()));
}
